// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "kbl/bounds.hpp"
#include "kbl/harness.hpp"

using kbl::ExperimentConfig;
using kbl::ExperimentKind;
using kbl::ExperimentResult;
using nlohmann::json;

namespace {

json base_tail_config() {
  return json{{"kind", "tail_probability"},
              {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}, {"k", 40}}},
              {"alpha_grid", {0.6, 1.2}},
              {"trials", 30},
              {"master_seed", 11}};
}

}  // namespace

TEST_CASE("experiment kind names round trip") {
  for (ExperimentKind kind :
       {ExperimentKind::TailProbability, ExperimentKind::TwirlingCheck,
        ExperimentKind::ExpanderCampaign, ExperimentKind::RectifiedRegimes,
        ExperimentKind::ScalingSweep, ExperimentKind::IsotropyAudit})
    CHECK(kbl::experiment_kind_from_name(kbl::experiment_kind_name(kind)) == kind);
  CHECK_THROWS_AS(kbl::experiment_kind_from_name("no_such_kind"), kbl::ConfigError);
}

TEST_CASE("config parsing is strict") {
  json j = base_tail_config();
  j["typo"] = 1;
  CHECK_THROWS_AS(kbl::config_from_json(j), kbl::ConfigError);

  j = base_tail_config();
  j["eps"] = {0.5};
  CHECK_THROWS_AS(kbl::config_from_json(j), kbl::ConfigError);  // both grids

  j = base_tail_config();
  j.erase("kind");
  CHECK_THROWS_AS(kbl::config_from_json(j), kbl::ConfigError);
  CHECK(kbl::config_from_json(j, ExperimentKind::TailProbability).kind ==
        ExperimentKind::TailProbability);

  j = base_tail_config();
  CHECK_THROWS_AS(kbl::config_from_json(j, ExperimentKind::TwirlingCheck),
                  kbl::ConfigError);  // kind conflicts with subcommand

  // budget_inputs.L must mirror the ensemble's certificate.
  j = base_tail_config();
  j["budget_inputs"] = {{"L", 2.0}};
  CHECK_THROWS_AS(kbl::config_from_json(j), kbl::ConfigError);
  j["budget_inputs"] = {{"L", 1.0}, {"C", 25.0}};
  CHECK(kbl::config_from_json(j).budget.C == 25.0);
  j["budget_inputs"] = {{"nope", 1}};
  CHECK_THROWS_AS(kbl::config_from_json(j), kbl::ConfigError);

  // A top-level gamma must agree with the ensemble.
  j = base_tail_config();
  j["gamma"] = {"1", "1"};
  CHECK_THROWS_AS(kbl::config_from_json(j), kbl::ConfigError);
  j["gamma"] = {"1"};
  CHECK(kbl::config_from_json(j).gamma.t() == 1);

  json tj{{"kind", "tail_probability"},
          {"ensemble",
           {{"kind", "tensor_power_unitary"}, {"d", 2}, {"k", 10}, {"gamma", {"1", "*"}}}},
          {"alpha_grid", {0.5}},
          {"trials", 2}};
  tj["gamma"] = {"1", "1"};
  CHECK_THROWS_AS(kbl::config_from_json(tj), kbl::ConfigError);
  tj["gamma"] = {"1", "*"};
  CHECK(kbl::config_from_json(tj).gamma.symbols() == std::vector<std::string>{"1", "*"});
}

TEST_CASE("omitted k is derived from the first grid entry") {
  json j{{"kind", "tail_probability"},
         {"ensemble", {{"kind", "haar_unitary"}, {"d", 4}}},
         {"alpha_grid", {0.5}},
         {"trials", 1},
         {"budget_inputs", {{"C", 30.0}}}};
  ExperimentConfig cfg = kbl::config_from_json(j);
  CHECK(cfg.ensemble.k == 167);
  CHECK(cfg.ensemble.k == kbl::tdesign_budget(4, 1, 0.5, 30.0).k);

  j["ensemble"]["k"] = 0;  // explicit zero also defers to the budget
  CHECK(kbl::config_from_json(j).ensemble.k == 167);

  j["ensemble"]["k"] = 12;  // explicit k wins
  CHECK(kbl::config_from_json(j).ensemble.k == 12);

  json tw{{"kind", "twirling_check"},
          {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}}},
          {"eps", {0.5}},
          {"trials", 1},
          {"budget_inputs", {{"C", 30.0}}}};
  CHECK(kbl::config_from_json(tw).ensemble.k ==
        kbl::twirling_budget(2, 1, 0.5, 30.0).k);

  json r2{{"kind", "rectified_regimes"},
          {"ensemble", {{"kind", "hermitized_unitary"}, {"d", 3}}},
          {"trials", 1},
          {"budget_inputs", {{"regime", 2}, {"delta", 0.5}, {"C", 30.0}}}};
  CHECK(kbl::config_from_json(r2).ensemble.k ==
        kbl::three_regimes_budget(3, std::sqrt(2.0), 0.5, 2, 30.0).k);
}

TEST_CASE("grid shape is matched to the experiment kind") {
  json r2{{"kind", "rectified_regimes"},
          {"ensemble", {{"kind", "hermitized_unitary"}, {"d", 3}, {"k", 10}}},
          {"trials", 1},
          {"budget_inputs", {{"regime", 2}, {"delta", 0.5}}}};
  CHECK_NOTHROW(kbl::config_from_json(r2));
  r2["eps"] = {0.5};
  CHECK_THROWS_AS(kbl::config_from_json(r2), kbl::ConfigError);

  json r3{{"kind", "rectified_regimes"},
          {"ensemble", {{"kind", "hermitized_unitary"}, {"d", 3}, {"k", 10}}},
          {"eps", {0.5, 0.7}},
          {"trials", 1}};
  CHECK_THROWS_AS(kbl::config_from_json(r3), kbl::ConfigError);

  json sw{{"kind", "scaling_sweep"},
          {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}, {"k", 4}}},
          {"trials", 3},
          {"budget_inputs", {{"k_grid", {4, 16}}}}};
  CHECK_NOTHROW(kbl::config_from_json(sw));
  sw["alpha_grid"] = {0.5};
  CHECK_THROWS_AS(kbl::config_from_json(sw), kbl::ConfigError);
  sw.erase("alpha_grid");
  sw["budget_inputs"]["k_grid"] = {16, 4};
  CHECK_THROWS_AS(kbl::config_from_json(sw), kbl::ConfigError);

  json iso{{"kind", "isotropy_audit"},
           {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}, {"k", 1}}},
           {"trials", 1}};
  CHECK_NOTHROW(kbl::config_from_json(iso));
  iso["alpha_grid"] = {0.5};
  CHECK_THROWS_AS(kbl::config_from_json(iso), kbl::ConfigError);
}

TEST_CASE("tail probability campaign: records, rows and dominance") {
  const ExperimentConfig cfg = kbl::config_from_json(base_tail_config());
  const ExperimentResult res = kbl::run_tail_probability(cfg);

  REQUIRE(res.records.size() == 30);
  for (long i = 0; i < 30; ++i) {
    const kbl::TrialRecord& rec = res.records[static_cast<std::size_t>(i)];
    CHECK(rec.trial_index == i);
    REQUIRE_FALSE(rec.error.has_value());
    REQUIRE(rec.deviation_opnorm.has_value());
    CHECK(*rec.deviation_opnorm >= 0.0);
    CHECK(*rec.deviation_opnorm <= 2.0);
    REQUIRE(rec.tp_residual.has_value());
    CHECK(*rec.tp_residual <= 1e-12);  // mixed-unitary channels are exactly TP
    CHECK(rec.lambda_moduli.size() == 4);
  }

  REQUIRE(res.rows.size() == 2);
  CHECK(res.rows[0].alpha == 0.6);
  CHECK(res.rows[1].alpha == 1.2);
  for (const kbl::SummaryRow& row : res.rows) {
    CHECK(row.k == 40);
    CHECK(row.d == 2);
    CHECK(row.t == 1);
    CHECK(row.empirical_tail >= 0.0);
    CHECK(row.empirical_tail <= 1.0);
    CHECK_FALSE(row.vacuous);
  }
  CHECK(res.rows[0].empirical_tail >= res.rows[1].empirical_tail);
  CHECK(res.asserts_ok());
  CHECK(res.extra.at("reference") == "exact");
  CHECK(res.extra.at("failed_trials") == 0);
  CHECK(res.records.size() == static_cast<std::size_t>(cfg.trials));
}

TEST_CASE("decorated tensor signatures fall back to a Monte Carlo reference") {
  json j{{"kind", "tail_probability"},
         {"ensemble",
          {{"kind", "tensor_power_unitary"}, {"d", 2}, {"k", 20}, {"gamma", {"1", "-"}}}},
         {"alpha_grid", {0.3}},
         {"trials", 6},
         {"master_seed", 5},
         {"budget_inputs", {{"reference_samples", 2000}}}};
  const ExperimentResult res = kbl::run_tail_probability(kbl::config_from_json(j));
  CHECK(res.extra.at("reference") == "mc");
  CHECK(res.extra.at("reference_se").get<double>() > 0.0);
  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows[0].vacuous);  // loose threshold: the bound exceeds 1 here
  CHECK(res.asserts_ok());
}

TEST_CASE("jsonl output is byte-identical across worker counts") {
  json j = base_tail_config();
  j["trials"] = 20;
  j["ensemble"]["k"] = 20;

  ExperimentConfig c1 = kbl::config_from_json(j);
  c1.workers = 1;
  ExperimentConfig c3 = kbl::config_from_json(j);
  c3.workers = 3;

  const std::string s1 = kbl::to_jsonl(kbl::run_tail_probability(c1));
  const std::string s3 = kbl::to_jsonl(kbl::run_tail_probability(c3));
  CHECK(s1 == s3);
  CHECK(s1.find("wall_time_ms") == std::string::npos);
  CHECK(s1.find("workers") == std::string::npos);
  CHECK(s1.find("output_path") == std::string::npos);

  // trials record lines plus one summary line, LF endings.
  std::size_t lines = 0;
  for (char c : s1)
    if (c == '\n') ++lines;
  CHECK(lines == 21);
}

TEST_CASE("record and summary serialization shapes") {
  json j = base_tail_config();
  j["trials"] = 3;
  const ExperimentResult res = kbl::run_tail_probability(kbl::config_from_json(j));

  const json rec = kbl::record_to_json(res.records[0]);
  const std::set<std::string> expected = {"trial_index",  "seed_tuple",
                                          "deviation_opnorm", "lambda_moduli",
                                          "tp_residual",  "rectifiable",
                                          "entropy_fixed_point", "error"};
  std::set<std::string> got;
  for (const auto& [key, value] : rec.items()) {
    (void)value;
    got.insert(key);
  }
  CHECK(got == expected);
  CHECK(rec.at("seed_tuple") == json::array({11, 0}));
  CHECK(rec.at("rectifiable").is_null());
  CHECK(rec.at("error").is_null());

  const json s = kbl::summary_to_json(res);
  REQUIRE(s.contains("summary"));
  for (const char* key : {"kind", "config", "rows", "extra", "assert_ok", "assert_failures"})
    CHECK(s.at("summary").contains(key));
  CHECK(s.at("summary").at("kind") == "tail_probability");
  CHECK(s.at("summary").at("rows").size() == 2);
  const json& echo = s.at("summary").at("config");
  CHECK_FALSE(echo.contains("workers"));
  CHECK_FALSE(echo.contains("output_path"));
  CHECK(echo.at("ensemble").at("k") == 40);
  CHECK(echo.at("budget_inputs").contains("C"));
  CHECK(echo.at("alpha_grid") == json::array({0.6, 1.2}));
}

TEST_CASE("csv rendering uses the fixed summary header") {
  json j = base_tail_config();
  j["trials"] = 5;
  const ExperimentResult res = kbl::run_tail_probability(kbl::config_from_json(j));
  std::ostringstream os;
  kbl::write_csv(res, os);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "alpha,empirical_tail,binomial_se,theoretical_tail,vacuous,k,d,t");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == res.rows.size());
}

TEST_CASE("twirling check scales thresholds by d^{t/2} and reports certification") {
  json j{{"kind", "twirling_check"},
         {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}, {"k", 60}}},
         {"eps", {0.5, 1.2}},
         {"trials", 15},
         {"master_seed", 3}};
  const ExperimentResult res = kbl::run_twirling_check(kbl::config_from_json(j));
  REQUIRE(res.rows.size() == 2);
  CHECK(res.rows[0].alpha == 0.5);
  CHECK(res.extra.at("deviation_scale").get<double>() ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  const json& cert = res.extra.at("certification");
  REQUIRE(cert.size() == 2);
  for (const json& c : cert) {
    const double eps = c.at("eps").get<double>();
    CHECK(c.at("certified_fraction").get<double>() >= 0.0);
    CHECK(c.at("p1_bound").get<double>() == eps);
    CHECK(c.at("p2_bound").get<double>() ==
          doctest::Approx(eps / std::sqrt(2.0)).epsilon(1e-14));
  }
  CHECK(res.asserts_ok());

  j["eps"] = {1.5};  // above d^{t/2} = sqrt(2)
  CHECK_THROWS_AS(kbl::run_twirling_check(kbl::config_from_json(j)), kbl::ConfigError);

  json h{{"kind", "twirling_check"},
         {"ensemble", {{"kind", "hermitized_unitary"}, {"d", 2}, {"k", 10}}},
         {"eps", {0.5}},
         {"trials", 1}};
  CHECK_THROWS_AS(kbl::run_twirling_check(kbl::config_from_json(h)), kbl::ConfigError);
}

TEST_CASE("expander campaign scores the spectral gap and reports the count separately") {
  json j{{"kind", "expander_campaign"},
         {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}, {"k", 24}}},
         {"eps", {0.8}},
         {"trials", 40},
         {"master_seed", 21}};
  const ExperimentResult res = kbl::run_expander_campaign(kbl::config_from_json(j));
  CHECK(res.asserts_ok());
  CHECK(res.extra.at("rank") == 1);
  CHECK(res.extra.at("dim_sq") == 4);
  CHECK(res.extra.at("k_condition_ok") == false);  // 24 operators on dim_sq 4
  CHECK(res.extra.at("lambda_r_violations") == 0);
  CHECK(res.extra.at("lambda_r_min").get<double>() == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(res.extra.at("lambda_r_max").get<double>() == doctest::Approx(1.0).epsilon(1e-8));
  const json& per_eps = res.extra.at("per_eps");
  REQUIRE(per_eps.size() == 1);
  CHECK(per_eps[0].at("eps") == 0.8);
  CHECK(per_eps[0].at("pass_fraction").get<double>() >= 0.9);

  j["eps"] = {1.0};
  CHECK_THROWS_AS(kbl::run_expander_campaign(kbl::config_from_json(j)), kbl::ConfigError);
}

TEST_CASE("rectified regimes: unitary family rectifies exactly") {
  json j{{"kind", "rectified_regimes"},
         {"ensemble",
          {{"kind", "custom"}, {"tag", "haar_unitary"}, {"d", 2}, {"k", 30}, {"L", 1.0}}},
         {"eps", {0.9}},
         {"trials", 10},
         {"master_seed", 9},
         {"budget_inputs", {{"regime", 3}, {"C", 30.0}}}};
  const ExperimentResult res = kbl::run_rectified_regimes(kbl::config_from_json(j));
  CHECK(res.extra.at("regime") == 3);
  CHECK(res.extra.at("param") == 0.9);
  CHECK(res.extra.at("predicted_gap").get<double>() == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(res.extra.at("rectifiable_fraction").get<double>() == 1.0);
  CHECK(res.extra.at("max_tp_residual_rectified").get<double>() <= 1e-10);
  CHECK(res.extra.at("gap_fraction_rectified").get<double>() >= 0.9);
  CHECK(res.extra.at("min_entropy_rectified").get<double>() >= 0.6);  // near ln 2
  CHECK(res.extra.at("budget").at("regime_tag") == "three_regimes_3");
  for (const kbl::TrialRecord& rec : res.records) {
    REQUIRE(rec.rectifiable.has_value());
    CHECK(*rec.rectifiable);
    REQUIRE(rec.entropy_fixed_point.has_value());
    CHECK(*rec.entropy_fixed_point >= 0.0);
  }
  REQUIRE(res.rows.size() == 1);
  CHECK_FALSE(res.rows[0].vacuous);
  CHECK(res.asserts_ok());
}

TEST_CASE("rectified regimes: hermitized ensemble with a vacuous budget still runs") {
  json j{{"kind", "rectified_regimes"},
         {"ensemble", {{"kind", "hermitized_unitary"}, {"d", 3}, {"k", 40}}},
         {"eps", {0.9}},
         {"trials", 12},
         {"master_seed", 2},
         {"budget_inputs", {{"regime", 3}, {"C", 25.0}}}};
  const ExperimentResult res = kbl::run_rectified_regimes(kbl::config_from_json(j));
  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows[0].vacuous);  // C = 25 is barely above the norm threshold: bound > 1
  CHECK(res.extra.at("rectifiable_fraction").get<double>() == 1.0);
  CHECK(res.extra.at("max_tp_residual_rectified").get<double>() <= 1e-10);
  CHECK(res.asserts_ok());
}

TEST_CASE("rectified regimes gate rejects anisotropic custom ensembles") {
  json j{{"kind", "rectified_regimes"},
         {"ensemble",
          {{"kind", "custom"}, {"tag", "constant_identity"}, {"d", 2}, {"k", 4}, {"L", 1.0}}},
         {"eps", {0.9}},
         {"trials", 2},
         {"budget_inputs", {{"regime", 3}}}};
  CHECK_THROWS_AS(kbl::run_rectified_regimes(kbl::config_from_json(j)), kbl::ConfigError);
}

TEST_CASE("scaling sweep: medians decay like 1/sqrt(k) with uniform weights") {
  json j{{"kind", "scaling_sweep"},
         {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}, {"k", 4}}},
         {"trials", 21},
         {"master_seed", 31},
         {"budget_inputs", {{"k_grid", {4, 16}}}}};
  const ExperimentResult res = kbl::run_scaling_sweep(kbl::config_from_json(j));
  CHECK(res.records.empty());  // sweep emits summary rows only
  REQUIRE(res.rows.size() == 2);
  CHECK(res.rows[0].k == 4);
  CHECK(res.rows[1].k == 16);
  CHECK(res.rows[0].alpha > res.rows[1].alpha);  // medians shrink with k
  const json& ratios = res.extra.at("ratios");
  REQUIRE(ratios.size() == 1);
  CHECK(ratios[0].get<double>() == doctest::Approx(2.0).epsilon(0.2));
  const double slope = res.extra.at("log_log_slope").get<double>();
  CHECK(slope == doctest::Approx(-0.5).epsilon(0.4));
  CHECK(res.asserts_ok());
  CHECK(res.extra.at("per_k").size() == 2);
}

TEST_CASE("scaling sweep: uneven sub-normalized weights stall the decay") {
  json j{{"kind", "scaling_sweep"},
         {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}, {"k", 64}}},
         {"trials", 11},
         {"master_seed", 13},
         {"budget_inputs", {{"k_grid", {64, 256}}, {"uneven_weights", true}, {"L_w", 1.0}}}};
  const ExperimentResult res = kbl::run_scaling_sweep(kbl::config_from_json(j));
  REQUIRE(res.rows.size() == 2);
  // Weights ~ U[0, 1/k] keep the total weight near 1/2, so the deviation from
  // the twirl plateaus near 1/2 instead of decaying like 1/sqrt(k).
  CHECK(res.rows[0].alpha >= 0.3);
  CHECK(res.rows[0].alpha <= 0.7);
  CHECK(res.rows[1].alpha >= 0.3);
  CHECK(res.rows[1].alpha <= 0.7);
  CHECK(res.extra.at("uneven_weights") == true);
  CHECK(res.asserts_ok());  // the 1/sqrt(k) ratio gate is skipped in this mode
}

TEST_CASE("isotropy audit passes Haar sampling and flags a constant family") {
  json good{{"kind", "isotropy_audit"},
            {"ensemble", {{"kind", "haar_unitary"}, {"d", 2}, {"k", 1}}},
            {"trials", 2},
            {"master_seed", 77},
            {"budget_inputs", {{"n_samples", 20000}}}};
  const ExperimentResult g = kbl::run_isotropy_audit(kbl::config_from_json(good));
  CHECK(g.extra.at("all_pass") == true);
  CHECK(g.asserts_ok());
  REQUIRE(g.records.size() == 2);
  for (const kbl::TrialRecord& rec : g.records) {
    REQUIRE(rec.deviation_opnorm.has_value());
    CHECK(*rec.deviation_opnorm <= 0.1);
  }
  REQUIRE(g.extra.at("audits").size() == 2);
  CHECK(g.extra.at("audits")[0].at("pass") == true);

  json bad{{"kind", "isotropy_audit"},
           {"ensemble",
            {{"kind", "custom"}, {"tag", "constant_identity"}, {"d", 2}, {"k", 1}, {"L", 1.0}}},
           {"trials", 1},
           {"budget_inputs", {{"n_samples", 5000}}}};
  const ExperimentResult b = kbl::run_isotropy_audit(kbl::config_from_json(bad));
  CHECK(b.extra.at("all_pass") == false);
  CHECK_FALSE(b.asserts_ok());
}

TEST_CASE("runners reject configs of the wrong kind, dispatch routes by kind") {
  const ExperimentConfig cfg = kbl::config_from_json(base_tail_config());
  CHECK_THROWS_AS(kbl::run_twirling_check(cfg), kbl::ConfigError);
  const ExperimentResult res = kbl::run_experiment(cfg);
  CHECK(res.rows.size() == 2);
}
