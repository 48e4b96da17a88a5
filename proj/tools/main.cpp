// SPDX-License-Identifier: Apache-2.0
//
// Command line front end. Experiment subcommands read a JSON config,
// run the campaign, and emit JSONL records or a CSV summary; the
// calculator subcommands (bernstein-bound, twirl-build, spectrum) work
// without a config file.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kbl/bounds.hpp"
#include "kbl/channels.hpp"
#include "kbl/harness.hpp"
#include "kbl/spectral.hpp"
#include "kbl/twirl.hpp"

namespace {

struct ExperimentOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  std::string format = "jsonl";
  bool check_asserts = false;
};

int resolve_workers(const std::optional<int>& cli_value, int config_value) {
  if (cli_value) return *cli_value;
  if (const char* env = std::getenv("KBL_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w < 1) throw std::invalid_argument("nonpositive");
      return w;
    } catch (const std::exception&) {
      throw kbl::ConfigError("KBL_WORKERS must be a positive integer");
    }
  }
  return config_value;
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kbl::ConfigError("cannot open file: " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw kbl::ConfigError(std::string("JSON parse failure in ") + path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw kbl::ConfigError("cannot open output file: " + path);
  out << text;
  if (!out) throw kbl::ConfigError("write failure: " + path);
}

int run_experiment_cmd(kbl::ExperimentKind kind, const ExperimentOpts& opts) {
  if (opts.format != "jsonl" && opts.format != "csv")
    throw kbl::ConfigError("--format must be jsonl or csv");
  kbl::ExperimentConfig cfg = kbl::config_from_json(load_json_file(opts.config), kind);
  if (opts.seed) cfg.master_seed = *opts.seed;
  cfg.workers = resolve_workers(opts.workers, cfg.workers);
  if (!opts.out.empty()) cfg.output_path = opts.out;

  const kbl::ExperimentResult res = kbl::run_experiment(cfg);

  std::ostringstream body;
  if (opts.format == "jsonl") kbl::write_jsonl(res, body);
  else kbl::write_csv(res, body);
  write_text(cfg.output_path, body.str());

  std::cerr << kbl::experiment_kind_name(cfg.kind) << ": " << res.records.size()
            << " records, " << res.rows.size() << " summary rows";
  if (!res.asserts_ok()) std::cerr << ", " << res.assert_failures.size() << " assert failures";
  std::cerr << "\n";

  if (opts.check_asserts && !res.asserts_ok()) {
    for (const std::string& msg : res.assert_failures) std::cerr << "assert: " << msg << "\n";
    return 3;
  }
  return 0;
}

kbl::GammaSignature parse_gamma_csv(const std::string& csv) {
  kbl::GammaSignature g;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    g.decorations.push_back(kbl::decoration_from_symbol(tok));
  if (g.decorations.empty()) throw kbl::ConfigError("--gamma: empty signature");
  return g;
}

struct BernsteinOpts {
  std::string regime;
  int d = 2;
  int t = 1;
  double alpha = 0.0;
  double eps = 0.0;
  double delta = 0.0;
  double L = 1.0;
  double C = 30.0;
};

int run_bernstein_cmd(const BernsteinOpts& o) {
  auto need = [](double v, const char* flag) {
    if (v <= 0.0) throw kbl::ConfigError(std::string("bernstein-bound: missing ") + flag);
    return v;
  };
  kbl::BudgetResult b;
  if (o.regime == "tdesign") b = kbl::tdesign_budget(o.d, o.t, need(o.alpha, "--alpha"), o.C);
  else if (o.regime == "twirling") b = kbl::twirling_budget(o.d, o.t, need(o.eps, "--eps"), o.C);
  else if (o.regime == "generalized-cp")
    b = kbl::generalized_cp_budget(o.d, o.L, need(o.alpha, "--alpha"), o.C);
  else if (o.regime == "almost-invertible")
    b = kbl::almost_invertible_budget(o.d, o.L, need(o.alpha, "--alpha"), o.C);
  else if (o.regime == "new-model")
    b = kbl::new_model_budget(o.d, o.L, need(o.alpha, "--alpha"), o.C);
  else if (o.regime == "regime1")
    b = kbl::three_regimes_budget(o.d, o.L, need(o.eps, "--eps"), 1, o.C);
  else if (o.regime == "regime2")
    b = kbl::three_regimes_budget(o.d, o.L, need(o.delta, "--delta"), 2, o.C);
  else if (o.regime == "regime3")
    b = kbl::three_regimes_budget(o.d, o.L, need(o.eps, "--eps"), 3, o.C);
  else
    throw kbl::ConfigError("bernstein-bound: unknown --regime \"" + o.regime + "\"");

  nlohmann::json out = kbl::budget_to_json(b);
  out["inputs"] = {{"regime", o.regime}, {"d", o.d}, {"t", o.t}, {"L", o.L}, {"C", o.C}};
  if (o.alpha > 0.0) out["inputs"]["alpha"] = o.alpha;
  if (o.eps > 0.0) out["inputs"]["eps"] = o.eps;
  if (o.delta > 0.0) out["inputs"]["delta"] = o.delta;
  std::cout << out.dump() << "\n";
  return 0;
}

struct TwirlBuildOpts {
  int d = 2;
  int t = 0;
  std::string gamma_csv;
  long samples = 0;
  std::uint64_t seed = 0;
  std::optional<int> workers;
  std::string out;
};

int run_twirl_build_cmd(const TwirlBuildOpts& o) {
  kbl::GammaSignature gamma;
  if (!o.gamma_csv.empty()) {
    gamma = parse_gamma_csv(o.gamma_csv);
    if (o.t != 0 && o.t != gamma.t())
      throw kbl::ConfigError("twirl-build: --t conflicts with --gamma length");
  } else if (o.t >= 1) {
    gamma = kbl::GammaSignature::plain(o.t);
  } else {
    throw kbl::ConfigError("twirl-build: give --t or --gamma");
  }

  kbl::TwirlChannel tw;
  if (gamma.all_plain() && o.samples == 0) {
    tw = kbl::exact_twirl(o.d, gamma.t());
  } else if (o.samples > 0) {
    tw = kbl::mc_twirl(o.d, gamma, o.samples, o.seed, resolve_workers(o.workers, 1));
  } else {
    throw kbl::ConfigError("twirl-build: decorated gamma needs --samples");
  }

  const nlohmann::json j = tw;
  write_text(o.out, j.dump() + "\n");
  std::cerr << "twirl d=" << tw.d << " t=" << tw.t << (tw.exact ? " exact" : " mc")
            << " rank=" << tw.rank << "\n";
  return 0;
}

struct SpectrumOpts {
  std::string in;
  int d = 0;
  int t = 0;
  std::string out;
};

int run_spectrum_cmd(const SpectrumOpts& o) {
  const kbl::KrausChannel ch = load_json_file(o.in).get<kbl::KrausChannel>();
  const kbl::SuperOpMatrix nat = kbl::natural_rep(ch);

  nlohmann::json j{{"m", ch.out_dim()},
                   {"n", ch.in_dim()},
                   {"k", ch.k()},
                   {"two_two_norm", kbl::two_two_norm(nat)}};
  if (ch.square()) {
    j["tp_residual"] = kbl::is_trace_preserving(ch).residual;
    j["unital_residual"] = kbl::is_unital(ch).residual;
    const kbl::Spectrum sp = kbl::spectrum_by_modulus(nat.mat);
    nlohmann::json vals = nlohmann::json::array();
    nlohmann::json mods = nlohmann::json::array();
    for (kbl::Index i = 0; i < sp.size(); ++i) {
      vals.push_back({sp.values(i).real(), sp.values(i).imag()});
      mods.push_back(sp.modulus(i));
    }
    j["eigenvalues"] = std::move(vals);
    j["moduli"] = std::move(mods);
  }
  if (o.d != 0 || o.t != 0) {
    if (o.d < 2 || o.t < 1) throw kbl::ConfigError("spectrum: give both --d and --t");
    j["gap_report"] = kbl::gap_report_to_json(kbl::gap_report(nat, o.d, o.t));
  }
  write_text(o.out, j.dump() + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for random Kraus channels"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, kbl::ExperimentKind>> kinds = {
      {"tailprob", kbl::ExperimentKind::TailProbability},
      {"twirl-check", kbl::ExperimentKind::TwirlingCheck},
      {"expander", kbl::ExperimentKind::ExpanderCampaign},
      {"rectified", kbl::ExperimentKind::RectifiedRegimes},
      {"scaling", kbl::ExperimentKind::ScalingSweep},
      {"isotropy", kbl::ExperimentKind::IsotropyAudit},
  };
  std::vector<std::shared_ptr<ExperimentOpts>> exp_opts;
  std::vector<std::pair<CLI::App*, std::size_t>> exp_subs;
  for (const auto& [name, kind] : kinds) {
    (void)kind;
    auto opts = std::make_shared<ExperimentOpts>();
    CLI::App* sub = app.add_subcommand(name, "run a " + name + " campaign from a JSON config");
    sub->add_option("--config", opts->config, "experiment config (JSON)")->required();
    sub->add_option("--seed", opts->seed, "override master_seed");
    sub->add_option("--workers", opts->workers, "worker threads (beats KBL_WORKERS and config)");
    sub->add_option("--out", opts->out, "output path (default: config output_path or stdout)");
    sub->add_option("--format", opts->format, "jsonl or csv")->capture_default_str();
    sub->add_flag("--assert", opts->check_asserts, "exit 3 when bound assertions fail");
    exp_subs.emplace_back(sub, exp_opts.size());
    exp_opts.push_back(std::move(opts));
  }

  BernsteinOpts bo;
  CLI::App* bb = app.add_subcommand("bernstein-bound", "evaluate a sample budget");
  bb->add_option("--regime", bo.regime,
                 "tdesign | twirling | generalized-cp | almost-invertible | new-model | "
                 "regime1 | regime2 | regime3")
      ->required();
  bb->add_option("--d", bo.d, "local dimension")->capture_default_str();
  bb->add_option("--t", bo.t, "tensor factors")->capture_default_str();
  bb->add_option("--alpha", bo.alpha, "deviation threshold");
  bb->add_option("--eps", bo.eps, "gap / twirling threshold");
  bb->add_option("--delta", bo.delta, "regime-2 parameter");
  bb->add_option("--L", bo.L, "operator norm certificate")->capture_default_str();
  bb->add_option("--C", bo.C, "budget constant")->capture_default_str();

  TwirlBuildOpts to;
  CLI::App* tb = app.add_subcommand("twirl-build", "emit a twirl superoperator to a file");
  tb->add_option("--d", to.d, "local dimension")->capture_default_str();
  tb->add_option("--t", to.t, "tensor factors (plain gamma)");
  tb->add_option("--gamma", to.gamma_csv, "decorations, e.g. 1,1 or 1,-");
  tb->add_option("--samples", to.samples, "Monte Carlo samples (0 = exact, plain gamma only)");
  tb->add_option("--seed", to.seed, "Monte Carlo master seed");
  tb->add_option("--workers", to.workers, "worker threads");
  tb->add_option("--out", to.out, "output path (default stdout)");

  SpectrumOpts so;
  CLI::App* sp = app.add_subcommand("spectrum", "analyze a serialized Kraus channel");
  sp->add_option("--in", so.in, "channel JSON file")->required();
  sp->add_option("--d", so.d, "compare against the exact twirl for this d");
  sp->add_option("--t", so.t, "and this t");
  sp->add_option("--out", so.out, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (const auto& [sub, idx] : exp_subs)
      if (sub->parsed()) return run_experiment_cmd(kinds[idx].second, *exp_opts[idx]);
    if (bb->parsed()) return run_bernstein_cmd(bo);
    if (tb->parsed()) return run_twirl_build_cmd(to);
    if (sp->parsed()) return run_spectrum_cmd(so);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const kbl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const kbl::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
