// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: config-driven Monte Carlo campaigns over random
// Kraus ensembles, with per-trial records, bound-vs-empirical summary rows,
// and deterministic JSONL/CSV emission. Identical config and master seed
// produce byte-identical record streams for any worker count.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kbl/bounds.hpp"
#include "kbl/ensembles.hpp"
#include "kbl/matcore.hpp"

namespace kbl {

enum class ExperimentKind {
  TailProbability,
  TwirlingCheck,
  ExpanderCampaign,
  RectifiedRegimes,
  ScalingSweep,
  IsotropyAudit,
};

const char* experiment_kind_name(ExperimentKind kind);
ExperimentKind experiment_kind_from_name(const std::string& name);

// Knobs consumed by the bounds module and kind-specific extras. Parsed
// strictly: unknown keys are rejected.
struct BudgetInputs {
  double C = 30.0;
  double L = 1.0;  // mirrors ensemble.L; mismatches are config errors
  int regime = 3;
  double delta = 0.5;               // regime-2 parameter
  long reference_samples = 20000;   // mc_twirl reference size for decorated gamma
  std::vector<long long> k_grid;    // scaling sweep only
  bool uneven_weights = false;      // scaling sweep: weights ~ U[0, L_w/k]
  double L_w = 2.0;
  long n_samples = 100000;          // isotropy audit sample count
  double confidence_sigmas = 5.0;   // isotropy audit threshold
  double entropy_delta = 0.5;       // expander fixed-point entropy fraction
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::TailProbability;
  EnsembleSpec ensemble;
  GammaSignature gamma;       // resolved: ensemble's for tensor kinds, else (1)
  std::vector<double> grid;   // alpha grid or eps grid, kind-dependent
  long trials = 1;
  std::uint64_t master_seed = 0;
  BudgetInputs budget;
  std::string output_path;    // empty = stdout
  int workers = 1;

  void validate() const;
};

// Strict parse; `kind` may be forced by the caller (CLI subcommand), in
// which case a conflicting "kind" key is an error. Derives ensemble.k from
// the bounds module when the config omits it or sets it to 0.
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  std::optional<ExperimentKind> forced_kind = {});

// Echo of the resolved config. Runtime-only fields (workers, output_path)
// are excluded so the echo is invariant across equivalent runs.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct TrialRecord {
  long trial_index = 0;
  std::uint64_t master_seed = 0;
  std::optional<double> deviation_opnorm;
  std::vector<double> lambda_moduli;  // leading 8, empty if unavailable
  std::optional<double> tp_residual;
  std::optional<bool> rectifiable;
  std::optional<double> entropy_fixed_point;
  std::optional<std::string> error;  // per-trial numerical failure, if any
  double wall_time_ms = 0.0;         // in-memory only, never serialized
};

struct SummaryRow {
  double alpha = 0.0;  // threshold column; eps for twirling rows
  double empirical_tail = 0.0;
  double binomial_se = 0.0;
  double theoretical_tail = 0.0;
  bool vacuous = false;
  long long k = 0;
  int d = 0;
  int t = 0;
};

struct ExperimentResult {
  ExperimentConfig cfg;  // resolved
  std::vector<TrialRecord> records;
  std::vector<SummaryRow> rows;
  nlohmann::json extra;  // kind-specific summary payload
  std::vector<std::string> assert_failures;

  bool asserts_ok() const { return assert_failures.empty(); }
};

ExperimentResult run_tail_probability(const ExperimentConfig& cfg);
ExperimentResult run_twirling_check(const ExperimentConfig& cfg);
ExperimentResult run_expander_campaign(const ExperimentConfig& cfg);
ExperimentResult run_rectified_regimes(const ExperimentConfig& cfg);
ExperimentResult run_scaling_sweep(const ExperimentConfig& cfg);
ExperimentResult run_isotropy_audit(const ExperimentConfig& cfg);

// Dispatch on cfg.kind.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// One TrialRecord per line, then one summary object line. LF endings.
void write_jsonl(const ExperimentResult& res, std::ostream& os);
std::string to_jsonl(const ExperimentResult& res);

// Summary rows only, flat CSV with a header line.
void write_csv(const ExperimentResult& res, std::ostream& os);

// Keys serialize in nlohmann's map order (alphabetical), which is stable
// across runs and platforms.
nlohmann::json record_to_json(const TrialRecord& rec);
nlohmann::json summary_to_json(const ExperimentResult& res);

}  // namespace kbl
