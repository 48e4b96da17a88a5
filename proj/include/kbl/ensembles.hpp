// SPDX-License-Identifier: Apache-2.0
//
// Random Kraus ensembles. Sampling is driven by a counter-based generator
// keyed on (master_seed, trial_index, op_index) so that any operator in any
// trial can be regenerated independently of scheduling or thread count.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kbl/matcore.hpp"

namespace kbl {

// Per-factor decoration of a tensor-power unitary: U, U^dag, conj(U), U^T.
enum class Decoration { Plain, Adjoint, Conjugate, Transpose };

const char* decoration_symbol(Decoration dec);               // "1", "*", "-", "T"
Decoration decoration_from_symbol(const std::string& sym);

struct GammaSignature {
  std::vector<Decoration> decorations;

  int t() const { return static_cast<int>(decorations.size()); }
  bool all_plain() const;
  static GammaSignature plain(int t);
  std::vector<std::string> symbols() const;
};

bool operator==(const GammaSignature& a, const GammaSignature& b);

void to_json(nlohmann::json& j, const GammaSignature& g);
void from_json(const nlohmann::json& j, GammaSignature& g);

enum class EnsembleKind { HaarUnitary, TensorPowerUnitary, HermitizedUnitary, Custom };

const char* ensemble_kind_name(EnsembleKind kind);
EnsembleKind ensemble_kind_from_name(const std::string& name);

struct EnsembleSpec {
  EnsembleKind kind = EnsembleKind::HaarUnitary;
  GammaSignature gamma;    // TensorPowerUnitary only
  int d = 2;               // local dimension
  int k = 1;               // number of Kraus operators per draw
  double L = 1.0;          // operator-norm certificate ||A|| <= L
  std::string custom_tag;  // Custom only, resolved via the sampler registry

  static EnsembleSpec haar(int d, int k);
  static EnsembleSpec tensor_power(GammaSignature gamma, int d, int k);
  static EnsembleSpec hermitized(int d, int k);
  static EnsembleSpec custom(std::string tag, int d, int k, double L);

  // Dimension the sampled operators act on: d^t for tensor powers, else d.
  Index op_dim() const;
  int t() const { return kind == EnsembleKind::TensorPowerUnitary ? gamma.t() : 1; }
  void validate() const;
};

void to_json(nlohmann::json& j, const EnsembleSpec& spec);
void from_json(const nlohmann::json& j, EnsembleSpec& spec);

// Key for one independent random stream.
struct SeededDraw {
  std::uint64_t master_seed = 0;
  std::uint64_t trial_index = 0;
  std::uint64_t op_index = 0;
};

// xoshiro256++ seeded through a splitmix64 mix of the draw key. Nearby keys
// give unrelated streams; identical keys give identical streams on every
// platform (no library distributions are involved).
class CounterRng {
 public:
  explicit CounterRng(const SeededDraw& draw);

  std::uint64_t next_u64();
  double next_double();    // uniform on [0, 1)
  double next_gaussian();  // standard normal, Box-Muller

 private:
  std::array<std::uint64_t, 4> s_{};
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Haar-distributed unitary via QR of a complex Ginibre matrix with the
// R-diagonal phase correction; d = 1 reduces to a uniform phase.
Matrix sample_haar_unitary(int d, CounterRng& rng);
Matrix sample_haar_unitary(int d, const SeededDraw& draw);

// One i.i.d. Kraus family for the given spec. Operator i consumes the
// stream keyed (master_seed, trial_index, i).
std::vector<Matrix> sample_kraus_set(const EnsembleSpec& spec,
                                     std::uint64_t master_seed,
                                     std::uint64_t trial_index);

// Custom samplers take (d, rng) and must return a d x d matrix.
using CustomSampler = std::function<Matrix(int, CounterRng&)>;
void register_custom_ensemble(const std::string& tag, CustomSampler sampler);
bool has_custom_ensemble(const std::string& tag);

// Empirical check of the second-moment structure
// E[A_{xy} conj(A_{zw})] = delta_{xz} delta_{yw} / d on op_dim-sized indices,
// plus the operator-norm certificate max ||A|| <= L.
struct IsotropyReport {
  long n_samples = 0;
  double confidence_sigmas = 0.0;
  double max_abs_deviation = 0.0;   // worst |empirical - target| over index tuples
  double worst_se_multiple = 0.0;   // max over tuples of deviation / standard error
  std::array<int, 4> worst_index{}; // (x, y, z, w) attaining worst_se_multiple
  double max_op_norm = 0.0;
  double norm_bound = 0.0;
  bool norm_ok = false;
  bool pass = false;                // worst_se_multiple <= confidence_sigmas
};

IsotropyReport validate_isotropy(const EnsembleSpec& spec, long n_samples,
                                 double confidence_sigmas,
                                 std::uint64_t master_seed = 0);

nlohmann::json isotropy_report_to_json(const IsotropyReport& rep);

// Per-summand bounds for the concentration machinery, for the centered
// one-sample summands of the natural representation estimator at the given
// spec.k: M bounds each summand's operator norm, V the variance proxy, and
// D = m^2 + n^2 is the dimension factor.
struct MVConstants {
  double M = 0.0;
  double V = 0.0;
  long long D = 0;
};

MVConstants ensemble_mv_constants(const EnsembleSpec& spec);

}  // namespace kbl
