// SPDX-License-Identifier: Apache-2.0

#include "kbl/ensembles.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>

namespace kbl {

namespace {

constexpr std::uint64_t kGamma64 = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

CounterRng::CounterRng(const SeededDraw& draw) {
  std::uint64_t x = mix64(draw.master_seed + kGamma64);
  x = mix64(x ^ (draw.trial_index + 0xBF58476D1CE4E5B9ULL));
  x = mix64(x ^ (draw.op_index + 0x94D049BB133111EBULL));
  for (auto& s : s_) {
    x += kGamma64;
    s = mix64(x);
  }
  if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // all-zero state is absorbing
}

std::uint64_t CounterRng::next_u64() {
  const std::uint64_t result = rotl64(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl64(s_[3], 45);
  return result;
}

double CounterRng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::next_gaussian() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = 1.0 - next_double();  // (0, 1], keeps the log finite
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

const char* decoration_symbol(Decoration dec) {
  switch (dec) {
    case Decoration::Plain: return "1";
    case Decoration::Adjoint: return "*";
    case Decoration::Conjugate: return "-";
    case Decoration::Transpose: return "T";
  }
  throw ConfigError("decoration_symbol: unknown decoration");
}

Decoration decoration_from_symbol(const std::string& sym) {
  if (sym == "1") return Decoration::Plain;
  if (sym == "*") return Decoration::Adjoint;
  if (sym == "-") return Decoration::Conjugate;
  if (sym == "T") return Decoration::Transpose;
  throw ConfigError("decoration_from_symbol: expected one of \"1\", \"*\", \"-\", \"T\", got \"" + sym + "\"");
}

bool GammaSignature::all_plain() const {
  for (Decoration dec : decorations)
    if (dec != Decoration::Plain) return false;
  return true;
}

GammaSignature GammaSignature::plain(int t) {
  if (t < 1) throw ConfigError("GammaSignature: t must be at least 1");
  return GammaSignature{std::vector<Decoration>(static_cast<std::size_t>(t), Decoration::Plain)};
}

std::vector<std::string> GammaSignature::symbols() const {
  std::vector<std::string> out;
  out.reserve(decorations.size());
  for (Decoration dec : decorations) out.emplace_back(decoration_symbol(dec));
  return out;
}

bool operator==(const GammaSignature& a, const GammaSignature& b) {
  return a.decorations == b.decorations;
}

void to_json(nlohmann::json& j, const GammaSignature& g) { j = g.symbols(); }

void from_json(const nlohmann::json& j, GammaSignature& g) {
  if (!j.is_array() || j.empty())
    throw ConfigError("gamma: expected a nonempty array of decoration symbols");
  g.decorations.clear();
  for (const auto& e : j) g.decorations.push_back(decoration_from_symbol(e.get<std::string>()));
}

const char* ensemble_kind_name(EnsembleKind kind) {
  switch (kind) {
    case EnsembleKind::HaarUnitary: return "haar_unitary";
    case EnsembleKind::TensorPowerUnitary: return "tensor_power_unitary";
    case EnsembleKind::HermitizedUnitary: return "hermitized_unitary";
    case EnsembleKind::Custom: return "custom";
  }
  throw ConfigError("ensemble_kind_name: unknown kind");
}

EnsembleKind ensemble_kind_from_name(const std::string& name) {
  if (name == "haar_unitary") return EnsembleKind::HaarUnitary;
  if (name == "tensor_power_unitary") return EnsembleKind::TensorPowerUnitary;
  if (name == "hermitized_unitary") return EnsembleKind::HermitizedUnitary;
  if (name == "custom") return EnsembleKind::Custom;
  throw ConfigError("ensemble kind: unknown name \"" + name + "\"");
}

EnsembleSpec EnsembleSpec::haar(int d, int k) {
  EnsembleSpec s;
  s.kind = EnsembleKind::HaarUnitary;
  s.d = d;
  s.k = k;
  s.L = 1.0;
  s.validate();
  return s;
}

EnsembleSpec EnsembleSpec::tensor_power(GammaSignature gamma, int d, int k) {
  EnsembleSpec s;
  s.kind = EnsembleKind::TensorPowerUnitary;
  s.gamma = std::move(gamma);
  s.d = d;
  s.k = k;
  s.L = 1.0;
  s.validate();
  return s;
}

EnsembleSpec EnsembleSpec::hermitized(int d, int k) {
  EnsembleSpec s;
  s.kind = EnsembleKind::HermitizedUnitary;
  s.d = d;
  s.k = k;
  s.L = std::numbers::sqrt2;
  s.validate();
  return s;
}

EnsembleSpec EnsembleSpec::custom(std::string tag, int d, int k, double L) {
  EnsembleSpec s;
  s.kind = EnsembleKind::Custom;
  s.custom_tag = std::move(tag);
  s.d = d;
  s.k = k;
  s.L = L;
  s.validate();
  return s;
}

Index EnsembleSpec::op_dim() const {
  Index dim = 1;
  for (int i = 0; i < t(); ++i) dim *= d;
  return dim;
}

void EnsembleSpec::validate() const {
  if (d < 2) throw ConfigError("EnsembleSpec: d must be at least 2");
  if (k < 1) throw ConfigError("EnsembleSpec: k must be at least 1");
  if (!std::isfinite(L) || L <= 0.0)
    throw ConfigError("EnsembleSpec: L must be finite and positive");
  switch (kind) {
    case EnsembleKind::HaarUnitary:
      if (L != 1.0) throw ConfigError("EnsembleSpec: haar_unitary pins L = 1");
      break;
    case EnsembleKind::TensorPowerUnitary:
      if (gamma.t() < 1) throw ConfigError("EnsembleSpec: tensor_power_unitary needs gamma");
      if (L != 1.0) throw ConfigError("EnsembleSpec: tensor_power_unitary pins L = 1");
      break;
    case EnsembleKind::HermitizedUnitary:
      if (L != std::numbers::sqrt2)
        throw ConfigError("EnsembleSpec: hermitized_unitary pins L = sqrt(2)");
      break;
    case EnsembleKind::Custom:
      if (custom_tag.empty()) throw ConfigError("EnsembleSpec: custom needs a tag");
      break;
  }
}

void to_json(nlohmann::json& j, const EnsembleSpec& spec) {
  j = nlohmann::json{{"kind", ensemble_kind_name(spec.kind)},
                     {"d", spec.d},
                     {"k", spec.k},
                     {"L", spec.L}};
  if (spec.kind == EnsembleKind::TensorPowerUnitary) j["gamma"] = spec.gamma;
  if (spec.kind == EnsembleKind::Custom) j["tag"] = spec.custom_tag;
}

void from_json(const nlohmann::json& j, EnsembleSpec& spec) {
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError("ensemble: expected an object with a \"kind\"");
  spec = EnsembleSpec{};
  spec.kind = ensemble_kind_from_name(j.at("kind").get<std::string>());
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") continue;
    if (key == "d") spec.d = value.get<int>();
    else if (key == "k") spec.k = value.get<int>();
    else if (key == "L") spec.L = value.get<double>();
    else if (key == "gamma" && spec.kind == EnsembleKind::TensorPowerUnitary)
      spec.gamma = value.get<GammaSignature>();
    else if (key == "tag" && spec.kind == EnsembleKind::Custom)
      spec.custom_tag = value.get<std::string>();
    else throw ConfigError("ensemble: unknown key \"" + key + "\" for kind " +
                           ensemble_kind_name(spec.kind));
  }
  // Kinds with a pinned norm certificate fill it in when omitted.
  if (!j.contains("L")) {
    if (spec.kind == EnsembleKind::HermitizedUnitary) spec.L = std::numbers::sqrt2;
    else if (spec.kind != EnsembleKind::Custom) spec.L = 1.0;
    else throw ConfigError("ensemble: custom requires an explicit L");
  }
  spec.validate();
}

Matrix sample_haar_unitary(int d, CounterRng& rng) {
  if (d < 1) throw ConfigError("sample_haar_unitary: d must be positive");
  Matrix z(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c)
      z(r, c) = Complex(rng.next_gaussian(), rng.next_gaussian());
  Eigen::HouseholderQR<Matrix> qr(z);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  // Multiplying column j by the phase of R_jj makes the factorization with
  // positive-diagonal R; that Q is Haar distributed.
  const Matrix& packed = qr.matrixQR();
  for (int j = 0; j < d; ++j) {
    const Complex rjj = packed(j, j);
    const double a = std::abs(rjj);
    q.col(j) *= (a > 0.0) ? rjj / a : Complex(1.0, 0.0);
  }
  return q;
}

Matrix sample_haar_unitary(int d, const SeededDraw& draw) {
  CounterRng rng(draw);
  return sample_haar_unitary(d, rng);
}

namespace {

std::map<std::string, CustomSampler>& custom_registry() {
  static std::map<std::string, CustomSampler> reg = [] {
    std::map<std::string, CustomSampler> m;
    m["constant_identity"] = [](int d, CounterRng&) {
      return Matrix(Matrix::Identity(d, d));
    };
    m["haar_unitary"] = [](int d, CounterRng& rng) {
      return sample_haar_unitary(d, rng);
    };
    return m;
  }();
  return reg;
}

std::mutex& custom_registry_mutex() {
  static std::mutex mu;
  return mu;
}

Matrix sample_single_op(const EnsembleSpec& spec, CounterRng& rng) {
  switch (spec.kind) {
    case EnsembleKind::HaarUnitary:
      return sample_haar_unitary(spec.d, rng);
    case EnsembleKind::HermitizedUnitary: {
      const Matrix u = sample_haar_unitary(spec.d, rng);
      return (u + u.adjoint()) / std::numbers::sqrt2;
    }
    case EnsembleKind::TensorPowerUnitary: {
      const Matrix u = sample_haar_unitary(spec.d, rng);
      Matrix op;
      for (Decoration dec : spec.gamma.decorations) {
        Matrix factor;
        switch (dec) {
          case Decoration::Plain: factor = u; break;
          case Decoration::Adjoint: factor = u.adjoint(); break;
          case Decoration::Conjugate: factor = u.conjugate(); break;
          case Decoration::Transpose: factor = u.transpose(); break;
        }
        op = (op.size() == 0) ? std::move(factor) : kron(op, factor);
      }
      return op;
    }
    case EnsembleKind::Custom: {
      CustomSampler sampler;
      {
        std::lock_guard<std::mutex> lock(custom_registry_mutex());
        auto it = custom_registry().find(spec.custom_tag);
        if (it == custom_registry().end())
          throw ConfigError("custom ensemble \"" + spec.custom_tag + "\" is not registered");
        sampler = it->second;
      }
      Matrix op = sampler(spec.d, rng);
      if (op.rows() != spec.d || op.cols() != spec.d)
        throw ConfigError("custom ensemble \"" + spec.custom_tag + "\" returned a wrong-shaped matrix");
      if (!is_finite(op))
        throw NumericalError("custom ensemble \"" + spec.custom_tag + "\" returned non-finite entries");
      return op;
    }
  }
  throw ConfigError("sample_single_op: unknown ensemble kind");
}

}  // namespace

std::vector<Matrix> sample_kraus_set(const EnsembleSpec& spec,
                                     std::uint64_t master_seed,
                                     std::uint64_t trial_index) {
  spec.validate();
  std::vector<Matrix> ops;
  ops.reserve(static_cast<std::size_t>(spec.k));
  for (int i = 0; i < spec.k; ++i) {
    CounterRng rng(SeededDraw{master_seed, trial_index, static_cast<std::uint64_t>(i)});
    ops.push_back(sample_single_op(spec, rng));
  }
  return ops;
}

void register_custom_ensemble(const std::string& tag, CustomSampler sampler) {
  if (tag.empty()) throw ConfigError("register_custom_ensemble: empty tag");
  if (!sampler) throw ConfigError("register_custom_ensemble: empty sampler");
  std::lock_guard<std::mutex> lock(custom_registry_mutex());
  custom_registry()[tag] = std::move(sampler);
}

bool has_custom_ensemble(const std::string& tag) {
  std::lock_guard<std::mutex> lock(custom_registry_mutex());
  return custom_registry().count(tag) > 0;
}

IsotropyReport validate_isotropy(const EnsembleSpec& spec, long n_samples,
                                 double confidence_sigmas,
                                 std::uint64_t master_seed) {
  spec.validate();
  if (n_samples < 1000)
    throw ConfigError("validate_isotropy: needs at least 1000 samples");
  if (!std::isfinite(confidence_sigmas) || confidence_sigmas <= 0.0)
    throw ConfigError("validate_isotropy: confidence_sigmas must be positive");
  const Index dim = spec.op_dim();
  if (dim > 16)
    throw ConfigError("validate_isotropy: exhaustive second-moment audit capped at dimension 16");

  const std::size_t tuples = static_cast<std::size_t>(dim * dim * dim * dim);
  std::vector<Complex> sum(tuples, Complex(0.0, 0.0));
  std::vector<double> sumsq(tuples, 0.0);
  double max_norm = 0.0;

  for (long s = 0; s < n_samples; ++s) {
    CounterRng rng(SeededDraw{master_seed, static_cast<std::uint64_t>(s), 0});
    const Matrix a = sample_single_op(spec, rng);
    max_norm = std::max(max_norm, op_norm(a));
    std::size_t flat = 0;
    for (Index x = 0; x < dim; ++x)
      for (Index y = 0; y < dim; ++y) {
        const Complex axy = a(x, y);
        for (Index z = 0; z < dim; ++z)
          for (Index w = 0; w < dim; ++w, ++flat) {
            const Complex term = axy * std::conj(a(z, w));
            sum[flat] += term;
            sumsq[flat] += std::norm(term);
          }
      }
  }

  IsotropyReport rep;
  rep.n_samples = n_samples;
  rep.confidence_sigmas = confidence_sigmas;
  rep.norm_bound = spec.L;
  rep.max_op_norm = max_norm;
  rep.norm_ok = max_norm <= spec.L + 1e-10;

  const double n = static_cast<double>(n_samples);
  std::size_t flat = 0;
  for (Index x = 0; x < dim; ++x)
    for (Index y = 0; y < dim; ++y)
      for (Index z = 0; z < dim; ++z)
        for (Index w = 0; w < dim; ++w, ++flat) {
          const Complex mean = sum[flat] / n;
          const double target = (x == z && y == w) ? 1.0 / static_cast<double>(dim) : 0.0;
          const double dev = std::abs(mean - Complex(target, 0.0));
          const double var =
              std::max(0.0, (sumsq[flat] / n - std::norm(mean)) * n / (n - 1.0));
          const double se = std::sqrt(var / n);
          double multiple;
          if (se > 0.0) multiple = dev / se;
          else multiple = dev > 1e-12 ? std::numeric_limits<double>::infinity() : 0.0;
          rep.max_abs_deviation = std::max(rep.max_abs_deviation, dev);
          if (multiple > rep.worst_se_multiple) {
            rep.worst_se_multiple = multiple;
            rep.worst_index = {static_cast<int>(x), static_cast<int>(y),
                               static_cast<int>(z), static_cast<int>(w)};
          }
        }

  rep.pass = rep.worst_se_multiple <= confidence_sigmas;
  return rep;
}

nlohmann::json isotropy_report_to_json(const IsotropyReport& rep) {
  return nlohmann::json{{"n_samples", rep.n_samples},
                        {"confidence_sigmas", rep.confidence_sigmas},
                        {"max_abs_deviation", rep.max_abs_deviation},
                        {"worst_se_multiple", rep.worst_se_multiple},
                        {"worst_index", rep.worst_index},
                        {"max_op_norm", rep.max_op_norm},
                        {"norm_bound", rep.norm_bound},
                        {"norm_ok", rep.norm_ok},
                        {"pass", rep.pass}};
}

MVConstants ensemble_mv_constants(const EnsembleSpec& spec) {
  spec.validate();
  const double k = static_cast<double>(spec.k);
  const double l2 = spec.L * spec.L;
  const Index dim = spec.op_dim();
  MVConstants mv;
  mv.M = (l2 + 1.0) / k;
  mv.V = (l2 * l2 + 1.0) / k;
  mv.D = 2 * static_cast<long long>(dim) * static_cast<long long>(dim);
  return mv;
}

}  // namespace kbl
