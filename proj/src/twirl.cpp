// SPDX-License-Identifier: Apache-2.0

#include "kbl/twirl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "kbl/parallel.hpp"

namespace kbl {

namespace {

void check_permutation(const std::vector<int>& images) {
  const int t = static_cast<int>(images.size());
  if (t < 1) throw ConfigError("Permutation: empty");
  std::vector<bool> seen(static_cast<std::size_t>(t), false);
  for (int v : images) {
    if (v < 0 || v >= t || seen[static_cast<std::size_t>(v)])
      throw ConfigError("Permutation: images must be a bijection on {0..t-1}");
    seen[static_cast<std::size_t>(v)] = true;
  }
}

Index pow_index(int d, int t) {
  Index dim = 1;
  for (int i = 0; i < t; ++i) dim *= d;
  return dim;
}

void check_twirl_dims(int d, int t) {
  if (d < 2) throw ConfigError("twirl: d must be at least 2");
  if (t < 1) throw ConfigError("twirl: t must be at least 1");
  if (t > 6) throw ConfigError("twirl: t capped at 6");
  if (pow_index(d, t) > 64)
    throw ConfigError("twirl: d^t capped at 64 (dense superoperator storage)");
}

}  // namespace

Permutation Permutation::identity(int t) {
  if (t < 1) throw ConfigError("Permutation: t must be at least 1");
  Permutation p;
  p.images.resize(static_cast<std::size_t>(t));
  std::iota(p.images.begin(), p.images.end(), 0);
  return p;
}

Permutation Permutation::inverse() const {
  check_permutation(images);
  Permutation inv;
  inv.images.resize(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    inv.images[static_cast<std::size_t>(images[i])] = static_cast<int>(i);
  return inv;
}

int Permutation::cycle_count() const {
  check_permutation(images);
  std::vector<bool> seen(images.size(), false);
  int cycles = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (seen[i]) continue;
    ++cycles;
    std::size_t j = i;
    while (!seen[j]) {
      seen[j] = true;
      j = static_cast<std::size_t>(images[j]);
    }
  }
  return cycles;
}

bool Permutation::is_identity() const {
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i] != static_cast<int>(i)) return false;
  return true;
}

bool operator==(const Permutation& a, const Permutation& b) {
  return a.images == b.images;
}

Permutation compose(const Permutation& a, const Permutation& b) {
  check_permutation(a.images);
  check_permutation(b.images);
  if (a.t() != b.t()) throw ConfigError("compose: size mismatch");
  Permutation out;
  out.images.resize(a.images.size());
  for (std::size_t i = 0; i < out.images.size(); ++i)
    out.images[i] = a.images[static_cast<std::size_t>(b.images[i])];
  return out;
}

std::vector<Permutation> all_permutations(int t) {
  if (t < 1) throw ConfigError("all_permutations: t must be at least 1");
  if (t > 6) throw ConfigError("all_permutations: t capped at 6");
  std::vector<Permutation> out;
  Permutation p = Permutation::identity(t);
  do {
    out.push_back(p);
  } while (std::next_permutation(p.images.begin(), p.images.end()));
  return out;
}

Matrix permutation_operator(const Permutation& alpha, int d) {
  check_permutation(alpha.images);
  if (d < 2) throw ConfigError("permutation_operator: d must be at least 2");
  const int t = alpha.t();
  const Index dim = pow_index(d, t);
  if (dim > 4096) throw ConfigError("permutation_operator: d^t too large");

  Matrix p = Matrix::Zero(dim, dim);
  std::vector<int> digits(static_cast<std::size_t>(t));
  for (Index col = 0; col < dim; ++col) {
    Index rest = col;
    for (int j = t - 1; j >= 0; --j) {
      digits[static_cast<std::size_t>(j)] = static_cast<int>(rest % d);
      rest /= d;
    }
    Index row = 0;
    for (int j = 0; j < t; ++j)
      row = row * d + digits[static_cast<std::size_t>(alpha.images[static_cast<std::size_t>(j)])];
    p(row, col) = Complex(1.0, 0.0);
  }
  return p;
}

GramMatrix gram_matrix(int t, int d) {
  if (d < 2) throw ConfigError("gram_matrix: d must be at least 2");
  const std::vector<Permutation> perms = all_permutations(t);
  const Index f = static_cast<Index>(perms.size());
  RealMatrix g(f, f);
  for (Index a = 0; a < f; ++a) {
    const Permutation inv_a = perms[static_cast<std::size_t>(a)].inverse();
    for (Index b = 0; b < f; ++b) {
      const int cycles = compose(inv_a, perms[static_cast<std::size_t>(b)]).cycle_count();
      g(a, b) = std::pow(static_cast<double>(d), cycles);
    }
  }
  return GramMatrix{std::move(g), t, d};
}

namespace {

// Eigendecomposition of the (symmetric PSD) Gram matrix with the shared
// relative rank cutoff.
struct GramEigen {
  Eigen::SelfAdjointEigenSolver<RealMatrix> es;
  double cutoff;

  explicit GramEigen(const GramMatrix& g) : es(g.entries) {
    if (es.info() != Eigen::Success)
      throw NumericalError("weingarten: eigensolver failed to converge");
    cutoff = 1e-8 * es.eigenvalues().cwiseAbs().maxCoeff();
  }
};

}  // namespace

RealMatrix weingarten(int t, int d) {
  const GramEigen ge(gram_matrix(t, d));
  const RealVector& ev = ge.es.eigenvalues();
  RealVector inv(ev.size());
  for (Index i = 0; i < ev.size(); ++i)
    inv(i) = std::abs(ev(i)) > ge.cutoff ? 1.0 / ev(i) : 0.0;
  return ge.es.eigenvectors() * inv.asDiagonal() * ge.es.eigenvectors().transpose();
}

int twirl_rank(int d, int t) {
  const GramEigen ge(gram_matrix(t, d));
  int rank = 0;
  for (Index i = 0; i < ge.es.eigenvalues().size(); ++i)
    if (ge.es.eigenvalues()(i) > ge.cutoff) ++rank;
  return rank;
}

Matrix TwirlChannel::apply(const Matrix& x) const {
  const Index dim = superop.n;
  if (x.rows() != dim || x.cols() != dim)
    throw ConfigError("TwirlChannel::apply: input dimension mismatch");
  return unvec(superop.mat * vec(x), dim, dim);
}

TwirlChannel exact_twirl(int d, int t) {
  check_twirl_dims(d, t);
  const std::vector<Permutation> perms = all_permutations(t);
  const Index f = static_cast<Index>(perms.size());
  const Index dim = pow_index(d, t);

  // Columns are the vectorized permutation operators; with W the
  // pseudo-inverse of their Gram matrix, V W V^T is the orthogonal
  // projection onto their span, which is the Haar moment operator.
  RealMatrix v(dim * dim, f);
  for (Index a = 0; a < f; ++a) {
    const Matrix p = permutation_operator(perms[static_cast<std::size_t>(a)], d);
    for (Index r = 0; r < dim; ++r)
      for (Index c = 0; c < dim; ++c) v(r * dim + c, a) = p(r, c).real();
  }
  const RealMatrix wg = weingarten(t, d);
  const RealMatrix omega_real = v * wg * v.transpose();

  TwirlChannel tw;
  tw.superop = SuperOpMatrix{omega_real.cast<Complex>(), dim, dim};
  tw.d = d;
  tw.t = t;
  tw.gamma = GammaSignature::plain(t);
  tw.exact = true;
  tw.rank = twirl_rank(d, t);
  tw.mc_standard_error = 0.0;
  return tw;
}

TwirlChannel mc_twirl(int d, const GammaSignature& gamma, long n_samples,
                      std::uint64_t master_seed, int workers) {
  check_twirl_dims(d, gamma.t());
  if (n_samples < 2) throw ConfigError("mc_twirl: needs at least 2 samples");
  const Index dim = pow_index(d, gamma.t());
  const Index d2 = dim * dim;

  // Fixed blocking: block sums are deterministic functions of the seed, and
  // the reduction runs in block order, so the result is independent of the
  // worker count.
  const long bs = (n_samples + 99) / 100;
  const long blocks = (n_samples + bs - 1) / bs;
  std::vector<Matrix> block_sum(static_cast<std::size_t>(blocks));
  std::vector<long> block_len(static_cast<std::size_t>(blocks), 0);

  const EnsembleSpec one = EnsembleSpec::tensor_power(gamma, d, 1);
  parallel_for(blocks, workers, [&](long b) {
    Matrix acc = Matrix::Zero(d2, d2);
    const long lo = b * bs;
    const long hi = std::min(n_samples, lo + bs);
    for (long s = lo; s < hi; ++s) {
      const Matrix w =
          sample_kraus_set(one, master_seed, static_cast<std::uint64_t>(s)).front();
      acc.noalias() += kron(w, w.conjugate());
    }
    block_sum[static_cast<std::size_t>(b)] = std::move(acc);
    block_len[static_cast<std::size_t>(b)] = hi - lo;
  });

  Matrix total = Matrix::Zero(d2, d2);
  for (long b = 0; b < blocks; ++b) total += block_sum[static_cast<std::size_t>(b)];
  const Matrix mean = total / static_cast<double>(n_samples);

  double se = 0.0;
  if (blocks >= 2) {
    double acc = 0.0;
    for (long b = 0; b < blocks; ++b) {
      const double rest = static_cast<double>(n_samples - block_len[static_cast<std::size_t>(b)]);
      const Matrix leave_out = (total - block_sum[static_cast<std::size_t>(b)]) / rest;
      const double dev = op_norm(leave_out - mean);
      acc += dev * dev;
    }
    se = std::sqrt(acc * static_cast<double>(blocks - 1) / static_cast<double>(blocks));
  }

  TwirlChannel tw;
  tw.superop = SuperOpMatrix{mean, dim, dim};
  tw.d = d;
  tw.t = gamma.t();
  tw.gamma = gamma;
  tw.exact = false;
  tw.rank = 0;
  tw.mc_standard_error = se;
  return tw;
}

void to_json(nlohmann::json& j, const TwirlChannel& tw) {
  j = nlohmann::json{{"d", tw.d},
                     {"t", tw.t},
                     {"gamma", tw.gamma},
                     {"exact", tw.exact},
                     {"rank", tw.rank},
                     {"tolerance", tw.mc_standard_error},
                     {"superop", matrix_to_json(tw.superop.mat)}};
}

void from_json(const nlohmann::json& j, TwirlChannel& tw) {
  for (const char* key : {"d", "t", "gamma", "exact", "rank", "tolerance", "superop"})
    if (!j.contains(key))
      throw ConfigError(std::string("TwirlChannel JSON: missing \"") + key + "\"");
  tw.d = j.at("d").get<int>();
  tw.t = j.at("t").get<int>();
  check_twirl_dims(tw.d, tw.t);
  tw.gamma = j.at("gamma").get<GammaSignature>();
  if (tw.gamma.t() != tw.t) throw ConfigError("TwirlChannel JSON: gamma length differs from t");
  tw.exact = j.at("exact").get<bool>();
  tw.rank = j.at("rank").get<int>();
  tw.mc_standard_error = j.at("tolerance").get<double>();
  const Index dim = pow_index(tw.d, tw.t);
  tw.superop = SuperOpMatrix{matrix_from_json(j.at("superop"), dim * dim, dim * dim), dim, dim};
}

}  // namespace kbl
