// SPDX-License-Identifier: Apache-2.0

#include "kbl/channels.hpp"

#include <cmath>
#include <utility>

namespace kbl {

namespace {

void check_ops(const std::vector<Matrix>& ops) {
  if (ops.empty()) throw ConfigError("KrausChannel: needs at least one operator");
  const Index m = ops.front().rows(), n = ops.front().cols();
  if (m == 0 || n == 0) throw ConfigError("KrausChannel: empty operator");
  for (const Matrix& a : ops) {
    if (a.rows() != m || a.cols() != n)
      throw ConfigError("KrausChannel: inconsistent operator shapes");
    if (!is_finite(a)) throw ConfigError("KrausChannel: non-finite operator entries");
  }
}

}  // namespace

KrausChannel::KrausChannel(std::vector<Matrix> ops_in, RealVector weights_in)
    : ops(std::move(ops_in)), weights(std::move(weights_in)) {
  check_ops(ops);
  if (weights.size() != static_cast<Index>(ops.size()))
    throw ConfigError("KrausChannel: weight count differs from operator count");
  for (Index i = 0; i < weights.size(); ++i)
    if (!(weights(i) >= 0.0) || !std::isfinite(weights(i)))
      throw ConfigError("KrausChannel: weights must be finite and nonnegative");
}

KrausChannel KrausChannel::uniform(std::vector<Matrix> ops_in) {
  check_ops(ops_in);
  const Index k = static_cast<Index>(ops_in.size());
  return KrausChannel(std::move(ops_in), RealVector::Constant(k, 1.0 / static_cast<double>(k)));
}

Matrix apply(const KrausChannel& ch, const Matrix& x) {
  if (x.rows() != ch.in_dim() || x.cols() != ch.in_dim())
    throw ConfigError("apply: input must be n x n for m x n Kraus operators");
  Matrix out = Matrix::Zero(ch.out_dim(), ch.out_dim());
  for (int i = 0; i < ch.k(); ++i)
    out.noalias() += ch.weights(i) * ch.ops[static_cast<std::size_t>(i)] * x *
                     ch.ops[static_cast<std::size_t>(i)].adjoint();
  return out;
}

SuperOpMatrix natural_rep(const KrausChannel& ch) {
  const Index m = ch.out_dim(), n = ch.in_dim();
  Matrix t = Matrix::Zero(m * m, n * n);
  for (int i = 0; i < ch.k(); ++i) {
    const Matrix& a = ch.ops[static_cast<std::size_t>(i)];
    t.noalias() += ch.weights(i) * kron(a, a.conjugate());
  }
  return SuperOpMatrix{std::move(t), m, n};
}

double two_two_norm(const SuperOpMatrix& theta) { return op_norm(theta.mat); }

ResidualCheck is_trace_preserving(const KrausChannel& ch, double tol) {
  Matrix s = Matrix::Zero(ch.in_dim(), ch.in_dim());
  for (int i = 0; i < ch.k(); ++i)
    s.noalias() += ch.weights(i) * ch.ops[static_cast<std::size_t>(i)].adjoint() *
                   ch.ops[static_cast<std::size_t>(i)];
  const double r = op_norm(s - Matrix::Identity(ch.in_dim(), ch.in_dim()));
  return ResidualCheck{r <= tol, r};
}

ResidualCheck is_unital(const KrausChannel& ch, double tol) {
  Matrix s = Matrix::Zero(ch.out_dim(), ch.out_dim());
  for (int i = 0; i < ch.k(); ++i)
    s.noalias() += ch.weights(i) * ch.ops[static_cast<std::size_t>(i)] *
                   ch.ops[static_cast<std::size_t>(i)].adjoint();
  const double r = op_norm(s - Matrix::Identity(ch.out_dim(), ch.out_dim()));
  return ResidualCheck{r <= tol, r};
}

std::optional<KrausChannel> rectify(const std::vector<Matrix>& ops, double tol_invert) {
  check_ops(ops);
  if (ops.front().rows() != ops.front().cols())
    throw ConfigError("rectify: requires square operators");
  const Index d = ops.front().rows();
  const double k = static_cast<double>(ops.size());

  Matrix a = Matrix::Zero(d, d);
  for (const Matrix& op : ops) a.noalias() += op.adjoint() * op;
  a /= k;

  Eigen::SelfAdjointEigenSolver<Matrix> es((a + a.adjoint()) / 2.0);
  if (es.info() != Eigen::Success)
    throw NumericalError("rectify: eigensolver failed to converge");
  if (es.eigenvalues()(0) <= tol_invert) return std::nullopt;

  RealVector inv_sqrt = es.eigenvalues().array().rsqrt();
  const Matrix a_inv_sqrt =
      es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().adjoint();

  std::vector<Matrix> rectified;
  rectified.reserve(ops.size());
  for (const Matrix& op : ops) rectified.push_back(op * a_inv_sqrt);
  return KrausChannel::uniform(std::move(rectified));
}

nlohmann::json matrix_to_json(const Matrix& x) {
  nlohmann::json entries = nlohmann::json::array();
  for (Index r = 0; r < x.rows(); ++r)
    for (Index c = 0; c < x.cols(); ++c)
      entries.push_back({x(r, c).real(), x(r, c).imag()});
  return entries;
}

Matrix matrix_from_json(const nlohmann::json& j, Index rows, Index cols) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows * cols)
    throw ConfigError("matrix_from_json: wrong entry count");
  Matrix x(rows, cols);
  Index flat = 0;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2)
      throw ConfigError("matrix_from_json: entries must be [re, im] pairs");
    x(flat / cols, flat % cols) = Complex(e[0].get<double>(), e[1].get<double>());
    ++flat;
  }
  if (!is_finite(x)) throw ConfigError("matrix_from_json: non-finite entries");
  return x;
}

void to_json(nlohmann::json& j, const KrausChannel& ch) {
  j = nlohmann::json{{"m", ch.out_dim()}, {"n", ch.in_dim()}};
  j["weights"] = nlohmann::json::array();
  for (Index i = 0; i < ch.weights.size(); ++i) j["weights"].push_back(ch.weights(i));
  j["ops"] = nlohmann::json::array();
  for (const Matrix& a : ch.ops) j["ops"].push_back(matrix_to_json(a));
}

void from_json(const nlohmann::json& j, KrausChannel& ch) {
  for (const char* key : {"m", "n", "weights", "ops"})
    if (!j.contains(key)) throw ConfigError(std::string("KrausChannel JSON: missing \"") + key + "\"");
  const Index m = j.at("m").get<Index>();
  const Index n = j.at("n").get<Index>();
  if (m <= 0 || n <= 0) throw ConfigError("KrausChannel JSON: dimensions must be positive");
  const auto& jw = j.at("weights");
  const auto& jops = j.at("ops");
  if (!jw.is_array() || !jops.is_array() || jw.size() != jops.size() || jops.empty())
    throw ConfigError("KrausChannel JSON: weights/ops must be equal-length nonempty arrays");
  std::vector<Matrix> ops;
  ops.reserve(jops.size());
  for (const auto& jop : jops) ops.push_back(matrix_from_json(jop, m, n));
  RealVector w(static_cast<Index>(jw.size()));
  for (Index i = 0; i < w.size(); ++i) w(i) = jw[static_cast<std::size_t>(i)].get<double>();
  ch = KrausChannel(std::move(ops), std::move(w));
}

}  // namespace kbl
