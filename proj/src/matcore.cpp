// SPDX-License-Identifier: Apache-2.0

#include "kbl/matcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace kbl {

bool is_finite(const Matrix& x) {
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i)
      if (!std::isfinite(x(i, j).real()) || !std::isfinite(x(i, j).imag()))
        return false;
  return true;
}

namespace {

void require_finite(const Matrix& x, const char* who) {
  if (!is_finite(x)) throw ConfigError(std::string(who) + ": non-finite entries");
}

}  // namespace

RealVector singular_values(const Matrix& x) {
  if (x.size() == 0) throw ConfigError("singular_values: empty matrix");
  require_finite(x, "singular_values");
  // Jacobi is the most accurate option and cheap at the sizes we care
  // about; fall back to divide and conquer for big superoperators.
  if (std::min(x.rows(), x.cols()) <= 32) {
    Eigen::JacobiSVD<Matrix> svd(x);
    if (svd.info() != Eigen::Success)
      throw NumericalError("singular_values: Jacobi SVD failed to converge");
    return svd.singularValues();
  }
  Eigen::BDCSVD<Matrix> svd(x);
  if (svd.info() != Eigen::Success)
    throw NumericalError("singular_values: BDC SVD failed to converge");
  return svd.singularValues();
}

double op_norm(const Matrix& x) { return singular_values(x)(0); }

double max_entry_norm(const Matrix& x) {
  double m = 0.0;
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) m = std::max(m, std::abs(x(i, j)));
  return m;
}

double schatten_norm(const Matrix& x, double p) {
  if (x.size() == 0) throw ConfigError("schatten_norm: empty matrix");
  if (std::isnan(p) || p < 1.0) throw ConfigError("schatten_norm: requires p >= 1");
  const RealVector s = singular_values(x);
  if (std::isinf(p)) return s(0);
  if (p == 1.0) return s.sum();
  if (p == 2.0) return std::sqrt(s.squaredNorm());
  // sum s_i^p evaluated in a scale-free way to dodge overflow for large p
  const double smax = s(0);
  if (smax == 0.0) return 0.0;
  double acc = 0.0;
  for (Index i = 0; i < s.size(); ++i) acc += std::pow(s(i) / smax, p);
  return smax * std::pow(acc, 1.0 / p);
}

Vector vec(const Matrix& x) {
  Vector v(x.size());
  for (Index r = 0; r < x.rows(); ++r)
    for (Index c = 0; c < x.cols(); ++c) v(r * x.cols() + c) = x(r, c);
  return v;
}

Matrix unvec(const Vector& v, Index rows, Index cols) {
  if (v.size() != rows * cols) throw ConfigError("unvec: size mismatch");
  Matrix x(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) x(r, c) = v(r * cols + c);
  return x;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Matrix conjugate(const Matrix& a) { return a.conjugate(); }

Spectrum spectrum_by_modulus(const Matrix& x) {
  if (x.rows() != x.cols() || x.size() == 0)
    throw ConfigError("spectrum_by_modulus: requires a nonempty square matrix");
  require_finite(x, "spectrum_by_modulus");
  Eigen::ComplexEigenSolver<Matrix> es(x, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw NumericalError("spectrum_by_modulus: eigensolver failed to converge");
  const Vector raw = es.eigenvalues();

  std::vector<Index> idx(static_cast<std::size_t>(raw.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) {
    return std::abs(raw(a)) > std::abs(raw(b));
  });

  // Regroup runs of numerically equal moduli so the real/imag tie-break is
  // insensitive to last-bit modulus noise.
  const double scale = raw.size() ? std::max(1.0, std::abs(raw(idx[0]))) : 1.0;
  const double tol = 1e-12 * scale;
  auto by_real_imag = [&](Index a, Index b) {
    if (raw(a).real() != raw(b).real()) return raw(a).real() > raw(b).real();
    return raw(a).imag() > raw(b).imag();
  };
  std::size_t lo = 0;
  while (lo < idx.size()) {
    std::size_t hi = lo + 1;
    while (hi < idx.size() &&
           std::abs(raw(idx[hi - 1])) - std::abs(raw(idx[hi])) <= tol)
      ++hi;
    std::sort(idx.begin() + lo, idx.begin() + hi, by_real_imag);
    lo = hi;
  }

  Spectrum out;
  out.values.resize(raw.size());
  for (Index i = 0; i < raw.size(); ++i) out.values(i) = raw(idx[static_cast<std::size_t>(i)]);
  return out;
}

QuantumState QuantumState::validated(const Matrix& rho, double tol) {
  if (rho.rows() != rho.cols() || rho.size() == 0)
    throw ConfigError("QuantumState: requires a nonempty square matrix");
  require_finite(rho, "QuantumState");
  if (max_entry_norm(rho - rho.adjoint()) > tol)
    throw ConfigError("QuantumState: not Hermitian within tolerance");
  if (std::abs(rho.trace() - Complex(1.0, 0.0)) > tol)
    throw ConfigError("QuantumState: trace differs from one");
  Eigen::SelfAdjointEigenSolver<Matrix> es((rho + rho.adjoint()) / 2.0);
  if (es.info() != Eigen::Success)
    throw NumericalError("QuantumState: eigensolver failed to converge");
  if (es.eigenvalues()(0) < -tol)
    throw ConfigError("QuantumState: negative eigenvalue beyond tolerance");
  return QuantumState{rho};
}

}  // namespace kbl
