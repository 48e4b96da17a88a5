// SPDX-License-Identifier: Apache-2.0
//
// Dense complex linear algebra carriers and the handful of matrix
// functionals everything else is built on: Schatten norms, row-major
// vectorization, Kronecker products, and canonically ordered spectra.

#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace kbl {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;
using Index = Eigen::Index;

// Invalid parameters, malformed configs, precondition violations.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Solver non-convergence or a computed quantity violating a numerical
// contract (residual too large, negative mass where none is allowed, ...).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool is_finite(const Matrix& x);

// Singular values in descending order.
RealVector singular_values(const Matrix& x);

// Largest singular value (operator norm, p = inf).
double op_norm(const Matrix& x);

// max_ij |x_ij|, for entrywise residual checks.
double max_entry_norm(const Matrix& x);

// Schatten p-norm, p in [1, inf]. Pass std::numeric_limits<double>::infinity()
// for the operator norm. p = 2 coincides with the Frobenius norm.
double schatten_norm(const Matrix& x, double p);

// Row-major flattening: vec(X)[r * cols + c] = X(r, c). Entries are not
// conjugated. With this convention vec(A X B^T) = (A (x) B) vec(X).
Vector vec(const Matrix& x);
Matrix unvec(const Vector& v, Index rows, Index cols);

// Kronecker product, left factor most significant:
// out(i*rb + k, j*cb + l) = a(i, j) * b(k, l).
Matrix kron(const Matrix& a, const Matrix& b);

// Entrywise complex conjugate (no transpose).
Matrix conjugate(const Matrix& a);

// Eigenvalues of a square matrix in canonical order: descending modulus,
// with near-degenerate moduli (relative gap below 1e-12) tie-broken by
// descending real part, then descending imaginary part. The order is a
// deterministic function of the eigenvalue multiset.
struct Spectrum {
  Vector values;

  Index size() const { return values.size(); }
  double modulus(Index i) const { return std::abs(values(i)); }
};

Spectrum spectrum_by_modulus(const Matrix& x);

// Density matrix wrapper. `validated` enforces Hermiticity, unit trace and
// positivity up to `tol` before wrapping; violations raise ConfigError.
struct QuantumState {
  Matrix rho;

  Index dim() const { return rho.rows(); }
  static QuantumState validated(const Matrix& rho, double tol = 1e-10);
};

}  // namespace kbl
