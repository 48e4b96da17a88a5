// SPDX-License-Identifier: Apache-2.0
//
// Weighted Kraus channels X -> sum_i w_i A_i X A_i^dag, their natural
// (superoperator) representation sum_i w_i A_i (x) conj(A_i), and the
// rectification map that turns an arbitrary Kraus family into a
// trace-preserving channel.

#pragma once

#include <optional>
#include <vector>

#include "json.hpp"
#include "kbl/matcore.hpp"

namespace kbl {

struct KrausChannel {
  std::vector<Matrix> ops;  // all m x n
  RealVector weights;       // nonnegative, same length as ops; need not sum to 1

  KrausChannel() = default;
  // Validates shape agreement and weight signs.
  KrausChannel(std::vector<Matrix> ops, RealVector weights);
  // Uniform weights 1/k.
  static KrausChannel uniform(std::vector<Matrix> ops);

  int k() const { return static_cast<int>(ops.size()); }
  Index out_dim() const { return ops.empty() ? 0 : ops.front().rows(); }
  Index in_dim() const { return ops.empty() ? 0 : ops.front().cols(); }
  bool square() const { return out_dim() == in_dim(); }
};

// Natural representation: an (m^2 x n^2) matrix T with
// vec(Phi(X)) = T vec(X) under the row-major vec convention.
struct SuperOpMatrix {
  Matrix mat;
  Index m = 0;  // output-side dimension
  Index n = 0;  // input-side dimension
};

Matrix apply(const KrausChannel& ch, const Matrix& x);
SuperOpMatrix natural_rep(const KrausChannel& ch);

// Superoperator 2->2 norm sup_{||X||_2 = 1} ||Phi(X)||_2, which equals the
// largest singular value of the natural representation.
double two_two_norm(const SuperOpMatrix& theta);

struct ResidualCheck {
  bool ok = false;
  double residual = 0.0;  // operator-norm distance from the identity
};

// sum_i w_i A_i^dag A_i == I_n within tol.
ResidualCheck is_trace_preserving(const KrausChannel& ch, double tol = 1e-10);
// sum_i w_i A_i A_i^dag == I_m within tol.
ResidualCheck is_unital(const KrausChannel& ch, double tol = 1e-10);

// Rectification: with A = (1/k) sum_i A_i^dag A_i, returns the channel with
// Kraus operators B_i = A_i A^{-1/2} and uniform weights 1/k, which is
// trace-preserving by construction. Returns nullopt when A has an eigenvalue
// at or below tol_invert (not rectifiable).
std::optional<KrausChannel> rectify(const std::vector<Matrix>& ops,
                                    double tol_invert = 1e-8);

// JSON wire format for one complex matrix: row-major list of [re, im] pairs.
nlohmann::json matrix_to_json(const Matrix& x);
Matrix matrix_from_json(const nlohmann::json& j, Index rows, Index cols);

// Channel wire format:
//   {"m": 2, "n": 2, "weights": [...], "ops": [[[re, im], ...], ...]}
// Doubles survive a round trip exactly (shortest round-trip encoding).
void to_json(nlohmann::json& j, const KrausChannel& ch);
void from_json(const nlohmann::json& j, KrausChannel& ch);

}  // namespace kbl
