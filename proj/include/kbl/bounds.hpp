// SPDX-License-Identifier: Apache-2.0
//
// Matrix-valued Bernstein tail evaluation and the closed-form sample
// budgets it yields for random Kraus families: how many operators are
// needed before the empirical channel is within alpha of its average in
// superoperator norm, with an explicit failure probability.

#pragma once

#include <string>

#include "json.hpp"

namespace kbl {

struct BernsteinParams {
  long long D = 0;    // dimension factor, m^2 + n^2 for m x n summands
  double M = 0.0;     // a.s. operator-norm bound on each centered summand
  double V = 0.0;     // operator-norm bound on the summed variance proxy
  double alpha = 0.0; // deviation threshold
};

// D * exp(-alpha^2 / (2 V + 2 M alpha / 3)). Monotone decreasing in alpha,
// increasing in M, V and D. Values >= 1 carry no information (vacuous).
double bernstein_tail(const BernsteinParams& p);

enum class RegimeTag {
  TDesign,          // plain tensor-power unitary, t-design deviation
  Twirling,         // same, threshold in twirling distance eps
  GeneralizedCP,    // generic norm-L isotropic family, CP-map average
  AlmostInvertible, // generic family, average map invertibility margin
  NewModel,         // rectified-model deviation around its average
  ThreeRegimes1,    // rectified, gap target eps/sqrt(d)
  ThreeRegimes2,    // rectified, linear-in-d budget, gap from log d / d
  ThreeRegimes3,    // rectified, dimension-free gap target eps
};

const char* regime_tag_name(RegimeTag tag);

struct BudgetResult {
  long long k = 0;          // number of Kraus operators to draw
  double tail_bound = 0.0;  // failure probability guaranteed at that k
  RegimeTag tag = RegimeTag::TDesign;
  bool vacuous = false;     // tail_bound >= 1
  double alpha = 0.0;       // operator-norm threshold the budget targets
  double predicted_gap = 0.0;  // guaranteed |lambda_2| bound (three-regimes only, else NaN)
};

nlohmann::json budget_to_json(const BudgetResult& b);

// Constants governing the generic-ensemble budgets.
double c_tilde_full(double L);  // 4 L^4 + (4/3) L^2 + 16/3
double c_tilde_half(double L);  // 2 L^4 + (2/3) L^2 + 8/3

// k = ceil(C t ln(d) / alpha^2), tail 2 d^{t(2 - C/6)}; requires C > 12.
BudgetResult tdesign_budget(int d, int t, double alpha, double C);

// Same family, threshold eps on the twirling distance d^{t/2} * deviation;
// k = ceil(C t d^t ln(d) / eps^2), eps in (0, d^{t/2}].
BudgetResult twirling_budget(int d, int t, double eps, double C);

// Generic isotropic family with ||A|| <= L:
// k = ceil(C ln(d) / alpha^2), tail 2 d^{2(1 - C/c_tilde_full)}.
BudgetResult generalized_cp_budget(int d, double L, double alpha, double C);

// Invertibility margin of the averaged map:
// k = ceil(C ln(d) / alpha^2), tail 2 d^{1 - C/c_tilde_half}.
BudgetResult almost_invertible_budget(int d, double L, double alpha, double C);

// Rectified model: k = ceil(16 C ln(d) / alpha^2),
// tail 2 (1 + 1/d) d^{2(1 - C/c_tilde_full)}.
BudgetResult new_model_budget(int d, double L, double alpha, double C);

// Gap guarantees for the rectified model; regime selects the tradeoff.
//   1: k = ceil(64 C d ln(d) / eps^2),   |lambda_2| <= eps / sqrt(d)
//   2: k = ceil(16 C d / (1 - delta)),   |lambda_2| <= 2 sqrt((1-delta) ln(d) / d)
//   3: k = ceil(64 C ln(d) / eps^2),     |lambda_2| <= eps
// All share tail 2 (1 + 1/d) d^{2(1 - C/c_tilde_full)}. `param` is eps for
// regimes 1 and 3 and delta for regime 2.
BudgetResult three_regimes_budget(int d, double L, double param, int regime, double C);

}  // namespace kbl
