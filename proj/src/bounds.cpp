// SPDX-License-Identifier: Apache-2.0

#include "kbl/bounds.hpp"

#include <cmath>
#include <limits>

#include "kbl/matcore.hpp"

namespace kbl {

namespace {

// ceil with a relative nudge so budgets quoted at exact integers are not
// bumped by last-bit noise in the double expression.
long long budget_ceil(double x) {
  if (!std::isfinite(x) || x <= 0.0 || x > 9.0e18)
    throw ConfigError("budget: sample count out of range");
  return static_cast<long long>(std::ceil(x - std::max(1e-9, std::abs(x) * 1e-12)));
}

void check_common(int d, double C, double c_min, const char* who) {
  if (d < 2) throw ConfigError(std::string(who) + ": d must be at least 2");
  if (!std::isfinite(C) || C <= c_min)
    throw ConfigError(std::string(who) + ": C must exceed " + std::to_string(c_min));
}

void check_alpha(double alpha, const char* who) {
  if (!std::isfinite(alpha) || alpha <= 0.0 || alpha > 1.0)
    throw ConfigError(std::string(who) + ": alpha must lie in (0, 1]");
}

void check_L(double L, const char* who) {
  // The budget derivations take the norm certificate at least 1 (unitaries
  // saturate it); smaller certificates have no stated closed form.
  if (!std::isfinite(L) || L < 1.0)
    throw ConfigError(std::string(who) + ": L must be at least 1");
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

BudgetResult make_result(long long k, double tail, RegimeTag tag, double alpha,
                         double gap = kNaN) {
  BudgetResult b;
  b.k = k;
  b.tail_bound = tail;
  b.tag = tag;
  b.vacuous = !(tail < 1.0);
  b.alpha = alpha;
  b.predicted_gap = gap;
  return b;
}

}  // namespace

double bernstein_tail(const BernsteinParams& p) {
  if (p.D < 1) throw ConfigError("bernstein_tail: D must be a positive integer");
  if (!std::isfinite(p.M) || p.M <= 0.0) throw ConfigError("bernstein_tail: M must be positive");
  if (!std::isfinite(p.V) || p.V <= 0.0) throw ConfigError("bernstein_tail: V must be positive");
  if (!std::isfinite(p.alpha) || p.alpha <= 0.0)
    throw ConfigError("bernstein_tail: alpha must be positive");
  const double denom = 2.0 * p.V + 2.0 * p.M * p.alpha / 3.0;
  return static_cast<double>(p.D) * std::exp(-p.alpha * p.alpha / denom);
}

const char* regime_tag_name(RegimeTag tag) {
  switch (tag) {
    case RegimeTag::TDesign: return "tdesign";
    case RegimeTag::Twirling: return "twirling";
    case RegimeTag::GeneralizedCP: return "generalized_cp";
    case RegimeTag::AlmostInvertible: return "almost_invertible";
    case RegimeTag::NewModel: return "new_model";
    case RegimeTag::ThreeRegimes1: return "three_regimes_1";
    case RegimeTag::ThreeRegimes2: return "three_regimes_2";
    case RegimeTag::ThreeRegimes3: return "three_regimes_3";
  }
  throw ConfigError("regime_tag_name: unknown tag");
}

nlohmann::json budget_to_json(const BudgetResult& b) {
  nlohmann::json j{{"k", b.k},
                   {"tail_bound", b.tail_bound},
                   {"vacuous", b.vacuous},
                   {"regime_tag", regime_tag_name(b.tag)},
                   {"alpha", b.alpha}};
  if (std::isfinite(b.predicted_gap)) j["predicted_gap"] = b.predicted_gap;
  return j;
}

double c_tilde_full(double L) {
  check_L(L, "c_tilde_full");
  const double l2 = L * L;
  return 4.0 * l2 * l2 + (4.0 / 3.0) * l2 + 16.0 / 3.0;
}

double c_tilde_half(double L) {
  check_L(L, "c_tilde_half");
  const double l2 = L * L;
  return 2.0 * l2 * l2 + (2.0 / 3.0) * l2 + 8.0 / 3.0;
}

BudgetResult tdesign_budget(int d, int t, double alpha, double C) {
  check_common(d, C, 12.0, "tdesign_budget");
  if (t < 1) throw ConfigError("tdesign_budget: t must be at least 1");
  check_alpha(alpha, "tdesign_budget");
  const double ln_d = std::log(static_cast<double>(d));
  const long long k = budget_ceil(C * t * ln_d / (alpha * alpha));
  const double tail = 2.0 * std::pow(static_cast<double>(d), t * (2.0 - C / 6.0));
  return make_result(k, tail, RegimeTag::TDesign, alpha);
}

BudgetResult twirling_budget(int d, int t, double eps, double C) {
  check_common(d, C, 12.0, "twirling_budget");
  if (t < 1) throw ConfigError("twirling_budget: t must be at least 1");
  const double dim_sqrt = std::pow(static_cast<double>(d), 0.5 * t);
  if (!std::isfinite(eps) || eps <= 0.0 || eps > dim_sqrt)
    throw ConfigError("twirling_budget: eps must lie in (0, d^{t/2}]");
  const double ln_d = std::log(static_cast<double>(d));
  const double dim = std::pow(static_cast<double>(d), t);
  const long long k = budget_ceil(C * t * dim * ln_d / (eps * eps));
  const double tail = 2.0 * std::pow(static_cast<double>(d), t * (2.0 - C / 6.0));
  return make_result(k, tail, RegimeTag::Twirling, eps / dim_sqrt);
}

BudgetResult generalized_cp_budget(int d, double L, double alpha, double C) {
  check_L(L, "generalized_cp_budget");
  check_common(d, C, c_tilde_full(L), "generalized_cp_budget");
  check_alpha(alpha, "generalized_cp_budget");
  const double ln_d = std::log(static_cast<double>(d));
  const long long k = budget_ceil(C * ln_d / (alpha * alpha));
  const double tail =
      2.0 * std::pow(static_cast<double>(d), 2.0 * (1.0 - C / c_tilde_full(L)));
  return make_result(k, tail, RegimeTag::GeneralizedCP, alpha);
}

BudgetResult almost_invertible_budget(int d, double L, double alpha, double C) {
  check_L(L, "almost_invertible_budget");
  check_common(d, C, c_tilde_half(L), "almost_invertible_budget");
  check_alpha(alpha, "almost_invertible_budget");
  const double ln_d = std::log(static_cast<double>(d));
  const long long k = budget_ceil(C * ln_d / (alpha * alpha));
  const double tail = 2.0 * std::pow(static_cast<double>(d), 1.0 - C / c_tilde_half(L));
  return make_result(k, tail, RegimeTag::AlmostInvertible, alpha);
}

namespace {

double rectified_tail(int d, double L, double C) {
  return 2.0 * (1.0 + 1.0 / static_cast<double>(d)) *
         std::pow(static_cast<double>(d), 2.0 * (1.0 - C / c_tilde_full(L)));
}

}  // namespace

BudgetResult new_model_budget(int d, double L, double alpha, double C) {
  check_L(L, "new_model_budget");
  check_common(d, C, c_tilde_full(L), "new_model_budget");
  check_alpha(alpha, "new_model_budget");
  const double ln_d = std::log(static_cast<double>(d));
  const long long k = budget_ceil(16.0 * C * ln_d / (alpha * alpha));
  return make_result(k, rectified_tail(d, L, C), RegimeTag::NewModel, alpha);
}

BudgetResult three_regimes_budget(int d, double L, double param, int regime, double C) {
  check_L(L, "three_regimes_budget");
  check_common(d, C, c_tilde_full(L), "three_regimes_budget");
  const double dd = static_cast<double>(d);
  const double ln_d = std::log(dd);
  const double tail = rectified_tail(d, L, C);
  switch (regime) {
    case 1: {
      if (!std::isfinite(param) || param <= 0.0 || param >= 1.0)
        throw ConfigError("three_regimes_budget: regime 1 needs eps in (0, 1)");
      const long long k = budget_ceil(64.0 * C * dd * ln_d / (param * param));
      return make_result(k, tail, RegimeTag::ThreeRegimes1, 0.5 * param / std::sqrt(dd),
                         param / std::sqrt(dd));
    }
    case 2: {
      if (!std::isfinite(param) || param <= 0.0 || param >= 1.0)
        throw ConfigError("three_regimes_budget: regime 2 needs delta in (0, 1)");
      const long long k = budget_ceil(16.0 * C * dd / (1.0 - param));
      const double gap = 2.0 * std::sqrt((1.0 - param) * ln_d / dd);
      return make_result(k, tail, RegimeTag::ThreeRegimes2, 0.5 * gap, gap);
    }
    case 3: {
      if (!std::isfinite(param) || param <= 0.0 || param > 1.0)
        throw ConfigError("three_regimes_budget: regime 3 needs eps in (0, 1]");
      const long long k = budget_ceil(64.0 * C * ln_d / (param * param));
      return make_result(k, tail, RegimeTag::ThreeRegimes3, 0.5 * param, param);
    }
    default:
      throw ConfigError("three_regimes_budget: regime must be 1, 2 or 3");
  }
}

}  // namespace kbl
