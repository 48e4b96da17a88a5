// SPDX-License-Identifier: Apache-2.0

#include "kbl/spectral.hpp"

#include <algorithm>
#include <cmath>

#include "kbl/ensembles.hpp"

namespace kbl {

double deviation_norm(const SuperOpMatrix& a, const SuperOpMatrix& b) {
  if (a.m != b.m || a.n != b.n)
    throw ConfigError("deviation_norm: superoperator shape mismatch");
  return op_norm(a.mat - b.mat);
}

GapReport gap_report(const SuperOpMatrix& phi_hat, const TwirlChannel& omega) {
  if (phi_hat.m != omega.superop.m || phi_hat.n != omega.superop.n)
    throw ConfigError("gap_report: channel and twirl dimensions differ");
  if (omega.rank < 1) throw ConfigError("gap_report: twirl rank not available");

  GapReport rep;
  rep.deviation = deviation_norm(phi_hat, omega.superop);
  rep.rank = omega.rank;

  const Spectrum spec = spectrum_by_modulus(phi_hat.mat);
  const Index n = spec.size();
  if (n <= omega.rank)
    throw ConfigError("gap_report: superoperator too small for the twirl rank");
  rep.lambda_r_modulus = spec.modulus(omega.rank - 1);
  rep.lambda_r1_modulus = spec.modulus(omega.rank);
  const Index lead = std::min<Index>(8, n);
  rep.top_moduli.reserve(static_cast<std::size_t>(lead));
  for (Index i = 0; i < lead; ++i) rep.top_moduli.push_back(spec.modulus(i));
  return rep;
}

GapReport gap_report(const SuperOpMatrix& phi_hat, int d, int t) {
  return gap_report(phi_hat, exact_twirl(d, t));
}

nlohmann::json gap_report_to_json(const GapReport& rep) {
  return nlohmann::json{{"deviation", rep.deviation},
                        {"rank", rep.rank},
                        {"lambda_r_modulus", rep.lambda_r_modulus},
                        {"lambda_r1_modulus", rep.lambda_r1_modulus},
                        {"top_moduli", rep.top_moduli}};
}

namespace {

Matrix hermitize(const Matrix& x) { return (x + x.adjoint()) / 2.0; }

void require_tp_square(const KrausChannel& ch, const char* who) {
  if (!ch.square()) throw ConfigError(std::string(who) + ": channel must be square");
  const ResidualCheck tp = is_trace_preserving(ch, 1e-8);
  if (!tp.ok)
    throw ConfigError(std::string(who) + ": channel is not trace preserving (residual " +
                      std::to_string(tp.residual) + ")");
}

}  // namespace

FixedPointResult fixed_point(const KrausChannel& ch) {
  require_tp_square(ch, "fixed_point");
  const Index d = ch.in_dim();

  const SuperOpMatrix phi_hat = natural_rep(ch);
  Eigen::ComplexEigenSolver<Matrix> es(phi_hat.mat, /*computeEigenvectors=*/true);
  if (es.info() != Eigen::Success)
    throw NumericalError("fixed_point: eigensolver failed to converge");

  Index best = 0;
  for (Index i = 1; i < es.eigenvalues().size(); ++i)
    if (std::abs(es.eigenvalues()(i) - Complex(1.0, 0.0)) <
        std::abs(es.eigenvalues()(best) - Complex(1.0, 0.0)))
      best = i;

  Matrix rho = hermitize(unvec(es.eigenvectors().col(best), d, d));
  double tr = rho.trace().real();
  if (std::abs(tr) < 1e-9 * std::max(1.0, max_entry_norm(rho))) {
    // Eigenvector phase left a near-traceless Hermitian part; fall back to
    // iterating from the maximally mixed state.
    rho = Matrix::Identity(d, d) / static_cast<double>(d);
  } else {
    rho /= tr;
  }

  auto residual_of = [&](const Matrix& r) { return schatten_norm(kbl::apply(ch, r) - r, 2.0); };
  double residual = residual_of(rho);
  for (int iter = 0; iter < 500 && residual > 1e-12; ++iter) {
    rho = hermitize(kbl::apply(ch, rho));
    tr = rho.trace().real();
    if (std::abs(tr) < 1e-12) throw NumericalError("fixed_point: iteration lost trace");
    rho /= tr;
    const double next = residual_of(rho);
    if (next >= residual * (1.0 - 1e-6)) {  // stalled
      residual = std::min(residual, next);
      break;
    }
    residual = next;
  }
  if (!(residual <= 1e-8))
    throw NumericalError("fixed_point: residual " + std::to_string(residual) +
                         " exceeds 1e-8");

  Eigen::SelfAdjointEigenSolver<Matrix> pes(rho);
  if (pes.info() != Eigen::Success)
    throw NumericalError("fixed_point: eigensolver failed to converge");
  if (pes.eigenvalues()(0) < -1e-8)
    throw NumericalError("fixed_point: candidate state has negative eigenvalue " +
                         std::to_string(pes.eigenvalues()(0)));
  RealVector clipped = pes.eigenvalues().cwiseMax(0.0);
  clipped /= clipped.sum();
  rho = pes.eigenvectors() * clipped.asDiagonal().toDenseMatrix().cast<Complex>() *
        pes.eigenvectors().adjoint();

  FixedPointResult out{QuantumState::validated(rho, 1e-8), residual_of(rho), false};
  if (!(out.residual <= 1e-8))
    throw NumericalError("fixed_point: residual grew after positivity repair");

  const TwirlChannel omega = exact_twirl(static_cast<int>(d), 1);
  out.unique_certified = deviation_norm(phi_hat, omega.superop) < 1.0 - 1e-8;
  return out;
}

double von_neumann_entropy(const QuantumState& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(rho.rho));
  if (es.info() != Eigen::Success)
    throw NumericalError("von_neumann_entropy: eigensolver failed to converge");
  double h = 0.0;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double lam = es.eigenvalues()(i);
    if (lam < -1e-8)
      throw NumericalError("von_neumann_entropy: negative eigenvalue " + std::to_string(lam));
    if (lam > 0.0) h -= lam * std::log(lam);
  }
  return std::max(0.0, h);
}

EntropyBoundReport entropy_lower_bound_check(const KrausChannel& ch, long n_states,
                                             std::uint64_t master_seed) {
  require_tp_square(ch, "entropy_lower_bound_check");
  if (n_states < 1) throw ConfigError("entropy_lower_bound_check: needs at least one state");
  const Index d = ch.in_dim();
  const double ln_d = std::log(static_cast<double>(d));
  const Matrix uniform = Matrix::Identity(d, d) / static_cast<double>(d);

  EntropyBoundReport rep;
  rep.n_states = n_states;
  rep.min_slack = std::numeric_limits<double>::infinity();
  for (long s = 0; s < n_states; ++s) {
    CounterRng rng(SeededDraw{master_seed, static_cast<std::uint64_t>(s), 0});
    Vector v(d);
    for (Index i = 0; i < d; ++i) v(i) = Complex(rng.next_gaussian(), rng.next_gaussian());
    v /= v.norm();
    const Matrix sigma = hermitize(kbl::apply(ch, Matrix(v * v.adjoint())));
    const double h = von_neumann_entropy(QuantumState{sigma});
    const double dist2 = (sigma - uniform).squaredNorm();
    const double bound = ln_d - static_cast<double>(d) * dist2;
    rep.min_slack = std::min(rep.min_slack, h - bound);
  }
  rep.ok = rep.min_slack >= -1e-10;
  return rep;
}

const char* expander_branch_name(ExpanderBranch branch) {
  switch (branch) {
    case ExpanderBranch::GeneralKraus: return "general_kraus";
    case ExpanderBranch::TensorUnitary: return "tensor_unitary";
  }
  throw ConfigError("expander_branch_name: unknown branch");
}

ExpanderCertificate certify_expander(const KrausChannel& ch, ExpanderBranch branch,
                                     double epsilon, int d, int t,
                                     double entropy_delta) {
  if (!std::isfinite(epsilon) || epsilon <= 0.0 || epsilon >= 1.0)
    throw ConfigError("certify_expander: epsilon must lie in (0, 1)");
  if (!std::isfinite(entropy_delta) || entropy_delta < 0.0 || entropy_delta >= 1.0)
    throw ConfigError("certify_expander: entropy_delta must lie in [0, 1)");
  if (d < 2 || t < 1) throw ConfigError("certify_expander: needs d >= 2, t >= 1");
  Index dim = 1;
  for (int i = 0; i < t; ++i) dim *= d;
  if (!ch.square() || ch.in_dim() != dim)
    throw ConfigError("certify_expander: channel dimension differs from d^t");
  require_tp_square(ch, "certify_expander");

  ExpanderCertificate cert;
  cert.branch = branch;
  cert.epsilon = epsilon;
  cert.kraus_count = ch.k();
  cert.dim_sq = static_cast<long long>(dim) * static_cast<long long>(dim);
  cert.entropy_delta = entropy_delta;

  const SuperOpMatrix phi_hat = natural_rep(ch);
  const Spectrum spec = spectrum_by_modulus(phi_hat.mat);
  const ResidualCheck unital = is_unital(ch, 1e-8);
  cert.unital = unital.ok;

  if (cert.kraus_count >= cert.dim_sq) cert.violated.push_back("kraus_count");

  if (branch == ExpanderBranch::TensorUnitary) {
    const int r = twirl_rank(d, t);
    cert.epsilon_achieved = spec.modulus(r);
    if (!(cert.epsilon_achieved < epsilon)) cert.violated.push_back("spectral_gap");
  } else {
    cert.epsilon_achieved = spec.modulus(1);
    if (!(cert.epsilon_achieved < epsilon)) cert.violated.push_back("spectral_gap");
    if (!cert.unital) {
      bool structure_ok = false;
      try {
        const FixedPointResult fp = fixed_point(ch);
        const double h = von_neumann_entropy(fp.state);
        cert.entropy_of_fixed_point = h;
        structure_ok = fp.unique_certified &&
                       h >= entropy_delta * std::log(static_cast<double>(dim));
      } catch (const NumericalError&) {
        structure_ok = false;
      }
      if (!structure_ok) cert.violated.push_back("fixed_point_structure");
    }
  }

  cert.passed = cert.violated.empty();
  return cert;
}

nlohmann::json certificate_to_json(const ExpanderCertificate& cert) {
  nlohmann::json j{{"branch", expander_branch_name(cert.branch)},
                   {"epsilon", cert.epsilon},
                   {"epsilon_achieved", cert.epsilon_achieved},
                   {"kraus_count", cert.kraus_count},
                   {"dim_sq", cert.dim_sq},
                   {"unital", cert.unital},
                   {"entropy_delta", cert.entropy_delta},
                   {"passed", cert.passed},
                   {"violated", cert.violated}};
  if (cert.entropy_of_fixed_point)
    j["entropy_of_fixed_point"] = *cert.entropy_of_fixed_point;
  else
    j["entropy_of_fixed_point"] = nullptr;
  return j;
}

}  // namespace kbl
