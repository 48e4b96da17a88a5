// SPDX-License-Identifier: Apache-2.0
//
// Spectral analysis of channels: distance to the exact Haar moment
// operator, the eigenvalue gap it implies, fixed points, entropy, and the
// resulting expander-style certificates.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kbl/channels.hpp"
#include "kbl/matcore.hpp"
#include "kbl/twirl.hpp"

namespace kbl {

// || A - B ||_{2->2}, i.e. the operator norm of the superoperator gap.
double deviation_norm(const SuperOpMatrix& a, const SuperOpMatrix& b);

// Spectrum of a channel measured against the rank-r exact twirl on the same
// (d, t): with deviation delta, eigenvalue r+1 obeys |lambda_{r+1}| <= delta
// for tensor-power unitary channels (and |lambda_2| <= delta (1 + delta)
// in the t = 1 case for arbitrary trace-preserving channels).
struct GapReport {
  double deviation = 0.0;            // ||Phi - Omega||_{2->2}
  int rank = 0;                      // r, rank of the exact twirl
  double lambda_r_modulus = 0.0;     // r-th largest modulus
  double lambda_r1_modulus = 0.0;    // (r+1)-th largest modulus
  std::vector<double> top_moduli;    // leading min(8, d^{2t}) moduli
};

GapReport gap_report(const SuperOpMatrix& phi_hat, const TwirlChannel& omega);
GapReport gap_report(const SuperOpMatrix& phi_hat, int d, int t);

nlohmann::json gap_report_to_json(const GapReport& rep);

// Fixed point of a trace-preserving channel. The state comes from the
// eigenvector at eigenvalue 1, refined by power iteration if the eigensolver
// residual is loose. `unique_certified` is true when the channel's distance
// to the fully randomizing map is below 1 - 1e-8 (which forces a spectral
// gap and hence uniqueness).
struct FixedPointResult {
  QuantumState state;
  double residual = 0.0;  // || Phi(rho) - rho ||_2
  bool unique_certified = false;
};

FixedPointResult fixed_point(const KrausChannel& ch);

// -tr(rho ln rho) >= 0, natural log.
double von_neumann_entropy(const QuantumState& rho);

// Checks H(Phi(|v><v|)) >= ln(d) - d || Phi(|v><v|) - I/d ||_2^2 on
// n_states Haar-random pure inputs; `min_slack` is the worst margin.
struct EntropyBoundReport {
  long n_states = 0;
  double min_slack = 0.0;
  bool ok = false;  // min_slack >= -1e-10
};

EntropyBoundReport entropy_lower_bound_check(const KrausChannel& ch, long n_states,
                                             std::uint64_t master_seed);

enum class ExpanderBranch { GeneralKraus, TensorUnitary };

const char* expander_branch_name(ExpanderBranch branch);

// Finite-dimensional expander certificate. GeneralKraus demands few Kraus
// operators, a gap after the leading eigenvalue, and either unitality or a
// certified-unique fixed point of entropy at least entropy_delta * ln(dim).
// TensorUnitary demands few operators and a gap after the leading block of
// size rank(exact twirl).
struct ExpanderCertificate {
  ExpanderBranch branch = ExpanderBranch::GeneralKraus;
  double epsilon = 0.0;           // requested gap threshold
  double epsilon_achieved = 0.0;  // measured modulus the threshold applies to
  long long kraus_count = 0;
  long long dim_sq = 0;           // d^{2t}
  bool unital = false;
  std::optional<double> entropy_of_fixed_point;  // GeneralKraus, non-unital path
  double entropy_delta = 0.0;
  bool passed = false;
  std::vector<std::string> violated;  // names of failed conditions
};

ExpanderCertificate certify_expander(const KrausChannel& ch, ExpanderBranch branch,
                                     double epsilon, int d, int t,
                                     double entropy_delta = 0.5);

nlohmann::json certificate_to_json(const ExpanderCertificate& cert);

}  // namespace kbl
