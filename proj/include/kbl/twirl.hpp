// SPDX-License-Identifier: Apache-2.0
//
// Haar moment operators on t tensor factors of C^d. The exact construction
// assembles E_U[U^{(x)t} X (U^dag)^{(x)t}] from permutation operators and the
// pseudo-inverse of their Gram matrix; the Monte Carlo variant estimates the
// same average (under arbitrary factor decorations) by sampling.

#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "kbl/channels.hpp"
#include "kbl/ensembles.hpp"
#include "kbl/matcore.hpp"

namespace kbl {

// Permutation of {0, ..., t-1} in one-line images notation.
struct Permutation {
  std::vector<int> images;  // images[i] = alpha(i)

  int t() const { return static_cast<int>(images.size()); }
  static Permutation identity(int t);
  Permutation inverse() const;
  int cycle_count() const;
  bool is_identity() const;
};

bool operator==(const Permutation& a, const Permutation& b);

// (a o b)(i) = a(b(i)).
Permutation compose(const Permutation& a, const Permutation& b);

// All t! permutations in lexicographic one-line order; the identity is first.
std::vector<Permutation> all_permutations(int t);

// P_alpha |v_1 ... v_t> = |v_{alpha(1)} ... v_{alpha(t)}> on (C^d)^{(x)t},
// with big-endian basis indexing (factor 1 most significant, matching kron).
// Satisfies P_alpha P_beta = P_{beta o alpha} and tr P_alpha = d^{cycles}.
Matrix permutation_operator(const Permutation& alpha, int d);

// G[a][b] = d^{cycles(alpha_a^{-1} o alpha_b)} over lexicographic S_t order.
struct GramMatrix {
  RealMatrix entries;
  int t = 0;
  int d = 0;
};

GramMatrix gram_matrix(int t, int d);

// Moore-Penrose pseudo-inverse of the Gram matrix, indexed like it. For
// d >= t the Gram matrix is invertible and this is its true inverse.
RealMatrix weingarten(int t, int d);

// Rank of the Gram matrix at relative eigenvalue cutoff 1e-8; equals t!
// whenever d >= t and the dimension of span{P_alpha} in general.
int twirl_rank(int d, int t);

struct TwirlChannel {
  SuperOpMatrix superop;   // d^{2t} x d^{2t}
  int d = 0;
  int t = 0;
  GammaSignature gamma;
  bool exact = false;
  int rank = 0;                    // projector rank for the exact twirl
  double mc_standard_error = 0.0;  // jackknife SE of the estimate, 0 if exact

  Matrix apply(const Matrix& x) const;
};

// Exact Haar moment operator for plain gamma = (1, ..., 1). The result is
// the orthogonal projection onto span{vec(P_alpha)}. For t = 1 it maps
// X -> tr(X) I/d.
TwirlChannel exact_twirl(int d, int t);

// Monte Carlo average of W (x) conj(W) over n_samples draws of the decorated
// tensor operator W. The standard error is a jackknife over ~100 fixed
// sample blocks, measured in superoperator norm, and is independent of the
// worker count.
TwirlChannel mc_twirl(int d, const GammaSignature& gamma, long n_samples,
                      std::uint64_t master_seed, int workers = 1);

// Serialization: metadata plus the dense superoperator payload.
void to_json(nlohmann::json& j, const TwirlChannel& tw);
void from_json(const nlohmann::json& j, TwirlChannel& tw);

}  // namespace kbl
