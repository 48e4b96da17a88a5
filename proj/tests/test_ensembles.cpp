// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>
#include <set>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "kbl/ensembles.hpp"
#include "kbl/matcore.hpp"

using kbl::Complex;
using kbl::CounterRng;
using kbl::EnsembleSpec;
using kbl::GammaSignature;
using kbl::Index;
using kbl::Matrix;
using kbl::SeededDraw;

TEST_CASE("gamma signatures encode as their decoration symbols") {
  GammaSignature g;
  g.decorations = {kbl::Decoration::Plain, kbl::Decoration::Adjoint,
                   kbl::Decoration::Conjugate, kbl::Decoration::Transpose};
  CHECK(g.t() == 4);
  CHECK_FALSE(g.all_plain());
  const std::vector<std::string> sym = g.symbols();
  CHECK(sym == std::vector<std::string>{"1", "*", "-", "T"});

  const nlohmann::json j = g;
  CHECK(j.dump() == R"(["1","*","-","T"])");
  CHECK(j.get<GammaSignature>() == g);

  CHECK(GammaSignature::plain(2).all_plain());
  CHECK(GammaSignature::plain(2).t() == 2);

  CHECK_THROWS_AS(kbl::decoration_from_symbol("x"), kbl::ConfigError);
  CHECK_THROWS_AS(nlohmann::json::parse(R"(["1","q"])").get<GammaSignature>(),
                  kbl::ConfigError);
}

TEST_CASE("ensemble specs pin their norm certificates") {
  const EnsembleSpec h = EnsembleSpec::haar(3, 5);
  CHECK(h.L == 1.0);
  CHECK(h.op_dim() == 3);
  CHECK(h.t() == 1);

  const EnsembleSpec tp = EnsembleSpec::tensor_power(GammaSignature::plain(3), 2, 4);
  CHECK(tp.L == 1.0);
  CHECK(tp.op_dim() == 8);
  CHECK(tp.t() == 3);

  const EnsembleSpec herm = EnsembleSpec::hermitized(4, 7);
  CHECK(herm.L == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  CHECK_THROWS_AS(EnsembleSpec::haar(1, 5).validate(), kbl::ConfigError);
  CHECK_THROWS_AS(EnsembleSpec::haar(2, 0).validate(), kbl::ConfigError);
  CHECK_THROWS_AS(EnsembleSpec::custom("", 2, 3, 1.0).validate(), kbl::ConfigError);
  CHECK_THROWS_AS(EnsembleSpec::custom("tag", 2, 3, 0.0).validate(), kbl::ConfigError);

  EnsembleSpec wrong = EnsembleSpec::haar(2, 3);
  wrong.L = 2.0;
  CHECK_THROWS_AS(wrong.validate(), kbl::ConfigError);
}

TEST_CASE("ensemble spec JSON is strict about keys") {
  const auto j = nlohmann::json::parse(
      R"({"kind":"tensor_power_unitary","gamma":["1","-"],"d":2,"k":10,"L":1.0})");
  const EnsembleSpec spec = j.get<EnsembleSpec>();
  CHECK(spec.kind == kbl::EnsembleKind::TensorPowerUnitary);
  CHECK(spec.d == 2);
  CHECK(spec.k == 10);
  CHECK(spec.gamma.symbols() == std::vector<std::string>{"1", "-"});

  const nlohmann::json round = spec;
  CHECK(round.get<EnsembleSpec>().gamma == spec.gamma);

  CHECK_THROWS_AS(nlohmann::json::parse(R"({"kind":"haar_unitary","d":2,"k":1,"typo":0})")
                      .get<EnsembleSpec>(),
                  kbl::ConfigError);
  // Pinned kinds may omit L; custom may not.
  CHECK(nlohmann::json::parse(R"({"kind":"haar_unitary","d":2,"k":1})")
            .get<EnsembleSpec>()
            .L == 1.0);
  CHECK_THROWS_AS(
      nlohmann::json::parse(R"({"kind":"custom","tag":"constant_identity","d":2,"k":1})")
          .get<EnsembleSpec>(),
      kbl::ConfigError);
}

TEST_CASE("counter rng streams are deterministic and decorrelated") {
  CounterRng a(SeededDraw{1, 2, 3});
  CounterRng b(SeededDraw{1, 2, 3});
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());

  CounterRng c(SeededDraw{1, 2, 4});
  CounterRng d(SeededDraw{1, 2, 3});
  int same = 0;
  for (int i = 0; i < 64; ++i) same += (c.next_u64() == d.next_u64()) ? 1 : 0;
  CHECK(same == 0);

  CounterRng u(SeededDraw{7, 7, 7});
  for (int i = 0; i < 1000; ++i) {
    const double x = u.next_double();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("gaussian moments from the counter rng") {
  CounterRng rng(SeededDraw{2024, 0, 0});
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_gaussian();
    sum += g;
    sumsq += g * g;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 5.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("haar unitaries are unitary and reproducible") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const int d = 2 + static_cast<int>(s % 4);
    const Matrix u = kbl::sample_haar_unitary(d, SeededDraw{11, s, 0});
    CHECK(kbl::max_entry_norm(Matrix(u.adjoint() * u - Matrix::Identity(d, d))) <=
          1e-12);
    const Matrix again = kbl::sample_haar_unitary(d, SeededDraw{11, s, 0});
    CHECK((u - again).cwiseAbs().maxCoeff() == 0.0);
  }

  const Matrix phase = kbl::sample_haar_unitary(1, SeededDraw{5, 0, 0});
  CHECK(std::abs(std::abs(phase(0, 0)) - 1.0) < 1e-14);
}

TEST_CASE("haar first moments vanish off the isotropic diagonal") {
  // E[U_{xy} conj(U_{zw})] must approach delta_xz delta_yw / d.
  const int d = 2;
  const int n = 20000;
  Eigen::Matrix<Complex, 4, 4> acc;
  acc.setZero();
  for (int i = 0; i < n; ++i) {
    const Matrix u = kbl::sample_haar_unitary(d, SeededDraw{301, static_cast<std::uint64_t>(i), 0});
    for (int x = 0; x < d; ++x)
      for (int y = 0; y < d; ++y)
        for (int z = 0; z < d; ++z)
          for (int w = 0; w < d; ++w)
            acc(x * d + y, z * d + w) += u(x, y) * std::conj(u(z, w));
  }
  acc /= static_cast<double>(n);
  const double se = 1.0 / std::sqrt(static_cast<double>(n));
  for (int x = 0; x < d; ++x)
    for (int y = 0; y < d; ++y)
      for (int z = 0; z < d; ++z)
        for (int w = 0; w < d; ++w) {
          const double target = (x == z && y == w) ? 1.0 / d : 0.0;
          CHECK(std::abs(acc(x * d + y, z * d + w) - target) < 6.0 * se);
        }
}

TEST_CASE("kraus sets honor kind-specific structure") {
  const std::vector<Matrix> hu = kbl::sample_kraus_set(EnsembleSpec::haar(3, 4), 17, 2);
  REQUIRE(hu.size() == 4);
  for (const Matrix& u : hu) {
    CHECK(u.rows() == 3);
    CHECK(kbl::op_norm(u) <= 1.0 + 1e-10);
  }
  // Distinct op indices give distinct operators.
  CHECK((hu[0] - hu[1]).cwiseAbs().maxCoeff() > 1e-3);

  GammaSignature g;
  g.decorations = {kbl::Decoration::Plain, kbl::Decoration::Conjugate};
  const std::vector<Matrix> tp =
      kbl::sample_kraus_set(EnsembleSpec::tensor_power(g, 2, 3), 17, 2);
  REQUIRE(tp.size() == 3);
  for (const Matrix& a : tp) {
    CHECK(a.rows() == 4);
    CHECK(kbl::max_entry_norm(Matrix(a.adjoint() * a - Matrix::Identity(4, 4))) <=
          1e-10);
  }
  // Each tensor operator is built from a single unitary: op i must equal
  // U_i tensor conj(U_i) where U_i is the plain draw at the same key.
  const std::vector<Matrix> plain =
      kbl::sample_kraus_set(EnsembleSpec::haar(2, 3), 17, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    const Matrix expect = kbl::kron(plain[i], plain[i].conjugate());
    CHECK((tp[i] - expect).cwiseAbs().maxCoeff() < 1e-14);
  }

  const std::vector<Matrix> herm =
      kbl::sample_kraus_set(EnsembleSpec::hermitized(4, 5), 17, 2);
  for (const Matrix& a : herm) {
    CHECK(kbl::max_entry_norm(Matrix(a - a.adjoint())) < 1e-12);
    CHECK(kbl::op_norm(a) <= std::sqrt(2.0) + 1e-12);
    // (U + U^dag)/sqrt(2) from the plain draw at the same key.
  }
  const std::vector<Matrix> base = kbl::sample_kraus_set(EnsembleSpec::haar(4, 5), 17, 2);
  for (std::size_t i = 0; i < 5; ++i) {
    const Matrix expect = (base[i] + base[i].adjoint()) / std::sqrt(2.0);
    CHECK((herm[i] - expect).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("custom ensembles resolve through the registry") {
  CHECK(kbl::has_custom_ensemble("constant_identity"));
  CHECK(kbl::has_custom_ensemble("haar_unitary"));
  CHECK_FALSE(kbl::has_custom_ensemble("no_such_tag"));

  const EnsembleSpec spec = EnsembleSpec::custom("constant_identity", 3, 2, 1.0);
  const std::vector<Matrix> ops = kbl::sample_kraus_set(spec, 0, 0);
  REQUIRE(ops.size() == 2);
  CHECK((ops[0] - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(kbl::sample_kraus_set(EnsembleSpec::custom("no_such_tag", 2, 1, 1.0), 0, 0),
                  kbl::ConfigError);

  kbl::register_custom_ensemble("test_minus_identity", [](int d, CounterRng&) {
    return Matrix(-Matrix::Identity(d, d));
  });
  CHECK(kbl::has_custom_ensemble("test_minus_identity"));
  const std::vector<Matrix> neg =
      kbl::sample_kraus_set(EnsembleSpec::custom("test_minus_identity", 2, 1, 1.0), 0, 0);
  CHECK((neg[0] + Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("isotropy validation separates isotropic from constant ensembles") {
  const kbl::IsotropyReport haar =
      kbl::validate_isotropy(EnsembleSpec::haar(2, 1), 20000, 5.0, 42);
  CHECK(haar.pass);
  CHECK(haar.norm_ok);
  CHECK(haar.max_op_norm <= 1.0 + 1e-10);

  const kbl::IsotropyReport herm =
      kbl::validate_isotropy(EnsembleSpec::hermitized(3, 1), 20000, 5.0, 42);
  CHECK(herm.pass);
  CHECK(herm.norm_ok);

  const kbl::IsotropyReport flat = kbl::validate_isotropy(
      EnsembleSpec::custom("constant_identity", 2, 1, 1.0), 2000, 5.0, 42);
  CHECK_FALSE(flat.pass);

  const nlohmann::json j = kbl::isotropy_report_to_json(herm);
  CHECK(j.contains("pass"));
  CHECK(j.contains("worst_se_multiple"));
  CHECK(j.contains("max_op_norm"));

  CHECK_THROWS_AS(kbl::validate_isotropy(EnsembleSpec::haar(2, 1), 10, 5.0, 0),
                  kbl::ConfigError);
}

TEST_CASE("concentration constants follow the certificate bounds") {
  const kbl::MVConstants tp =
      kbl::ensemble_mv_constants(EnsembleSpec::tensor_power(GammaSignature::plain(2), 2, 10));
  CHECK(tp.M == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(tp.V == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(tp.D == 32);

  const kbl::MVConstants herm = kbl::ensemble_mv_constants(EnsembleSpec::hermitized(8, 100));
  CHECK(herm.M == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(herm.V == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(herm.D == 2 * 64);

  const kbl::MVConstants haar = kbl::ensemble_mv_constants(EnsembleSpec::haar(3, 1));
  CHECK(haar.D == 18);
}
