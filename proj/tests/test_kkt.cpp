#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fairlayer/checks.hpp>
#include <fairlayer/kkt.hpp>

using namespace fairlayer;

namespace {

MaskVec mask_of(std::initializer_list<int> v) {
  MaskVec m(static_cast<Index>(v.size()));
  Index i = 0;
  for (int x : v) m[i++] = x;
  return m;
}

VecXd vec_of(std::initializer_list<double> v) {
  VecXd m(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m[i++] = x;
  return m;
}

}  // namespace

TEST_CASE("identity Jacobian on the interior region") {
  const auto C = build_mean_parity(mask_of({0, 1}), 2.0);
  const VecXd z = vec_of({0.5, 0.0});  // gap 0.5 < 2, inactive
  const auto res = project(z, C);
  REQUIRE(res.active.empty());
  const VecXd dz = vec_of({0.3, -0.7});
  CHECK((jvp(res, C, dz) - dz).isZero());
  CHECK((vjp(res, C, dz) - dz).isZero());
  const auto [P, c] = region_projector(res, C);
  CHECK(P.isIdentity(1e-14));
  CHECK(c.isZero());
}

TEST_CASE("parity hyperplane Jacobian averages the pair") {
  const auto C = build_mean_parity(mask_of({0, 1}), 0.0);
  const auto res = project(vec_of({2, -2}), C);
  const VecXd dy = jvp(res, C, vec_of({1, 0}));
  CHECK(dy[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dy[1] == doctest::Approx(0.5).epsilon(1e-12));
  const VecXd zb = vjp(res, C, vec_of({1, 0}));
  CHECK(zb[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(zb[1] == doctest::Approx(0.5).epsilon(1e-12));
  const auto [P, c] = region_projector(res, C);
  CHECK(P(0, 0) == doctest::Approx(0.5));
  CHECK(P(0, 1) == doctest::Approx(0.5));
  CHECK(c.isZero(1e-12));
}

TEST_CASE("active bound row clamps its coordinate") {
  const auto C = build_box(-10.0, 1.0, 2);
  const auto res = project(vec_of({3, 0}), C);  // first upper row active
  const auto [P, c] = region_projector(res, C);
  CHECK(P(0, 0) == doctest::Approx(0.0));
  CHECK(P(1, 1) == doctest::Approx(1.0));
  CHECK(P(0, 1) == doctest::Approx(0.0));
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] == doctest::Approx(0.0));
}

TEST_CASE("jvp matches finite differences on random regions") {
  const auto res = check_jvp_finite_difference(71, 100);
  INFO(res.detail);
  CHECK(res.pass);
}

TEST_CASE("jvp and vjp are adjoint") {
  const auto res = check_adjoint_consistency(73, 100);
  INFO(res.detail);
  CHECK(res.pass);
}

TEST_CASE("projector spectrum is binary and suppresses normal directions") {
  for (const auto& res : check_spectral(79, 60)) {
    INFO(res.name << ": " << res.detail);
    CHECK(res.pass);
  }
}

TEST_CASE("spectral diagnostics flag a non-projector") {
  MatXd bad = MatXd::Identity(3, 3) * 0.5;
  const auto rep = spectral_diagnostics(bad, MatXd(0, 3));
  CHECK_FALSE(rep.pass(1e-8));
  CHECK_THROWS_AS(verify_spectrum(rep), SpectrumViolation);
}

TEST_CASE("identity and rank-one projectors have the expected spectra") {
  SUBCASE("identity") {
    const auto rep = spectral_diagnostics(MatXd::Identity(4, 4), MatXd(0, 4));
    CHECK(rep.max_distance_to_binary <= 1e-14);
    CHECK((rep.eigenvalues.array() - 1.0).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("parity projector") {
    const auto C = build_mean_parity(mask_of({0, 1}), 0.0);
    const auto res = project(vec_of({2, -2}), C);
    LayerJacobian<double> jac(res, C);
    const auto [P, c] = jac.region_projector();
    const auto rep = spectral_diagnostics(P, jac.active_matrix());
    CHECK(rep.max_distance_to_binary <= 1e-12);
    // one eigenvalue 0 (normal direction), one eigenvalue 1
    CHECK(rep.eigenvalues.minCoeff() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.eigenvalues.maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("local affineness within one region") {
  const auto res = check_local_affineness(83, 25, 50);
  INFO(res.detail);
  CHECK(res.pass);
}

TEST_CASE("lipschitz probe stays within the contraction bound") {
  SUBCASE("identity map has ratio exactly one") {
    const auto C = ConstraintSet<double>::empty_set(4);
    const double ratio = lipschitz_probe(C, 50, 7);
    CHECK(ratio == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("constraint families") {
    for (const auto& res : check_lipschitz(89, 200)) {
      INFO(res.name << ": " << res.detail);
      CHECK(res.pass);
    }
  }
}

TEST_CASE("equality rows enter the differentiation system") {
  auto C = ConstraintSet<double>::empty_set(3);
  C.B.resize(1, 3);
  C.B << 1, 1, 1;
  C.m2 = vec_of({0});
  C.eq_tags.assign(1, RowTag{});
  const auto res = project(vec_of({1, 2, 3}), C);
  const auto [P, c] = region_projector(res, C);
  // kernel projector of the all-ones row
  CHECK(P(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(P(0, 1) == doctest::Approx(-1.0 / 3.0));
  const VecXd dy = jvp(res, C, vec_of({1, 0, 0}));
  CHECK((dy - P.col(0)).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(std::abs(dy.sum()) <= 1e-10);
}
