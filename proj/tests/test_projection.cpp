#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fairlayer/checks.hpp>
#include <fairlayer/projection.hpp>
#include <fairlayer/rng.hpp>

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

TEST_CASE("projection onto the exact-parity hyperplane") {
  const auto C = build_mean_parity(mask_of({0, 1}), 0.0);
  const VecXd z = vec_of({2, -2});
  const auto res = project(z, C);
  CHECK(res.y_star[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.y_star[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.lambda.minCoeff() >= 0.0);
  CHECK(res.stationarity_residual <= 1e-9);
  // both one-sided rows are tight at the hyperplane
  REQUIRE(res.active.size() == 2);
}

TEST_CASE("feasible inputs pass through unchanged") {
  const auto C = build_mean_parity(mask_of({0, 0, 1, 1}), 0.5);
  const VecXd z = vec_of({0.1, 0.2, 0.15, 0.05});
  const auto res = project(z, C);
  CHECK((res.y_star - z).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(res.lambda.isZero());
  CHECK(res.active.empty());
}

TEST_CASE("parity clipping splits the move across both samples") {
  // onto |y1 - y2| <= 0.4 from (1, 0): midpoint preserved, gap exactly 0.4
  const auto C = build_mean_parity(mask_of({0, 1}), 0.4);
  const VecXd z = vec_of({1, 0});
  const VecXd reference = project_oracle(z, C);
  CHECK(reference[0] == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(reference[1] == doctest::Approx(0.3).epsilon(1e-10));
  const auto res = project(z, C);
  CHECK((res.y_star - reference).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(std::abs(res.y_star[0] - res.y_star[1]) == doctest::Approx(0.4));
}

TEST_CASE("empty constraint set is the identity") {
  const auto C = ConstraintSet<double>::empty_set(3);
  const VecXd z = vec_of({1, -2, 3});
  const auto res = project(z, C);
  CHECK((res.y_star - z).isZero());
}

TEST_CASE("KKT certificate invariants on random instances") {
  CounterRng rng(41);
  const SolverConfig<double> cfg{};
  for (int t = 0; t < 60; ++t) {
    RandomInstance inst = make_random_instance(rng, 12, 9);
    const auto res = project(inst.z, inst.C, cfg);
    CHECK(res.lambda.minCoeff() >= 0.0);
    CHECK(res.stationarity_residual <= 1e-8);
    if (inst.C.num_ineq() > 0)
      CHECK((inst.C.A * res.y_star - inst.C.m1).maxCoeff() <= cfg.feasibility_tol * 10);
    if (inst.C.num_eq() > 0)
      CHECK((inst.C.B * res.y_star - inst.C.m2).cwiseAbs().maxCoeff() <=
            cfg.feasibility_tol * 10);
    // complementary slackness: positive multipliers only on tight rows
    for (Index i = 0; i < inst.C.num_ineq(); ++i) {
      if (res.lambda[i] > cfg.lambda_tol) {
        CHECK(std::abs(inst.C.A.row(i).dot(res.y_star) - inst.C.m1[i]) <= 1e-7);
      }
    }
  }
}

TEST_CASE("projection is idempotent and nonexpansive") {
  CounterRng rng(43);
  for (int t = 0; t < 40; ++t) {
    RandomInstance inst = make_random_instance(rng, 10, 8);
    const auto res = project(inst.z, inst.C);
    const auto res2 = project(res.y_star, inst.C);
    CHECK((res2.y_star - res.y_star).lpNorm<Eigen::Infinity>() <= 1e-9);

    VecXd z2(inst.z.size());
    for (Index i = 0; i < z2.size(); ++i) z2[i] = rng.normal(0.0, 2.0);
    const auto other = project(z2, inst.C);
    const double dist = (inst.z - z2).norm();
    if (dist > 1e-9)
      CHECK((res.y_star - other.y_star).norm() <= dist * (1.0 + 1e-9));
  }
}

TEST_CASE("solver matches the subset-enumeration oracle") {
  CounterRng rng(47);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    RandomInstance inst = make_random_instance(rng, 16, 10);
    const VecXd reference = project_oracle(inst.z, inst.C);
    const VecXd solved = project(inst.z, inst.C).y_star;
    worst = std::max(worst, (solved - reference).lpNorm<Eigen::Infinity>());
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("oracle fast paths") {
  SUBCASE("interior optimum returns the input") {
    auto C = ConstraintSet<double>::empty_set(2);
    C.A.resize(1, 2);
    C.A << 1, 0;
    C.m1 = vec_of({5});
    C.ineq_tags.assign(1, RowTag{});
    const VecXd z = vec_of({0.5, -1});
    CHECK((project_oracle(z, C) - z).isZero());
  }
  SUBCASE("single active halfspace reduces to the closed form") {
    auto C = ConstraintSet<double>::empty_set(2);
    C.A.resize(1, 2);
    C.A << 3, 4;  // a = (3,4), b = 1
    C.m1 = vec_of({1});
    C.ineq_tags.assign(1, RowTag{});
    const VecXd z = vec_of({2, 1});
    const VecXd a = vec_of({3, 4});
    const VecXd expected = z - a * ((a.dot(z) - 1.0) / a.squaredNorm());
    CHECK((project_oracle(z, C) - expected).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
  SUBCASE("constraint budget is enforced") {
    const auto C = build_box(0.0, 1.0, 8);  // 16 rows
    CHECK_THROWS_AS(project_oracle(vec_of({2, 2, 2, 2, 2, 2, 2, 2}), C), TooManyConstraints);
  }
}

TEST_CASE("penalized projection") {
  SUBCASE("zero weight returns the input") {
    const VecXd z = vec_of({1, 0});
    CHECK((project_penalized(z, 0.0, vec_of({1, -1})) - z).isZero());
  }
  SUBCASE("soft threshold closed form") {
    const VecXd z = vec_of({1, 0});
    const VecXd y = project_penalized(z, 0.5, vec_of({1, -1}));
    CHECK(y[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("large weight reaches the hard-parity limit") {
    const VecXd z = vec_of({1, 0});
    const VecXd a = vec_of({1, -1});
    const VecXd y = project_penalized(z, 1e9, a);
    CHECK(std::abs(a.dot(y)) <= 1e-8);
  }
  SUBCASE("zero direction is rejected") {
    CHECK_THROWS_AS(project_penalized(vec_of({1, 0}), 1.0, vec_of({0, 0})), ZeroDirection);
  }
  SUBCASE("matches dense grid search on the 1-d reduction") {
    CounterRng rng(53);
    for (int t = 0; t < 25; ++t) {
      VecXd z(4), a(4);
      for (Index i = 0; i < 4; ++i) {
        z[i] = rng.normal();
        a[i] = rng.normal();
      }
      if (a.norm() < 1e-3) continue;
      const double kappa = rng.uniform(0.0, 2.0);
      const VecXd y = project_penalized(z, kappa, a);
      // objective along a: phi(t) = (t - a'z)^2 / ||a||^2 + kappa |t|
      auto objective = [&](double target) {
        const VecXd point = z + a * ((target - a.dot(z)) / a.squaredNorm());
        return (point - z).squaredNorm() + kappa * std::abs(a.dot(point));
      };
      const double got = objective(a.dot(y));
      double best = got;
      const double span = std::abs(a.dot(z)) + 1.0;
      for (int k = -4000; k <= 4000; ++k) best = std::min(best, objective(span * k / 4000.0));
      CHECK(got <= best + 1e-6);
    }
  }
  SUBCASE("several terms agree with the single-term closed form") {
    const VecXd z = vec_of({1, 0, -1});
    const VecXd a = vec_of({1, -1, 0});
    std::vector<GapTerm<double>> one = {{a, 0.0}};
    const VecXd direct = project_penalized(z, 0.8, a);
    const VecXd iterative = project_penalized(z, 0.8, one);
    CHECK((direct - iterative).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
}

TEST_CASE("feasibility probe") {
  SUBCASE("parity plus unit box yields the midpoint constant") {
    auto C = build_mean_parity(mask_of({0, 1, 0, 1}), 0.05);
    C.append(build_box(0.0, 1.0, 4));
    const auto rep = feasibility_check(C);
    REQUIRE(rep.feasible);
    CHECK((rep.witness - VecXd::Constant(4, 0.5)).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
  SUBCASE("contradictory halfspaces are infeasible") {
    auto C = ConstraintSet<double>::empty_set(1);
    C.A.resize(2, 1);
    C.A << 1, -1;
    C.m1 = vec_of({0, -1});  // y <= 0 and y >= 1
    C.ineq_tags.assign(2, RowTag{});
    const auto rep = feasibility_check(C);
    CHECK_FALSE(rep.feasible);
    CHECK_THROWS_AS(project(vec_of({0.5}), C), Infeasible);
  }
  SUBCASE("empty set is feasible at the origin") {
    const auto rep = feasibility_check(ConstraintSet<double>::empty_set(3));
    REQUIRE(rep.feasible);
    CHECK(rep.witness.isZero());
  }
  SUBCASE("equality-only system finds a witness") {
    auto C = ConstraintSet<double>::empty_set(3);
    C.B.resize(1, 3);
    C.B << 1, 1, 1;
    C.m2 = vec_of({3});
    C.eq_tags.assign(1, RowTag{});
    const auto rep = feasibility_check(C);
    REQUIRE(rep.feasible);
    CHECK(std::abs(C.B.row(0).dot(rep.witness) - 3.0) <= 1e-8);
  }
}

TEST_CASE("weakly active rows are reported") {
  // With eps = 0 both one-sided parity rows are geometrically tight but only
  // one can carry a positive multiplier.
  const auto C = build_mean_parity(mask_of({0, 1}), 0.0);
  const auto res = project(vec_of({2, -2}), C);
  CHECK_FALSE(res.strict_complementarity);
  CHECK(res.weakly_active.size() >= 1);
  CHECK(res.differentiation_set(1e-8).size() == 1);
}

TEST_CASE("degenerate box pins the output") {
  const auto C = build_box(1.0, 1.0, 2);
  const auto res = project(vec_of({5, -3}), C);
  CHECK(res.y_star[0] == doctest::Approx(1.0));
  CHECK(res.y_star[1] == doctest::Approx(1.0));
}

TEST_CASE("large clamped instances stay within budget") {
  // Many active bound rows: exercises the warm start and incremental Gram.
  CounterRng rng(59);
  const Index n = 300;
  MaskVec mask(n);
  for (Index i = 0; i < n; ++i) mask[i] = i % 2;
  auto C = build_mean_parity(mask, 0.05);
  C.append(build_box(0.0, 3.5, n));
  VecXd z(n);
  for (Index i = 0; i < n; ++i) z[i] = rng.normal(0.0, 1.0);
  const auto res = project(z, C);
  CHECK((C.A * res.y_star - C.m1).maxCoeff() <= 1e-8);
  CHECK(res.stationarity_residual <= 1e-8);
  CHECK(res.iterations < 100 + 10 * (n + C.num_ineq()));
}
