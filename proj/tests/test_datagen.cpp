#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <set>

#include <fairlayer/datagen.hpp>

using namespace fairlayer;

TEST_CASE("scenario grid enumerates the five binary factors") {
  const auto grid = scenario_grid(7);
  REQUIRE(grid.size() == 32);
  int imb = 0, rel = 0, noise = 0, tight = 0, nonlinear = 0;
  std::set<std::uint64_t> seeds;
  for (const auto& cfg : grid) {
    imb += cfg.imbalance == 0.5;
    rel += cfg.group_relevance == 0.7;
    noise += cfg.noise_sigma == 0.6;
    tight += cfg.tightness == BoxTightness::Tighter;
    nonlinear += cfg.structure == TargetStructure::Nonlinear;
    seeds.insert(cfg.seed);
    // relevance and bias magnitude move together
    if (cfg.group_relevance == 0.7) CHECK(cfg.bias_magnitude == 6.0);
    if (cfg.group_relevance == 0.3) CHECK(cfg.bias_magnitude == 3.0);
  }
  CHECK(imb == 16);
  CHECK(rel == 16);
  CHECK(noise == 16);
  CHECK(tight == 16);
  CHECK(nonlinear == 16);
  CHECK(seeds.size() == 32);  // per-scenario derived seeds are distinct

  // stable enumeration across calls
  const auto again = scenario_grid(7);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(grid[i].seed == again[i].seed);
}

TEST_CASE("generation is deterministic in the seed") {
  ScenarioConfig cfg = scenario_grid(11)[9].scaled_to(400, 12);
  const Dataset a = generate(cfg);
  const Dataset b = generate(cfg);
  CHECK(a.X == b.X);
  CHECK(a.y == b.y);
  CHECK(a.protected_mask == b.protected_mask);
  CHECK(a.split.train == b.split.train);
}

TEST_CASE("group fraction follows the imbalance parameter") {
  ScenarioConfig cfg;
  cfg.imbalance = 0.5;
  cfg.n = 10000;
  cfg.d = 10;
  cfg.block_size = 3;
  cfg.relevant_features = 3;
  cfg.beta_support = 2;
  cfg.seed = 99;
  const Dataset data = generate(cfg);
  const double frac =
      static_cast<double>(data.protected_mask.sum()) / static_cast<double>(data.n());
  CHECK(frac == doctest::Approx(0.5).epsilon(0.04));  // binomial CI at n = 10000
}

TEST_CASE("training-split standardization") {
  ScenarioConfig cfg = scenario_grid(13)[2].scaled_to(2000, 15);
  const Dataset data = generate(cfg);
  const auto& train = data.split.train;
  const double nt = static_cast<double>(train.size());
  for (Index j = 0; j < data.d(); ++j) {
    double mean = 0.0, var = 0.0;
    for (Index i : train) mean += data.X(i, j);
    mean /= nt;
    for (Index i : train) var += (data.X(i, j) - mean) * (data.X(i, j) - mean);
    var /= nt;
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("noise-free linear scenario is recovered by least squares") {
  ScenarioConfig cfg;
  cfg.imbalance = 0.5;
  cfg.group_relevance = 0.4;
  cfg.bias_magnitude = 0.0;  // no group offset
  cfg.noise_sigma = 0.0;
  cfg.structure = TargetStructure::Linear;
  cfg.group0_scale = 1.0;  // keep the affine relation exact
  cfg.n = 1500;
  cfg.d = 12;
  cfg.block_size = 4;
  cfg.relevant_features = 4;
  cfg.beta_support = 3;
  cfg.seed = 21;
  const Dataset data = generate(cfg);

  MatXd Xa(data.n(), data.d() + 1);
  Xa.leftCols(data.d()) = data.X;
  Xa.col(data.d()).setOnes();
  const VecXd coef = Xa.colPivHouseholderQr().solve(data.y);
  const VecXd residual = data.y - Xa * coef;
  const double ss_res = residual.squaredNorm();
  const double ss_tot = (data.y.array() - data.y.mean()).square().sum();
  CHECK(1.0 - ss_res / ss_tot > 0.999);
}

TEST_CASE("within-block correlation approaches the base correlation") {
  ScenarioConfig cfg;
  cfg.imbalance = 0.5;
  cfg.group_relevance = 0.0;  // leave the block structure unperturbed
  cfg.bias_magnitude = 0.0;
  cfg.noise_sigma = 0.1;
  cfg.n = 40000;
  cfg.d = 41;  // blocks of 20 over 40 continuous columns
  cfg.block_size = 20;
  cfg.relevant_features = 0;
  cfg.beta_support = 10;
  cfg.seed = 23;
  const Dataset data = generate(cfg);

  // average off-diagonal correlation inside the first block
  double acc = 0.0;
  int count = 0;
  for (Index a = 0; a < 20; ++a) {
    for (Index b = a + 1; b < 20; ++b) {
      const double corr =
          (data.X.col(a).array() * data.X.col(b).array()).mean() -
          data.X.col(a).mean() * data.X.col(b).mean();
      acc += corr;
      ++count;
    }
  }
  CHECK(acc / count == doctest::Approx(0.3).epsilon(0.17));  // 0.3 +- 0.05
}

TEST_CASE("group bias separates the raw targets") {
  // With zero relevance the raw group mean difference is 2b up to noise.
  ScenarioConfig cfg;
  cfg.imbalance = 0.5;
  cfg.group_relevance = 0.0;
  cfg.bias_magnitude = 6.0;
  cfg.noise_sigma = 0.125;
  cfg.n = 20000;
  cfg.d = 10;
  cfg.block_size = 3;
  cfg.relevant_features = 0;
  cfg.beta_support = 2;
  cfg.group0_scale = 1.0;
  cfg.seed = 29;
  const Dataset data = generate(cfg);
  // recover the raw-scale difference from the standardized targets: the
  // standardization is affine, so compare against the standardized 2b.
  double m0 = 0, m1 = 0;
  Index n0 = 0, n1 = 0;
  for (Index i = 0; i < data.n(); ++i) {
    if (data.protected_mask[i] == 0) {
      m0 += data.y[i];
      ++n0;
    } else {
      m1 += data.y[i];
      ++n1;
    }
  }
  m0 /= n0;
  m1 /= n1;
  // standardized separation must dominate: sd(y*) <= sqrt(var_score + b^2),
  // so the standardized gap 2b / sd is at least 2b / sqrt(var_score + b^2).
  CHECK(m0 - m1 > 1.5);
}

TEST_CASE("group-0 target variance is shrunk by the configured scale") {
  ScenarioConfig cfg = scenario_grid(31)[1];
  cfg = cfg.scaled_to(40000, 20);
  const Dataset data = generate(cfg);
  double m0 = 0, m1 = 0, v0 = 0, v1 = 0;
  Index n0 = 0, n1 = 0;
  for (Index i = 0; i < data.n(); ++i)
    if (data.protected_mask[i] == 0) {
      m0 += data.y[i];
      ++n0;
    } else {
      m1 += data.y[i];
      ++n1;
    }
  m0 /= n0;
  m1 /= n1;
  for (Index i = 0; i < data.n(); ++i) {
    const double c = data.y[i] - (data.protected_mask[i] == 0 ? m0 : m1);
    (data.protected_mask[i] == 0 ? v0 : v1) += c * c;
  }
  v0 /= n0;
  v1 /= n1;
  // The shrink applies to raw values, not centered ones, so compare the
  // second moments about the shared pre-scale mean structure loosely.
  CHECK(v0 / v1 == doctest::Approx(0.85 * 0.85).epsilon(0.05));
}

TEST_CASE("split shapes and determinism") {
  MaskVec mask(100);
  for (Index i = 0; i < 100; ++i) mask[i] = i < 20 ? 1 : 0;
  SUBCASE("exact division") {
    const auto s = split_indices(100, {0.7, 0.06, 0.24}, false, mask, 5);
    CHECK(s.train.size() == 70);
    CHECK(s.val.size() == 6);
    CHECK(s.test.size() == 24);
    std::set<Index> all;
    for (auto& part : {s.train, s.val, s.test}) all.insert(part.begin(), part.end());
    CHECK(all.size() == 100);  // disjoint cover
  }
  SUBCASE("stratified proportions") {
    MaskVec big(1000);
    for (Index i = 0; i < 1000; ++i) big[i] = i < 200 ? 1 : 0;
    const auto s = split_indices(1000, {0.7, 0.06, 0.24}, true, big, 5);
    auto fraction = [&](const IndexList& part) {
      Index ones = 0;
      for (Index i : part) ones += big[i];
      return static_cast<double>(ones) / static_cast<double>(part.size());
    };
    CHECK(fraction(s.train) == doctest::Approx(0.2).epsilon(0.03));
    CHECK(fraction(s.val) == doctest::Approx(0.2).epsilon(0.03));
    CHECK(fraction(s.test) == doctest::Approx(0.2).epsilon(0.03));
  }
  SUBCASE("same seed, same indices") {
    const auto a = split_indices(100, {0.7, 0.06, 0.24}, true, mask, 17);
    const auto b = split_indices(100, {0.7, 0.06, 0.24}, true, mask, 17);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
  }
  SUBCASE("bad ratios are rejected") {
    CHECK_THROWS_AS(split_indices(100, {0.5, 0.5, 0.5}, false, mask, 1), InvalidRatios);
    CHECK_THROWS_AS(split_indices(100, {0.7, 0.3}, false, mask, 1), InvalidRatios);
  }
}

TEST_CASE("invalid configurations are rejected") {
  ScenarioConfig cfg;
  cfg.imbalance = 0.0;
  CHECK_THROWS_AS(generate(cfg), InvalidConfig);
  cfg = ScenarioConfig{};
  cfg.block_size = 0;
  CHECK_THROWS_AS(generate(cfg), InvalidConfig);
  cfg = ScenarioConfig{};
  cfg.noise_sigma = -1.0;
  CHECK_THROWS_AS(generate(cfg), InvalidConfig);
}

TEST_CASE("desk-scale rescaling keeps the layout ratios") {
  const ScenarioConfig cfg = scenario_grid(1)[0].scaled_to(4000, 30);
  CHECK(cfg.n == 4000);
  CHECK(cfg.d == 30);
  CHECK(cfg.block_size == 4);        // 20 * 30 / 150
  CHECK(cfg.relevant_features == 10);  // 50 * 30 / 150
  CHECK(cfg.beta_support == 3);      // 15 * 30 / 150
}
