#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fairlayer/checks.hpp>
#include <fairlayer/mlp.hpp>
#include <fairlayer/rng.hpp>

using namespace fairlayer;

namespace {

Dataset small_dataset(std::uint64_t seed, Index n = 400, bool tighter = false) {
  ScenarioConfig cfg;
  cfg.imbalance = 0.5;
  cfg.group_relevance = 0.3;
  cfg.bias_magnitude = 3.0;
  cfg.noise_sigma = 0.125;
  cfg.tightness = tighter ? BoxTightness::Tighter : BoxTightness::Loose;
  cfg.structure = TargetStructure::Linear;
  cfg.n = n;
  cfg.d = 8;
  cfg.block_size = 3;
  cfg.relevant_features = 3;
  cfg.beta_support = 2;
  cfg.seed = seed;
  return generate(cfg);
}

TrainConfig quick_config(Method method, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 5;
  cfg.b_train = 64;
  cfg.hidden = {16, 16};
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("forward pass") {
  SUBCASE("zero weights give a constant bias path") {
    MLPModel model = make_mlp({3, 4, 1}, false, 1);
    for (auto& W : model.W) W.setZero();
    model.b[0].setConstant(0.5);   // hidden pre-activations all 0.5 -> relu keeps
    model.b[1].setConstant(-2.0);  // output = -2 + W1 * relu(...) = -2
    MatXd X(5, 3);
    X.setRandom();
    const VecXd z = forward(model, X);
    for (Index i = 0; i < 5; ++i) CHECK(z[i] == doctest::Approx(-2.0));
  }
  SUBCASE("single linear layer is X w + b") {
    MLPModel model = make_mlp({3, 1}, false, 2);
    MatXd X(6, 3);
    X.setRandom();
    const VecXd expected = X * model.W[0].transpose() + VecXd::Constant(6, model.b[0][0]);
    CHECK((forward(model, X) - expected).lpNorm<Eigen::Infinity>() <= 1e-14);
  }
  SUBCASE("matches a straight-line reimplementation of the recursion") {
    MLPModel model = make_mlp({4, 6, 5, 1}, true, 3);
    CounterRng rng(5);
    MatXd X(7, 4);
    for (Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
    const VecXd z = forward(model, X);
    for (Index i = 0; i < 7; ++i) {
      VecXd h = X.row(i).transpose();
      for (Index l = 0; l < model.num_layers(); ++l) {
        const std::size_t ls = static_cast<std::size_t>(l);
        VecXd u = model.W[ls] * h + model.b[ls];
        if (l < model.num_layers() - 1) {
          const double mu = u.mean();
          const double var = (u.array() - mu).square().mean();
          const VecXd uhat = (u.array() - mu) / std::sqrt(var + 1e-5);
          u = (uhat.array() * model.gamma[ls].array() + model.beta[ls].array()).matrix();
          h = u.cwiseMax(0.0);
        } else {
          h = u;
        }
      }
      CHECK(z[i] == doctest::Approx(h[0]).epsilon(1e-12));
    }
  }
  SUBCASE("width mismatch is rejected") {
    MLPModel model = make_mlp({3, 1}, false, 1);
    MatXd X(2, 5);
    X.setZero();
    CHECK_THROWS_AS(forward(model, X), DimensionMismatch);
  }
}

TEST_CASE("penalty objective") {
  GroupMasks masks;
  MaskVec mask(2);
  mask << 0, 1;
  masks.add("g", mask);
  std::vector<FairnessSpec<double>> specs = {FairnessSpec<double>::mean_parity("g", 0.0)};
  VecXd y_hat(2), y(2);
  y_hat << 1, 0;
  y << 1, 0;
  SUBCASE("zero weight is the base loss") {
    CHECK(penalty_objective(y_hat, y, masks, specs, 0.0, LossKind::MSE) == doctest::Approx(0.0));
  }
  SUBCASE("constant predictions avoid the penalty") {
    VecXd c(2);
    c << 0.4, 0.4;
    const double loss = penalty_objective(c, y, masks, specs, 100.0, LossKind::MSE);
    const double base = (c - y).squaredNorm() / 2.0;
    CHECK(loss == doctest::Approx(base));
  }
  SUBCASE("absolute gap scales with lambda") {
    // base 0 + 2 * |1 - 0| = 2
    CHECK(penalty_objective(y_hat, y, masks, specs, 2.0, LossKind::MSE) == doctest::Approx(2.0));
  }
}

TEST_CASE("penalty with zero weight reproduces plain training bit for bit") {
  const Dataset data = small_dataset(101);
  // parity-only specs: no box, so the penalty method uses no reparameterization
  std::vector<FairnessSpec<double>> specs = {FairnessSpec<double>::mean_parity("protected", 0.05)};

  TrainConfig proj_cfg = quick_config(Method::Projection, 7);
  TrainConfig pen_cfg = quick_config(Method::Penalty, 7);
  pen_cfg.lambda = 0.0;

  std::vector<Index> widths = {data.d(), 16, 16, 1};
  MLPModel a = make_mlp(widths, false, 7);
  MLPModel b = make_mlp(widths, false, 7);
  train(a, data, specs, proj_cfg);
  train(b, data, specs, pen_cfg);
  for (std::size_t l = 0; l < a.W.size(); ++l) {
    CHECK(a.W[l] == b.W[l]);
    CHECK(a.b[l] == b.b[l]);
  }
}

TEST_CASE("flayer training keeps every batch feasible after the layer") {
  const Dataset data = small_dataset(103, 400, /*tighter=*/true);
  const auto specs = scenario_specs(data.config, 0.05);
  TrainConfig cfg = quick_config(Method::FLayer, 11);
  cfg.max_epochs = 3;
  std::vector<Index> widths = {data.d(), 16, 16, 1};
  MLPModel model = make_mlp(widths, false, 11);
  train(model, data, specs, cfg);

  const auto batches = stratified_batches(data.split.train, data.protected_mask, 64, 99);
  for (const auto& batch : batches) {
    MatXd Xb(static_cast<Index>(batch.size()), data.d());
    VecXd yb(static_cast<Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Xb.row(static_cast<Index>(i)) = data.X.row(batch[i]);
      yb[static_cast<Index>(i)] = data.y[batch[i]];
    }
    const VecXd z = forward(model, Xb);
    const GroupMasks masks = data.masks_for(batch);
    const auto C = compile(specs, masks, std::optional<VecXd>(yb),
                           static_cast<Index>(batch.size()));
    const VecXd projected = project(z, C).y_star;
    for (const auto& g : fairness_gaps(specs, masks, std::optional<VecXd>(yb), projected))
      CHECK(g.value <= g.threshold + 1e-7);
  }
}

TEST_CASE("training improves validation loss on a learnable scenario") {
  const Dataset data = small_dataset(107, 600);
  std::vector<FairnessSpec<double>> specs = {};  // plain regression
  TrainConfig cfg = quick_config(Method::Projection, 13);
  cfg.max_epochs = 6;
  MLPModel model = make_mlp({data.d(), 16, 16, 1}, false, 13);
  const TrainLog log = train(model, data, specs, cfg);
  REQUIRE(log.epochs.size() >= 2);
  CHECK(log.epochs.back().val_loss < log.epochs.front().val_loss);
  CHECK(log.epochs[1].train_loss < log.epochs[0].train_loss);
}

TEST_CASE("network gradients through the layer match finite differences") {
  const auto res = check_network_gradient(211);
  INFO(res.detail);
  CHECK(res.pass);
}

TEST_CASE("lambda selection") {
  const Dataset data = small_dataset(109, 300);
  TrainConfig cfg = quick_config(Method::Penalty, 17);
  cfg.max_epochs = 2;
  SUBCASE("loose tolerance accepts the smallest grid value") {
    std::vector<FairnessSpec<double>> specs = {
        FairnessSpec<double>::mean_parity("protected", 50.0)};
    const auto sel = select_penalty_lambda(data, specs, {0.5, 5.0}, cfg);
    CHECK(sel.satisfied);
    CHECK(sel.lambda == 0.5);
  }
  SUBCASE("unreachable tolerance flags the largest value") {
    std::vector<FairnessSpec<double>> specs = {
        FairnessSpec<double>::mean_parity("protected", 0.0)};
    const auto sel = select_penalty_lambda(data, specs, {0.001, 0.002}, cfg);
    CHECK_FALSE(sel.satisfied);
    CHECK(sel.lambda == 0.002);
    CHECK(sel.trials.size() == 2);
  }
}

TEST_CASE("evaluation modes") {
  const Dataset data = small_dataset(113, 400);
  const auto specs = scenario_specs(data.config, 0.05);
  SUBCASE("constant predictor satisfies parity with loss near the target variance") {
    MLPModel model = make_mlp({data.d(), 8, 1}, false, 19);
    for (auto& W : model.W) W.setZero();
    for (auto& b : model.b) b.setZero();
    const EvalMetrics m = evaluate(model, data, "test", specs, Method::Penalty);
    CHECK(m.gaps[0].value <= 1e-12);
    double second_moment = 0.0;
    for (Index i : data.split.test) second_moment += data.y[i] * data.y[i];
    second_moment /= static_cast<double>(data.split.test.size());
    CHECK(m.loss == doctest::Approx(second_moment).epsilon(1e-9));
  }
  SUBCASE("projection mode reports moved predictions and satisfies constraints") {
    MLPModel model = make_mlp({data.d(), 16, 1}, false, 23);
    const EvalMetrics m = evaluate(model, data, "test", specs, Method::Projection);
    CHECK(m.all_satisfied());
    CHECK(m.predictions_changed >= m.predictions_lowered);
  }
  SUBCASE("flayer mode satisfies all compiled constraints") {
    MLPModel model = make_mlp({data.d(), 16, 1}, false, 29);
    const EvalMetrics m = evaluate(model, data, "test", specs, Method::FLayer);
    CHECK(m.all_satisfied());
  }
}

TEST_CASE("stratified batching keeps both groups in every batch") {
  const Dataset data = small_dataset(127, 500);
  const auto batches = stratified_batches(data.split.train, data.protected_mask, 50, 31);
  for (const auto& batch : batches) {
    Index ones = 0;
    for (Index i : batch) ones += data.protected_mask[i];
    CHECK(ones > 0);
    CHECK(ones < static_cast<Index>(batch.size()));
    // proportions within one sample of the global proportion
  }
  // same seed reproduces the batch sequence
  const auto again = stratified_batches(data.split.train, data.protected_mask, 50, 31);
  REQUIRE(batches.size() == again.size());
  for (std::size_t k = 0; k < batches.size(); ++k) CHECK(batches[k] == again[k]);
}

TEST_CASE("strict penalty pushes gaps below a plain unpenalized run") {
  const Dataset data = small_dataset(131, 600);
  std::vector<FairnessSpec<double>> specs = {FairnessSpec<double>::mean_parity("protected", 0.05)};
  TrainConfig strict = quick_config(Method::StrictPenalty, 37);
  strict.lambda = 5000.0;
  strict.max_epochs = 8;
  TrainConfig plain = quick_config(Method::Penalty, 37);
  plain.lambda = 0.0;
  plain.max_epochs = 8;

  MLPModel ms = make_mlp({data.d(), 16, 16, 1}, false, 37);
  MLPModel mp = make_mlp({data.d(), 16, 16, 1}, false, 37);
  train(ms, data, specs, strict);
  train(mp, data, specs, plain);
  const auto gs = evaluate(ms, data, "val", specs, Method::StrictPenalty);
  const auto gp = evaluate(mp, data, "val", specs, Method::Penalty);
  CHECK(gs.gaps[0].value < gp.gaps[0].value);
}
