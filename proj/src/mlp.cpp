#include "fairlayer/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fairlayer/errors.hpp"
#include "fairlayer/io.hpp"
#include "fairlayer/kkt.hpp"
#include "fairlayer/rng.hpp"

namespace fairlayer {

namespace {
constexpr double kLayerNormEps = 1e-5;
}

const char* to_string(Method m) {
  switch (m) {
    case Method::FLayer: return "flayer";
    case Method::Projection: return "projection";
    case Method::Penalty: return "penalty";
    case Method::StrictPenalty: return "strict-penalty";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "flayer") return Method::FLayer;
  if (s == "projection") return Method::Projection;
  if (s == "penalty") return Method::Penalty;
  if (s == "strict-penalty" || s == "strict_penalty") return Method::StrictPenalty;
  throw InvalidConfig("unknown method '" + s + "'");
}

MLPModel make_mlp(const std::vector<Index>& widths, bool layer_norm, std::uint64_t seed) {
  if (widths.size() < 2 || widths.back() != 1)
    throw InvalidConfig("model widths must end in a scalar output");
  MLPModel model;
  model.widths = widths;
  model.layer_norm = layer_norm;
  CounterRng rng(seed, 21);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Index fan_in = widths[l];
    const Index fan_out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    MatXd W(fan_out, fan_in);
    for (Index i = 0; i < fan_out; ++i)
      for (Index j = 0; j < fan_in; ++j) W(i, j) = rng.uniform(-bound, bound);
    VecXd b(fan_out);
    for (Index i = 0; i < fan_out; ++i) b[i] = rng.uniform(-bound, bound);
    model.W.push_back(std::move(W));
    model.b.push_back(std::move(b));
    if (layer_norm && l + 2 < widths.size()) {
      model.gamma.push_back(VecXd::Ones(fan_out));
      model.beta.push_back(VecXd::Zero(fan_out));
    }
  }
  return model;
}

VecXd forward(const MLPModel& model, const MatXd& X, ForwardCache& cache) {
  if (X.cols() != model.input_dim())
    throw DimensionMismatch("batch has " + std::to_string(X.cols()) + " features, model expects " +
                            std::to_string(model.input_dim()));
  const Index L = model.num_layers();
  cache.inputs.assign(static_cast<std::size_t>(L), {});
  cache.normalized.assign(static_cast<std::size_t>(L), {});
  cache.inv_std.assign(static_cast<std::size_t>(L), {});
  cache.hidden.assign(static_cast<std::size_t>(L), {});

  MatXd A = X;
  for (Index l = 0; l < L; ++l) {
    cache.inputs[static_cast<std::size_t>(l)] = A;
    MatXd U = A * model.W[static_cast<std::size_t>(l)].transpose();
    U.rowwise() += model.b[static_cast<std::size_t>(l)].transpose();
    if (l == L - 1) {
      A = std::move(U);
      break;
    }
    if (model.layer_norm) {
      const Index m = U.cols();
      MatXd Uhat(U.rows(), m);
      VecXd istd(U.rows());
      for (Index i = 0; i < U.rows(); ++i) {
        const double mu = U.row(i).mean();
        const double var = (U.row(i).array() - mu).square().mean();
        istd[i] = 1.0 / std::sqrt(var + kLayerNormEps);
        Uhat.row(i) = (U.row(i).array() - mu) * istd[i];
      }
      cache.normalized[static_cast<std::size_t>(l)] = Uhat;
      cache.inv_std[static_cast<std::size_t>(l)] = istd;
      U = Uhat.array().rowwise() * model.gamma[static_cast<std::size_t>(l)].transpose().array();
      U.rowwise() += model.beta[static_cast<std::size_t>(l)].transpose();
    }
    A = U.cwiseMax(0.0);
    cache.hidden[static_cast<std::size_t>(l)] = A;
  }
  VecXd z = A.col(0);
  if (!z.allFinite()) throw NonFiniteActivation("forward pass produced non-finite outputs");
  return z;
}

VecXd forward(const MLPModel& model, const MatXd& X) {
  ForwardCache cache;
  return forward(model, X, cache);
}

Gradients backward(const MLPModel& model, const ForwardCache& cache, const VecXd& dz) {
  const Index L = model.num_layers();
  Gradients g;
  g.W.resize(static_cast<std::size_t>(L));
  g.b.resize(static_cast<std::size_t>(L));
  g.gamma.resize(model.gamma.size());
  g.beta.resize(model.beta.size());

  MatXd dU = dz;  // n x 1 for the output layer
  for (Index l = L - 1; l >= 0; --l) {
    const std::size_t ls = static_cast<std::size_t>(l);
    if (l < L - 1) {
      // dU arrives as the gradient at the post-activation output of layer l
      MatXd dV = (cache.hidden[ls].array() > 0.0).cast<double>() * dU.array();
      if (model.layer_norm) {
        const MatXd& Uhat = cache.normalized[ls];
        const VecXd& istd = cache.inv_std[ls];
        g.gamma[ls] = (dV.array() * Uhat.array()).colwise().sum().transpose();
        g.beta[ls] = dV.colwise().sum().transpose();
        MatXd dUhat =
            dV.array().rowwise() * model.gamma[ls].transpose().array();
        MatXd dUn(dUhat.rows(), dUhat.cols());
        for (Index i = 0; i < dUhat.rows(); ++i) {
          const double mean_d = dUhat.row(i).mean();
          const double mean_du = (dUhat.row(i).array() * Uhat.row(i).array()).mean();
          dUn.row(i) = istd[i] * (dUhat.row(i).array() - mean_d - Uhat.row(i).array() * mean_du);
        }
        dU = std::move(dUn);
      } else {
        dU = std::move(dV);
      }
    }
    g.W[ls] = dU.transpose() * cache.inputs[ls];
    g.b[ls] = dU.colwise().sum().transpose();
    if (l > 0) dU = dU * model.W[ls];
  }
  return g;
}

namespace {

double base_loss(const VecXd& y_hat, const VecXd& y, LossKind kind) {
  const double n = static_cast<double>(y.size());
  if (kind == LossKind::MSE) return (y_hat - y).squaredNorm() / n;
  double acc = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double s = y_hat[i];
    acc += std::max(s, 0.0) - y[i] * s + std::log1p(std::exp(-std::abs(s)));
  }
  return acc / n;
}

VecXd base_loss_grad(const VecXd& y_hat, const VecXd& y, LossKind kind) {
  const double n = static_cast<double>(y.size());
  if (kind == LossKind::MSE) return 2.0 * (y_hat - y) / n;
  VecXd g(y.size());
  for (Index i = 0; i < y.size(); ++i) g[i] = 1.0 / (1.0 + std::exp(-y_hat[i])) - y[i];
  return g / n;
}

struct PenaltyTerm {
  VecXd direction;
  double offset = 0.0;
  double gap(const VecXd& y_hat) const { return direction.dot(y_hat) - offset; }
};

// Gap terms of the augmented loss; Box specs are handled by the output
// reparameterization, not a penalty.
std::vector<PenaltyTerm> penalty_terms(const GroupMasks& masks,
                                       const std::vector<FairnessSpec<double>>& specs,
                                       const std::optional<VecXd>& y_true) {
  std::vector<PenaltyTerm> terms;
  for (const auto& spec : specs) {
    switch (spec.kind) {
      case SpecKind::MeanParity: {
        terms.push_back({parity_direction(masks.mask(spec.attribute)), 0.0});
        break;
      }
      case SpecKind::EqualizedResiduals: {
        VecXd a = parity_direction(masks.mask(spec.attribute));
        if (!y_true) throw InvalidConfig("equalized_residuals penalty requires targets");
        const double off = a.dot(*y_true);
        terms.push_back({std::move(a), off});
        break;
      }
      case SpecKind::GroupResidual: {
        if (!y_true) throw InvalidConfig("group_residual penalty requires targets");
        const auto& mask = masks.mask(spec.attribute);
        for (int gsel = 0; gsel < 2; ++gsel) {
          Index count = 0;
          for (Index i = 0; i < mask.size(); ++i) count += mask[i] == gsel ? 1 : 0;
          if (count == 0) throw DegenerateGroup("batch lacks one of the groups");
          VecXd c = VecXd::Zero(mask.size());
          for (Index i = 0; i < mask.size(); ++i)
            if (mask[i] == gsel) c[i] = 1.0 / static_cast<double>(count);
          const double off = c.dot(*y_true);
          terms.push_back({std::move(c), off});
        }
        break;
      }
      case SpecKind::EqualizedOdds: {
        if (!y_true) throw InvalidConfig("equalized_odds penalty requires targets");
        const auto& mask = masks.mask(spec.attribute);
        for (const auto& region : spec.regions) {
          Index n0 = 0, n1 = 0;
          for (Index i = 0; i < mask.size(); ++i) {
            if (!region.contains((*y_true)[i])) continue;
            (mask[i] == 0 ? n0 : n1)++;
          }
          if (n0 == 0 || n1 == 0) continue;
          VecXd a = VecXd::Zero(mask.size());
          for (Index i = 0; i < mask.size(); ++i) {
            if (!region.contains((*y_true)[i])) continue;
            a[i] = mask[i] == 0 ? 1.0 / n0 : -1.0 / n1;
          }
          terms.push_back({std::move(a), 0.0});
        }
        break;
      }
      case SpecKind::Box:
      case SpecKind::GenericAffine:
        break;
    }
  }
  return terms;
}

std::optional<std::pair<double, double>> box_bounds(
    const std::vector<FairnessSpec<double>>& specs) {
  for (const auto& spec : specs)
    if (spec.kind == SpecKind::Box) return std::make_pair(spec.lower, spec.upper);
  return std::nullopt;
}

}  // namespace

double penalty_objective(const VecXd& y_hat, const VecXd& y_true, const GroupMasks& masks,
                         const std::vector<FairnessSpec<double>>& specs, double lambda,
                         LossKind loss, bool quadratic) {
  double total = base_loss(y_hat, y_true, loss);
  const auto terms = penalty_terms(masks, specs, std::optional<VecXd>(y_true));
  for (const auto& t : terms) {
    const double g = t.gap(y_hat);
    total += lambda * (quadratic ? g * g : std::abs(g));
  }
  return total;
}

std::vector<IndexList> plain_batches(const IndexList& rows, Index batch_size,
                                     std::uint64_t seed) {
  std::vector<Index> order(rows.begin(), rows.end());
  CounterRng rng(seed, 31);
  rng.shuffle(order);
  std::vector<IndexList> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size))
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() +
                             static_cast<std::ptrdiff_t>(
                                 std::min(order.size(), start + static_cast<std::size_t>(batch_size))));
  return batches;
}

std::vector<IndexList> stratified_batches(const IndexList& rows, const MaskVec& full_mask,
                                          Index batch_size, std::uint64_t seed) {
  std::vector<Index> g0, g1;
  for (Index r : rows) (full_mask[r] == 0 ? g0 : g1).push_back(r);
  CounterRng rng(seed, 37);
  rng.shuffle(g0);
  rng.shuffle(g1);
  const Index n = static_cast<Index>(rows.size());
  const Index nb = std::max<Index>(1, (n + batch_size - 1) / batch_size);

  // Even quotas keep per-batch proportions within one sample.
  auto quotas = [&](Index total) {
    std::vector<Index> counts(static_cast<std::size_t>(nb), total / nb);
    for (Index k = 0; k < total % nb; ++k) counts[static_cast<std::size_t>(k)]++;
    return counts;
  };
  const auto q0 = quotas(static_cast<Index>(g0.size()));
  const auto q1 = quotas(static_cast<Index>(g1.size()));

  std::vector<IndexList> batches(static_cast<std::size_t>(nb));
  std::size_t p0 = 0, p1 = 0;
  for (Index k = 0; k < nb; ++k) {
    auto& batch = batches[static_cast<std::size_t>(k)];
    for (Index c = 0; c < q0[static_cast<std::size_t>(k)]; ++c) batch.push_back(g0[p0++]);
    for (Index c = 0; c < q1[static_cast<std::size_t>(k)]; ++c) batch.push_back(g1[p1++]);
    rng.shuffle(batch);
  }
  return batches;
}

namespace {

MatXd gather_rows(const MatXd& X, const IndexList& rows) {
  MatXd out(static_cast<Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = X.row(rows[i]);
  return out;
}

VecXd gather(const VecXd& y, const IndexList& rows) {
  VecXd out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = y[rows[i]];
  return out;
}

void sgd_step(MLPModel& model, const Gradients& g, double lr) {
  for (std::size_t l = 0; l < model.W.size(); ++l) {
    model.W[l] -= lr * g.W[l];
    model.b[l] -= lr * g.b[l];
  }
  for (std::size_t l = 0; l < model.gamma.size(); ++l) {
    model.gamma[l] -= lr * g.gamma[l];
    model.beta[l] -= lr * g.beta[l];
  }
}

struct MethodPass {
  VecXd y_hat;
  double loss = 0.0;  // objective actually optimized
  VecXd dz;           // gradient at the raw outputs
};

// Sigmoid box reparameterization used by the penalty methods.
VecXd reparam_outputs(const VecXd& z, double lo, double hi) {
  VecXd out(z.size());
  for (Index i = 0; i < z.size(); ++i) out[i] = lo + (hi - lo) / (1.0 + std::exp(-z[i]));
  return out;
}

}  // namespace

TrainLog train(MLPModel& model, const Dataset& data,
               const std::vector<FairnessSpec<double>>& specs, const TrainConfig& cfg) {
  const IndexList& train_rows = data.split.train;
  const IndexList& val_rows = data.split.val;
  const auto bounds = box_bounds(specs);
  const bool reparam = (cfg.method == Method::Penalty || cfg.method == Method::StrictPenalty) &&
                       bounds.has_value();
  const double lambda = cfg.lambda;
  const SolverConfig<double> solver_cfg{};

  const MatXd X_val = gather_rows(data.X, val_rows);
  const VecXd y_val = gather(data.y, val_rows);
  const GroupMasks val_masks = data.masks_for(val_rows);

  auto validation_loss = [&]() {
    VecXd z = forward(model, X_val);
    switch (cfg.method) {
      case Method::FLayer: {
        const auto C = compile(specs, val_masks, std::optional<VecXd>(y_val),
                               static_cast<Index>(val_rows.size()));
        const VecXd proj = C.empty() ? z : project(z, C, solver_cfg).y_star;
        return base_loss(proj, y_val, cfg.loss);
      }
      case Method::Projection:
        return base_loss(z, y_val, cfg.loss);
      case Method::Penalty:
      case Method::StrictPenalty: {
        const VecXd out = reparam ? reparam_outputs(z, bounds->first, bounds->second) : z;
        return penalty_objective(out, y_val, val_masks, specs, lambda, cfg.loss,
                                 cfg.quadratic_penalty);
      }
    }
    return 0.0;
  };

  auto validation_max_gap = [&]() {
    VecXd z = forward(model, X_val);
    VecXd out;
    if (cfg.method == Method::FLayer) {
      const auto C = compile(specs, val_masks, std::optional<VecXd>(y_val),
                             static_cast<Index>(val_rows.size()));
      out = C.empty() ? z : project(z, C, solver_cfg).y_star;
    } else if (reparam) {
      out = reparam_outputs(z, bounds->first, bounds->second);
    } else {
      out = z;
    }
    double worst = 0.0;
    for (const auto& g : fairness_gaps(specs, val_masks, std::optional<VecXd>(y_val), out))
      worst = std::max(worst, g.value - g.threshold);
    return worst;
  };

  TrainLog log;
  double lr = cfg.learning_rate;
  double best_val = std::numeric_limits<double>::infinity();
  MLPModel best_model = model;
  int since_improvement = 0;
  int since_decay = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const std::uint64_t epoch_seed = CounterRng(cfg.seed, 60).derive(epoch).next_u64();
    const auto batches = cfg.method == Method::FLayer
                             ? stratified_batches(train_rows, data.protected_mask, cfg.b_train,
                                                  epoch_seed)
                             : plain_batches(train_rows, cfg.b_train, epoch_seed);

    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      const MatXd Xb = gather_rows(data.X, batch);
      const VecXd yb = gather(data.y, batch);
      ForwardCache cache;
      const VecXd z = forward(model, Xb, cache);
      MethodPass pass;

      switch (cfg.method) {
        case Method::FLayer: {
          const GroupMasks masks = data.masks_for(batch);
          const auto C =
              compile(specs, masks, std::optional<VecXd>(yb), static_cast<Index>(batch.size()));
          if (C.empty()) {
            pass.y_hat = z;
            pass.dz = base_loss_grad(z, yb, cfg.loss);
          } else {
            ProjectionResult<double> result;
            try {
              result = project(z, C, solver_cfg);
            } catch (const Infeasible& e) {
              throw InfeasibleBatchConstraints(std::string("training batch is infeasible: ") +
                                               e.what());
            }
            pass.y_hat = result.y_star;
            const VecXd dy = base_loss_grad(pass.y_hat, yb, cfg.loss);
            pass.dz = LayerJacobian<double>(result, C, solver_cfg).vjp(dy);
          }
          pass.loss = base_loss(pass.y_hat, yb, cfg.loss);
          break;
        }
        case Method::Projection: {
          pass.y_hat = z;
          pass.loss = base_loss(z, yb, cfg.loss);
          pass.dz = base_loss_grad(z, yb, cfg.loss);
          break;
        }
        case Method::Penalty:
        case Method::StrictPenalty: {
          const GroupMasks masks = data.masks_for(batch);
          VecXd out = z;
          VecXd dout_dz;
          if (reparam) {
            out = reparam_outputs(z, bounds->first, bounds->second);
            dout_dz.resize(z.size());
            const double range = bounds->second - bounds->first;
            for (Index i = 0; i < z.size(); ++i) {
              const double s = 1.0 / (1.0 + std::exp(-z[i]));
              dout_dz[i] = range * s * (1.0 - s);
            }
          }
          pass.y_hat = out;
          pass.loss = base_loss(out, yb, cfg.loss);
          VecXd dout = base_loss_grad(out, yb, cfg.loss);
          const auto terms = penalty_terms(masks, specs, std::optional<VecXd>(yb));
          for (const auto& t : terms) {
            const double gap = t.gap(out);
            pass.loss += lambda * (cfg.quadratic_penalty ? gap * gap : std::abs(gap));
            const double slope =
                cfg.quadratic_penalty ? 2.0 * gap : (gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0));
            dout += lambda * slope * t.direction;
          }
          pass.dz = reparam ? VecXd(dout.array() * dout_dz.array()) : dout;
          break;
        }
      }

      const Gradients grads = backward(model, cache, pass.dz);
      sgd_step(model, grads, lr);
      epoch_loss += pass.loss;
    }
    epoch_loss /= static_cast<double>(batches.size());

    EpochLog el;
    el.epoch = epoch;
    el.train_loss = epoch_loss;
    el.val_loss = validation_loss();
    el.val_max_gap = validation_max_gap();
    el.learning_rate = lr;
    log.epochs.push_back(el);

    if (el.val_loss < best_val) {
      best_val = el.val_loss;
      log.best_epoch = epoch;
      since_improvement = 0;
      since_decay = 0;
      if (cfg.restore_best) best_model = model;
    } else {
      ++since_improvement;
      ++since_decay;
    }
    if (since_decay >= cfg.decay_patience) {
      lr *= cfg.decay_factor;
      since_decay = 0;
    }
    if (since_improvement >= cfg.early_stop_patience) {
      log.early_stopped = true;
      break;
    }
  }
  log.best_val_loss = best_val;
  if (cfg.restore_best && log.best_epoch >= 0) model = best_model;
  return log;
}

bool EvalMetrics::all_satisfied(double tol) const {
  if (spec_count == 0) return false;
  for (const auto& g : gaps)
    if (!g.satisfied(tol)) return false;
  return true;
}

EvalMetrics evaluate(const MLPModel& model, const Dataset& data, const std::string& split,
                     const std::vector<FairnessSpec<double>>& specs, Method mode, LossKind loss,
                     Index eval_batch) {
  const IndexList& rows = data.split.of(split);
  const auto bounds = box_bounds(specs);
  const bool reparam =
      (mode == Method::Penalty || mode == Method::StrictPenalty) && bounds.has_value();
  const SolverConfig<double> solver_cfg{};

  std::vector<IndexList> batches;
  if (eval_batch <= 0 || eval_batch >= static_cast<Index>(rows.size()))
    batches.push_back(rows);
  else
    batches = stratified_batches(rows, data.protected_mask, eval_batch, 9001);

  VecXd predictions(data.n());
  EvalMetrics metrics;
  for (const auto& batch : batches) {
    const MatXd Xb = gather_rows(data.X, batch);
    const VecXd yb = gather(data.y, batch);
    VecXd z = forward(model, Xb);
    VecXd out;
    if (mode == Method::FLayer || mode == Method::Projection) {
      const GroupMasks masks = data.masks_for(batch);
      const auto C =
          compile(specs, masks, std::optional<VecXd>(yb), static_cast<Index>(batch.size()));
      out = C.empty() ? z : project(z, C, solver_cfg).y_star;
      if (mode == Method::Projection) {
        for (Index i = 0; i < out.size(); ++i) {
          if (std::abs(out[i] - z[i]) > 1e-9) ++metrics.predictions_changed;
          if (out[i] < z[i] - 1e-9) ++metrics.predictions_lowered;
        }
      }
    } else {
      out = reparam ? reparam_outputs(z, bounds->first, bounds->second) : z;
    }
    for (std::size_t i = 0; i < batch.size(); ++i)
      predictions[batch[i]] = out[static_cast<Index>(i)];
  }

  const VecXd y_hat = gather(predictions, rows);
  const VecXd y_true = gather(data.y, rows);
  metrics.loss = base_loss(y_hat, y_true, loss);
  metrics.gaps =
      fairness_gaps(specs, data.masks_for(rows), std::optional<VecXd>(y_true), y_hat);
  metrics.spec_count = static_cast<int>(specs.size());
  for (const auto& g : metrics.gaps)
    if (g.satisfied(1e-7)) ++metrics.specs_satisfied;
  return metrics;
}

LambdaSelection select_penalty_lambda(const Dataset& data,
                                      const std::vector<FairnessSpec<double>>& specs,
                                      const std::vector<double>& grid, TrainConfig cfg) {
  if (grid.empty()) throw InvalidConfig("empty penalty grid");
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  cfg.method = Method::Penalty;

  LambdaSelection sel;
  sel.lambda = sorted.back();
  for (double lambda : sorted) {
    cfg.lambda = lambda;
    std::vector<Index> widths;
    widths.push_back(data.d());
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(1);
    MLPModel model = make_mlp(widths, cfg.layer_norm, cfg.seed);
    train(model, data, specs, cfg);
    EvalMetrics m = evaluate(model, data, "val", specs, Method::Penalty, cfg.loss);
    const bool ok = m.all_satisfied();
    sel.trials.push_back({lambda, std::move(m)});
    if (ok && !sel.satisfied) {
      sel.lambda = lambda;
      sel.satisfied = true;
      break;
    }
  }
  return sel;
}

void save_model(const MLPModel& model, const std::string& path) {
  std::ostringstream out;
  out << "[model]\n";
  out << "version = 1\n";
  out << "layers = " << model.num_layers() << "\n";
  out << "widths =";
  for (Index w : model.widths) out << " " << w;
  out << "\n";
  out << "activation = relu\n";
  out << "layer_norm = " << (model.layer_norm ? 1 : 0) << "\n";
  for (Index l = 0; l < model.num_layers(); ++l) {
    const std::size_t ls = static_cast<std::size_t>(l);
    out << "[layer" << l << "]\n";
    out << "W =";
    for (Index i = 0; i < model.W[ls].rows(); ++i)
      for (Index j = 0; j < model.W[ls].cols(); ++j) out << " " << format_g17(model.W[ls](i, j));
    out << "\n";
    out << "b =";
    for (Index i = 0; i < model.b[ls].size(); ++i) out << " " << format_g17(model.b[ls][i]);
    out << "\n";
    if (model.layer_norm && ls < model.gamma.size()) {
      out << "gamma =";
      for (Index i = 0; i < model.gamma[ls].size(); ++i)
        out << " " << format_g17(model.gamma[ls][i]);
      out << "\n";
      out << "beta =";
      for (Index i = 0; i < model.beta[ls].size(); ++i)
        out << " " << format_g17(model.beta[ls][i]);
      out << "\n";
    }
  }
  write_text_file(path, out.str());
}

namespace {

VecXd parse_number_list(const std::string& text, Index expected) {
  VecXd out(expected);
  std::istringstream in(text);
  std::string token;
  Index i = 0;
  while (in >> token) {
    if (i >= expected) throw IoError("model document has extra numbers");
    out[i++] = parse_double(token);
  }
  if (i != expected) throw IoError("model document has missing numbers");
  return out;
}

}  // namespace

MLPModel load_model(const std::string& path) {
  const KVDocument doc = KVDocument::load(path);
  const KVSection* head = doc.find("model");
  if (!head) throw IoError("'" + path + "' is not a model document");
  MLPModel model;
  {
    std::istringstream in(head->get("widths"));
    long w;
    while (in >> w) model.widths.push_back(static_cast<Index>(w));
  }
  model.layer_norm = head->get_long("layer_norm") != 0;
  const Index L = head->get_long("layers");
  if (static_cast<Index>(model.widths.size()) != L + 1)
    throw IoError("model widths do not match the layer count");
  for (Index l = 0; l < L; ++l) {
    const KVSection* sec = doc.find("layer" + std::to_string(l));
    if (!sec) throw IoError("missing layer " + std::to_string(l));
    const Index rows = model.widths[static_cast<std::size_t>(l + 1)];
    const Index cols = model.widths[static_cast<std::size_t>(l)];
    const VecXd w = parse_number_list(sec->get("W"), rows * cols);
    MatXd W(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) W(i, j) = w[i * cols + j];
    model.W.push_back(std::move(W));
    model.b.push_back(parse_number_list(sec->get("b"), rows));
    if (model.layer_norm && l < L - 1) {
      model.gamma.push_back(parse_number_list(sec->get("gamma"), rows));
      model.beta.push_back(parse_number_list(sec->get("beta"), rows));
    }
  }
  return model;
}

}  // namespace fairlayer
