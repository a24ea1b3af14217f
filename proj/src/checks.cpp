#include "fairlayer/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fairlayer/datagen.hpp"
#include "fairlayer/kkt.hpp"
#include "fairlayer/mlp.hpp"
#include "fairlayer/streaming.hpp"

namespace fairlayer {

namespace {

MaskVec random_mask(CounterRng& rng, Index n) {
  MaskVec mask(n);
  while (true) {
    Index ones = 0;
    for (Index i = 0; i < n; ++i) {
      mask[i] = rng.bernoulli(0.5) ? 1 : 0;
      ones += mask[i];
    }
    if (ones > 0 && ones < n) return mask;
  }
}

std::string fmt(double x) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << x;
  return out.str();
}

}  // namespace

RandomInstance make_random_instance(CounterRng& rng, Index n_max, Index q_max,
                                    bool with_equalities) {
  const Index n = 2 + static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(n_max - 1)));
  RandomInstance inst;
  inst.anchor.resize(n);
  for (Index i = 0; i < n; ++i) inst.anchor[i] = rng.normal();
  inst.C = ConstraintSet<double>::empty_set(n);

  Index budget = 1 + static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(q_max)));
  while (budget > 0) {
    const std::uint64_t kind = rng.uniform_int(4);
    if (kind == 0) {
      // halfspace held with slack at the anchor
      VecXd a(n);
      for (Index i = 0; i < n; ++i) a[i] = rng.normal();
      if (a.norm() < 1e-3) continue;
      ConstraintSet<double> row = ConstraintSet<double>::empty_set(n);
      row.A = a.transpose();
      row.m1.resize(1);
      row.m1[0] = a.dot(inst.anchor) + std::abs(rng.normal(0.0, 0.8));
      row.ineq_tags.assign(1, RowTag{});
      inst.C.append(row);
      budget -= 1;
    } else if (kind == 1 && budget >= 2) {
      const MaskVec mask = random_mask(rng, n);
      const VecXd a = parity_direction(mask);
      const double eps = std::abs(a.dot(inst.anchor)) + rng.uniform(0.0, 0.3);
      inst.C.append(build_mean_parity(mask, eps));
      budget -= 2;
    } else if (kind == 2 && budget >= 2) {
      const MaskVec mask = random_mask(rng, n);
      VecXd t(n);
      for (Index i = 0; i < n; ++i) t[i] = rng.normal();
      const VecXd a = parity_direction(mask);
      const double eps = std::abs(a.dot(inst.anchor - t)) + rng.uniform(0.0, 0.3);
      inst.C.append(build_equalized_residuals(mask, t, eps));
      budget -= 2;
    } else if (kind == 3 && budget >= 2 * n) {
      const double lo = inst.anchor.minCoeff() - rng.uniform(0.1, 1.0);
      const double hi = inst.anchor.maxCoeff() + rng.uniform(0.1, 1.0);
      inst.C.append(build_box(lo, hi, n));
      budget -= 2 * n;
    } else if (budget == 1) {
      budget = 0;  // nothing of width one fits; stop
    }
  }

  if (with_equalities && rng.bernoulli(0.3)) {
    VecXd a(n);
    for (Index i = 0; i < n; ++i) a[i] = rng.normal();
    if (a.norm() > 1e-3) {
      ConstraintSet<double> row = ConstraintSet<double>::empty_set(n);
      row.B = a.transpose();
      row.m2.resize(1);
      row.m2[0] = a.dot(inst.anchor);
      row.eq_tags.assign(1, RowTag{});
      inst.C.append(row);
    }
  }

  inst.z.resize(n);
  for (Index i = 0; i < n; ++i) inst.z[i] = inst.anchor[i] + rng.normal(0.0, 1.5);
  return inst;
}

CheckResult check_oracle_equivalence(std::uint64_t seed, int instances) {
  CounterRng rng(seed, 101);
  CheckResult res{"oracle_equivalence", false, 0.0, 1e-8, ""};
  int used = 0;
  while (used < instances) {
    RandomInstance inst = make_random_instance(rng, 16, 10);
    VecXd reference;
    try {
      reference = project_oracle(inst.z, inst.C);
    } catch (const TooManyConstraints&) {
      continue;
    }
    const VecXd solved = project(inst.z, inst.C).y_star;
    res.worst = std::max(res.worst, (solved - reference).lpNorm<Eigen::Infinity>());
    ++used;
  }
  res.pass = res.worst <= res.threshold;
  res.detail = std::to_string(used) + " instances, max |project - oracle| = " + fmt(res.worst);
  return res;
}

namespace {

bool same_active_rows(const ProjectionResult<double>& a, const ProjectionResult<double>& b,
                      double lambda_tol) {
  return a.differentiation_set(lambda_tol) == b.differentiation_set(lambda_tol);
}

}  // namespace

CheckResult check_jvp_finite_difference(std::uint64_t seed, int instances) {
  CounterRng rng(seed, 103);
  const SolverConfig<double> cfg{};
  CheckResult res{"jvp_finite_difference", false, 0.0, 1e-5, ""};
  const double h = 1e-6;
  int used = 0;
  int attempts = 0;
  while (used < instances && attempts < instances * 20) {
    ++attempts;
    RandomInstance inst = make_random_instance(rng, 12, 8);
    const auto at_z = project(inst.z, inst.C, cfg);
    if (!at_z.strict_complementarity) continue;
    VecXd dz(inst.z.size());
    for (Index i = 0; i < dz.size(); ++i) dz[i] = rng.normal();
    dz.normalize();
    const auto plus = project(inst.z + h * dz, inst.C, cfg);
    const auto minus = project(inst.z - h * dz, inst.C, cfg);
    // stay inside one affine region
    if (!same_active_rows(at_z, plus, cfg.lambda_tol) ||
        !same_active_rows(at_z, minus, cfg.lambda_tol))
      continue;
    const VecXd fd = (plus.y_star - minus.y_star) / (2.0 * h);
    const VecXd an = jvp(at_z, inst.C, dz, cfg);
    const double scale = std::max(1.0, fd.norm());
    res.worst = std::max(res.worst, (fd - an).norm() / scale);
    ++used;
  }
  res.pass = used >= instances && res.worst <= res.threshold;
  res.detail = std::to_string(used) + " instances, max relative error = " + fmt(res.worst);
  return res;
}

CheckResult check_adjoint_consistency(std::uint64_t seed, int instances) {
  CounterRng rng(seed, 105);
  const SolverConfig<double> cfg{};
  CheckResult res{"jvp_vjp_adjoint", false, 0.0, 1e-10, ""};
  for (int t = 0; t < instances; ++t) {
    RandomInstance inst = make_random_instance(rng, 12, 8);
    const auto result = project(inst.z, inst.C, cfg);
    LayerJacobian<double> jac(result, inst.C, cfg);
    VecXd dz(inst.z.size()), v(inst.z.size());
    for (Index i = 0; i < dz.size(); ++i) {
      dz[i] = rng.normal();
      v[i] = rng.normal();
    }
    const double lhs = jac.jvp(dz).dot(v);
    const double rhs = dz.dot(jac.vjp(v));
    const double scale = std::max(1.0, std::abs(lhs));
    res.worst = std::max(res.worst, std::abs(lhs - rhs) / scale);
  }
  res.pass = res.worst <= res.threshold;
  res.detail = "max |<Jdz,v> - <dz,J'v>| = " + fmt(res.worst);
  return res;
}

CheckResult check_network_gradient(std::uint64_t seed) {
  CheckResult res{"network_gradient_through_layer", false, 0.0, 1e-4, ""};
  CounterRng rng(seed, 107);

  const Index n_batch = 10;
  const Index d = 4;
  MLPModel model = make_mlp({d, 8, 6, 1}, /*layer_norm=*/true, seed);
  MatXd X(n_batch, d);
  VecXd y(n_batch);
  MaskVec mask(n_batch);
  for (Index i = 0; i < n_batch; ++i) {
    for (Index j = 0; j < d; ++j) X(i, j) = rng.normal();
    y[i] = rng.normal();
    mask[i] = i % 2;
  }
  GroupMasks masks;
  masks.add("g", mask);
  std::vector<FairnessSpec<double>> specs = {FairnessSpec<double>::mean_parity("g", 0.02),
                                             FairnessSpec<double>::box(-2.0, 2.0)};
  const auto C = compile(specs, masks, std::nullopt, n_batch);
  const SolverConfig<double> cfg{};

  auto loss_of = [&](const MLPModel& m) {
    const VecXd z = forward(m, X);
    const VecXd proj = project(z, C, cfg).y_star;
    return (proj - y).squaredNorm() / static_cast<double>(n_batch);
  };

  // analytic gradient
  ForwardCache cache;
  const VecXd z = forward(model, X, cache);
  const auto result = project(z, C, cfg);
  const VecXd dy = 2.0 * (result.y_star - y) / static_cast<double>(n_batch);
  const VecXd dz = LayerJacobian<double>(result, C, cfg).vjp(dy);
  const Gradients grads = backward(model, cache, dz);

  // flatten parameters, compare against central differences
  const double h = 1e-6;
  std::vector<double*> params;
  std::vector<double> analytic;
  auto push_block = [&](MatXd& P, const MatXd& G) {
    for (Index i = 0; i < P.size(); ++i) {
      params.push_back(P.data() + i);
      analytic.push_back(G.data()[i]);
    }
  };
  auto push_vec = [&](VecXd& P, const VecXd& G) {
    for (Index i = 0; i < P.size(); ++i) {
      params.push_back(P.data() + i);
      analytic.push_back(G[i]);
    }
  };
  for (std::size_t l = 0; l < model.W.size(); ++l) {
    push_block(model.W[l], grads.W[l]);
    push_vec(model.b[l], grads.b[l]);
  }
  for (std::size_t l = 0; l < model.gamma.size(); ++l) {
    push_vec(model.gamma[l], grads.gamma[l]);
    push_vec(model.beta[l], grads.beta[l]);
  }

  VecXd fd(static_cast<Index>(params.size()));
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double saved = *params[p];
    *params[p] = saved + h;
    const double up = loss_of(model);
    *params[p] = saved - h;
    const double down = loss_of(model);
    *params[p] = saved;
    fd[static_cast<Index>(p)] = (up - down) / (2.0 * h);
  }
  VecXd an(static_cast<Index>(analytic.size()));
  for (std::size_t p = 0; p < analytic.size(); ++p) an[static_cast<Index>(p)] = analytic[p];

  res.worst = (fd - an).norm() / std::max(1e-12, fd.norm());
  res.pass = res.worst <= res.threshold;
  res.detail = std::to_string(params.size()) +
               " parameters, relative gradient error = " + fmt(res.worst);
  return res;
}

namespace {

ConstraintSet<double> lipschitz_family(int family, Index n) {
  MaskVec mask(n);
  for (Index i = 0; i < n; ++i) mask[i] = i % 2;
  ConstraintSet<double> C = ConstraintSet<double>::empty_set(n);
  switch (family) {
    case 0:
      C.append(build_mean_parity(mask, 0.05));
      break;
    case 1:
      C.append(build_mean_parity(mask, 0.05));
      C.append(build_box(-1.5, 1.5, n));
      break;
    case 2:
      C.append(build_box(0.0, 3.5, n));
      break;
    case 3: {
      C.append(build_mean_parity(mask, 0.0));
      ConstraintSet<double> eq = ConstraintSet<double>::empty_set(n);
      eq.B = MatXd::Ones(1, n);
      eq.m2 = VecXd::Zero(1);
      eq.eq_tags.assign(1, RowTag{});
      C.append(eq);
      break;
    }
  }
  return C;
}

const char* lipschitz_family_name(int family) {
  switch (family) {
    case 0: return "parity";
    case 1: return "parity+box";
    case 2: return "box";
    case 3: return "parity+equality";
  }
  return "?";
}

}  // namespace

std::vector<CheckResult> check_lipschitz(std::uint64_t seed, Index pairs_per_family) {
  std::vector<CheckResult> out;
  const Index n = 8;
  for (int family = 0; family < 4; ++family) {
    const auto C = lipschitz_family(family, n);
    CheckResult res{std::string("lipschitz_ratio_") + lipschitz_family_name(family), false, 0.0,
                    1.0 + 1e-9, ""};
    res.worst = lipschitz_probe(C, pairs_per_family, seed + static_cast<std::uint64_t>(family));
    res.pass = res.worst <= res.threshold;
    res.detail = std::to_string(pairs_per_family) + " pairs, max ratio = " + fmt(res.worst);
    out.push_back(res);
  }

  // operator norm of sampled region projectors
  CounterRng rng(seed, 109);
  CheckResult norm_res{"projector_spectral_norm", false, 0.0, 1.0 + 1e-9, ""};
  for (int t = 0; t < 50; ++t) {
    RandomInstance inst = make_random_instance(rng, 10, 8);
    const auto result = project(inst.z, inst.C);
    const auto [P, c] = region_projector(result, inst.C);
    Eigen::JacobiSVD<MatXd> svd(P);
    norm_res.worst = std::max(norm_res.worst, svd.singularValues()[0]);
  }
  norm_res.pass = norm_res.worst <= norm_res.threshold;
  norm_res.detail = "max ||P||_2 = " + fmt(norm_res.worst);
  out.push_back(norm_res);
  return out;
}

std::vector<CheckResult> check_spectral(std::uint64_t seed, int instances) {
  CounterRng rng(seed, 111);
  CheckResult eig{"binary_spectrum", false, 0.0, 1e-8, ""};
  CheckResult sup{"gradient_suppression", false, 0.0, 1e-8, ""};
  CheckResult chain{"chain_rule_stability", false, 0.0, 1e-9, ""};
  for (int t = 0; t < instances; ++t) {
    RandomInstance inst = make_random_instance(rng, 8, 8);
    const auto result = project(inst.z, inst.C);
    LayerJacobian<double> jac(result, inst.C);
    const auto [P, c] = region_projector(result, inst.C);
    const auto rep = spectral_diagnostics(P, jac.active_matrix(), 8, seed + t);
    eig.worst = std::max(eig.worst, rep.max_distance_to_binary);
    sup.worst = std::max(sup.worst, rep.max_suppression_residual);

    // ||P J||_2 <= ||J||_2 for random upstream Jacobians
    MatXd J(P.cols(), 5);
    for (Index i = 0; i < J.size(); ++i) J.data()[i] = rng.normal();
    Eigen::JacobiSVD<MatXd> svd_j(J);
    Eigen::JacobiSVD<MatXd> svd_pj(P * J);
    chain.worst =
        std::max(chain.worst, svd_pj.singularValues()[0] - svd_j.singularValues()[0]);
  }
  eig.pass = eig.worst <= eig.threshold;
  eig.detail = "max eigenvalue distance to {0,1} = " + fmt(eig.worst);
  sup.pass = sup.worst <= sup.threshold;
  sup.detail = "max ||A_A (Dg v)||_inf = " + fmt(sup.worst);
  chain.pass = chain.worst <= chain.threshold;
  chain.detail = "max ||P J||_2 - ||J||_2 = " + fmt(chain.worst);
  return {eig, sup, chain};
}

CheckResult check_local_affineness(std::uint64_t seed, int instances, int probes_per_instance) {
  CounterRng rng(seed, 113);
  const SolverConfig<double> cfg{};
  CheckResult res{"local_affineness", false, 0.0, 1e-9, ""};
  int used = 0;
  int attempts = 0;
  while (used < instances && attempts < instances * 20) {
    ++attempts;
    RandomInstance inst = make_random_instance(rng, 12, 8);
    const auto at_z = project(inst.z, inst.C, cfg);
    if (!at_z.strict_complementarity) continue;
    LayerJacobian<double> jac(at_z, inst.C, cfg);
    const auto [P, c] = jac.region_projector();
    const double scale = 1e-3 * (1.0 + inst.z.lpNorm<Eigen::Infinity>());
    int probes = 0;
    for (int p = 0; p < probes_per_instance * 4 && probes < probes_per_instance; ++p) {
      VecXd delta(inst.z.size());
      for (Index i = 0; i < delta.size(); ++i) delta[i] = rng.normal(0.0, scale);
      const auto shifted = project(inst.z + delta, inst.C, cfg);
      if (!same_active_rows(at_z, shifted, cfg.lambda_tol)) continue;
      const VecXd predicted = at_z.y_star + P * delta;
      res.worst =
          std::max(res.worst, (shifted.y_star - predicted).lpNorm<Eigen::Infinity>());
      ++probes;
    }
    if (probes > 0) ++used;
  }
  res.pass = used >= instances && res.worst <= res.threshold;
  res.detail = std::to_string(used) + " regions, max |g(z+d) - g(z) - Pd| = " + fmt(res.worst);
  return res;
}

std::vector<CheckResult> check_lemma1(std::uint64_t seed, int trials) {
  CounterRng rng(seed, 115);
  CheckResult general{"lemma1_varying_proportions", false, 0.0, 0.0, ""};
  CheckResult stratified{"lemma1_stratified", false, 0.0, 1e-9, ""};
  int general_ok = 0, stratified_ok = 0;
  double worst_margin = -1e300;     // realized - bound, must stay <= 0
  double worst_stratified = 0.0;    // realized - epsilon under equal proportions
  for (int t = 0; t < trials; ++t) {
    const double eps = rng.uniform(0.01, 0.2);
    const double R = rng.uniform(0.5, 2.0);
    const int B = 3 + static_cast<int>(rng.uniform_int(28));
    std::vector<BatchStats<double>> varying, equal;
    const Index base0 = 1 + static_cast<Index>(rng.uniform_int(20));
    const Index base1 = 1 + static_cast<Index>(rng.uniform_int(20));
    for (int b = 0; b < B; ++b) {
      BatchStats<double> s;
      s.f0 = rng.uniform(-R, R);
      s.f1 = s.f0 - rng.uniform(-eps, eps);  // per-batch gap within eps
      s.n0 = 1 + static_cast<Index>(rng.uniform_int(20));
      s.n1 = 1 + static_cast<Index>(rng.uniform_int(20));
      varying.push_back(s);
      s.n0 = base0;
      s.n1 = base1;
      equal.push_back(s);
    }
    const auto bound_v = lemma1_bound(varying, eps);
    worst_margin = std::max(worst_margin, bound_v.realized - bound_v.bound);
    if (bound_v.realized <= bound_v.bound + 1e-12) ++general_ok;
    const auto bound_e = lemma1_bound(equal, eps);
    worst_stratified = std::max(worst_stratified, bound_e.realized - eps);
    if (bound_e.realized <= eps + 1e-9) ++stratified_ok;
  }
  general.pass = general_ok == trials;
  general.worst = worst_margin;
  general.detail = std::to_string(general_ok) + "/" + std::to_string(trials) +
                   " streams bound-respecting, max(realized - bound) = " + fmt(worst_margin);
  stratified.pass = stratified_ok == trials;
  stratified.worst = worst_stratified;
  stratified.detail = std::to_string(stratified_ok) + "/" + std::to_string(trials) +
                      " stratified streams within epsilon";
  return {general, stratified};
}

std::vector<CheckResult> check_thm2_stream(std::uint64_t seed, Index horizon) {
  CounterRng rng(seed, 117);
  const double epsilon = 0.05;
  auto state = DualControllerStateXd::make(epsilon, 0.5, 256);
  std::vector<FairnessSpec<double>> specs = {FairnessSpec<double>::mean_parity("g", epsilon)};

  // Persistent raw bias: group-0 outputs sit near +0.5, group-1 near -0.5,
  // so unpenalized batches violate the tolerance by about one unit.
  for (Index t = 0; t < horizon; ++t) {
    const Index b = 4;
    MaskVec mask(b);
    const int ones = 1 + static_cast<int>(rng.uniform_int(3));  // both groups present
    for (Index i = 0; i < b; ++i) mask[i] = i < ones ? 1 : 0;
    VecXd z(b);
    for (Index i = 0; i < b; ++i)
      z[i] = (mask[i] == 0 ? 0.5 : -0.5) + rng.normal(0.0, 0.1);
    GroupMasks masks;
    masks.add("g", mask);
    stream_step(state, z, masks, std::nullopt, specs);
  }

  CheckResult final_avg{"thm2_final_average", false, aggregate_violation(state), 0.07, ""};
  final_avg.pass = final_avg.worst <= final_avg.threshold;
  final_avg.detail = "weighted average after " + std::to_string(horizon) +
                     " batches = " + fmt(final_avg.worst);

  const double avg_early = state.log[499].running_weighted_average;
  const double avg_late = state.log[static_cast<std::size_t>(horizon) - 1].running_weighted_average;
  CheckResult monotone{"thm2_running_average_decreases", avg_late < avg_early, avg_late,
                       avg_early, "avg(T=500) = " + fmt(avg_early) +
                                      ", avg(T) = " + fmt(avg_late)};

  // Dual growth: least-squares slope of log lambda vs log t over the tail.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  Index count = 0;
  for (Index t = horizon / 2; t < horizon; ++t) {
    const double lam = state.log[static_cast<std::size_t>(t)].lambda_after;
    if (lam <= 0.0) continue;
    const double x = std::log(static_cast<double>(t + 1));
    const double y = std::log(lam);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++count;
  }
  double slope = 0.0;
  if (count > 1) slope = (sxy - sx * sy / count) / (sxx - sx * sx / count);
  CheckResult growth{"thm2_dual_growth_rate", slope <= 0.3, slope, 0.3,
                     "log-log tail slope = " + fmt(slope) + " over " + std::to_string(count) +
                         " points"};
  return {final_avg, monotone, growth};
}

std::vector<CheckResult> run_check_suite(const std::string& suite, std::uint64_t seed) {
  std::vector<CheckResult> out;
  auto add = [&](const CheckResult& r) { out.push_back(r); };
  auto add_all = [&](const std::vector<CheckResult>& rs) {
    out.insert(out.end(), rs.begin(), rs.end());
  };
  if (suite == "oracle" || suite == "all") add(check_oracle_equivalence(seed));
  if (suite == "kkt" || suite == "all") {
    add(check_jvp_finite_difference(seed));
    add(check_adjoint_consistency(seed));
    add(check_network_gradient(seed));
  }
  if (suite == "spectral" || suite == "all") add_all(check_spectral(seed));
  if (suite == "lipschitz" || suite == "all") add_all(check_lipschitz(seed));
  if (suite == "lemma1" || suite == "all") add_all(check_lemma1(seed));
  if (suite == "thm2" || suite == "all") add_all(check_thm2_stream(seed));
  if (out.empty()) throw InvalidConfig("unknown check suite '" + suite + "'");
  return out;
}

}  // namespace fairlayer
