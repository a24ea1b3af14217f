#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fairlayer/constraints.hpp"
#include "fairlayer/projection.hpp"

namespace fairlayer {

enum class StreamBranch { PrimalDual, HardProjection, SkippedMissingGroup };

inline const char* to_string(StreamBranch b) {
  switch (b) {
    case StreamBranch::PrimalDual: return "primal_dual";
    case StreamBranch::HardProjection: return "hard_projection";
    case StreamBranch::SkippedMissingGroup: return "skipped_missing_group";
  }
  return "?";
}

template <typename Scalar>
struct StreamRecord {
  Index batch_index = 0;  // 1-based position in the stream
  Index batch_size = 0;
  StreamBranch branch = StreamBranch::PrimalDual;
  Scalar gap = Scalar(0);
  Scalar weighted_violation = Scalar(0);  // |b| * (gap - epsilon)
  Scalar lambda_after = Scalar(0);
  Scalar running_weighted_average = Scalar(0);
};

/// Primal-dual controller state. Batches below the threshold size take the
/// penalized update and move the dual variable; larger batches are hard
/// projected. The dual variable never leaves the nonnegative half-line.
template <typename Scalar>
struct DualControllerState {
  Scalar lambda = Scalar(0);
  Index dual_updates = 0;  // t in the step-size schedule eta / sqrt(t+1)
  Scalar eta = Scalar(0.5);
  Index b_tau = 256;
  Scalar epsilon = Scalar(0.05);
  Index batches_seen = 0;
  Scalar total_samples = Scalar(0);        // sum of |b_t|
  Scalar total_weighted_gap = Scalar(0);   // sum of |b_t| * v_t
  std::vector<StreamRecord<Scalar>> log;

  static DualControllerState make(Scalar epsilon, Scalar eta, Index b_tau) {
    DualControllerState s;
    s.epsilon = epsilon;
    s.eta = eta;
    s.b_tau = b_tau;
    return s;
  }
};

using DualControllerStateXd = DualControllerState<double>;

/// One inference batch through the controller. Small batches solve the
/// penalized objective with weight lambda * |b_t| along the per-attribute
/// mean-difference directions and then update the dual; batches of at least
/// b_tau samples are projected onto the hard constraint set. Batches missing
/// a group contribute a zero gap but still enter the sample accumulators.
template <typename Scalar = double>
Vec<Scalar> stream_step(DualControllerState<Scalar>& state, const Vec<Scalar>& z_raw,
                        const GroupMasks& masks, const std::optional<Vec<Scalar>>& y_true,
                        const std::vector<FairnessSpec<Scalar>>& specs,
                        const SolverConfig<Scalar>& cfg = {}) {
  const Index b = z_raw.size();
  StreamRecord<Scalar> rec;
  rec.batch_index = ++state.batches_seen;
  rec.batch_size = b;

  // Mean-gap terms for the penalized branch; a spec whose group is missing
  // from the batch is vacuous here and contributes no term.
  std::vector<GapTerm<Scalar>> terms;
  bool missing_group = false;
  for (const auto& spec : specs) {
    if (spec.kind != SpecKind::MeanParity && spec.kind != SpecKind::EqualizedResiduals) continue;
    try {
      Vec<Scalar> a = parity_direction<Scalar>(masks.mask(spec.attribute));
      Scalar c = Scalar(0);
      if (spec.kind == SpecKind::EqualizedResiduals) {
        if (!y_true) throw InvalidConfig("equalized_residuals stream requires targets");
        c = a.dot(*y_true);
      }
      terms.push_back({std::move(a), c});
    } catch (const DegenerateGroup&) {
      missing_group = true;
    }
  }

  auto realized_gap = [&](const Vec<Scalar>& y) {
    Scalar gap = Scalar(0);
    for (const auto& t : terms) gap += t.value(y);
    return gap;
  };

  Vec<Scalar> y_hat;
  if (missing_group && terms.empty()) {
    y_hat = z_raw;
    rec.branch = StreamBranch::SkippedMissingGroup;
    rec.gap = Scalar(0);
    rec.weighted_violation = Scalar(0);
    rec.lambda_after = state.lambda;
  } else if (b < state.b_tau) {
    const Scalar eta_t = state.eta / std::sqrt(Scalar(state.dual_updates + 1));
    y_hat = project_penalized<Scalar>(z_raw, state.lambda * Scalar(b), terms);
    const Scalar gap = realized_gap(y_hat);
    const Scalar w = Scalar(b) * (gap - state.epsilon);
    state.lambda = std::max(Scalar(0), state.lambda + eta_t * w);
    state.dual_updates += 1;
    rec.branch = StreamBranch::PrimalDual;
    rec.gap = gap;
    rec.weighted_violation = w;
    rec.lambda_after = state.lambda;
  } else {
    const auto C = compile<Scalar>(specs, masks, y_true, b);
    y_hat = project(z_raw, C, cfg).y_star;
    const Scalar gap = realized_gap(y_hat);
    rec.branch = StreamBranch::HardProjection;
    rec.gap = gap;
    rec.weighted_violation = Scalar(b) * (gap - state.epsilon);
    rec.lambda_after = state.lambda;
  }

  state.total_samples += Scalar(b);
  state.total_weighted_gap += Scalar(b) * rec.gap;
  rec.running_weighted_average = state.total_weighted_gap / state.total_samples;
  state.log.push_back(rec);
  return y_hat;
}

/// Sample-weighted time-average of the realized gaps over the stream so far.
template <typename Scalar = double>
Scalar aggregate_violation(const DualControllerState<Scalar>& state) {
  if (state.batches_seen == 0) throw EmptyStream("no batches processed");
  return state.total_weighted_gap / state.total_samples;
}

/// Group statistics of one batch: counts and the affine fairness statistic
/// realized by each group.
template <typename Scalar>
struct BatchStats {
  Index n0 = 0;
  Index n1 = 0;
  Scalar f0 = Scalar(0);
  Scalar f1 = Scalar(0);
};

template <typename Scalar>
struct AggregateBound {
  Scalar bound = Scalar(0);     // epsilon + delta_p * R * (1/p_bar + 1/(1-p_bar))
  Scalar realized = Scalar(0);  // |F0 - F1| pooled over the stream
  Scalar delta_p = Scalar(0);
  Scalar r_max = Scalar(0);
  Scalar p_bar = Scalar(0);
};

/// Aggregate-fairness certificate for a finished stream: the worst-case
/// pooled gap implied by per-batch gaps of at most epsilon under varying
/// group proportions, next to the gap the stream actually realized.
template <typename Scalar = double>
AggregateBound<Scalar> lemma1_bound(const std::vector<BatchStats<Scalar>>& stats, Scalar epsilon) {
  if (stats.empty()) throw EmptyStream("no batch statistics");
  Scalar sum_n0 = 0, sum_n1 = 0;
  for (const auto& s : stats) {
    if (s.n0 <= 0 || s.n1 <= 0)
      throw DegenerateProportion("every batch must contain both groups");
    sum_n0 += Scalar(s.n0);
    sum_n1 += Scalar(s.n1);
  }
  AggregateBound<Scalar> out;
  out.p_bar = sum_n0 / (sum_n0 + sum_n1);
  if (out.p_bar <= Scalar(0) || out.p_bar >= Scalar(1))
    throw DegenerateProportion("overall group proportion is degenerate");
  Scalar f0_acc = 0, f1_acc = 0;
  for (const auto& s : stats) {
    const Scalar nb = Scalar(s.n0 + s.n1);
    const Scalar pb = Scalar(s.n0) / nb;
    out.delta_p = std::max(out.delta_p, std::abs(pb - out.p_bar));
    out.r_max = std::max({out.r_max, std::abs(s.f0), std::abs(s.f1)});
    f0_acc += Scalar(s.n0) * s.f0;
    f1_acc += Scalar(s.n1) * s.f1;
  }
  out.realized = std::abs(f0_acc / sum_n0 - f1_acc / sum_n1);
  out.bound =
      epsilon + out.delta_p * out.r_max * (Scalar(1) / out.p_bar + Scalar(1) / (Scalar(1) - out.p_bar));
  return out;
}

}  // namespace fairlayer
