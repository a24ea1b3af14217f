#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fairlayer/constraints.hpp"
#include "fairlayer/errors.hpp"
#include "fairlayer/types.hpp"

namespace fairlayer {

template <typename Scalar>
struct SolverConfig {
  Scalar feasibility_tol = Scalar(1e-9);
  Scalar lambda_tol = Scalar(1e-8);  // active-set membership threshold
  Scalar ridge = Scalar(1e-12);      // regularization for degenerate Gram matrices
  Index max_iterations = 0;          // 0: derived from problem size

  Index iteration_budget(Index n, Index q) const {
    return max_iterations > 0 ? max_iterations : 100 + 10 * (n + q);
  }
};

using SolverConfigXd = SolverConfig<double>;

/// Projection optimum with its KKT certificate. `active` is the geometric
/// active set (tight inequality rows); rows with multipliers in (0, lambda_tol]
/// are listed in `weakly_active` and left out of the differentiation set.
template <typename Scalar>
struct ProjectionResult {
  Vec<Scalar> y_star;
  Vec<Scalar> lambda;  // inequality multipliers, size q, >= 0
  Vec<Scalar> nu;      // equality multipliers, size v
  IndexList active;
  IndexList weakly_active;
  Scalar stationarity_residual = Scalar(0);
  Index iterations = 0;
  bool strict_complementarity = true;
  bool ridge_applied = false;

  /// Rows entering the Jacobian: multipliers strictly above lambda_tol.
  IndexList differentiation_set(Scalar lambda_tol) const {
    IndexList out;
    for (Index i = 0; i < lambda.size(); ++i)
      if (lambda[i] > lambda_tol) out.push_back(i);
    return out;
  }
};

using ProjectionResultXd = ProjectionResult<double>;

template <typename Scalar>
struct FeasibilityReport {
  bool feasible = false;
  Vec<Scalar> witness;
  Scalar max_violation = std::numeric_limits<Scalar>::infinity();
  Scalar min_slack = -std::numeric_limits<Scalar>::infinity();
};

namespace detail {

template <typename Scalar>
Scalar max_violation(const ConstraintSet<Scalar>& C, const Vec<Scalar>& y) {
  Scalar worst = Scalar(0);
  if (C.num_ineq() > 0) worst = std::max(worst, (C.A * y - C.m1).maxCoeff());
  if (C.num_eq() > 0) worst = std::max(worst, (C.B * y - C.m2).cwiseAbs().maxCoeff());
  return worst;
}

/// Solve G x = r for a symmetric PSD Gram matrix, retrying with a ridge when
/// the factorization is unreliable. Returns true if the ridge was needed.
template <typename Scalar>
bool solve_gram(const Mat<Scalar>& G, const Vec<Scalar>& r, Scalar ridge, Vec<Scalar>& x) {
  Eigen::LDLT<Mat<Scalar>> ldlt(G);
  if (ldlt.info() == Eigen::Success) {
    x = ldlt.solve(r);
    const Scalar res = (G * x - r).template lpNorm<Eigen::Infinity>();
    const Scalar scale = std::max(Scalar(1), r.template lpNorm<Eigen::Infinity>());
    if (res <= Scalar(1e-10) * scale && x.allFinite()) return false;
  }
  Mat<Scalar> Gr = G;
  Gr.diagonal().array() += ridge;
  x = Eigen::LDLT<Mat<Scalar>>(Gr).solve(r);
  return true;
}

/// Equality-constrained projection of z onto {M y = rhs}: y = z - M' mu with
/// mu solving (M M') mu = M z - rhs.
template <typename Scalar>
struct EqpSolution {
  Vec<Scalar> y;
  Vec<Scalar> mu;
  bool ridged = false;
};

template <typename Scalar>
EqpSolution<Scalar> solve_eqp(const Vec<Scalar>& z, const Mat<Scalar>& M, const Vec<Scalar>& rhs,
                              Scalar ridge) {
  EqpSolution<Scalar> out;
  if (M.rows() == 0) {
    out.y = z;
    out.mu.resize(0);
    return out;
  }
  const Mat<Scalar> G = M * M.transpose();
  const Vec<Scalar> r = M * z - rhs;
  out.ridged = solve_gram(G, r, ridge, out.mu);
  out.y = z - M.transpose() * out.mu;
  return out;
}

}  // namespace detail

/// Feasibility probe. Cheap constant candidates are tried first (the origin,
/// and the box midpoint when identity-pattern bound rows are present); the
/// general path minimizes the squared constraint violation
///   f(y) = 1/2 ||(A y - m1)_+||^2 + 1/2 ||B y - m2||^2
/// by damped Newton steps. Infeasibility is a returned state, not an error.
template <typename Scalar = double>
FeasibilityReport<Scalar> feasibility_check(const ConstraintSet<Scalar>& C,
                                            const SolverConfig<Scalar>& cfg = {}) {
  const Index n = C.cols();
  FeasibilityReport<Scalar> out;

  auto finish = [&](const Vec<Scalar>& y) {
    out.witness = y;
    out.max_violation = detail::max_violation(C, y);
    out.feasible = out.max_violation <= cfg.feasibility_tol;
    Scalar slack = std::numeric_limits<Scalar>::infinity();
    if (C.num_ineq() > 0) slack = (C.m1 - C.A * y).minCoeff();
    out.min_slack = slack;
    return out.feasible;
  };

  if (C.empty()) {
    finish(Vec<Scalar>::Zero(n));
    return out;
  }
  if (finish(Vec<Scalar>::Zero(n))) return out;

  // Identity-pattern rows give per-coordinate bounds; their midpoint constant
  // satisfies every mean-difference row as well.
  Scalar lo = -std::numeric_limits<Scalar>::infinity();
  Scalar hi = std::numeric_limits<Scalar>::infinity();
  bool any_bound = false;
  for (Index r = 0; r < C.num_ineq(); ++r) {
    Index nz = 0, col = -1;
    for (Index j = 0; j < n; ++j)
      if (C.A(r, j) != Scalar(0)) {
        ++nz;
        col = j;
      }
    if (nz != 1) continue;
    const Scalar coef = C.A(r, col);
    if (coef > Scalar(0))
      hi = std::min(hi, C.m1[r] / coef);
    else
      lo = std::max(lo, C.m1[r] / coef);
    any_bound = true;
  }
  if (any_bound && lo <= hi && std::isfinite(lo) && std::isfinite(hi)) {
    if (finish(Vec<Scalar>::Constant(n, (lo + hi) / Scalar(2)))) return out;
  }

  Vec<Scalar> y = out.witness;  // best candidate so far
  const Index max_newton = 200;
  for (Index it = 0; it < max_newton; ++it) {
    Vec<Scalar> grad = Vec<Scalar>::Zero(n);
    Mat<Scalar> H = Mat<Scalar>::Zero(n, n);
    Scalar f = Scalar(0);
    if (C.num_ineq() > 0) {
      const Vec<Scalar> r = C.A * y - C.m1;
      for (Index i = 0; i < r.size(); ++i) {
        if (r[i] <= Scalar(0)) continue;
        f += Scalar(0.5) * r[i] * r[i];
        grad += r[i] * C.A.row(i).transpose();
        H += C.A.row(i).transpose() * C.A.row(i);
      }
    }
    if (C.num_eq() > 0) {
      const Vec<Scalar> r = C.B * y - C.m2;
      f += Scalar(0.5) * r.squaredNorm();
      grad += C.B.transpose() * r;
      H += C.B.transpose() * C.B;
    }
    if (detail::max_violation(C, y) <= cfg.feasibility_tol) break;
    H.diagonal().array() += std::max(cfg.ridge, Scalar(1e-10));
    const Vec<Scalar> step = Eigen::LDLT<Mat<Scalar>>(H).solve(-grad);
    if (!step.allFinite() || step.template lpNorm<Eigen::Infinity>() < Scalar(1e-15)) break;
    Scalar alpha = Scalar(1);
    auto violation_energy = [&](const Vec<Scalar>& p) {
      Scalar e = Scalar(0);
      if (C.num_ineq() > 0) e += (C.A * p - C.m1).cwiseMax(Scalar(0)).squaredNorm();
      if (C.num_eq() > 0) e += (C.B * p - C.m2).squaredNorm();
      return Scalar(0.5) * e;
    };
    const Scalar armijo = Scalar(1e-4) * grad.dot(step);
    int backtracks = 0;
    while (backtracks < 40 && violation_energy(y + alpha * step) > f + alpha * armijo) {
      alpha *= Scalar(0.5);
      ++backtracks;
    }
    y += alpha * step;
  }
  finish(y);
  return out;
}

namespace detail {

/// Working-set system [B; A_W] with an incrementally maintained Gram matrix.
/// The subproblem optimum for fixed z is y = z - M' mu with
/// (M M') mu = M z - rhs; rows enter and leave only in the trailing block.
template <typename Scalar>
class ActiveSetWorkspace {
 public:
  ActiveSetWorkspace(const Vec<Scalar>& z, const ConstraintSet<Scalar>& C, Scalar ridge)
      : z_(z), C_(C), ridge_(ridge), v_(C.num_eq()) {
    const Index cap = v_ + C.num_ineq();
    G_ = Mat<Scalar>::Zero(cap, cap);
    target_.resize(cap);  // entries of M z - rhs
    rows_.reserve(static_cast<std::size_t>(cap));
    for (Index e = 0; e < v_; ++e) push_row(-1 - e);  // equality rows, kept forever
  }

  Index size() const { return static_cast<Index>(rows_.size()); }
  Index working_count() const { return size() - v_; }
  Index working_row(Index i) const { return rows_[static_cast<std::size_t>(v_ + i)]; }

  void add(Index ineq_row) { push_row(ineq_row); }

  void remove_working(Index i) {
    const Index p = v_ + i;
    const Index k = size();
    for (Index r = p; r + 1 < k; ++r) {
      rows_[static_cast<std::size_t>(r)] = rows_[static_cast<std::size_t>(r + 1)];
      target_[r] = target_[r + 1];
    }
    // shift the Gram block left/up over the removed row and column
    for (Index r = 0; r < k; ++r)
      for (Index c = p; c + 1 < k; ++c) G_(r, c) = G_(r, c + 1);
    for (Index r = p; r + 1 < k; ++r) G_.row(r).head(k - 1) = G_.row(r + 1).head(k - 1);
    rows_.pop_back();
  }

  /// Solves the current subproblem; y = z - M' mu.
  bool solve(Vec<Scalar>& y, Vec<Scalar>& mu) const {
    const Index k = size();
    if (k == 0) {
      y = z_;
      mu.resize(0);
      return false;
    }
    const bool ridged =
        solve_gram<Scalar>(G_.topLeftCorner(k, k), target_.head(k), ridge_, mu);
    y = z_;
    for (Index i = 0; i < k; ++i) y -= mu[i] * row(rows_[static_cast<std::size_t>(i)]);
    return ridged;
  }

 private:
  // row id >= 0: inequality row; id < 0: equality row -(id+1)
  Vec<Scalar> row(Index id) const {
    return id >= 0 ? Vec<Scalar>(C_.A.row(id).transpose())
                   : Vec<Scalar>(C_.B.row(-1 - id).transpose());
  }

  void push_row(Index id) {
    const Index k = size();
    const Vec<Scalar> r = row(id);
    for (Index i = 0; i < k; ++i) {
      const Scalar dot = r.dot(row(rows_[static_cast<std::size_t>(i)]));
      G_(i, k) = dot;
      G_(k, i) = dot;
    }
    G_(k, k) = r.squaredNorm();
    target_[k] = r.dot(z_) - (id >= 0 ? C_.m1[id] : C_.m2[-1 - id]);
    rows_.push_back(id);
  }

  const Vec<Scalar>& z_;
  const ConstraintSet<Scalar>& C_;
  Scalar ridge_;
  Index v_;
  Mat<Scalar> G_;
  Vec<Scalar> target_;
  std::vector<Index> rows_;
};

}  // namespace detail

/// Euclidean projection onto the affine constraint set: the unique minimizer
/// of ||y - z||^2 subject to A y <= m1, B y = m2.
///
/// Primal active-set method on the strictly convex problem. The working set
/// starts from the rows violated at z; each iteration projects onto the
/// working-set equality system in closed form, blocking rows are added on
/// the segment toward that point, and rows with negative multipliers are
/// dropped at stationarity. Equality rows stay in the system throughout.
template <typename Scalar = double>
ProjectionResult<Scalar> project(const Vec<Scalar>& z, const ConstraintSet<Scalar>& C,
                                 const SolverConfig<Scalar>& cfg = {}) {
  const Index n = C.cols() > 0 ? C.cols() : z.size();
  if (z.size() != n) throw DimensionMismatch("prediction batch does not match constraint columns");
  if (!z.allFinite()) throw InvalidConfig("projection input contains non-finite values");
  const Index q = C.num_ineq();
  const Index v = C.num_eq();

  ProjectionResult<Scalar> out;
  out.lambda = Vec<Scalar>::Zero(q);
  out.nu = Vec<Scalar>::Zero(v);

  if (q == 0 && v == 0) {
    out.y_star = z;
    return out;
  }

  Vec<Scalar> y;
  bool z_feasible = detail::max_violation(C, z) <= cfg.feasibility_tol;
  if (z_feasible) {
    y = z;
  } else {
    const auto report = feasibility_check(C, cfg);
    if (!report.feasible) throw Infeasible("constraint set is infeasible");
    y = report.witness;
  }

  detail::ActiveSetWorkspace<Scalar> ws(z, C, cfg.ridge);
  std::vector<char> in_working(static_cast<std::size_t>(q), 0);
  if (!z_feasible) {
    const Vec<Scalar> violation = C.A * z - C.m1;
    for (Index i = 0; i < q; ++i) {
      if (violation[i] > cfg.feasibility_tol) {
        ws.add(i);
        in_working[static_cast<std::size_t>(i)] = 1;
      }
    }
  }

  Vec<Scalar> mu;
  Vec<Scalar> y_eq;
  const Index budget = cfg.iteration_budget(n, q);
  const Scalar step_tol = Scalar(1e-12) * (Scalar(1) + z.template lpNorm<Eigen::Infinity>());
  bool done = false;
  for (out.iterations = 0; out.iterations < budget; ++out.iterations) {
    out.ridge_applied = ws.solve(y_eq, mu) || out.ridge_applied;
    const Vec<Scalar> d = y_eq - y;

    if (d.template lpNorm<Eigen::Infinity>() <= step_tol) {
      // At the working-set optimum; check multiplier signs.
      Index drop = -1;
      Scalar most_negative = -Scalar(1e-10);
      for (Index i = 0; i < ws.working_count(); ++i) {
        if (mu[v + i] < most_negative) {
          most_negative = mu[v + i];
          drop = i;
        }
      }
      if (drop < 0) {
        y = y_eq;
        done = true;
        break;
      }
      in_working[static_cast<std::size_t>(ws.working_row(drop))] = 0;
      ws.remove_working(drop);
      continue;
    }

    // Largest step toward the subproblem optimum that stays feasible.
    // Working rows are affine toward their bound along d and never block.
    Scalar alpha = Scalar(1);
    Index blocker = -1;
    const Vec<Scalar> rate = C.A * d;
    const Vec<Scalar> slack = C.m1 - C.A * y;
    for (Index i = 0; i < q; ++i) {
      if (in_working[static_cast<std::size_t>(i)]) continue;
      if (rate[i] <= Scalar(1e-14)) continue;
      const Scalar limit = std::max(slack[i], Scalar(0)) / rate[i];
      if (limit < alpha) {
        alpha = limit;
        blocker = i;
      }
    }
    y += alpha * d;
    if (blocker >= 0) {
      ws.add(blocker);
      in_working[static_cast<std::size_t>(blocker)] = 1;
    }
  }
  if (!done) throw MaxIterations("active-set projection exceeded its iteration budget");

  for (Index i = 0; i < ws.working_count(); ++i)
    out.lambda[ws.working_row(i)] = std::max(mu[v + i], Scalar(0));
  if (v > 0) out.nu = mu.head(v);
  out.y_star = y;

  const Vec<Scalar> grad = y - z + C.A.transpose() * out.lambda +
                           (v > 0 ? Vec<Scalar>(C.B.transpose() * out.nu) : Vec<Scalar>::Zero(n));
  out.stationarity_residual = grad.template lpNorm<Eigen::Infinity>();

  if (q > 0) {
    const Vec<Scalar> slack = C.m1 - C.A * y;
    for (Index i = 0; i < q; ++i) {
      if (std::abs(slack[i]) <= cfg.feasibility_tol * (Scalar(1) + std::abs(C.m1[i]))) {
        out.active.push_back(i);
        if (out.lambda[i] <= cfg.lambda_tol) {
          out.weakly_active.push_back(i);
          out.strict_complementarity = false;
        }
      }
    }
  }
  return out;
}

/// One |a'y - c| gap term of the penalized objective. Plain mean parity has
/// c = 0; equalized residuals carry c = a'y_true.
template <typename Scalar>
struct GapTerm {
  Vec<Scalar> direction;
  Scalar offset = Scalar(0);

  Scalar value(const Vec<Scalar>& y) const { return std::abs(direction.dot(y) - offset); }
};

/// Penalized primal update: argmin ||y - z||^2 + kappa * sum_j |a_j'y - c_j|.
///
/// A single gap term admits a closed form. The objective reduces along a to
/// a scalar soft-threshold: t* = c + softshrink(a'z - c, kappa ||a||^2 / 2)
/// and y = z + a (t* - a'z) / ||a||^2. Several terms are handled by cyclic
/// coordinate ascent on the box-constrained dual
///   max_{|s_j| <= kappa} s'(A z - c) - 1/4 ||A's||^2,   y = z - A's / 2,
/// which recovers the soft-threshold solution when only one term is present.
template <typename Scalar = double>
Vec<Scalar> project_penalized(const Vec<Scalar>& z, Scalar kappa,
                              const std::vector<GapTerm<Scalar>>& terms,
                              Scalar tol = Scalar(1e-12), Index max_sweeps = 10000) {
  if (kappa < Scalar(0)) throw InvalidConfig("penalty weight must be nonnegative");
  for (const auto& t : terms)
    if (t.direction.size() != z.size() || t.direction.norm() == Scalar(0))
      throw ZeroDirection("gap direction must be nonzero and match the batch");
  if (kappa == Scalar(0) || terms.empty()) return z;

  const Index J = static_cast<Index>(terms.size());
  if (J == 1) {
    const Vec<Scalar>& a = terms[0].direction;
    const Scalar nn = a.squaredNorm();
    const Scalar t0 = a.dot(z) - terms[0].offset;
    const Scalar thresh = kappa * nn / Scalar(2);
    const Scalar shrunk = std::abs(t0) <= thresh ? Scalar(0) : t0 - (t0 > 0 ? thresh : -thresh);
    const Scalar t = terms[0].offset + shrunk;
    return z + a * ((t - a.dot(z)) / nn);
  }

  Mat<Scalar> A(J, z.size());
  Vec<Scalar> c(J);
  for (Index j = 0; j < J; ++j) {
    A.row(j) = terms[static_cast<std::size_t>(j)].direction.transpose();
    c[j] = A.row(j).dot(z) - terms[static_cast<std::size_t>(j)].offset;
  }
  const Mat<Scalar> G = A * A.transpose();
  Vec<Scalar> s = Vec<Scalar>::Zero(J);
  for (Index sweep = 0; sweep < max_sweeps; ++sweep) {
    Scalar change = Scalar(0);
    for (Index j = 0; j < J; ++j) {
      Scalar rest = Scalar(0);
      for (Index k = 0; k < J; ++k)
        if (k != j) rest += G(j, k) * s[k];
      Scalar sj = (c[j] - rest / Scalar(2)) * Scalar(2) / G(j, j);
      sj = std::clamp(sj, -kappa, kappa);
      change = std::max(change, std::abs(sj - s[j]));
      s[j] = sj;
    }
    if (change <= tol) break;
  }
  return z - A.transpose() * s / Scalar(2);
}

template <typename Scalar = double>
Vec<Scalar> project_penalized(const Vec<Scalar>& z, Scalar kappa, const Vec<Scalar>& direction) {
  return project_penalized<Scalar>(z, kappa, std::vector<GapTerm<Scalar>>{{direction, Scalar(0)}});
}

/// Exhaustive reference projection used to validate the active-set solver.
/// Every subset of inequality rows (equalities always included) is solved as
/// an equality-constrained projection through the pseudoinverse; the KKT
/// sufficient conditions select the optimum. Exponential in q, so capped.
template <typename Scalar = double>
Vec<Scalar> project_oracle(const Vec<Scalar>& z, const ConstraintSet<Scalar>& C,
                           Index subset_budget = 12, Scalar tol = Scalar(1e-8)) {
  const Index q = C.num_ineq();
  const Index v = C.num_eq();
  const Index n = C.cols() > 0 ? C.cols() : z.size();
  if (q > subset_budget)
    throw TooManyConstraints("subset enumeration supports at most " +
                             std::to_string(subset_budget) + " inequality rows");

  bool found = false;
  Scalar best_obj = std::numeric_limits<Scalar>::infinity();
  Vec<Scalar> best;

  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << q); ++bits) {
    IndexList subset;
    for (Index i = 0; i < q; ++i)
      if (bits & (std::uint64_t{1} << i)) subset.push_back(i);
    const Index k = static_cast<Index>(subset.size());
    Mat<Scalar> M(k + v, n);
    Vec<Scalar> rhs(k + v);
    for (Index i = 0; i < k; ++i) {
      M.row(i) = C.A.row(subset[static_cast<std::size_t>(i)]);
      rhs[i] = C.m1[subset[static_cast<std::size_t>(i)]];
    }
    if (v > 0) {
      M.bottomRows(v) = C.B;
      rhs.tail(v) = C.m2;
    }

    Vec<Scalar> y, mu;
    if (k + v == 0) {
      y = z;
      mu.resize(0);
    } else {
      // Least-norm multipliers through the SVD pseudoinverse.
      Eigen::JacobiSVD<Mat<Scalar>> svd(M * M.transpose(),
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
      svd.setThreshold(Scalar(1e-12));
      mu = svd.solve(M * z - rhs);
      y = z - M.transpose() * mu;
      // The subset system must actually be attained, else this candidate
      // cannot certify complementary slackness.
      if ((M * y - rhs).template lpNorm<Eigen::Infinity>() > tol) continue;
    }
    if (k > 0 && mu.head(k).minCoeff() < -tol) continue;
    if (detail::max_violation(C, y) > tol) continue;
    const Scalar obj = (y - z).squaredNorm();
    if (!found || obj < best_obj) {
      found = true;
      best_obj = obj;
      best = y;
    }
  }
  if (!found) throw Infeasible("no KKT-certified subset; constraint set is infeasible");
  return best;
}

}  // namespace fairlayer
