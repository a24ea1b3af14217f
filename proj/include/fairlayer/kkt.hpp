#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

#include "fairlayer/projection.hpp"
#include "fairlayer/rng.hpp"

namespace fairlayer {

/// Linearization of the projection's KKT system at one solution. Rows of the
/// differentiation set (multipliers strictly above lambda_tol) and every
/// equality row form M; tangent propagation solves the block system
///   [ I   M' ] [dy ]   [dz]
///   [ M   0  ] [dmu] = [ 0],
/// whose first block equals the kernel projector of M in the Euclidean case.
template <typename Scalar>
class LayerJacobian {
 public:
  LayerJacobian(const ProjectionResult<Scalar>& result, const ConstraintSet<Scalar>& C,
                const SolverConfig<Scalar>& cfg = {})
      : n_(C.cols() > 0 ? C.cols() : result.y_star.size()), cfg_(cfg) {
    const IndexList rows = result.differentiation_set(cfg.lambda_tol);
    const Index k = static_cast<Index>(rows.size());
    const Index v = C.num_eq();
    M_.resize(k + v, n_);
    rhs_.resize(k + v);
    for (Index i = 0; i < k; ++i) {
      M_.row(i) = C.A.row(rows[static_cast<std::size_t>(i)]);
      rhs_[i] = C.m1[rows[static_cast<std::size_t>(i)]];
    }
    if (v > 0) {
      M_.bottomRows(v) = C.B;
      rhs_.tail(v) = C.m2;
    }

    const Index m = M_.rows();
    Mat<Scalar> K = Mat<Scalar>::Zero(n_ + m, n_ + m);
    K.topLeftCorner(n_, n_).setIdentity();
    if (m > 0) {
      K.topRightCorner(n_, m) = M_.transpose();
      K.bottomLeftCorner(m, n_) = M_;
    }
    lu_.compute(K);
    // LICQ failure leaves K singular; retry with a stabilized dual block.
    Vec<Scalar> probe = Vec<Scalar>::Zero(n_ + m);
    if (n_ > 0) probe[0] = Scalar(1);
    const Vec<Scalar> x = lu_.solve(probe);
    if (!x.allFinite() || (K * x - probe).template lpNorm<Eigen::Infinity>() > Scalar(1e-8)) {
      ridge_applied_ = true;
      K.bottomRightCorner(m, m).diagonal().array() -= cfg.ridge;
      lu_.compute(K);
      const Vec<Scalar> x2 = lu_.solve(probe);
      if (!x2.allFinite()) throw SingularKkt("KKT matrix is singular even with regularization");
    }
  }

  Index dim() const { return n_; }
  Index active_rows() const { return M_.rows(); }
  const Mat<Scalar>& active_matrix() const { return M_; }
  bool ridge_applied() const { return ridge_applied_; }

  /// Tangent of the projection: dy for a perturbation dz of the raw batch.
  Vec<Scalar> jvp(const Vec<Scalar>& dz) const {
    if (dz.size() != n_) throw DimensionMismatch("tangent size mismatch");
    if (M_.rows() == 0) return dz;
    Vec<Scalar> rhs = Vec<Scalar>::Zero(n_ + M_.rows());
    rhs.head(n_) = dz;
    return lu_.solve(rhs).head(n_);
  }

  /// Adjoint of jvp: solves the transposed KKT system once.
  Vec<Scalar> vjp(const Vec<Scalar>& v_bar) const {
    if (v_bar.size() != n_) throw DimensionMismatch("cotangent size mismatch");
    if (M_.rows() == 0) return v_bar;
    Vec<Scalar> rhs = Vec<Scalar>::Zero(n_ + M_.rows());
    rhs.head(n_) = v_bar;
    return lu_.transpose().solve(rhs).head(n_);
  }

  /// Closed-form affine map of the region: P = I - M'(M M')^+ M and
  /// c = M'(M M')^+ rhs, so the projection equals P z + c on the region.
  std::pair<Mat<Scalar>, Vec<Scalar>> region_projector() const {
    Mat<Scalar> P = Mat<Scalar>::Identity(n_, n_);
    Vec<Scalar> c = Vec<Scalar>::Zero(n_);
    if (M_.rows() == 0) return {P, c};
    Eigen::JacobiSVD<Mat<Scalar>> svd(M_ * M_.transpose(),
                                      Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(Scalar(1e-12));
    const Mat<Scalar> pinv_applied = svd.solve(M_);      // (M M')^+ M
    const Vec<Scalar> pinv_rhs = svd.solve(rhs_);        // (M M')^+ rhs
    P -= M_.transpose() * pinv_applied;
    c = M_.transpose() * pinv_rhs;
    return {P, c};
  }

 private:
  Index n_;
  SolverConfig<Scalar> cfg_;
  Mat<Scalar> M_;
  Vec<Scalar> rhs_;
  Eigen::PartialPivLU<Mat<Scalar>> lu_;
  bool ridge_applied_ = false;
};

template <typename Scalar = double>
Vec<Scalar> jvp(const ProjectionResult<Scalar>& result, const ConstraintSet<Scalar>& C,
                const Vec<Scalar>& dz, const SolverConfig<Scalar>& cfg = {}) {
  return LayerJacobian<Scalar>(result, C, cfg).jvp(dz);
}

template <typename Scalar = double>
Vec<Scalar> vjp(const ProjectionResult<Scalar>& result, const ConstraintSet<Scalar>& C,
                const Vec<Scalar>& v_bar, const SolverConfig<Scalar>& cfg = {}) {
  return LayerJacobian<Scalar>(result, C, cfg).vjp(v_bar);
}

template <typename Scalar = double>
std::pair<Mat<Scalar>, Vec<Scalar>> region_projector(const ProjectionResult<Scalar>& result,
                                                     const ConstraintSet<Scalar>& C,
                                                     const SolverConfig<Scalar>& cfg = {}) {
  return LayerJacobian<Scalar>(result, C, cfg).region_projector();
}

template <typename Scalar>
struct SpectralReport {
  Vec<Scalar> eigenvalues;
  Scalar max_distance_to_binary = Scalar(0);  // max_i min(|l_i|, |l_i - 1|)
  Scalar max_suppression_residual = Scalar(0);
  Scalar idempotence_residual = Scalar(0);
  Scalar symmetry_residual = Scalar(0);
  bool pass(Scalar tol = Scalar(1e-8)) const {
    return max_distance_to_binary <= tol && max_suppression_residual <= tol;
  }
};

/// Eigenvalue and gradient-suppression diagnostics of a region projector.
/// A healthy projector has spectrum in {0, 1} and annihilates the normal
/// component of every vector it maps.
template <typename Scalar = double>
SpectralReport<Scalar> spectral_diagnostics(const Mat<Scalar>& P, const Mat<Scalar>& active_rows,
                                            Index probe_count = 16, std::uint64_t seed = 17) {
  SpectralReport<Scalar> rep;
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(P);
  rep.eigenvalues = es.eigenvalues();
  for (Index i = 0; i < rep.eigenvalues.size(); ++i) {
    const Scalar l = rep.eigenvalues[i];
    rep.max_distance_to_binary =
        std::max(rep.max_distance_to_binary, std::min(std::abs(l), std::abs(l - Scalar(1))));
  }
  rep.idempotence_residual = (P * P - P).template lpNorm<Eigen::Infinity>();
  rep.symmetry_residual = (P - P.transpose()).template lpNorm<Eigen::Infinity>();
  if (active_rows.rows() > 0) {
    CounterRng rng(seed, 5);
    for (Index t = 0; t < probe_count; ++t) {
      Vec<Scalar> v(P.cols());
      for (Index i = 0; i < v.size(); ++i) v[i] = Scalar(rng.normal());
      const Scalar res = (active_rows * (P * v)).template lpNorm<Eigen::Infinity>();
      rep.max_suppression_residual = std::max(rep.max_suppression_residual, res);
    }
  }
  return rep;
}

template <typename Scalar = double>
void verify_spectrum(const SpectralReport<Scalar>& rep, Scalar tol = Scalar(1e-8)) {
  if (!rep.pass(tol))
    throw SpectrumViolation("projector spectrum or suppression residual out of tolerance");
}

/// Empirical expansion ratio of the projection map over random input pairs.
/// The map is nonexpansive, so the result should never exceed one.
template <typename Scalar = double>
Scalar lipschitz_probe(const ConstraintSet<Scalar>& C, Index trials, std::uint64_t seed,
                       Scalar input_scale = Scalar(3), const SolverConfig<Scalar>& cfg = {}) {
  CounterRng rng(seed, 9);
  const Index n = C.cols();
  Scalar worst = Scalar(0);
  for (Index t = 0; t < trials; ++t) {
    Vec<Scalar> z1(n), z2(n);
    for (Index i = 0; i < n; ++i) {
      z1[i] = Scalar(rng.normal(0.0, double(input_scale)));
      z2[i] = Scalar(rng.normal(0.0, double(input_scale)));
    }
    const Scalar dist = (z1 - z2).norm();
    if (dist < Scalar(1e-12)) continue;
    const Vec<Scalar> g1 = project(z1, C, cfg).y_star;
    const Vec<Scalar> g2 = project(z2, C, cfg).y_star;
    worst = std::max(worst, (g1 - g2).norm() / dist);
  }
  return worst;
}

}  // namespace fairlayer
