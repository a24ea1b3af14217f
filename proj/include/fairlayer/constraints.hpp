#pragma once

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fairlayer/errors.hpp"
#include "fairlayer/types.hpp"

namespace fairlayer {

enum class SpecKind {
  MeanParity,
  EqualizedResiduals,
  GroupResidual,
  EqualizedOdds,
  Box,
  GenericAffine,
};

inline const char* to_string(SpecKind k) {
  switch (k) {
    case SpecKind::MeanParity: return "mean_parity";
    case SpecKind::EqualizedResiduals: return "equalized_residuals";
    case SpecKind::GroupResidual: return "group_residual";
    case SpecKind::EqualizedOdds: return "equalized_odds";
    case SpecKind::Box: return "box";
    case SpecKind::GenericAffine: return "generic_affine";
  }
  return "?";
}

/// Declarative description of one fairness criterion. Group-based kinds
/// reference a protected attribute by name; Box and GenericAffine do not.
template <typename Scalar>
struct FairnessSpec {
  SpecKind kind = SpecKind::MeanParity;
  Scalar epsilon = Scalar(0);
  std::string attribute;
  std::vector<Interval<Scalar>> regions;  // EqualizedOdds: disjoint target intervals
  Scalar lower = Scalar(0);               // Box
  Scalar upper = Scalar(0);
  Mat<Scalar> A;                          // GenericAffine: A y <= m1, B y = m2
  Vec<Scalar> m1;
  Mat<Scalar> B;
  Vec<Scalar> m2;

  static FairnessSpec mean_parity(std::string attr, Scalar eps) {
    FairnessSpec s;
    s.kind = SpecKind::MeanParity;
    s.attribute = std::move(attr);
    s.epsilon = eps;
    return s;
  }
  static FairnessSpec equalized_residuals(std::string attr, Scalar eps) {
    FairnessSpec s;
    s.kind = SpecKind::EqualizedResiduals;
    s.attribute = std::move(attr);
    s.epsilon = eps;
    return s;
  }
  static FairnessSpec group_residual(std::string attr, Scalar eps) {
    FairnessSpec s;
    s.kind = SpecKind::GroupResidual;
    s.attribute = std::move(attr);
    s.epsilon = eps;
    return s;
  }
  static FairnessSpec equalized_odds(std::string attr, std::vector<Interval<Scalar>> regions,
                                     Scalar eps) {
    FairnessSpec s;
    s.kind = SpecKind::EqualizedOdds;
    s.attribute = std::move(attr);
    s.regions = std::move(regions);
    s.epsilon = eps;
    return s;
  }
  static FairnessSpec box(Scalar lower, Scalar upper) {
    FairnessSpec s;
    s.kind = SpecKind::Box;
    s.lower = lower;
    s.upper = upper;
    return s;
  }
  static FairnessSpec generic_affine(Mat<Scalar> A, Vec<Scalar> m1, Mat<Scalar> B = {},
                                     Vec<Scalar> m2 = {}) {
    FairnessSpec s;
    s.kind = SpecKind::GenericAffine;
    s.A = std::move(A);
    s.m1 = std::move(m1);
    s.B = std::move(B);
    s.m2 = std::move(m2);
    return s;
  }
};

/// Per protected attribute, a binary membership vector over the batch
/// (1 = member of the group of interest). Attribute names are unique.
class GroupMasks {
 public:
  GroupMasks() = default;

  void add(std::string attribute, MaskVec mask) {
    for (Index i = 0; i < mask.size(); ++i) {
      if (mask[i] != 0 && mask[i] != 1)
        throw InvalidConfig("mask entries must be 0 or 1 (attribute '" + attribute + "')");
    }
    if (!attributes_.empty() && mask.size() != masks_.front().size())
      throw DimensionMismatch("mask length differs from batch size");
    if (has(attribute)) throw InvalidConfig("duplicate attribute '" + attribute + "'");
    attributes_.push_back(std::move(attribute));
    masks_.push_back(std::move(mask));
  }

  bool has(const std::string& attribute) const {
    return std::find(attributes_.begin(), attributes_.end(), attribute) != attributes_.end();
  }

  const MaskVec& mask(const std::string& attribute) const {
    for (std::size_t i = 0; i < attributes_.size(); ++i)
      if (attributes_[i] == attribute) return masks_[i];
    throw UnknownAttribute("unknown protected attribute '" + attribute + "'");
  }

  const std::vector<std::string>& attributes() const { return attributes_; }
  Index batch_size() const { return masks_.empty() ? 0 : masks_.front().size(); }
  std::size_t size() const { return masks_.size(); }

  /// Masks restricted to the given batch rows, same attribute order.
  GroupMasks subset(const IndexList& rows) const {
    GroupMasks out;
    for (std::size_t a = 0; a < attributes_.size(); ++a) {
      MaskVec m(static_cast<Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) m[static_cast<Index>(i)] = masks_[a][rows[i]];
      out.add(attributes_[a], std::move(m));
    }
    return out;
  }

 private:
  std::vector<std::string> attributes_;
  std::vector<MaskVec> masks_;
};

/// Maps one constraint row back to the criterion that produced it.
struct RowTag {
  int spec = -1;    // index into the compiled spec list
  int region = -1;  // EqualizedOdds region index, -1 otherwise
};

struct CompileWarning {
  int spec = -1;
  int region = -1;
  std::string message;
};

/// Stacked affine system A y <= m1, B y = m2 over a prediction batch of
/// size cols(). Every row carries a provenance tag.
template <typename Scalar>
struct ConstraintSet {
  Mat<Scalar> A;
  Vec<Scalar> m1;
  Mat<Scalar> B;
  Vec<Scalar> m2;
  std::vector<RowTag> ineq_tags;
  std::vector<RowTag> eq_tags;

  Index cols() const { return A.cols() > 0 ? A.cols() : B.cols(); }
  Index num_ineq() const { return A.rows(); }
  Index num_eq() const { return B.rows(); }
  bool empty() const { return num_ineq() == 0 && num_eq() == 0; }

  static ConstraintSet empty_set(Index n) {
    ConstraintSet c;
    c.A.resize(0, n);
    c.m1.resize(0);
    c.B.resize(0, n);
    c.m2.resize(0);
    return c;
  }

  /// Row-stacks `other` onto this set; both must share the batch size.
  void append(const ConstraintSet& other) {
    if (empty()) {
      *this = other;
      return;
    }
    if (other.empty()) return;
    if (cols() != other.cols()) throw DimensionMismatch("constraint sets differ in batch size");
    const Index q0 = A.rows(), q1 = other.A.rows();
    A.conservativeResize(q0 + q1, Eigen::NoChange);
    A.bottomRows(q1) = other.A;
    m1.conservativeResize(q0 + q1);
    m1.tail(q1) = other.m1;
    const Index v0 = B.rows(), v1 = other.B.rows();
    B.conservativeResize(v0 + v1, Eigen::NoChange);
    B.bottomRows(v1) = other.B;
    m2.conservativeResize(v0 + v1);
    m2.tail(v1) = other.m2;
    ineq_tags.insert(ineq_tags.end(), other.ineq_tags.begin(), other.ineq_tags.end());
    eq_tags.insert(eq_tags.end(), other.eq_tags.begin(), other.eq_tags.end());
  }

  void retag(int spec) {
    for (auto& t : ineq_tags) t.spec = spec;
    for (auto& t : eq_tags) t.spec = spec;
  }
};

using ConstraintSetXd = ConstraintSet<double>;

namespace detail {

inline std::pair<Index, Index> group_counts(const Eigen::Ref<const MaskVec>& mask) {
  const Index n1 = mask.sum();
  return {mask.size() - n1, n1};
}

}  // namespace detail

/// Mean-difference coefficient vector a with a_i = 1/n0 for non-members and
/// -1/n1 for members, so a'y = mean0(y) - mean1(y). Throws DegenerateGroup
/// if either group is empty.
template <typename Scalar = double>
Vec<Scalar> parity_direction(const Eigen::Ref<const MaskVec>& mask) {
  const auto [n0, n1] = detail::group_counts(mask);
  if (n0 == 0 || n1 == 0)
    throw DegenerateGroup("batch lacks one of the groups (n0=" + std::to_string(n0) +
                          ", n1=" + std::to_string(n1) + ")");
  Vec<Scalar> a(mask.size());
  for (Index i = 0; i < mask.size(); ++i)
    a[i] = mask[i] == 0 ? Scalar(1) / Scalar(n0) : Scalar(-1) / Scalar(n1);
  return a;
}

namespace detail {

/// Two one-sided rows for |a'y - c| <= eps: a'y <= eps + c and -a'y <= eps - c.
template <typename Scalar>
ConstraintSet<Scalar> absolute_row_pair(const Vec<Scalar>& a, Scalar c, Scalar eps) {
  ConstraintSet<Scalar> out = ConstraintSet<Scalar>::empty_set(a.size());
  out.A.resize(2, a.size());
  out.A.row(0) = a.transpose();
  out.A.row(1) = -a.transpose();
  out.m1.resize(2);
  out.m1[0] = eps + c;
  out.m1[1] = eps - c;
  out.ineq_tags.assign(2, RowTag{});
  return out;
}

}  // namespace detail

/// |mean0(y) - mean1(y)| <= eps as a +/- row pair.
template <typename Scalar = double>
ConstraintSet<Scalar> build_mean_parity(const Eigen::Ref<const MaskVec>& mask, Scalar eps) {
  if (eps < Scalar(0)) throw InvalidConfig("tolerance must be nonnegative");
  return detail::absolute_row_pair<Scalar>(parity_direction<Scalar>(mask), Scalar(0), eps);
}

/// |mean0(yhat - y) - mean1(yhat - y)| <= eps; the target enters the
/// right-hand sides as eps +/- a'y_true.
template <typename Scalar = double>
ConstraintSet<Scalar> build_equalized_residuals(const Eigen::Ref<const MaskVec>& mask,
                                                const Vec<Scalar>& y_true, Scalar eps) {
  if (eps < Scalar(0)) throw InvalidConfig("tolerance must be nonnegative");
  if (y_true.size() != mask.size()) throw DimensionMismatch("y_true length differs from mask");
  const Vec<Scalar> a = parity_direction<Scalar>(mask);
  return detail::absolute_row_pair<Scalar>(a, a.dot(y_true), eps);
}

/// Per group g in {0,1}: |mean_g(yhat - y)| <= eps (two rows per group).
template <typename Scalar = double>
ConstraintSet<Scalar> build_group_residual(const Eigen::Ref<const MaskVec>& mask,
                                           const Vec<Scalar>& y_true, Scalar eps) {
  if (eps < Scalar(0)) throw InvalidConfig("tolerance must be nonnegative");
  if (y_true.size() != mask.size()) throw DimensionMismatch("y_true length differs from mask");
  const auto [n0, n1] = detail::group_counts(mask);
  if (n0 == 0 || n1 == 0) throw DegenerateGroup("batch lacks one of the groups");
  ConstraintSet<Scalar> out = ConstraintSet<Scalar>::empty_set(mask.size());
  for (int g = 0; g < 2; ++g) {
    Vec<Scalar> c = Vec<Scalar>::Zero(mask.size());
    const Scalar inv = Scalar(1) / Scalar(g == 0 ? n0 : n1);
    for (Index i = 0; i < mask.size(); ++i)
      if (mask[i] == g) c[i] = inv;
    out.append(detail::absolute_row_pair<Scalar>(c, c.dot(y_true), eps));
  }
  return out;
}

/// Mean parity restricted to samples whose target lies in each region.
/// Regions missing a group are skipped (recorded in `warnings`); if all
/// regions are skipped the criterion is vacuous and this throws.
template <typename Scalar = double>
ConstraintSet<Scalar> build_equalized_odds(const Eigen::Ref<const MaskVec>& mask,
                                           const Vec<Scalar>& y_true,
                                           const std::vector<Interval<Scalar>>& regions,
                                           Scalar eps,
                                           std::vector<CompileWarning>* warnings = nullptr) {
  if (eps < Scalar(0)) throw InvalidConfig("tolerance must be nonnegative");
  if (y_true.size() != mask.size()) throw DimensionMismatch("y_true length differs from mask");
  ConstraintSet<Scalar> out = ConstraintSet<Scalar>::empty_set(mask.size());
  int used = 0;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    Index n0 = 0, n1 = 0;
    for (Index i = 0; i < mask.size(); ++i) {
      if (!regions[r].contains(y_true[i])) continue;
      (mask[i] == 0 ? n0 : n1)++;
    }
    if (n0 == 0 || n1 == 0) {
      if (warnings)
        warnings->push_back({-1, static_cast<int>(r),
                             "region " + std::to_string(r) + " lacks one of the groups; skipped"});
      continue;
    }
    Vec<Scalar> a = Vec<Scalar>::Zero(mask.size());
    for (Index i = 0; i < mask.size(); ++i) {
      if (!regions[r].contains(y_true[i])) continue;
      a[i] = mask[i] == 0 ? Scalar(1) / Scalar(n0) : Scalar(-1) / Scalar(n1);
    }
    ConstraintSet<Scalar> pair = detail::absolute_row_pair<Scalar>(a, Scalar(0), eps);
    for (auto& t : pair.ineq_tags) t.region = static_cast<int>(r);
    out.append(pair);
    ++used;
  }
  if (used == 0) throw NoApplicableRegion("every output region lacks a group");
  return out;
}

/// lower <= y_i <= upper for all i: n upper rows then n lower rows.
template <typename Scalar = double>
ConstraintSet<Scalar> build_box(Scalar lower, Scalar upper, Index n) {
  if (lower > upper) throw InvalidBounds("box lower bound exceeds upper bound");
  ConstraintSet<Scalar> out = ConstraintSet<Scalar>::empty_set(n);
  out.A.resize(2 * n, n);
  out.A.setZero();
  out.m1.resize(2 * n);
  for (Index i = 0; i < n; ++i) {
    out.A(i, i) = Scalar(1);
    out.m1[i] = upper;
    out.A(n + i, i) = Scalar(-1);
    out.m1[n + i] = -lower;
  }
  out.ineq_tags.assign(static_cast<std::size_t>(2 * n), RowTag{});
  return out;
}

enum class DegenerateGroupPolicy {
  Throw,  // builder errors propagate
  Skip,   // constraint dropped with a warning record (streaming use)
};

/// Row-stacked union of all per-spec systems over one concrete batch.
/// Absolute-value criteria always expand to two one-sided rows; provenance
/// tags map every row to its originating spec.
template <typename Scalar = double>
ConstraintSet<Scalar> compile(const std::vector<FairnessSpec<Scalar>>& specs,
                              const GroupMasks& masks, const std::optional<Vec<Scalar>>& y_true,
                              Index n_b,
                              DegenerateGroupPolicy policy = DegenerateGroupPolicy::Throw,
                              std::vector<CompileWarning>* warnings = nullptr) {
  ConstraintSet<Scalar> out = ConstraintSet<Scalar>::empty_set(n_b);
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& spec = specs[s];
    const bool needs_mask = spec.kind == SpecKind::MeanParity ||
                            spec.kind == SpecKind::EqualizedResiduals ||
                            spec.kind == SpecKind::GroupResidual ||
                            spec.kind == SpecKind::EqualizedOdds;
    const bool needs_target = spec.kind == SpecKind::EqualizedResiduals ||
                              spec.kind == SpecKind::GroupResidual ||
                              spec.kind == SpecKind::EqualizedOdds;
    if (needs_mask && !masks.has(spec.attribute))
      throw UnknownAttribute("spec " + std::to_string(s) + " references unknown attribute '" +
                             spec.attribute + "'");
    if (needs_target && !y_true)
      throw InvalidConfig(std::string(to_string(spec.kind)) + " requires targets");
    try {
      ConstraintSet<Scalar> part;
      switch (spec.kind) {
        case SpecKind::MeanParity:
          part = build_mean_parity<Scalar>(masks.mask(spec.attribute), spec.epsilon);
          break;
        case SpecKind::EqualizedResiduals:
          part = build_equalized_residuals<Scalar>(masks.mask(spec.attribute), *y_true,
                                                   spec.epsilon);
          break;
        case SpecKind::GroupResidual:
          part = build_group_residual<Scalar>(masks.mask(spec.attribute), *y_true, spec.epsilon);
          break;
        case SpecKind::EqualizedOdds: {
          std::vector<CompileWarning> local;
          part = build_equalized_odds<Scalar>(masks.mask(spec.attribute), *y_true, spec.regions,
                                              spec.epsilon, &local);
          if (warnings)
            for (auto w : local) {
              w.spec = static_cast<int>(s);
              warnings->push_back(w);
            }
          break;
        }
        case SpecKind::Box:
          part = build_box<Scalar>(spec.lower, spec.upper, n_b);
          break;
        case SpecKind::GenericAffine: {
          part = ConstraintSet<Scalar>::empty_set(n_b);
          if ((spec.A.size() > 0 && spec.A.cols() != n_b) ||
              (spec.B.size() > 0 && spec.B.cols() != n_b))
            throw DimensionMismatch("generic affine spec does not match batch size");
          if (spec.A.size() > 0) {
            part.A = spec.A;
            part.m1 = spec.m1;
            part.ineq_tags.assign(static_cast<std::size_t>(spec.A.rows()), RowTag{});
          }
          if (spec.B.size() > 0) {
            part.B = spec.B;
            part.m2 = spec.m2;
            part.eq_tags.assign(static_cast<std::size_t>(spec.B.rows()), RowTag{});
          }
          break;
        }
      }
      part.retag(static_cast<int>(s));
      out.append(part);
    } catch (const DegenerateGroup& e) {
      if (policy == DegenerateGroupPolicy::Throw) throw;
      if (warnings) warnings->push_back({static_cast<int>(s), -1, e.what()});
    } catch (const NoApplicableRegion& e) {
      if (policy == DegenerateGroupPolicy::Throw) throw;
      if (warnings) warnings->push_back({static_cast<int>(s), -1, e.what()});
    }
  }
  return out;
}

/// One criterion's realized violation. `value <= threshold` iff the compiled
/// rows for the spec hold: threshold is epsilon for the mean-gap kinds and 0
/// for Box / GenericAffine (whose value is the largest constraint excess).
template <typename Scalar>
struct GapValue {
  int spec = -1;
  Scalar value = Scalar(0);
  Scalar threshold = Scalar(0);
  std::vector<Scalar> per_region;  // EqualizedOdds only, skipped regions omitted
  bool satisfied(Scalar tol = Scalar(0)) const { return value <= threshold + tol; }
};

/// Per-spec fairness gaps |F0 - F1| realized by y_hat (max over regions for
/// EqualizedOdds, max over groups for GroupResidual, max excess for Box).
template <typename Scalar = double>
std::vector<GapValue<Scalar>> fairness_gaps(const std::vector<FairnessSpec<Scalar>>& specs,
                                            const GroupMasks& masks,
                                            const std::optional<Vec<Scalar>>& y_true,
                                            const Vec<Scalar>& y_hat) {
  std::vector<GapValue<Scalar>> out;
  out.reserve(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& spec = specs[s];
    GapValue<Scalar> g;
    g.spec = static_cast<int>(s);
    g.threshold = spec.epsilon;
    switch (spec.kind) {
      case SpecKind::MeanParity: {
        g.value = std::abs(parity_direction<Scalar>(masks.mask(spec.attribute)).dot(y_hat));
        break;
      }
      case SpecKind::EqualizedResiduals: {
        if (!y_true) throw InvalidConfig("equalized_residuals gap requires targets");
        const Vec<Scalar> a = parity_direction<Scalar>(masks.mask(spec.attribute));
        g.value = std::abs(a.dot(y_hat - *y_true));
        break;
      }
      case SpecKind::GroupResidual: {
        if (!y_true) throw InvalidConfig("group_residual gap requires targets");
        const auto& mask = masks.mask(spec.attribute);
        const auto [n0, n1] = detail::group_counts(mask);
        if (n0 == 0 || n1 == 0) throw DegenerateGroup("batch lacks one of the groups");
        Scalar acc0 = 0, acc1 = 0;
        for (Index i = 0; i < mask.size(); ++i)
          (mask[i] == 0 ? acc0 : acc1) += y_hat[i] - (*y_true)[i];
        g.value = std::max(std::abs(acc0 / Scalar(n0)), std::abs(acc1 / Scalar(n1)));
        break;
      }
      case SpecKind::EqualizedOdds: {
        if (!y_true) throw InvalidConfig("equalized_odds gap requires targets");
        const auto& mask = masks.mask(spec.attribute);
        g.value = Scalar(0);
        bool any = false;
        for (const auto& region : spec.regions) {
          Scalar sum0 = 0, sum1 = 0;
          Index n0 = 0, n1 = 0;
          for (Index i = 0; i < mask.size(); ++i) {
            if (!region.contains((*y_true)[i])) continue;
            if (mask[i] == 0) {
              sum0 += y_hat[i];
              ++n0;
            } else {
              sum1 += y_hat[i];
              ++n1;
            }
          }
          if (n0 == 0 || n1 == 0) continue;
          const Scalar v = std::abs(sum0 / Scalar(n0) - sum1 / Scalar(n1));
          g.per_region.push_back(v);
          g.value = std::max(g.value, v);
          any = true;
        }
        if (!any) throw NoApplicableRegion("every output region lacks a group");
        break;
      }
      case SpecKind::Box: {
        g.threshold = Scalar(0);
        g.value = std::max(Scalar(0), std::max((y_hat.array() - spec.upper).maxCoeff(),
                                               (spec.lower - y_hat.array()).maxCoeff()));
        break;
      }
      case SpecKind::GenericAffine: {
        g.threshold = Scalar(0);
        Scalar worst = Scalar(0);
        if (spec.A.size() > 0) worst = std::max(worst, (spec.A * y_hat - spec.m1).maxCoeff());
        if (spec.B.size() > 0)
          worst = std::max(worst, (spec.B * y_hat - spec.m2).cwiseAbs().maxCoeff());
        g.value = worst;
        break;
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace fairlayer
