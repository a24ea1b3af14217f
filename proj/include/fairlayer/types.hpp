#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace fairlayer {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;
using IndexList = std::vector<Index>;

using VecXd = Vec<double>;
using MatXd = Mat<double>;
using MaskVec = Eigen::VectorXi;  // entries restricted to {0, 1}

/// Closed interval [lo, hi] on the target axis.
template <typename Scalar>
struct Interval {
  Scalar lo;
  Scalar hi;
  bool contains(Scalar x) const { return x >= lo && x <= hi; }
};

}  // namespace fairlayer
