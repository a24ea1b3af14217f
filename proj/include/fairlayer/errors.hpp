#pragma once

#include <stdexcept>
#include <string>

namespace fairlayer {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// constraint construction
struct DegenerateGroup : Error {
  using Error::Error;
};
struct InvalidBounds : Error {
  using Error::Error;
};
struct NoApplicableRegion : Error {
  using Error::Error;
};
struct UnknownAttribute : Error {
  using Error::Error;
};

// projection solver
struct Infeasible : Error {
  using Error::Error;
};
struct MaxIterations : Error {
  using Error::Error;
};
struct ZeroDirection : Error {
  using Error::Error;
};
struct TooManyConstraints : Error {
  using Error::Error;
};

// differentiation
struct SingularKkt : Error {
  using Error::Error;
};
struct SpectrumViolation : Error {
  using Error::Error;
};

// network
struct DimensionMismatch : Error {
  using Error::Error;
};
struct NonFiniteActivation : Error {
  using Error::Error;
};
struct InfeasibleBatchConstraints : Error {
  using Error::Error;
};

// streaming
struct EmptyStream : Error {
  using Error::Error;
};
struct DegenerateProportion : Error {
  using Error::Error;
};

// data generation / files
struct InvalidConfig : Error {
  using Error::Error;
};
struct InvalidRatios : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace fairlayer
