#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairlayer/constraints.hpp"
#include "fairlayer/types.hpp"

namespace fairlayer {

enum class TargetStructure { Linear, Nonlinear };
enum class BoxTightness { Loose, Tighter };  // Loose: [-3.5, 3.5]; Tighter: [0, 3.5]

inline double box_lower(BoxTightness t) { return t == BoxTightness::Loose ? -3.5 : 0.0; }
inline double box_upper(BoxTightness) { return 3.5; }

/// Generator parameters for one synthetic scenario. The five grid factors
/// are imbalance, (relevance, bias) pairing, noise, tightness, structure;
/// the remaining fields control the tabular layout and are rescaled for
/// desk-size runs.
struct ScenarioConfig {
  double imbalance = 0.5;        // P(protected attribute = 1)
  double group_relevance = 0.3;  // feature shift strength toward the attribute
  double bias_magnitude = 3.0;   // +b added for group 0, -b for group 1
  double noise_sigma = 0.125;    // std dev of the target noise
  BoxTightness tightness = BoxTightness::Loose;
  TargetStructure structure = TargetStructure::Linear;

  Index n = 40000;
  Index d = 150;  // total feature columns; the protected attribute is the last
  double base_correlation = 0.3;
  Index block_size = 20;
  Index relevant_features = 50;  // columns shifted toward the attribute
  Index beta_support = 15;       // nonzero coefficients of the linear score
  Index interaction_pairs = 200; // sampled quadratic cross terms (nonlinear)
  double group0_scale = 0.85;    // post-standardization target shrink, group 0
  std::uint64_t seed = 1;

  /// Shrinks the tabular layout to (n, d) keeping the paper-scale ratios.
  ScenarioConfig scaled_to(Index n_new, Index d_new) const;
  void validate() const;
  std::string describe() const;
};

/// Full factorial over the five binary scenario factors, in a fixed
/// enumeration order: bit 0 imbalance, bit 1 relevance/bias pair,
/// bit 2 noise, bit 3 tightness, bit 4 structure.
std::vector<ScenarioConfig> scenario_grid(std::uint64_t base_seed = 1);

struct SplitIndices {
  IndexList train;
  IndexList val;
  IndexList test;

  const IndexList& of(const std::string& name) const;
};

struct Dataset {
  MatXd X;  // n x d, standardized by training-split statistics
  VecXd y;  // standardized, then group-0 entries scaled
  MaskVec protected_mask;
  Index protected_column = -1;
  SplitIndices split;
  ScenarioConfig config;

  Index n() const { return X.rows(); }
  Index d() const { return X.cols(); }
  GroupMasks masks_for(const IndexList& rows) const;
  GroupMasks masks_all() const;
};

/// Deterministic synthetic dataset for one scenario: Bernoulli protected
/// attribute, blockwise-correlated Gaussian features (compound-symmetric
/// within blocks, Cholesky sampling), a subset of features shifted toward
/// the attribute, a sparse linear or polynomial latent score, opposite-sign
/// group bias on the targets, and a 70/6/24 split computed before the
/// training-statistics standardization.
Dataset generate(const ScenarioConfig& cfg);

/// Disjoint covering split with ratios summing to one. With `stratified`
/// the group proportion of every part stays within one sample of the
/// global proportion.
SplitIndices split_indices(Index n, const std::vector<double>& ratios, bool stratified,
                           const MaskVec& mask, std::uint64_t seed);

/// The fairness criteria of the synthetic comparison: mean parity on the
/// protected attribute plus the scenario's output box.
std::vector<FairnessSpec<double>> scenario_specs(const ScenarioConfig& cfg,
                                                 double epsilon = 0.05);

// Dataset files: CSV with header x1..xd,y plus a structured-text descriptor
// carrying the scenario, seed, protected column and split index arrays.
void save_dataset(const Dataset& data, const std::string& csv_path,
                  const std::string& descriptor_path);
Dataset load_dataset(const std::string& csv_path, const std::string& descriptor_path);

}  // namespace fairlayer
