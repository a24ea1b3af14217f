#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fairlayer/constraints.hpp"
#include "fairlayer/datagen.hpp"
#include "fairlayer/projection.hpp"
#include "fairlayer/types.hpp"

namespace fairlayer {

enum class Method { FLayer, Projection, Penalty, StrictPenalty };
enum class LossKind { MSE, BCEWithLogits };

const char* to_string(Method m);
Method method_from_string(const std::string& s);

/// Dense feed-forward regressor: ReLU hidden layers, optional per-layer
/// normalization with learnable scale and shift, scalar output.
struct MLPModel {
  std::vector<Index> widths;  // input, hidden..., 1
  std::vector<MatXd> W;       // layer l: widths[l+1] x widths[l]
  std::vector<VecXd> b;
  std::vector<VecXd> gamma;   // per hidden layer when layer_norm
  std::vector<VecXd> beta;
  bool layer_norm = false;

  Index input_dim() const { return widths.front(); }
  Index num_layers() const { return static_cast<Index>(W.size()); }
};

/// Fan-in scaled uniform initialization, deterministic in the seed.
MLPModel make_mlp(const std::vector<Index>& widths, bool layer_norm, std::uint64_t seed);

struct ForwardCache {
  std::vector<MatXd> inputs;     // activations entering each layer
  std::vector<MatXd> normalized; // post-normalization pre-activation (layer_norm)
  std::vector<VecXd> inv_std;    // per-sample inverse std (layer_norm)
  std::vector<MatXd> hidden;     // post-activation outputs of hidden layers
};

/// Raw batch outputs z = f(X). Throws on width mismatch or non-finite values.
VecXd forward(const MLPModel& model, const MatXd& X);
VecXd forward(const MLPModel& model, const MatXd& X, ForwardCache& cache);

struct Gradients {
  std::vector<MatXd> W;
  std::vector<VecXd> b;
  std::vector<VecXd> gamma;
  std::vector<VecXd> beta;
};

/// Backpropagates dL/dz through the cached forward pass.
Gradients backward(const MLPModel& model, const ForwardCache& cache, const VecXd& dz);

struct TrainConfig {
  Method method = Method::FLayer;
  double learning_rate = 1e-4;
  double decay_factor = 0.66;
  int decay_patience = 8;       // epochs without improvement before decay
  int early_stop_patience = 25; // epochs without improvement before stopping
  int max_epochs = 200;
  Index b_train = 256;
  LossKind loss = LossKind::MSE;
  double lambda = 0.0;          // penalty weight (StrictPenalty default 5000)
  bool quadratic_penalty = false;
  std::uint64_t seed = 1;
  bool restore_best = true;
  std::vector<Index> hidden = {32, 32, 32};
  bool layer_norm = false;
  double epsilon = 0.05;        // spec tolerance echoed into evaluation
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_max_gap = 0.0;
  double learning_rate = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

/// Base loss plus lambda times the summed per-spec gap terms (absolute form;
/// squared with `quadratic`). Box specs are excluded: penalty training
/// handles bounds through the sigmoid reparameterization instead.
double penalty_objective(const VecXd& y_hat, const VecXd& y_true, const GroupMasks& masks,
                         const std::vector<FairnessSpec<double>>& specs, double lambda,
                         LossKind loss, bool quadratic = false);

/// Trains in place. FLayer batches run the projection forward and its KKT
/// adjoint backward; Penalty methods optimize the augmented loss, mapping
/// outputs through y = lower + (upper - lower) * sigmoid(z) when a box spec
/// is present; Projection ignores the specs during training.
TrainLog train(MLPModel& model, const Dataset& data,
               const std::vector<FairnessSpec<double>>& specs, const TrainConfig& cfg);

struct EvalMetrics {
  double loss = 0.0;
  std::vector<GapValue<double>> gaps;  // aggregate, over the whole split
  int specs_satisfied = 0;
  int spec_count = 0;
  Index predictions_changed = 0;  // Projection mode: moved by the post-hoc step
  Index predictions_lowered = 0;
  bool all_satisfied(double tol = 1e-7) const;
};

/// Split-level metrics under the method's inference mode. Stratified batches
/// of `eval_batch` samples (0 = the whole split at once); FLayer and
/// Projection apply the hard projection per batch.
EvalMetrics evaluate(const MLPModel& model, const Dataset& data, const std::string& split,
                     const std::vector<FairnessSpec<double>>& specs, Method mode,
                     LossKind loss = LossKind::MSE, Index eval_batch = 0);

struct LambdaSelection {
  double lambda = 0.0;
  bool satisfied = false;  // false: no grid value met the constraints
  std::vector<std::pair<double, EvalMetrics>> trials;
};

/// Smallest grid value whose validation gaps all satisfy their thresholds;
/// the largest value with a violation flag when none qualifies.
LambdaSelection select_penalty_lambda(const Dataset& data,
                                      const std::vector<FairnessSpec<double>>& specs,
                                      const std::vector<double>& grid, TrainConfig cfg);

// Model document: layer dimensions, row-major weights, activation names and
// normalization flags; numbers at 17 significant digits round-trip exactly.
void save_model(const MLPModel& model, const std::string& path);
MLPModel load_model(const std::string& path);

/// Stratified minibatches: indices shuffled within each group, then dealt so
/// every batch keeps close to the global group proportions.
std::vector<IndexList> stratified_batches(const IndexList& rows, const MaskVec& full_mask,
                                          Index batch_size, std::uint64_t seed);
std::vector<IndexList> plain_batches(const IndexList& rows, Index batch_size, std::uint64_t seed);

}  // namespace fairlayer
