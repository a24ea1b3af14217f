#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairlayer/datagen.hpp"
#include "fairlayer/mlp.hpp"

namespace fairlayer {

/// Scenario x method experiment grid. The default four scenarios cover the
/// structure x tightness quadrants at moderate imbalance and strong group
/// bias, shrunk to a size that trains in seconds.
struct CompareOptions {
  std::vector<int> scenarios = {3, 11, 19, 27};
  std::vector<Method> methods = {Method::FLayer, Method::Projection, Method::Penalty,
                                 Method::StrictPenalty};
  Index n = 4000;
  Index d = 30;
  double epsilon = 0.05;
  Index b_train = 256;
  Index b_infer = 0;  // 0: evaluate the whole split as one stratified batch
  int max_epochs = 30;
  std::vector<double> lambda_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  double strict_lambda = 5000.0;
  std::vector<Index> hidden = {32, 32, 32};
  bool layer_norm = false;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  int repeats = 1;
  int threads = 1;
  bool full_grid = false;  // all 32 scenarios
};

struct CellResult {
  int scenario = 0;
  int repeat = 0;
  Method method = Method::FLayer;
  double test_loss = 0.0;
  double gap_parity = 0.0;
  double gap_box = 0.0;
  bool satisfied = false;
  double lambda_used = 0.0;
  int rank = 0;
  double rel_loss_pct = 0.0;  // (loss - flayer_loss) / flayer_loss * 100
  double runtime_seconds = 0.0;
  std::uint64_t cell_seed = 0;
  // Penalty cells: validation outcome of the smallest grid value and of the
  // selected one, for threshold-pattern reporting.
  bool penalty_smallest_ok = false;
  bool penalty_selected_ok = false;
};

struct CompareReport {
  CompareOptions options;
  std::vector<CellResult> cells;
  std::string config_hash;

  /// Deterministic result table; runtimes and timestamps stay in metadata.
  std::string payload_csv() const;
  std::string metadata_text() const;
};

CompareReport run_compare(const CompareOptions& options);

/// Writes results.csv and metadata.txt under the directory.
void write_compare_report(const CompareReport& report, const std::string& out_dir);

std::string config_hash_hex(const CompareOptions& options);

}  // namespace fairlayer
