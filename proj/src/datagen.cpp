#include "fairlayer/datagen.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fairlayer/errors.hpp"
#include "fairlayer/io.hpp"
#include "fairlayer/rng.hpp"

namespace fairlayer {

namespace {

Index scale_count(Index value, Index d_old, Index d_new) {
  const double scaled = static_cast<double>(value) * static_cast<double>(d_new) /
                        static_cast<double>(d_old);
  return std::max<Index>(1, static_cast<Index>(std::lround(scaled)));
}

}  // namespace

ScenarioConfig ScenarioConfig::scaled_to(Index n_new, Index d_new) const {
  ScenarioConfig out = *this;
  out.n = n_new;
  if (d_new != d) {
    out.block_size = scale_count(block_size, d, d_new);
    out.relevant_features = scale_count(relevant_features, d, d_new);
    out.beta_support = scale_count(beta_support, d, d_new);
    out.interaction_pairs = scale_count(interaction_pairs, d, d_new);
    out.d = d_new;
  }
  return out;
}

void ScenarioConfig::validate() const {
  if (!(imbalance > 0.0 && imbalance < 1.0)) throw InvalidConfig("imbalance must lie in (0,1)");
  if (n <= 0 || d <= 1) throw InvalidConfig("need n > 0 and d > 1");
  if (block_size <= 0 || block_size > d) throw InvalidConfig("block size must lie in [1, d]");
  if (relevant_features < 0 || relevant_features > d - 1)
    throw InvalidConfig("relevant feature count exceeds continuous columns");
  if (beta_support <= 0 || beta_support > d - 1) throw InvalidConfig("invalid beta support");
  if (noise_sigma < 0.0) throw InvalidConfig("noise sigma must be nonnegative");
  if (group_relevance < 0.0) throw InvalidConfig("group relevance must be nonnegative");
  if (!(base_correlation > -1.0 && base_correlation < 1.0))
    throw InvalidConfig("base correlation must lie in (-1,1)");
}

std::string ScenarioConfig::describe() const {
  std::ostringstream out;
  out << "n=" << n << " d=" << d << " imbalance=" << imbalance
      << " relevance=" << group_relevance << " bias=" << bias_magnitude
      << " sigma=" << noise_sigma
      << " tightness=" << (tightness == BoxTightness::Loose ? "loose" : "tighter")
      << " structure=" << (structure == TargetStructure::Linear ? "linear" : "nonlinear")
      << " seed=" << seed;
  return out.str();
}

std::vector<ScenarioConfig> scenario_grid(std::uint64_t base_seed) {
  std::vector<ScenarioConfig> grid;
  grid.reserve(32);
  for (int id = 0; id < 32; ++id) {
    ScenarioConfig cfg;
    cfg.imbalance = (id & 1) ? 0.5 : 0.2;
    if (id & 2) {
      cfg.group_relevance = 0.7;
      cfg.bias_magnitude = 6.0;
    } else {
      cfg.group_relevance = 0.3;
      cfg.bias_magnitude = 3.0;
    }
    cfg.noise_sigma = (id & 4) ? 0.6 : 0.125;
    cfg.tightness = (id & 8) ? BoxTightness::Tighter : BoxTightness::Loose;
    cfg.structure = (id & 16) ? TargetStructure::Nonlinear : TargetStructure::Linear;
    CounterRng rng(base_seed, 1000 + static_cast<std::uint64_t>(id));
    cfg.seed = rng.next_u64();
    grid.push_back(cfg);
  }
  return grid;
}

const IndexList& SplitIndices::of(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw InvalidConfig("unknown split '" + name + "'");
}

GroupMasks Dataset::masks_for(const IndexList& rows) const {
  MaskVec m(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) m[static_cast<Index>(i)] = protected_mask[rows[i]];
  GroupMasks out;
  out.add("protected", std::move(m));
  return out;
}

GroupMasks Dataset::masks_all() const {
  GroupMasks out;
  out.add("protected", protected_mask);
  return out;
}

namespace {

IndexList shuffled_indices(const IndexList& src, CounterRng& rng) {
  std::vector<Index> v(src.begin(), src.end());
  rng.shuffle(v);
  return v;
}

// Largest-remainder apportionment of n into parts proportional to ratios.
std::vector<Index> apportion(Index n, const std::vector<double>& ratios) {
  std::vector<Index> counts(ratios.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  Index assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    counts[i] = static_cast<Index>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (Index k = 0; k < n - assigned; ++k) counts[remainders[static_cast<std::size_t>(k)].second]++;
  return counts;
}

}  // namespace

SplitIndices split_indices(Index n, const std::vector<double>& ratios, bool stratified,
                           const MaskVec& mask, std::uint64_t seed) {
  if (ratios.size() != 3) throw InvalidRatios("expected three split ratios");
  double sum = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw InvalidRatios("ratios must be nonnegative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidRatios("split ratios must sum to one");

  CounterRng rng(seed, 77);
  SplitIndices out;
  auto distribute = [&](const IndexList& pool) {
    const IndexList order = shuffled_indices(pool, rng);
    const auto counts = apportion(static_cast<Index>(order.size()), ratios);
    std::size_t pos = 0;
    for (Index k = 0; k < counts[0]; ++k) out.train.push_back(order[pos++]);
    for (Index k = 0; k < counts[1]; ++k) out.val.push_back(order[pos++]);
    for (Index k = 0; k < counts[2]; ++k) out.test.push_back(order[pos++]);
  };

  if (stratified && mask.size() == n) {
    IndexList g0, g1;
    for (Index i = 0; i < n; ++i) (mask[i] == 0 ? g0 : g1).push_back(i);
    distribute(g0);
    distribute(g1);
  } else {
    IndexList all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index{0});
    distribute(all);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Dataset generate(const ScenarioConfig& cfg) {
  cfg.validate();
  const Index n = cfg.n;
  const Index d = cfg.d;
  const Index dc = d - 1;  // continuous columns; the attribute sits last

  Dataset data;
  data.config = cfg;
  data.protected_column = dc;
  CounterRng root(cfg.seed);

  // Protected attribute.
  CounterRng attr_rng = root.derive(1);
  data.protected_mask.resize(n);
  for (Index i = 0; i < n; ++i) data.protected_mask[i] = attr_rng.bernoulli(cfg.imbalance) ? 1 : 0;

  // Blockwise-correlated Gaussian features: within a block the covariance is
  // compound symmetric with unit diagonal and off-diagonal rho, sampled as
  // Z L' from the block Cholesky factor.
  data.X.resize(n, d);
  {
    Index start = 0;
    std::uint64_t block_id = 0;
    while (start < dc) {
      const Index k = std::min(cfg.block_size, dc - start);
      MatXd cov = MatXd::Constant(k, k, cfg.base_correlation);
      cov.diagonal().setOnes();
      const MatXd L = Eigen::LLT<MatXd>(cov).matrixL();
      CounterRng block_rng = root.derive(100 + block_id);
      MatXd Z(n, k);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < k; ++j) Z(i, j) = block_rng.normal();
      data.X.block(0, start, n, k) = Z * L.transpose();
      start += k;
      ++block_id;
    }
  }

  // Shift a subset of features toward the attribute: +relevance for members,
  // -relevance for non-members. The final standardization absorbs scale.
  CounterRng select_rng = root.derive(2);
  const auto relevant =
      select_rng.sample_without_replacement(static_cast<std::size_t>(dc),
                                            static_cast<std::size_t>(cfg.relevant_features));
  for (std::size_t jj = 0; jj < relevant.size(); ++jj) {
    const Index j = static_cast<Index>(relevant[jj]);
    for (Index i = 0; i < n; ++i)
      data.X(i, j) += cfg.group_relevance * (2.0 * data.protected_mask[i] - 1.0);
  }

  // Latent score.
  CounterRng beta_rng = root.derive(3);
  VecXd beta = VecXd::Zero(dc);
  for (std::size_t jj :
       beta_rng.sample_without_replacement(static_cast<std::size_t>(dc),
                                           static_cast<std::size_t>(cfg.beta_support)))
    beta[static_cast<Index>(jj)] = beta_rng.normal();
  VecXd score = data.X.leftCols(dc) * beta;

  if (cfg.structure == TargetStructure::Nonlinear) {
    CounterRng nl_rng = root.derive(4);
    VecXd alpha(dc);
    for (Index j = 0; j < dc; ++j) alpha[j] = nl_rng.normal(0.0, 0.4);
    VecXd quad = (data.X.leftCols(dc).array().square().matrix()) * alpha;

    VecXd cross = VecXd::Zero(n);
    const Index pairs = std::min<Index>(cfg.interaction_pairs, dc * (dc - 1) / 2);
    for (Index p = 0; p < pairs; ++p) {
      Index a = static_cast<Index>(nl_rng.uniform_int(static_cast<std::uint64_t>(dc)));
      Index b = static_cast<Index>(nl_rng.uniform_int(static_cast<std::uint64_t>(dc)));
      if (a == b) b = (b + 1) % dc;
      const double gamma = nl_rng.normal(0.0, 0.4);
      cross += gamma * (data.X.col(a).array() * data.X.col(b).array()).matrix();
    }
    score = 0.7 * score + 0.2 * quad + 0.1 * cross;
  }

  // Opposite-sign group bias plus Gaussian noise.
  CounterRng noise_rng = root.derive(5);
  data.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double bias = data.protected_mask[i] == 0 ? cfg.bias_magnitude : -cfg.bias_magnitude;
    data.y[i] = score[i] + bias + noise_rng.normal(0.0, cfg.noise_sigma);
  }

  // Attribute column before standardization.
  for (Index i = 0; i < n; ++i) data.X(i, dc) = static_cast<double>(data.protected_mask[i]);

  data.split = split_indices(n, {0.70, 0.06, 0.24}, /*stratified=*/false, data.protected_mask,
                             root.derive(6).next_u64());

  // Standardize features and target by training-split statistics, then shrink
  // the group-0 target spread.
  const IndexList& train = data.split.train;
  const double nt = static_cast<double>(train.size());
  for (Index j = 0; j < d; ++j) {
    double mean = 0.0;
    for (Index i : train) mean += data.X(i, j);
    mean /= nt;
    double var = 0.0;
    for (Index i : train) var += (data.X(i, j) - mean) * (data.X(i, j) - mean);
    var /= nt;
    const double sd = std::sqrt(std::max(var, 1e-24));
    data.X.col(j) = (data.X.col(j).array() - mean) / sd;
  }
  {
    double mean = 0.0;
    for (Index i : train) mean += data.y[i];
    mean /= nt;
    double var = 0.0;
    for (Index i : train) var += (data.y[i] - mean) * (data.y[i] - mean);
    var /= nt;
    const double sd = std::sqrt(std::max(var, 1e-24));
    data.y = (data.y.array() - mean) / sd;
  }
  for (Index i = 0; i < n; ++i)
    if (data.protected_mask[i] == 0) data.y[i] *= cfg.group0_scale;

  return data;
}

std::vector<FairnessSpec<double>> scenario_specs(const ScenarioConfig& cfg, double epsilon) {
  return {FairnessSpec<double>::mean_parity("protected", epsilon),
          FairnessSpec<double>::box(box_lower(cfg.tightness), box_upper(cfg.tightness))};
}

namespace {

void write_index_list(std::ostringstream& out, const char* key, const IndexList& v) {
  out << key << " = ";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << " ";
    out << v[i];
  }
  out << "\n";
}

IndexList parse_index_list(const std::string& text) {
  IndexList out;
  std::istringstream in(text);
  long v;
  while (in >> v) out.push_back(static_cast<Index>(v));
  return out;
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& csv_path,
                  const std::string& descriptor_path) {
  std::ostringstream csv;
  for (Index j = 0; j < data.d(); ++j) csv << "x" << (j + 1) << ",";
  csv << "y\n";
  for (Index i = 0; i < data.n(); ++i) {
    for (Index j = 0; j < data.d(); ++j) csv << format_g17(data.X(i, j)) << ",";
    csv << format_g17(data.y[i]) << "\n";
  }
  write_text_file(csv_path, csv.str());

  const ScenarioConfig& cfg = data.config;
  std::ostringstream desc;
  desc << "[dataset]\n";
  desc << "version = 1\n";
  desc << "n = " << data.n() << "\n";
  desc << "d = " << data.d() << "\n";
  desc << "protected_column = " << data.protected_column << "\n";
  desc << "[scenario]\n";
  desc << "imbalance = " << format_g17(cfg.imbalance) << "\n";
  desc << "group_relevance = " << format_g17(cfg.group_relevance) << "\n";
  desc << "bias_magnitude = " << format_g17(cfg.bias_magnitude) << "\n";
  desc << "noise_sigma = " << format_g17(cfg.noise_sigma) << "\n";
  desc << "tightness = " << (cfg.tightness == BoxTightness::Loose ? "loose" : "tighter") << "\n";
  desc << "structure = " << (cfg.structure == TargetStructure::Linear ? "linear" : "nonlinear")
       << "\n";
  desc << "base_correlation = " << format_g17(cfg.base_correlation) << "\n";
  desc << "block_size = " << cfg.block_size << "\n";
  desc << "relevant_features = " << cfg.relevant_features << "\n";
  desc << "beta_support = " << cfg.beta_support << "\n";
  desc << "interaction_pairs = " << cfg.interaction_pairs << "\n";
  desc << "group0_scale = " << format_g17(cfg.group0_scale) << "\n";
  desc << "seed = " << cfg.seed << "\n";
  desc << "[split]\n";
  write_index_list(desc, "train", data.split.train);
  write_index_list(desc, "val", data.split.val);
  write_index_list(desc, "test", data.split.test);
  write_text_file(descriptor_path, desc.str());
}

Dataset load_dataset(const std::string& csv_path, const std::string& descriptor_path) {
  const KVDocument doc = KVDocument::load(descriptor_path);
  const KVSection* ds = doc.find("dataset");
  const KVSection* sc = doc.find("scenario");
  const KVSection* sp = doc.find("split");
  if (!ds || !sc || !sp) throw IoError("'" + descriptor_path + "' is not a dataset descriptor");

  Dataset data;
  const Index n = ds->get_long("n");
  const Index d = ds->get_long("d");
  data.protected_column = ds->get_long("protected_column");

  ScenarioConfig cfg;
  cfg.n = n;
  cfg.d = d;
  cfg.imbalance = sc->get_double("imbalance");
  cfg.group_relevance = sc->get_double("group_relevance");
  cfg.bias_magnitude = sc->get_double("bias_magnitude");
  cfg.noise_sigma = sc->get_double("noise_sigma");
  cfg.tightness = sc->get("tightness") == "loose" ? BoxTightness::Loose : BoxTightness::Tighter;
  cfg.structure =
      sc->get("structure") == "linear" ? TargetStructure::Linear : TargetStructure::Nonlinear;
  cfg.base_correlation = sc->get_double("base_correlation");
  cfg.block_size = sc->get_long("block_size");
  cfg.relevant_features = sc->get_long("relevant_features");
  cfg.beta_support = sc->get_long("beta_support");
  cfg.interaction_pairs = sc->get_long("interaction_pairs");
  cfg.group0_scale = sc->get_double("group0_scale");
  cfg.seed = static_cast<std::uint64_t>(sc->get_long("seed"));
  data.config = cfg;

  data.split.train = parse_index_list(sp->get("train"));
  data.split.val = parse_index_list(sp->get("val"));
  data.split.test = parse_index_list(sp->get("test"));

  const std::string csv = read_text_file(csv_path);
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file '" + csv_path + "'");
  data.X.resize(n, d);
  data.y.resize(n);
  Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= n) throw IoError("dataset file has more rows than the descriptor declares");
    std::size_t start = 0;
    for (Index j = 0; j <= d; ++j) {
      std::size_t end = line.find(',', start);
      if (end == std::string::npos) end = line.size();
      const double v = parse_double(line.substr(start, end - start));
      if (j < d)
        data.X(row, j) = v;
      else
        data.y[row] = v;
      start = end + 1;
    }
    ++row;
  }
  if (row != n) throw IoError("dataset file has fewer rows than the descriptor declares");

  // The protected column is a standardized two-point column; membership is
  // the larger of the two values.
  data.protected_mask.resize(n);
  const double threshold =
      (data.X.col(data.protected_column).minCoeff() + data.X.col(data.protected_column).maxCoeff()) /
      2.0;
  for (Index i = 0; i < n; ++i)
    data.protected_mask[i] = data.X(i, data.protected_column) > threshold ? 1 : 0;
  return data;
}

}  // namespace fairlayer
