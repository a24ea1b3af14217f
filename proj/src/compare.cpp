#include "fairlayer/compare.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <sstream>
#include <thread>

#include "fairlayer/io.hpp"
#include "fairlayer/rng.hpp"

namespace fairlayer {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string canonical_options(const CompareOptions& o) {
  std::ostringstream out;
  out << "scenarios=";
  for (int s : o.scenarios) out << s << ";";
  out << " methods=";
  for (Method m : o.methods) out << to_string(m) << ";";
  out << " n=" << o.n << " d=" << o.d << " epsilon=" << format_g17(o.epsilon)
      << " b_train=" << o.b_train << " b_infer=" << o.b_infer << " epochs=" << o.max_epochs
      << " grid=";
  for (double l : o.lambda_grid) out << format_g17(l) << ";";
  out << " strict=" << format_g17(o.strict_lambda) << " hidden=";
  for (Index h : o.hidden) out << h << ";";
  out << " layer_norm=" << o.layer_norm << " lr=" << format_g17(o.learning_rate)
      << " seed=" << o.seed << " repeats=" << o.repeats;
  return out.str();
}

struct Cell {
  int scenario;
  int repeat;
  Method method;
};

CellResult run_cell(const CompareOptions& o, const Cell& cell) {
  const auto start = std::chrono::steady_clock::now();

  const auto grid = scenario_grid(o.seed);
  ScenarioConfig scfg = grid[static_cast<std::size_t>(cell.scenario)].scaled_to(o.n, o.d);
  CounterRng cell_rng(o.seed, 7000 + static_cast<std::uint64_t>(cell.scenario) * 64 +
                                  static_cast<std::uint64_t>(cell.repeat));
  scfg.seed = cell_rng.next_u64();
  const Dataset data = generate(scfg);
  const auto specs = scenario_specs(scfg, o.epsilon);

  TrainConfig tcfg;
  tcfg.method = cell.method;
  tcfg.learning_rate = o.learning_rate;
  tcfg.max_epochs = o.max_epochs;
  tcfg.b_train = o.b_train;
  tcfg.hidden = o.hidden;
  tcfg.layer_norm = o.layer_norm;
  tcfg.epsilon = o.epsilon;
  tcfg.seed = cell_rng.next_u64();

  CellResult res;
  res.scenario = cell.scenario;
  res.repeat = cell.repeat;
  res.method = cell.method;
  res.cell_seed = tcfg.seed;

  if (cell.method == Method::Penalty) {
    const LambdaSelection sel = select_penalty_lambda(data, specs, o.lambda_grid, tcfg);
    res.lambda_used = sel.lambda;
    tcfg.lambda = sel.lambda;
    res.penalty_selected_ok = sel.satisfied;
    if (!sel.trials.empty()) res.penalty_smallest_ok = sel.trials.front().second.all_satisfied();
  } else if (cell.method == Method::StrictPenalty) {
    tcfg.lambda = o.strict_lambda;
    res.lambda_used = o.strict_lambda;
  }

  std::vector<Index> widths;
  widths.push_back(data.d());
  widths.insert(widths.end(), tcfg.hidden.begin(), tcfg.hidden.end());
  widths.push_back(1);
  MLPModel model = make_mlp(widths, tcfg.layer_norm, tcfg.seed);
  train(model, data, specs, tcfg);

  const EvalMetrics metrics =
      evaluate(model, data, "test", specs, cell.method, tcfg.loss, o.b_infer);
  res.test_loss = metrics.loss;
  for (const auto& g : metrics.gaps) {
    if (g.spec == 0) res.gap_parity = g.value;
    if (g.spec == 1) res.gap_box = g.value;
  }
  res.satisfied = metrics.all_satisfied();
  res.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace

std::string config_hash_hex(const CompareOptions& options) {
  std::ostringstream out;
  out << std::hex << fnv1a(canonical_options(options));
  return out.str();
}

CompareReport run_compare(const CompareOptions& options) {
  CompareOptions o = options;
  if (o.full_grid) {
    o.scenarios.clear();
    for (int s = 0; s < 32; ++s) o.scenarios.push_back(s);
  }

  std::vector<Cell> cells;
  for (int s : o.scenarios)
    for (int r = 0; r < o.repeats; ++r)
      for (Method m : o.methods) cells.push_back({s, r, m});

  std::vector<CellResult> results(cells.size());
  const int workers = std::max(1, std::min<int>(o.threads, static_cast<int>(cells.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) results[i] = run_cell(o, cells[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= cells.size()) break;
          results[i] = run_cell(o, cells[i]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // Ranks and relative losses within each (scenario, repeat) block.
  for (int s : o.scenarios) {
    for (int r = 0; r < o.repeats; ++r) {
      std::vector<std::size_t> block;
      double flayer_loss = -1.0;
      for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].scenario != s || results[i].repeat != r) continue;
        block.push_back(i);
        if (results[i].method == Method::FLayer) flayer_loss = results[i].test_loss;
      }
      std::vector<std::size_t> order = block;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return results[a].test_loss < results[b].test_loss;
      });
      for (std::size_t k = 0; k < order.size(); ++k) results[order[k]].rank = static_cast<int>(k) + 1;
      if (flayer_loss > 0.0)
        for (std::size_t i : block)
          results[i].rel_loss_pct = (results[i].test_loss - flayer_loss) / flayer_loss * 100.0;
    }
  }

  CompareReport report;
  report.options = o;
  report.cells = std::move(results);
  report.config_hash = config_hash_hex(o);
  return report;
}

std::string CompareReport::payload_csv() const {
  std::ostringstream out;
  out << "scenario,repeat,method,test_loss,gap_mean_parity,gap_box,constraints_satisfied,"
         "lambda,rank,rel_loss_pct,cell_seed,config_hash\n";
  for (const auto& c : cells) {
    out << c.scenario << "," << c.repeat << "," << to_string(c.method) << ","
        << format_g17(c.test_loss) << "," << format_g17(c.gap_parity) << ","
        << format_g17(c.gap_box) << "," << (c.satisfied ? 1 : 0) << ","
        << format_g17(c.lambda_used) << "," << c.rank << "," << format_g17(c.rel_loss_pct) << ","
        << c.cell_seed << "," << config_hash << "\n";
  }
  return out.str();
}

std::string CompareReport::metadata_text() const {
  std::ostringstream out;
  out << "[metadata]\n";
  out << "config_hash = " << config_hash << "\n";
  out << "config = " << canonical_options(options) << "\n";
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  out << "unix_time = " << std::chrono::duration_cast<std::chrono::seconds>(now).count() << "\n";
  double total = 0.0;
  for (const auto& c : cells) total += c.runtime_seconds;
  out << "total_cell_seconds = " << format_g17(total) << "\n";
  for (const auto& c : cells)
    out << "runtime_" << c.scenario << "_" << c.repeat << "_" << to_string(c.method) << " = "
        << format_g17(c.runtime_seconds) << "\n";
  return out.str();
}

void write_compare_report(const CompareReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/results.csv", report.payload_csv());
  write_text_file(out_dir + "/metadata.txt", report.metadata_text());
}

}  // namespace fairlayer
