// Command-line harness: synthetic data generation, method training and
// comparison, streaming inference, and the invariant check suites.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <fairlayer/checks.hpp>
#include <fairlayer/compare.hpp>
#include <fairlayer/datagen.hpp>
#include <fairlayer/io.hpp>
#include <fairlayer/kkt.hpp>
#include <fairlayer/mlp.hpp>
#include <fairlayer/streaming.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitBadArgs = 2;
constexpr int kExitIoFailure = 3;
constexpr int kExitInfeasible = 4;
constexpr int kExitAggregateViolation = 5;

using namespace fairlayer;

std::vector<Index> parse_hidden(const std::string& text) {
  std::vector<Index> out;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ','))
    if (!token.empty()) out.push_back(static_cast<Index>(parse_long(token)));
  if (out.empty()) throw InvalidConfig("empty hidden layer list");
  return out;
}

struct DatagenArgs {
  int scenario = 0;
  long n = 0;
  long d = 0;
  std::uint64_t seed = 1;
  std::string out = "dataset.csv";
};

int cmd_datagen(const DatagenArgs& args) {
  if (args.scenario < 0 || args.scenario > 31) {
    std::cerr << "scenario id must lie in [0, 31]\n";
    return kExitBadArgs;
  }
  ScenarioConfig cfg = scenario_grid(args.seed)[static_cast<std::size_t>(args.scenario)];
  if (args.n > 0 || args.d > 0)
    cfg = cfg.scaled_to(args.n > 0 ? args.n : cfg.n, args.d > 0 ? args.d : cfg.d);
  const Dataset data = generate(cfg);
  save_dataset(data, args.out, args.out + ".desc");
  const double frac =
      static_cast<double>(data.protected_mask.sum()) / static_cast<double>(data.n());
  std::cout << "wrote " << args.out << " (descriptor " << args.out << ".desc)\n";
  std::cout << "n = " << data.n() << ", d = " << data.d() << ", group-1 fraction = " << frac
            << "\n";
  std::cout << cfg.describe() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string method = "flayer";
  std::string specs_file;
  std::string model_out = "model.txt";
  std::string report_out;
  double epsilon = 0.05;
  double lambda = -1.0;
  std::string lambda_grid;
  double learning_rate = 1e-3;
  long epochs = 30;
  long b_train = 256;
  std::string hidden = "32,32,32";
  bool layer_norm = false;
  std::uint64_t seed = 1;
};

int cmd_train(const TrainArgs& args) {
  const Dataset data = load_dataset(args.data, args.data + ".desc");
  std::vector<FairnessSpec<double>> specs;
  if (!args.specs_file.empty())
    specs = parse_specs(KVDocument::load(args.specs_file));
  else
    specs = scenario_specs(data.config, args.epsilon);

  TrainConfig cfg;
  cfg.method = method_from_string(args.method);
  cfg.learning_rate = args.learning_rate;
  cfg.max_epochs = static_cast<int>(args.epochs);
  cfg.b_train = args.b_train;
  cfg.hidden = parse_hidden(args.hidden);
  cfg.layer_norm = args.layer_norm;
  cfg.epsilon = args.epsilon;
  cfg.seed = args.seed;
  if (cfg.method == Method::StrictPenalty) cfg.lambda = args.lambda >= 0 ? args.lambda : 5000.0;
  if (cfg.method == Method::Penalty) cfg.lambda = args.lambda >= 0 ? args.lambda : 1.0;

  double lambda_used = cfg.lambda;
  if (cfg.method == Method::Penalty && !args.lambda_grid.empty()) {
    std::vector<double> grid;
    std::istringstream in(args.lambda_grid);
    std::string token;
    while (std::getline(in, token, ',')) grid.push_back(parse_double(token));
    const LambdaSelection sel = select_penalty_lambda(data, specs, grid, cfg);
    cfg.lambda = sel.lambda;
    lambda_used = sel.lambda;
    std::cout << "selected lambda = " << sel.lambda
              << (sel.satisfied ? "" : " (no grid value satisfied the constraints)") << "\n";
  }

  std::vector<Index> widths;
  widths.push_back(data.d());
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  MLPModel model = make_mlp(widths, cfg.layer_norm, cfg.seed);
  const TrainLog log = train(model, data, specs, cfg);
  save_model(model, args.model_out);

  const EvalMetrics metrics = evaluate(model, data, "test", specs, cfg.method, cfg.loss);
  std::ostringstream report;
  report << "[train_report]\n";
  report << "method = " << to_string(cfg.method) << "\n";
  report << "epochs_run = " << log.epochs.size() << "\n";
  report << "best_epoch = " << log.best_epoch << "\n";
  report << "lambda = " << format_g17(lambda_used) << "\n";
  report << "test_loss = " << format_g17(metrics.loss) << "\n";
  for (const auto& g : metrics.gaps)
    report << "gap_spec" << g.spec << " = " << format_g17(g.value) << "\n";
  report << "constraints_satisfied = " << (metrics.all_satisfied() ? 1 : 0) << "\n";
  report << "seed = " << args.seed << "\n";
  const std::string text = report.str();
  std::cout << text;
  if (!args.report_out.empty()) write_text_file(args.report_out, text);
  return kExitOk;
}

struct StreamArgs {
  std::string data;
  std::string model;
  long batch_size = 4;
  double eta = 0.5;
  long b_tau = 256;
  double epsilon = 0.05;
  double slack = 0.02;
  long max_batches = 0;
  std::string log_out = "stream_log.csv";
  std::string checkpoint_out;
  std::string resume;
};

int cmd_stream(const StreamArgs& args) {
  const Dataset data = load_dataset(args.data, args.data + ".desc");
  const MLPModel model = load_model(args.model);
  std::vector<FairnessSpec<double>> specs = {
      FairnessSpec<double>::mean_parity("protected", args.epsilon)};

  DualControllerStateXd state;
  bool resumed = false;
  if (!args.resume.empty()) {
    state = load_controller(args.resume);
    resumed = true;
  } else {
    state = DualControllerStateXd::make(args.epsilon, args.eta, args.b_tau);
  }

  const IndexList& rows = data.split.test;
  const Index b = args.batch_size;
  const Index total_batches = (static_cast<Index>(rows.size()) + b - 1) / b;
  Index first = state.batches_seen;  // skip batches already processed
  Index limit = total_batches;
  if (args.max_batches > 0) limit = std::min<Index>(limit, first + args.max_batches);

  for (Index t = first; t < limit; ++t) {
    IndexList batch;
    for (Index i = t * b; i < std::min<Index>((t + 1) * b, static_cast<Index>(rows.size())); ++i)
      batch.push_back(rows[static_cast<std::size_t>(i)]);
    if (batch.empty()) break;
    MatXd Xb(static_cast<Index>(batch.size()), data.d());
    VecXd yb(static_cast<Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Xb.row(static_cast<Index>(i)) = data.X.row(batch[i]);
      yb[static_cast<Index>(i)] = data.y[batch[i]];
    }
    const VecXd z = forward(model, Xb);
    stream_step(state, z, data.masks_for(batch), std::optional<VecXd>(yb), specs);
  }

  append_stream_log(args.log_out, state.log, 0, /*write_header=*/!resumed);
  if (!args.checkpoint_out.empty()) save_controller(state, args.checkpoint_out);

  const double aggregate = aggregate_violation(state);
  std::cout << "batches = " << state.batches_seen << ", weighted average gap = " << aggregate
            << ", lambda = " << state.lambda << "\n";
  const bool finished = state.batches_seen >= total_batches || args.max_batches > 0;
  if (state.batches_seen >= total_batches && aggregate > args.epsilon + args.slack) {
    std::cerr << "aggregate fairness " << aggregate << " exceeds " << args.epsilon << " + "
              << args.slack << "\n";
    return kExitAggregateViolation;
  }
  (void)finished;
  return kExitOk;
}

struct CompareArgs {
  std::string scenarios = "3,11,19,27";
  std::string methods = "flayer,projection,penalty,strict-penalty";
  long n = 4000;
  long d = 30;
  double epsilon = 0.05;
  long b_train = 256;
  long epochs = 30;
  std::string lambda_grid = "0.01,0.1,1,10,100";
  std::string hidden = "32,32,32";
  double learning_rate = 1e-3;
  std::string out_dir = "compare_out";
  std::uint64_t seed = 1;
  long repeats = 1;
  long threads = 1;
  bool full = false;
};

int cmd_compare(const CompareArgs& args) {
  CompareOptions o;
  o.scenarios.clear();
  {
    std::istringstream in(args.scenarios);
    std::string token;
    while (std::getline(in, token, ',')) {
      const long s = parse_long(token);
      if (s < 0 || s > 31) {
        std::cerr << "scenario id must lie in [0, 31]\n";
        return kExitBadArgs;
      }
      o.scenarios.push_back(static_cast<int>(s));
    }
  }
  o.methods.clear();
  {
    std::istringstream in(args.methods);
    std::string token;
    while (std::getline(in, token, ',')) o.methods.push_back(method_from_string(token));
  }
  o.n = args.n;
  o.d = args.d;
  o.epsilon = args.epsilon;
  o.b_train = args.b_train;
  o.max_epochs = static_cast<int>(args.epochs);
  o.hidden = parse_hidden(args.hidden);
  o.learning_rate = args.learning_rate;
  o.seed = args.seed;
  o.repeats = static_cast<int>(args.repeats);
  o.threads = static_cast<int>(args.threads);
  o.full_grid = args.full;
  o.lambda_grid.clear();
  {
    std::istringstream in(args.lambda_grid);
    std::string token;
    while (std::getline(in, token, ',')) o.lambda_grid.push_back(parse_double(token));
  }
  if (o.full_grid)
    std::cout << "running the full 32-scenario grid; expect a long runtime\n";

  const CompareReport report = run_compare(o);
  write_compare_report(report, args.out_dir);
  std::cout << "wrote " << args.out_dir << "/results.csv and metadata.txt\n";
  for (const auto& c : report.cells)
    std::cout << "scenario " << c.scenario << " " << to_string(c.method) << ": loss "
              << format_g17(c.test_loss) << ", rank " << c.rank << ", satisfied "
              << (c.satisfied ? "yes" : "no") << "\n";
  return kExitOk;
}

struct CheckArgs {
  std::string suite = "all";
  std::uint64_t seed = 20260315;
};

int cmd_check(const CheckArgs& args) {
  const auto results = run_check_suite(args.suite, args.seed);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass ? kExitOk : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairness-constrained prediction engine"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key-value configuration file; command line wins");

  DatagenArgs dg;
  auto* datagen_cmd = app.add_subcommand("datagen", "generate a synthetic scenario dataset");
  datagen_cmd->add_option("--scenario", dg.scenario, "scenario id, 0-31");
  datagen_cmd->add_option("--n", dg.n, "override sample count");
  datagen_cmd->add_option("--d", dg.d, "override feature count");
  datagen_cmd->add_option("--seed", dg.seed, "grid seed");
  datagen_cmd->add_option("--out", dg.out, "output CSV path");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train one method on a dataset");
  train_cmd->add_option("--data", tr.data, "dataset CSV (descriptor at <data>.desc)")
      ->required();
  train_cmd->add_option("--method", tr.method,
                        "flayer | projection | penalty | strict-penalty");
  train_cmd->add_option("--specs", tr.specs_file, "fairness spec file ([spec] sections)");
  train_cmd->add_option("--epsilon", tr.epsilon, "parity tolerance for default specs");
  train_cmd->add_option("--lambda", tr.lambda, "penalty weight");
  train_cmd->add_option("--lambda-grid", tr.lambda_grid, "comma list; penalty selection");
  train_cmd->add_option("--lr", tr.learning_rate, "SGD learning rate");
  train_cmd->add_option("--epochs", tr.epochs, "maximum epochs");
  train_cmd->add_option("--b-train", tr.b_train, "training batch size");
  train_cmd->add_option("--hidden", tr.hidden, "hidden widths, comma list");
  train_cmd->add_flag("--layer-norm", tr.layer_norm, "per-layer normalization");
  train_cmd->add_option("--seed", tr.seed, "training seed");
  train_cmd->add_option("--model-out", tr.model_out, "model document path");
  train_cmd->add_option("--report-out", tr.report_out, "metrics report path");

  StreamArgs st;
  auto* stream_cmd = app.add_subcommand("stream", "primal-dual streaming inference");
  stream_cmd->add_option("--data", st.data, "dataset CSV")->required();
  stream_cmd->add_option("--model", st.model, "trained model document")->required();
  stream_cmd->add_option("--batch-size", st.batch_size, "stream batch size");
  stream_cmd->add_option("--eta", st.eta, "dual step size");
  stream_cmd->add_option("--b-tau", st.b_tau, "hard projection threshold");
  stream_cmd->add_option("--epsilon", st.epsilon, "fairness tolerance");
  stream_cmd->add_option("--slack", st.slack, "finite-horizon allowance on the average");
  stream_cmd->add_option("--max-batches", st.max_batches, "stop after this many new batches");
  stream_cmd->add_option("--log", st.log_out, "stream log CSV");
  stream_cmd->add_option("--checkpoint-out", st.checkpoint_out, "controller checkpoint path");
  stream_cmd->add_option("--resume", st.resume, "resume from a checkpoint");

  CompareArgs cp;
  auto* compare_cmd = app.add_subcommand("compare", "scenario x method ranking table");
  compare_cmd->add_option("--scenarios", cp.scenarios, "comma list of scenario ids");
  compare_cmd->add_option("--methods", cp.methods, "comma list of methods");
  compare_cmd->add_option("--n", cp.n, "samples per scenario");
  compare_cmd->add_option("--d", cp.d, "features per scenario");
  compare_cmd->add_option("--epsilon", cp.epsilon, "parity tolerance");
  compare_cmd->add_option("--b-train", cp.b_train, "training batch size");
  compare_cmd->add_option("--epochs", cp.epochs, "maximum epochs");
  compare_cmd->add_option("--lambda-grid", cp.lambda_grid, "penalty selection grid");
  compare_cmd->add_option("--hidden", cp.hidden, "hidden widths");
  compare_cmd->add_option("--lr", cp.learning_rate, "SGD learning rate");
  compare_cmd->add_option("--out-dir", cp.out_dir, "report directory");
  compare_cmd->add_option("--seed", cp.seed, "experiment seed");
  compare_cmd->add_option("--repeats", cp.repeats, "repetitions per cell");
  compare_cmd->add_option("--threads", cp.threads, "worker threads over cells");
  compare_cmd->add_flag("--full", cp.full, "all 32 scenarios");

  CheckArgs ck;
  auto* check_cmd = app.add_subcommand(
      "check", "invariant suites: oracle, kkt, spectral, lipschitz, lemma1, thm2, all");
  check_cmd->add_option("--suite", ck.suite, "suite name");
  check_cmd->add_option("--seed", ck.seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitBadArgs;
  }

  try {
    if (app.got_subcommand(datagen_cmd)) return cmd_datagen(dg);
    if (app.got_subcommand(train_cmd)) return cmd_train(tr);
    if (app.got_subcommand(stream_cmd)) return cmd_stream(st);
    if (app.got_subcommand(compare_cmd)) return cmd_compare(cp);
    if (app.got_subcommand(check_cmd)) return cmd_check(ck);
  } catch (const InfeasibleBatchConstraints& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const Infeasible& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIoFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadArgs;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIoFailure;
  }
  return kExitBadArgs;
}
