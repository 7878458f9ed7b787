#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include "rank1/rank1.hpp"

namespace fs = std::filesystem;
using namespace rank1;

namespace {

constexpr int kUsageError = 2;

struct UsageError : Error {
  using Error::Error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

NetworkSpec load_arch(const std::string& arch, const fs::path& base) {
  if (auto p = preset(arch)) return *p;
  const fs::path path = resolve(base, arch);
  if (!fs::exists(path)) {
    throw ValueError("arch '" + arch + "' is neither a preset (mnist-table1, mnist-small, cifar-table2) nor a file");
  }
  return parse_network_spec(read_text(path));
}

Dataset load_pair(const std::string& value, const fs::path& base, std::size_t classes) {
  const auto comma = value.find(',');
  if (comma == std::string::npos) throw ValueError("expected 'images,labels' paths, got '" + value + "'");
  return load_idx(resolve(base, value.substr(0, comma)), resolve(base, value.substr(comma + 1)), classes);
}

struct TrainData {
  Dataset train;
  std::optional<Dataset> test;
};

TrainData load_train_data(const Config& cfg, const NetworkSpec& spec, const fs::path& base, std::uint64_t seed) {
  const std::string train_src = cfg.get("data.train");
  const std::string test_src = cfg.get("data.test", "none");
  TrainData out;
  if (train_src == "synth") {
    const auto per_train = static_cast<std::size_t>(cfg.get_int("synth.train_per_class", 50));
    const auto per_test = static_cast<std::size_t>(cfg.get_int("synth.test_per_class", 20));
    const auto noise = cfg.get_double("synth.noise", 0.05);
    const Dataset all = synth_blobs(spec.classes, per_train + per_test, spec.input_shape(),
                                    static_cast<std::uint64_t>(cfg.get_int("synth.seed", static_cast<long long>(seed))),
                                    noise);
    out.train = slice(all, 0, per_train * spec.classes);
    if (test_src == "synth") out.test = slice(all, per_train * spec.classes, per_test * spec.classes);
  } else {
    out.train = load_pair(train_src, base, spec.classes);
  }
  if (test_src != "none" && test_src != "synth") out.test = load_pair(test_src, base, spec.classes);
  if (test_src == "synth" && train_src != "synth") throw ValueError("data.test = synth requires data.train = synth");

  out.train = take(out.train, static_cast<std::size_t>(cfg.get_int("train_limit", 0)));
  if (out.test) out.test = take(*out.test, static_cast<std::size_t>(cfg.get_int("test_limit", 0)));
  return out;
}

void print_counts(std::ostream& os, Network& net) {
  const NetworkParamCount c = net.parameter_count();
  os << "parameters (conv, incl. bias): factored " << c.conv_factored << ", dense " << c.conv_dense << '\n';
  os << "parameters (other layers): " << c.other << '\n';
  for (ConvLayer* conv : net.conv_layers()) {
    const auto& g = conv->geometry();
    const ParamCount per = param_count(g.height, g.width, g.in_channels);
    os << "  conv " << g.out_channels << " x (" << g.in_channels << 'x' << g.height << 'x' << g.width
       << "): per filter factored " << per.factored << ", dense " << per.dense << '\n';
  }
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
  const Config cfg = Config::load(config_path);
  const fs::path base = fs::path(config_path).parent_path();

  const auto mode = parse_conv_mode(cfg.get("mode"));
  if (!mode) throw UsageError("unknown mode '" + cfg.get("mode") + "' (expected standard, rank1 or sequential-1d)");

  TrainConfig tc;
  tc.mode = *mode;
  tc.learning_rate = cfg.get_double("lr", tc.learning_rate);
  tc.batch_size = static_cast<std::size_t>(cfg.get_int("batch_size", static_cast<long long>(tc.batch_size)));
  tc.epochs = static_cast<std::size_t>(cfg.get_int("epochs", static_cast<long long>(tc.epochs)));
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(tc.seed)));
  tc.deterministic = cfg.get_bool("deterministic", tc.deterministic);
  tc.eval_every = static_cast<std::size_t>(cfg.get_int("eval_every", 0));
  tc.momentum = cfg.get_double("momentum", 0.0);
  tc.max_iterations = static_cast<std::size_t>(cfg.get_int("max_iterations", 0));
  tc.threads = static_cast<std::size_t>(cfg.get_int("threads", 0));
  if (cfg.get_int("batch_size", 1) <= 0 || cfg.get_int("epochs", 0) < 0 || cfg.get_int("seed", 0) < 0) {
    throw ValueError("batch_size must be positive; epochs and seed must be non-negative");
  }

  const NetworkSpec spec = load_arch(cfg.get("arch"), base);
  const fs::path out_dir = out_override.empty() ? fs::path(cfg.get("out_dir")) : fs::path(out_override);
  const TrainData data = load_train_data(cfg, spec, base, tc.seed);
  fs::create_directories(out_dir);

  std::cerr << "training " << spec.name << " in " << to_string(tc.mode) << " mode on " << data.train.size()
            << " samples";
  if (data.test) std::cerr << " (test " << data.test->size() << ")";
  std::cerr << ", " << tc.epochs << " epochs, lr " << tc.learning_rate << ", batch " << tc.batch_size << '\n';

  Network net(spec, tc.mode, tc.seed);
  std::size_t last_epoch = 0;
  const TrainRun run = train(net, data.train, data.test ? &*data.test : nullptr, tc);
  for (const MetricRow& r : run.log) {
    if (r.test_accuracy && r.epoch != last_epoch) {
      std::cerr << "  epoch " << r.epoch << " iteration " << r.iteration << ": loss " << r.loss << ", test accuracy "
                << *r.test_accuracy << '\n';
      last_epoch = r.epoch;
    }
  }

  const fs::path metrics = out_dir / "metrics.csv";
  {
    std::ofstream os(metrics, std::ios::binary);
    if (!os) throw IoError("cannot create " + metrics.string());
    write_metrics_csv(os, run, !tc.deterministic);
  }
  save_checkpoint(net, out_dir / "model.ckpt");

  print_counts(std::cout, net);
  std::cout << "iterations: " << run.iterations << '\n';
  if (const auto acc = run.final_accuracy()) {
    std::cout << "test accuracy: " << std::fixed << std::setprecision(4) << *acc << std::defaultfloat << '\n';
  }
  std::cout << "wrote " << metrics.string() << " and " << (out_dir / "model.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& images, const std::string& labels, std::size_t limit) {
  Network net = load_checkpoint(checkpoint);
  const Dataset data = take(load_idx(images, labels, net.spec().classes), limit);
  const double acc = evaluate(net, data);
  std::cout << "accuracy " << std::fixed << std::setprecision(4) << acc << " on " << data.size() << " samples\n";
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  VerifyOptions opt;
  opt.seed = seed;
  const auto results = run_verify(opt);
  bool ok = true;
  std::cout << std::left << std::setw(20) << "check" << std::setw(8) << "result" << "detail\n";
  for (const CheckResult& r : results) {
    ok = ok && r.passed;
    std::ostringstream secs;
    secs << std::fixed << std::setprecision(2) << r.seconds;
    std::cout << std::setw(20) << r.name << std::setw(8) << (r.passed ? "PASS" : "FAIL") << r.detail << " ["
              << secs.str() << " s]\n";
  }
  return ok ? 0 : 1;
}

int cmd_hankel(const RankBoundParams& params, const std::string& out) {
  const RankBoundReport report = rank_bound_experiment(params);
  if (out == "-") {
    write_rank_report_csv(std::cout, report);
  } else {
    std::ofstream os(out, std::ios::binary);
    if (!os) throw IoError("cannot create " + out);
    write_rank_report_csv(os, report);
  }
  std::ostream& summary = out == "-" ? std::cerr : std::cout;
  for (const std::string& mode : rank_bound_modes()) {
    summary << std::left << std::setw(14) << mode << report.satisfied(mode) << '/' << report.count(mode)
            << " trials within min(rank H, N, q); " << report.exceeding(mode) << " with rank Y > min(N, q)\n";
  }
  return 0;
}

int cmd_params(const std::string& arch) {
  const NetworkSpec spec = load_arch(arch, fs::current_path());
  Network net(spec, ConvMode::rank1, 1);
  std::cout << spec.name << '\n';
  print_counts(std::cout, net);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rank-1 factorized convolution: training, evaluation and Hankel rank analysis"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a key = value config file");
  train_cmd->add_option("config", config_path, "Config file")->required();
  train_cmd->add_option("--out-dir", out_override, "Override out_dir from the config");

  std::string checkpoint, images, labels;
  std::size_t limit = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint on an IDX dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--images", images, "IDX image file")->required();
  eval_cmd->add_option("--labels", labels, "IDX label file")->required();
  eval_cmd->add_option("--limit", limit, "Use only the first N samples (0: all)");

  std::uint64_t verify_seed = 7;
  auto* verify_cmd = app.add_subcommand("verify", "Run the invariant checks and print a pass/fail table");
  verify_cmd->add_option("--seed", verify_seed, "Random seed");

  RankBoundParams hp;
  std::string hankel_out = "rank_bound.csv";
  std::size_t kernel = 3;
  auto* hankel_cmd = app.add_subcommand("hankel", "Output-rank experiment on random inputs and filters");
  hankel_cmd->add_option("--channels", hp.channels, "Input channels N")->check(CLI::PositiveNumber);
  hankel_cmd->add_option("--filters", hp.filters, "Filters q")->check(CLI::PositiveNumber);
  hankel_cmd->add_option("--height", hp.height, "Input height n1")->check(CLI::PositiveNumber);
  hankel_cmd->add_option("--width", hp.width, "Input width n2")->check(CLI::PositiveNumber);
  hankel_cmd->add_option("--kernel", kernel, "Square filter size d1 = d2")->check(CLI::PositiveNumber);
  hankel_cmd->add_option("--trials", hp.trials, "Trials")->check(CLI::PositiveNumber);
  hankel_cmd->add_option("--seed", hp.seed, "Random seed");
  hankel_cmd->add_option("--rel-tol", hp.rel_tol, "Relative tolerance of the numerical rank");
  hankel_cmd->add_option("--out", hankel_out, "Report CSV path ('-' for standard output)");

  std::string arch;
  auto* params_cmd = app.add_subcommand("params", "Factored versus dense parameter counts of an architecture");
  params_cmd->add_option("arch", arch, "Preset name or spec file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kUsageError;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, out_override);
    if (*eval_cmd) return cmd_eval(checkpoint, images, labels, limit);
    if (*verify_cmd) return cmd_verify(verify_seed);
    if (*hankel_cmd) {
      hp.kernel_h = hp.kernel_w = kernel;
      return cmd_hankel(hp, hankel_out);
    }
    if (*params_cmd) return cmd_params(arch);
  } catch (const UsageError& e) {
    std::cerr << "rank1cnn: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "rank1cnn: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}
