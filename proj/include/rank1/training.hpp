#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rank1/data.hpp"
#include "rank1/network.hpp"
#include "rank1/parallel.hpp"

namespace rank1 {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::uint64_t seed = 1;
  ConvMode mode = ConvMode::rank1;
  /// Evaluate on the test set every this many iterations; 0 means once per epoch.
  std::size_t eval_every = 0;
  /// Single worker thread and seeded randomness only.
  bool deterministic = true;
  /// Heavy-ball momentum. Not part of the plain two-step update; off by default.
  double momentum = 0.0;
  /// Stop after this many iterations (0: no limit).
  std::size_t max_iterations = 0;
  /// Worker threads when not deterministic (0: RANK1_THREADS / hardware).
  std::size_t threads = 0;
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ValueError("train: learning rate must be positive");
  }
  if (cfg.batch_size == 0) throw ValueError("train: batch size must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ValueError("train: momentum must lie in [0, 1)");
}

struct MetricRow {
  std::size_t iteration = 0;  // 1-based, counts optimizer steps
  std::size_t epoch = 0;      // 1-based
  double loss = 0.0;          // minibatch mean cross-entropy before the step
  std::optional<double> test_accuracy;
  double wall_ms = 0.0;       // since the start of training
};

struct TrainRun {
  std::vector<MetricRow> log;
  NetworkParamCount params;
  std::size_t epochs_completed = 0;
  std::size_t iterations = 0;
  double wall_ms = 0.0;

  std::optional<double> final_accuracy() const {
    for (auto it = log.rbegin(); it != log.rend(); ++it) {
      if (it->test_accuracy) return it->test_accuracy;
    }
    return std::nullopt;
  }
};

/// Called after every optimizer step with the 1-based iteration number.
using StepObserver = std::function<void(std::size_t, Network&)>;

/// Logits for every sample, evaluated in batches in the eval phase.
inline Tensor predict(Network& net, const Dataset& data, std::size_t batch_size = 100) {
  check_dataset(data);
  Tensor logits({data.size(), net.spec().classes});
  std::size_t row = 0;
  for (const Batch& b : batches(data, batch_size)) {
    const Tensor out = net.forward(b.images, Phase::eval);
    std::copy(out.data().begin(), out.data().end(),
              logits.data().begin() + static_cast<std::ptrdiff_t>(row * net.spec().classes));
    row += b.labels.size();
  }
  return logits;
}

/// Fraction of samples whose argmax logit equals the label.
inline double evaluate(Network& net, const Dataset& data, std::size_t batch_size = 100) {
  if (data.size() == 0) throw ValueError("evaluate: empty dataset");
  const auto predicted = argmax_rows(predict(net, data, batch_size));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == static_cast<std::size_t>(data.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace detail {
class ThreadScope {
 public:
  explicit ThreadScope(std::size_t n) : saved_(max_threads()) { set_max_threads(n); }
  ~ThreadScope() { set_max_threads(saved_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  std::size_t saved_;
};
}  // namespace detail

/// Minibatch SGD. Each iteration runs forward (rank-1 filters are recomposed
/// inside the conv layers), softmax cross-entropy, backward (dense filter
/// gradients are routed to the factors) and the optimizer step (factors move,
/// then recompose). The shuffle of epoch e uses seed * 1000003 + e.
inline TrainRun train(Network& net, const Dataset& train_data, const Dataset* test_data, const TrainConfig& cfg,
                      const StepObserver& observer = {}) {
  validate(cfg);
  check_dataset(train_data);
  if (train_data.sample_shape() != net.spec().input_shape()) {
    throw ShapeError("train: samples " + to_string(train_data.sample_shape()) + " do not fit network input " +
                     to_string(net.spec().input_shape()));
  }
  if (train_data.class_count > net.spec().classes) throw ShapeError("train: more classes than network outputs");
  const detail::ThreadScope threads(cfg.deterministic ? 1 : (cfg.threads ? cfg.threads : threads_from_environment()));

  TrainRun run;
  run.params = net.parameter_count();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const BatchSequence seq = batches(train_data, cfg.batch_size, cfg.seed * 1000003ULL + epoch);
    for (std::size_t bi = 0; bi < seq.size(); ++bi) {
      const Batch batch = seq[bi];
      net.zero_grad();
      const Tensor logits = net.forward(batch.images, Phase::train);
      const LossAndGrad lg = softmax_xent(logits, batch.labels);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("training diverged: loss is " + std::to_string(lg.loss) + " at iteration " +
                              std::to_string(run.iterations + 1) + " (epoch " + std::to_string(epoch) +
                              "); try a smaller learning rate");
      }
      net.backward(lg.dlogits);
      net.sgd_step(cfg.learning_rate, cfg.momentum);
      ++run.iterations;
      if (observer) observer(run.iterations, net);

      MetricRow row{run.iterations, epoch, lg.loss, std::nullopt, 0.0};
      const bool last_in_epoch = bi + 1 == seq.size();
      const bool stop = cfg.max_iterations && run.iterations >= cfg.max_iterations;
      const bool due = cfg.eval_every ? run.iterations % cfg.eval_every == 0 : last_in_epoch;
      if (test_data && (due || stop)) row.test_accuracy = evaluate(net, *test_data);
      row.wall_ms = elapsed_ms();
      run.log.push_back(row);
      if (stop) {
        run.wall_ms = elapsed_ms();
        return run;
      }
    }
    run.epochs_completed = epoch;
  }
  run.wall_ms = elapsed_ms();
  return run;
}

struct TrainResult {
  Network network;
  TrainRun run;
};

inline TrainResult train(const NetworkSpec& spec, const Dataset& train_data, const Dataset* test_data,
                         const TrainConfig& cfg, const StepObserver& observer = {}) {
  Network net(spec, cfg.mode, cfg.seed);
  TrainRun run = train(net, train_data, test_data, cfg, observer);
  return {std::move(net), std::move(run)};
}

/// CSV with header "iteration,epoch,loss,test_accuracy,wall_ms". Losses and
/// accuracies are written with 17 significant digits. An absent accuracy is
/// an empty field; wall_ms is left empty when include_wall is false so that
/// reruns of a deterministic job produce identical bytes.
inline void write_metrics_csv(std::ostream& out, const TrainRun& run, bool include_wall) {
  out << "iteration,epoch,loss,test_accuracy,wall_ms\n";
  std::ostringstream line;
  for (const MetricRow& r : run.log) {
    line.str("");
    line.precision(17);
    line << r.iteration << ',' << r.epoch << ',' << r.loss << ',';
    if (r.test_accuracy) line << *r.test_accuracy;
    line << ',';
    if (include_wall) {
      line.precision(6);
      line << std::fixed << r.wall_ms << std::defaultfloat;
    }
    out << line.str() << '\n';
  }
}

}  // namespace rank1
