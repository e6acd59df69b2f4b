#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>

#include "cle/metrics.hpp"
#include "cle/network.hpp"
#include "cle/optim.hpp"
#include "cle/schedule.hpp"
#include "cle/windows.hpp"

namespace cle {

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0, train_acc = 0.0;
  double val_loss = 0.0, val_acc = 0.0;
  double seconds = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 0;  // 0: run to the schedule's end
  std::size_t batch_size = 12;
  std::size_t clip_len = 8;  // stateful windows
  BinSchedule bins = BinSchedule::defaults();
  ScheduleSpec schedule = ScheduleSpec::paper_stateless();
  std::uint64_t seed = 1;
  double weight_exponent = 3.0;
  bool carry_state = true;  // false resets the stateful network before every window
  std::filesystem::path out_dir;  // log.csv, best.ckpt, last.ckpt; empty writes nothing
  bool resume = false;
  std::ostream* progress = nullptr;
  /// Called after each epoch; returning false stops training.
  std::function<bool(const EpochRecord&)> on_epoch;

  static TrainConfig stateless_defaults();
  static TrainConfig stateful_defaults();
};

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_val_acc = -1.0;
  std::size_t best_epoch = 0;
  std::uint64_t adam_steps = 0;
  std::size_t warmup_windows = 0;  // stateful windows run forward-only
  std::size_t update_windows = 0;
};

/// Dispatches on the network architecture.
TrainResult train(Model& net, const Dataset& train, const Dataset& val, const TrainConfig& cfg);
TrainResult train_stateless(Model& net, const Dataset& train, const Dataset& val, const TrainConfig& cfg);
TrainResult train_stateful(Model& net, const Dataset& train, const Dataset& val, const TrainConfig& cfg);

/// One optimisation step per call at the given rate, returning the batch loss;
/// the closure owns its Adam state and batch stream. Stateful streams run
/// warm-up windows forward-only and return at the next update window.
std::function<double(double)> make_range_step(Model& net, const Dataset& train, const TrainConfig& cfg);

struct EvalConfig {
  std::size_t batch_size = 12;
  std::size_t clip_len = 8;
  BinSchedule bins = BinSchedule::defaults();
  double weight_exponent = 3.0;
  bool carry_state = true;

  static EvalConfig from(const TrainConfig& t);
};

/// Inference-mode metrics. Stateless: one centre window per video. Stateful:
/// every window of the binned video, aggregated with window_weight.
MetricsReport evaluate(Model& net, const Dataset& data, const EvalConfig& cfg);

/// Class probabilities for one video, using the same protocol as evaluate().
std::vector<double> predict_video(Model& net, const PreparedVideo& video, const EvalConfig& cfg);

/// Rejects stateful windows consumed out of order (t must run 1, 2, ..., T
/// within a batch group).
class WindowOrderGuard {
 public:
  void accept(const ClipBatch& b);

 private:
  bool open_ = false;
  std::size_t group_ = 0, t_ = 0, T_ = 0;
};

std::string log_csv(const std::vector<EpochRecord>& log);
std::vector<EpochRecord> read_log_csv(const std::filesystem::path& path);

}  // namespace cle
