#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace cle {

/// Declarative learning-rate schedule.
struct ScheduleSpec {
  enum class Kind { Constant, Cyclical, Step, Plateau, RangeTest, Piecewise };
  Kind kind = Kind::Constant;

  double lr = 1e-3;  // Constant
  // Cyclical: triangle starting at min_lr, reaching max_lr after half_cycle epochs
  double min_lr = 0.0, max_lr = 0.0, half_cycle = 3.0;
  std::vector<std::pair<std::size_t, double>> steps;  // Step: (first epoch, lr)
  // Plateau: halve (factor) after `patience` epochs without a new best val accuracy
  double initial_lr = 0.0, factor = 0.5;
  std::size_t patience = 4;
  // RangeTest: geometric ramp by iteration
  double lr_start = 1e-6, lr_end = 1e-1;
  std::size_t total_iters = 100;
  // Piecewise: consecutive phases [start, start of next); the last ends at end_epoch
  std::vector<std::pair<std::size_t, ScheduleSpec>> phases;

  // Exclusive upper bound on epochs; 0 leaves the schedule open-ended.
  std::size_t end_epoch = 0;

  static ScheduleSpec constant(double lr);
  static ScheduleSpec cyclical(double min_lr, double max_lr, double half_cycle = 3.0);
  static ScheduleSpec step_table(std::vector<std::pair<std::size_t, double>> steps);
  static ScheduleSpec plateau(double initial_lr, std::size_t patience = 4, double factor = 0.5);
  static ScheduleSpec range_test(double start, double end, std::size_t iters);

  /// 48 epochs of cyclical/constant phases, then plateau halving from 2e-4 up to epoch 75.
  static ScheduleSpec paper_stateless();
  /// Step table for 25 epochs.
  static ScheduleSpec paper_stateful();

  void validate() const;
};

const char* to_string(ScheduleSpec::Kind k);

class ScheduleDomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Plateau bookkeeping; `lr` is zero until the plateau phase begins.
struct PlateauState {
  double lr = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t wait = 0;

  /// Records one epoch's validation accuracy and returns the learning rate
  /// for the next epoch.
  double update(double val_accuracy, std::size_t patience, double factor);
};

/// Pure replay of plateau halving over a validation-accuracy history.
double plateau_update(double initial_lr, const std::vector<double>& history, std::size_t patience = 4,
                      double factor = 0.5);

/// Learning rate at (epoch, iteration within the epoch). Cyclical phases move
/// linearly per iteration; `iters_per_epoch` sets the resolution. A Plateau
/// phase returns `plateau->lr` once started, otherwise its initial rate.
double lr_at(const ScheduleSpec& s, std::size_t epoch, std::size_t iter = 0, std::size_t iters_per_epoch = 1,
             const PlateauState* plateau = nullptr);

/// The phase active at `epoch` (the spec itself unless it is Piecewise).
const ScheduleSpec& active_phase(const ScheduleSpec& s, std::size_t epoch);

// ---------------------------------------------------------------------------

struct RangeTestConfig {
  double lr_start = 1e-6;
  double lr_end = 1e-1;
  std::size_t iters = 100;
  double smoothing = 0.98;
  double stop_factor = 4.0;
};

struct RangeTestRow {
  std::size_t iter = 0;
  double lr = 0.0, smoothed_loss = 0.0, raw_loss = 0.0;
};

/// The loss blew up before enough iterations to draw any conclusion.
class RangeTestDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kRangeTestMinIters = 10;

/// Calls train_step(lr) with a geometric ramp and records the bias-corrected
/// exponential moving average of its losses. Stops once the smoothed loss
/// exceeds stop_factor x the best seen.
std::vector<RangeTestRow> lr_range_test(const std::function<double(double)>& train_step,
                                        const RangeTestConfig& cfg);

void write_range_csv(const std::vector<RangeTestRow>& rows, const std::filesystem::path& path);

}  // namespace cle
