#pragma once

#include <string>
#include <vector>

#include "cle/trainer.hpp"

namespace cle {

struct LatencyStats {
  double mean = 0.0, p50 = 0.0, p95 = 0.0;  // seconds per video
  std::size_t count = 0;
  double mean_frames = 0.0;  // source frames per timed video
  double fps = 0.0;          // mean_frames / mean
};

/// Nearest-rank percentile of unsorted samples, q in (0, 100].
double percentile(std::vector<double> samples, double q);

LatencyStats latency_stats(const std::vector<double>& seconds, double mean_frames);

/// Wall-clock time of predict_video for every video, `repetitions` times.
/// The first `warmup` predictions are run but not timed.
LatencyStats bench_inference(Model& net, const Dataset& videos, std::size_t repetitions,
                             const EvalConfig& cfg = {}, std::size_t warmup = 3);

std::string latency_report(const std::string& name, const LatencyStats& s);

}  // namespace cle
