#include "cle/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cle/io_util.hpp"

namespace cle {

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("no samples");
  if (!(q > 0.0 && q <= 100.0)) throw std::invalid_argument("percentile must be in (0, 100]");
  std::sort(samples.begin(), samples.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(samples.size())));
  return samples[std::max<std::size_t>(rank, 1) - 1];
}

LatencyStats latency_stats(const std::vector<double>& seconds, double mean_frames) {
  LatencyStats s;
  s.count = seconds.size();
  s.mean = std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(s.count);
  s.p50 = percentile(seconds, 50.0);
  s.p95 = percentile(seconds, 95.0);
  s.mean_frames = mean_frames;
  s.fps = s.mean > 0.0 ? mean_frames / s.mean : 0.0;
  return s;
}

LatencyStats bench_inference(Model& net, const Dataset& videos, std::size_t repetitions, const EvalConfig& cfg,
                             std::size_t warmup) {
  if (videos.size() == 0) throw std::invalid_argument("no videos to benchmark");
  if (repetitions == 0) throw std::invalid_argument("repetitions must be positive");
  for (std::size_t i = 0; i < warmup; ++i) predict_video(net, videos.videos[i % videos.size()], cfg);
  std::vector<double> times;
  double frames = 0.0;
  for (std::size_t r = 0; r < repetitions; ++r) {
    for (const auto& v : videos.videos) {
      const auto t0 = std::chrono::steady_clock::now();
      predict_video(net, v, cfg);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      frames += static_cast<double>(v.length);
    }
  }
  return latency_stats(times, frames / static_cast<double>(times.size()));
}

std::string latency_report(const std::string& name, const LatencyStats& s) {
  return name + ": mean " + format_double(s.mean) + " s, p50 " + format_double(s.p50) + " s, p95 " +
         format_double(s.p95) + " s, " + format_double(s.fps) + " frames/s over " + std::to_string(s.count) +
         " runs\n";
}

}  // namespace cle
