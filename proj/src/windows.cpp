#include "cle/windows.hpp"

#include <algorithm>
#include <cstring>
#include <map>

namespace cle {

std::size_t max_window_start(std::size_t length, std::size_t d) {
  if (length < d) return 0;
  if (length < 2 * d) return length - d;
  return length - 2 * d + 1;
}

std::vector<std::size_t> window_from_start(std::size_t length, std::size_t d, std::size_t j) {
  if (length == 0 || d == 0) throw std::invalid_argument("window needs a non-empty video and d >= 1");
  if (j > max_window_start(length, d)) {
    throw std::out_of_range("window start " + std::to_string(j) + " too late for a " +
                            std::to_string(length) + "-frame video");
  }
  std::vector<std::size_t> idx(d);
  if (length < d) {
    for (std::size_t k = 0; k < d; ++k) idx[k] = std::min(k, length - 1);
  } else if (length < 2 * d) {
    for (std::size_t k = 0; k < d; ++k) idx[k] = j + k;
  } else {
    for (std::size_t k = 0; k < d; ++k) idx[k] = j + 2 * k;
  }
  return idx;
}

std::vector<std::size_t> select_window_stateless(std::size_t length, std::size_t d, Rng& rng) {
  const auto hi = static_cast<std::int64_t>(max_window_start(length, d));
  return window_from_start(length, d, static_cast<std::size_t>(uniform_int(rng, 0, hi)));
}

std::vector<std::size_t> centre_window(std::size_t length, std::size_t d) {
  return window_from_start(length, d, max_window_start(length, d) / 2);
}

BinSchedule BinSchedule::defaults() {
  BinSchedule s;
  s.edges = {32, 40, 48, 56, 64, 72, 80, 88, 96, 104, 112, 128, 144, 160, 176, 208};
  return s;
}

void BinSchedule::validate() const {
  if (edges.empty()) throw std::invalid_argument("bin schedule has no edges");
  if (clip_len == 0) throw std::invalid_argument("clip length must be positive");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i] == 0 || edges[i] % clip_len != 0) {
      throw std::invalid_argument("bin edge " + std::to_string(edges[i]) + " is not a positive multiple of " +
                                  std::to_string(clip_len));
    }
    if (i > 0 && edges[i] <= edges[i - 1]) throw std::invalid_argument("bin edges must increase");
  }
}

std::size_t assign_bin(std::size_t length, const BinSchedule& schedule) {
  schedule.validate();
  if (length == 0) throw std::invalid_argument("video length must be positive");
  std::size_t out = schedule.edges.front();
  for (auto e : schedule.edges) {
    if (e <= length) out = e;
  }
  return out;
}

std::vector<std::size_t> resample_indices(std::size_t length, std::size_t target) {
  if (length == 0 || target == 0) throw std::invalid_argument("resample needs positive lengths");
  std::vector<std::size_t> idx(target);
  if (length < target) {
    for (std::size_t i = 0; i < target; ++i) idx[i] = std::min(i, length - 1);
  } else if (target == 1) {
    idx[0] = 0;
  } else {
    const std::size_t num = length - 1, den = target - 1;
    // round(i * num / den), halves rounded up, in exact integer arithmetic
    for (std::size_t i = 0; i < target; ++i) idx[i] = (2 * i * num + den) / (2 * den);
  }
  return idx;
}

namespace {

void copy_frames(const PreparedVideo& v, const std::vector<std::size_t>& idx, float* out) {
  const std::size_t fs = v.size * v.size;
  for (std::size_t k = 0; k < idx.size(); ++k) std::memcpy(out + k * fs, v.frame(idx[k]), fs * sizeof(float));
}

std::size_t frame_side(const Dataset& data, const std::vector<std::size_t>& videos) {
  const std::size_t s = data.videos.at(videos.at(0)).size;
  for (auto i : videos) {
    if (data.videos.at(i).size != s) throw ShapeError("videos of one batch differ in frame size");
  }
  return s;
}

}  // namespace

ClipBatch stateless_batch(const Dataset& data, const std::vector<std::size_t>& videos, std::size_t d,
                          Rng* rng) {
  if (videos.empty()) throw std::invalid_argument("empty batch");
  const std::size_t s = frame_side(data, videos);
  ClipBatch b;
  b.clips = Tensor({videos.size(), d, s, s, 1});
  b.videos = videos;
  b.reset_before.assign(videos.size(), true);
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const PreparedVideo& v = data.videos[videos[i]];
    const auto idx = rng ? select_window_stateless(v.length, d, *rng) : centre_window(v.length, d);
    copy_frames(v, idx, b.clips.data() + i * d * s * s);
    b.labels.push_back(v.label);
  }
  return b;
}

std::vector<BatchGroup> plan_stateful_groups(const Dataset& data, const std::vector<std::size_t>& videos,
                                             std::size_t batch, const BinSchedule& schedule, Rng* rng) {
  if (videos.empty()) throw std::invalid_argument("no videos to schedule");
  if (batch == 0) throw std::invalid_argument("batch size must be positive");
  std::map<std::size_t, std::vector<std::size_t>> bins;
  for (auto i : videos) bins[assign_bin(data.videos.at(i).length, schedule)].push_back(i);
  std::vector<BatchGroup> groups;
  for (auto& [reduced, members] : bins) {
    if (rng) shuffle(members, *rng);
    for (std::size_t start = 0; start < members.size(); start += batch) {
      BatchGroup g;
      g.reduced_length = reduced;
      const std::size_t end = std::min(members.size(), start + batch);
      g.videos.assign(members.begin() + static_cast<std::ptrdiff_t>(start),
                      members.begin() + static_cast<std::ptrdiff_t>(end));
      while (rng && g.videos.size() < batch) {
        const auto k = uniform_int(*rng, 0, static_cast<std::int64_t>(members.size()) - 1);
        g.videos.push_back(members[static_cast<std::size_t>(k)]);
      }
      groups.push_back(std::move(g));
    }
  }
  if (rng) shuffle(groups, *rng);
  return groups;
}

std::vector<ClipBatch> make_stateful_schedule(const std::vector<BatchGroup>& groups,
                                              const Dataset& data, const BinSchedule& schedule) {
  if (groups.empty()) throw std::invalid_argument("empty stateful plan");
  std::vector<ClipBatch> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const BatchGroup& grp = groups[g];
    if (grp.reduced_length % schedule.clip_len != 0) {
      throw std::invalid_argument("reduced length is not a multiple of the clip length");
    }
    const std::size_t T = grp.reduced_length / schedule.clip_len;
    std::vector<int> labels;
    for (auto i : grp.videos) labels.push_back(data.videos.at(i).label);
    for (std::size_t t = 1; t <= T; ++t) {
      ClipBatch b;
      b.labels = labels;
      b.reset_before.assign(grp.videos.size(), t == 1);
      b.update_weights = t > T / 2;
      b.t = t;
      b.T = T;
      b.group = g;
      b.videos = grp.videos;
      b.reduced_length = grp.reduced_length;
      out.push_back(std::move(b));
    }
  }
  return out;
}

void assemble_stateful_clips(ClipBatch& b, const Dataset& data, std::size_t clip_len) {
  const std::size_t s = frame_side(data, b.videos);
  b.clips = Tensor({b.videos.size(), clip_len, s, s, 1});
  const std::size_t first = (b.t - 1) * clip_len;
  for (std::size_t i = 0; i < b.videos.size(); ++i) {
    const PreparedVideo& v = data.videos[b.videos[i]];
    const auto all = resample_indices(v.length, b.reduced_length);
    if (first + clip_len > all.size()) throw std::out_of_range("window beyond the reduced video");
    const std::vector<std::size_t> idx(all.begin() + static_cast<std::ptrdiff_t>(first),
                                       all.begin() + static_cast<std::ptrdiff_t>(first + clip_len));
    copy_frames(v, idx, b.clips.data() + i * clip_len * s * s);
  }
}

}  // namespace cle
