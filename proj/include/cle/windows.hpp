#pragma once

#include <vector>

#include "cle/manifest.hpp"
#include "cle/random.hpp"

namespace cle {

// ---------------------------------------------------------------------------
// Stateless windows

/// Frame indices of a d-frame window starting at j. Videos shorter than d
/// repeat their last frame; videos of at least 2d frames are read at stride 2.
std::vector<std::size_t> window_from_start(std::size_t length, std::size_t d, std::size_t j);

/// Largest legal start for window_from_start.
std::size_t max_window_start(std::size_t length, std::size_t d);

std::vector<std::size_t> select_window_stateless(std::size_t length, std::size_t d, Rng& rng);
std::vector<std::size_t> centre_window(std::size_t length, std::size_t d);

// ---------------------------------------------------------------------------
// Length bins

struct BinSchedule {
  std::vector<std::size_t> edges;
  std::size_t clip_len = 8;

  static BinSchedule defaults();
  void validate() const;
  std::size_t cap() const { return edges.back(); }
};

/// Reduced length of a video of `length` frames.
std::size_t assign_bin(std::size_t length, const BinSchedule& schedule);

/// Subsamples with round(i (L-1) / (target-1)) or pads by repeating the
/// final frame.
std::vector<std::size_t> resample_indices(std::size_t length, std::size_t target);

// ---------------------------------------------------------------------------
// Network inputs

/// One network input. Stateless batches have t = T = 1.
struct ClipBatch {
  Tensor clips;  // [B, d, S, S, 1]; empty until assembled
  std::vector<int> labels;
  std::vector<bool> reset_before;
  bool update_weights = true;
  std::size_t t = 1, T = 1;
  std::size_t group = 0;               // batch group id within a stream
  std::vector<std::size_t> videos;     // dataset indices per batch row
  std::size_t reduced_length = 0;      // stateful only
};

ClipBatch stateless_batch(const Dataset& data, const std::vector<std::size_t>& videos, std::size_t d,
                          Rng* rng);  // rng == nullptr selects centre windows

/// Same-length videos processed together across every window of their bin.
struct BatchGroup {
  std::size_t reduced_length = 0;
  std::vector<std::size_t> videos;
};

/// Groups `videos` by bin, shuffles (when training) and packs batches of
/// `batch`. Training pads a short last batch by resampling its bin; evaluation
/// keeps it narrow. Group order is shuffled across bins when training.
std::vector<BatchGroup> plan_stateful_groups(const Dataset& data, const std::vector<std::size_t>& videos,
                                             std::size_t batch, const BinSchedule& schedule, Rng* rng);

/// The ordered ClipBatch headers of a plan (no pixels yet).
std::vector<ClipBatch> make_stateful_schedule(const std::vector<BatchGroup>& groups,
                                              const Dataset& data, const BinSchedule& schedule);

/// Fills clips for window `b.t` of its group.
void assemble_stateful_clips(ClipBatch& b, const Dataset& data, std::size_t clip_len);

}  // namespace cle
