#pragma once

#include <filesystem>

#include "cle/manifest.hpp"

namespace cle {

/// Moving-hand depth clips. A static "body" region keeps the foreground box
/// the same for every class; a closer Gaussian "hand" moves over it in two
/// strokes (dir1 then dir2). Classes enumerate direction pairs, then stroke
/// length, then hand size (up to 64 classes).
///
/// With late_cue the first floor(L/2) frames are a label-independent random
/// walk and both strokes happen in the second half.
struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t videos_per_class = 50;
  std::size_t len_min = 40;
  std::size_t len_max = 80;
  bool late_cue = false;
  std::uint64_t seed = 7;
  std::size_t frame_size = 32;

  void validate() const;
};

inline constexpr std::size_t kMaxSyntheticClasses = 64;

/// Pure function of (spec, label, index).
VideoSample synthesize_video(const SyntheticSpec& spec, int label, std::size_t index);

/// Writes videos/cLL_IIII.dvid plus manifest.csv under out_dir.
DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace cle
