#include "cle/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "cle/random.hpp"

namespace cle {

namespace {

struct Dir {
  double dr, dc;
};

constexpr Dir kRight{0, 1}, kLeft{0, -1}, kDown{1, 0}, kUp{-1, 0};

// The first four pairs are the 4-class set; the rest follow.
constexpr std::array<std::array<Dir, 2>, 16> kPairs{{
    {kRight, kDown}, {kRight, kUp}, {kLeft, kDown}, {kLeft, kUp},
    {kDown, kRight}, {kDown, kLeft}, {kUp, kRight}, {kUp, kLeft},
    {kRight, kLeft}, {kLeft, kRight}, {kDown, kUp}, {kUp, kDown},
    {kRight, kRight}, {kLeft, kLeft}, {kDown, kDown}, {kUp, kUp},
}};

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2 || num_classes > kMaxSyntheticClasses) {
    throw std::invalid_argument("synthetic classes must be in [2, 64]");
  }
  if (videos_per_class == 0) throw std::invalid_argument("videos per class must be positive");
  if (len_min < 2 || len_max < len_min) throw std::invalid_argument("bad length range");
  if (frame_size < 16 || frame_size > 4096) throw std::invalid_argument("frame size must be in [16, 4096]");
}

VideoSample synthesize_video(const SyntheticSpec& spec, int label, std::size_t index) {
  spec.validate();
  if (label < 0 || static_cast<std::size_t>(label) >= spec.num_classes) {
    throw std::out_of_range("label outside the synthetic class range");
  }
  const auto cls = static_cast<std::size_t>(label);
  const std::array<Dir, 2>& dirs = kPairs[cls % 16];
  const double S = static_cast<double>(spec.frame_size);
  const double stroke = S * ((cls / 16) % 2 == 0 ? 0.22 : 0.14);
  const double sigma = S * (cls / 32 == 0 ? 0.06 : 0.09);
  const double centre = (S - 1.0) / 2.0;
  const double wander = S * 0.06;

  // Everything drawn from `common` is shared by all classes at this index.
  Rng common(mix_seed(spec.seed, index, 0xc0ffee));
  Rng own(mix_seed(spec.seed, index, 0x10000 + cls));
  const auto L = static_cast<std::size_t>(uniform_int(
      common, static_cast<std::int64_t>(spec.len_min), static_cast<std::int64_t>(spec.len_max)));
  const auto body_depth = static_cast<double>(uniform_int(common, 2600, 3000));

  std::vector<double> pr(L), pc(L);
  std::size_t motion_start = 0;
  double r = centre, c = centre;
  if (spec.late_cue) {
    r += uniform(common, -wander, wander);
    c += uniform(common, -wander, wander);
    motion_start = L / 2;
    for (std::size_t t = 0; t < motion_start; ++t) {
      pr[t] = r;
      pc[t] = c;
      r = std::clamp(r + 0.4 * normal(common), centre - wander, centre + wander);
      c = std::clamp(c + 0.4 * normal(common), centre - wander, centre + wander);
    }
  } else {
    r += uniform(own, -wander, wander);
    c += uniform(own, -wander, wander);
  }
  const std::size_t motion = L - motion_start;
  const std::size_t half = motion / 2;
  for (std::size_t k = 0; k < motion; ++k) {
    // position after k frames of motion, piecewise linear over the two strokes
    double a1, a2;
    if (k < half) {
      a1 = half > 0 ? static_cast<double>(k) / static_cast<double>(half) : 1.0;
      a2 = 0.0;
    } else {
      a1 = 1.0;
      const std::size_t rest = motion - half;
      a2 = rest > 1 ? static_cast<double>(k - half) / static_cast<double>(rest - 1) : 1.0;
    }
    pr[motion_start + k] = r + stroke * (a1 * dirs[0].dr + a2 * dirs[1].dr);
    pc[motion_start + k] = c + stroke * (a1 * dirs[0].dc + a2 * dirs[1].dc);
  }

  const std::size_t n = spec.frame_size;
  const std::size_t b0 = std::max<std::size_t>(1, n / 32), b1 = n - b0;
  VideoSample v(L, n, n);
  v.label = label;
  v.subject = static_cast<int>(1 + index % 40);
  v.camera = static_cast<int>(1 + index % 3);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double dy = static_cast<double>(y) - pr[t], dx = static_cast<double>(x) - pc[t];
        const double g = std::exp(-(dy * dy + dx * dx) * inv2s2);
        double depth = (y >= b0 && y < b1 && x >= b0 && x < b1) ? body_depth : 0.0;
        if (g > 0.05) depth = 1000.0 + 800.0 * (1.0 - g);
        v.at(t, y, x) = static_cast<std::uint16_t>(std::lround(depth));
      }
    }
  }
  return v;
}

DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "videos");
  DatasetManifest m;
  m.root = out_dir;
  for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
    for (std::size_t i = 0; i < spec.videos_per_class; ++i) {
      const VideoSample v = synthesize_video(spec, static_cast<int>(cls), i);
      char name[64];
      std::snprintf(name, sizeof name, "videos/c%02zu_%04zu.dvid", cls, i);
      store_video(v, out_dir / name);
      m.records.push_back({name, v.label, v.subject, v.camera, v.length});
    }
  }
  write_manifest(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace cle
