#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cle/io_util.hpp"
#include "cle/tensor.hpp"

namespace cle {

/// Single-channel depth video, [length, height, width] row-major, in depth
/// units (millimetres). Zero marks masked background.
struct VideoSample {
  std::size_t length = 0, height = 0, width = 0;
  std::vector<std::uint16_t> depth;
  int label = 0;
  int subject = 0;
  int camera = 0;

  VideoSample() = default;
  VideoSample(std::size_t l, std::size_t h, std::size_t w)
      : length(l), height(h), width(w), depth(l * h * w, 0) {}

  std::size_t frame_size() const { return height * width; }
  const std::uint16_t* frame(std::size_t t) const { return depth.data() + t * frame_size(); }
  std::uint16_t* frame(std::size_t t) { return depth.data() + t * frame_size(); }
  std::uint16_t& at(std::size_t t, std::size_t r, std::size_t c) {
    return depth[(t * height + r) * width + c];
  }
};

// DVID container: "DVID", u16 version, u16 width, u16 height, 2 bytes of
// alignment padding, u32 frames, u32 reserved, then u16 LE samples.
inline constexpr std::uint16_t kDvidVersion = 1;
inline constexpr std::size_t kDvidHeaderBytes = 20;

std::string encode_dvid(const VideoSample& v);
VideoSample decode_dvid(const std::string& bytes);
void store_video(const VideoSample& v, const std::filesystem::path& path);
VideoSample load_video(const std::filesystem::path& path);

/// Half-open pixel rectangle.
struct CropBox {
  std::size_t row0 = 0, row1 = 0, col0 = 0, col1 = 0;
  std::size_t rows() const { return row1 - row0; }
  std::size_t cols() const { return col1 - col0; }
};

/// Union bounding box of nonzero pixels over all frames, grown by
/// ceil(margin * extent) on each side and clamped to the frame.
CropBox foreground_box(const VideoSample& v, double margin = 0.05);
VideoSample crop_foreground(const VideoSample& v, double margin = 0.05);

/// Bilinear (half-pixel centres) resize of one depth frame to size x size,
/// scaled by 1/max_depth. Returns [size, size, 1].
Tensor preprocess_frame(const std::uint16_t* frame, std::size_t height, std::size_t width,
                        std::size_t size = 64, double max_depth = 4500.0);

struct PreprocessConfig {
  std::size_t size = 64;
  double max_depth = 4500.0;
  double margin = 0.05;
};

/// Network-ready frames of one video: [length, size, size] floats.
struct PreparedVideo {
  std::size_t length = 0, size = 0;
  std::vector<float> pixels;
  int label = 0;

  const float* frame(std::size_t t) const { return pixels.data() + t * size * size; }
};

PreparedVideo prepare_video(const VideoSample& v, const PreprocessConfig& cfg);

}  // namespace cle
