#include "cle/video.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cle {

std::string encode_dvid(const VideoSample& v) {
  if (v.width > 0xffff || v.height > 0xffff || v.length > 0xffffffffu) {
    throw std::invalid_argument("video extents do not fit the DVID header");
  }
  if (v.depth.size() != v.length * v.height * v.width) {
    throw std::invalid_argument("video buffer does not match its extents");
  }
  std::string out = "DVID";
  put_u16(out, kDvidVersion);
  put_u16(out, static_cast<std::uint16_t>(v.width));
  put_u16(out, static_cast<std::uint16_t>(v.height));
  put_u16(out, 0);
  put_u32(out, static_cast<std::uint32_t>(v.length));
  put_u32(out, 0);
  out.reserve(out.size() + 2 * v.depth.size());
  for (auto d : v.depth) put_u16(out, d);
  return out;
}

VideoSample decode_dvid(const std::string& bytes) {
  ByteReader r(bytes, "DVID");
  const std::string magic = r.bytes(4);
  if (magic != "DVID") throw FormatError("DVID: bad magic at offset 0");
  const auto version = r.u16();
  if (version != kDvidVersion) {
    throw FormatError("DVID: unsupported version " + std::to_string(version) + " at offset 4");
  }
  const std::size_t w = r.u16(), h = r.u16();
  r.u16();
  const std::size_t l = r.u32();
  r.u32();
  if (w == 0 || h == 0 || l == 0) throw FormatError("DVID: zero extent in header at offset 6");
  const std::size_t per_frame = w * h;
  if (l > std::numeric_limits<std::size_t>::max() / (2 * per_frame)) {
    throw FormatError("DVID: extent overflow in header");
  }
  if (r.remaining() != 2 * per_frame * l) {
    throw FormatError("DVID: expected " + std::to_string(2 * per_frame * l) +
                      " payload bytes at offset " + std::to_string(r.offset()) + ", found " +
                      std::to_string(r.remaining()));
  }
  VideoSample v(l, h, w);
  for (auto& d : v.depth) d = r.u16();
  return v;
}

void store_video(const VideoSample& v, const std::filesystem::path& path) {
  write_file_atomic(path, encode_dvid(v));
}

VideoSample load_video(const std::filesystem::path& path) {
  try {
    return decode_dvid(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

CropBox foreground_box(const VideoSample& v, double margin) {
  std::size_t r0 = v.height, r1 = 0, c0 = v.width, c1 = 0;
  for (std::size_t t = 0; t < v.length; ++t) {
    const std::uint16_t* f = v.frame(t);
    for (std::size_t r = 0; r < v.height; ++r) {
      for (std::size_t c = 0; c < v.width; ++c) {
        if (f[r * v.width + c] == 0) continue;
        r0 = std::min(r0, r);
        r1 = std::max(r1, r + 1);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c + 1);
      }
    }
  }
  if (r1 == 0) throw std::invalid_argument("video has no foreground pixels to crop");
  const auto grow_r = static_cast<std::size_t>(std::ceil(margin * static_cast<double>(r1 - r0)));
  const auto grow_c = static_cast<std::size_t>(std::ceil(margin * static_cast<double>(c1 - c0)));
  CropBox b;
  b.row0 = r0 > grow_r ? r0 - grow_r : 0;
  b.col0 = c0 > grow_c ? c0 - grow_c : 0;
  b.row1 = std::min(v.height, r1 + grow_r);
  b.col1 = std::min(v.width, c1 + grow_c);
  return b;
}

VideoSample crop_foreground(const VideoSample& v, double margin) {
  const CropBox b = foreground_box(v, margin);
  VideoSample out(v.length, b.rows(), b.cols());
  out.label = v.label;
  out.subject = v.subject;
  out.camera = v.camera;
  for (std::size_t t = 0; t < v.length; ++t) {
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const std::uint16_t* src = v.frame(t) + (b.row0 + r) * v.width + b.col0;
      std::copy(src, src + b.cols(), out.frame(t) + r * b.cols());
    }
  }
  return out;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return t;
}

void resize_into(const std::uint16_t* frame, std::size_t height, std::size_t width, std::size_t size,
                 double max_depth, float* out) {
  const auto rt = taps(height, size), ct = taps(width, size);
  const double inv = 1.0 / max_depth;
  for (std::size_t r = 0; r < size; ++r) {
    const std::uint16_t* a = frame + rt[r].i0 * width;
    const std::uint16_t* b = frame + rt[r].i1 * width;
    const double wr = rt[r].w1;
    for (std::size_t c = 0; c < size; ++c) {
      const Tap& tc = ct[c];
      const double top = a[tc.i0] + tc.w1 * (a[tc.i1] - a[tc.i0]);
      const double bot = b[tc.i0] + tc.w1 * (b[tc.i1] - b[tc.i0]);
      out[r * size + c] = static_cast<float>((top + wr * (bot - top)) * inv);
    }
  }
}

}  // namespace

Tensor preprocess_frame(const std::uint16_t* frame, std::size_t height, std::size_t width,
                        std::size_t size, double max_depth) {
  if (height == 0 || width == 0 || size == 0) throw ShapeError("empty frame");
  if (!(max_depth > 0.0)) throw std::invalid_argument("max_depth must be positive");
  Tensor out({size, size, 1});
  resize_into(frame, height, width, size, max_depth, out.data());
  return out;
}

PreparedVideo prepare_video(const VideoSample& v, const PreprocessConfig& cfg) {
  const VideoSample c = crop_foreground(v, cfg.margin);
  PreparedVideo p;
  p.length = c.length;
  p.size = cfg.size;
  p.label = v.label;
  p.pixels.resize(c.length * cfg.size * cfg.size);
  for (std::size_t t = 0; t < c.length; ++t) {
    resize_into(c.frame(t), c.height, c.width, cfg.size, cfg.max_depth,
                p.pixels.data() + t * cfg.size * cfg.size);
  }
  return p;
}

}  // namespace cle
