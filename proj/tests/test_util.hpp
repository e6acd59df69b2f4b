#pragma once

#include <filesystem>
#include <string>

#include "cle/ops.hpp"
#include "cle/random.hpp"

namespace cle::testing {

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  BasicTensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(scale * uniform(rng, -1.0, 1.0));
  return t;
}

// Direct sliding-window cross-correlation, written independently of the
// library's im2col path. Zero padding with the odd pixel after.
template <typename T>
BasicTensor<T> naive_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& k, const BasicTensor<T>* bias,
                            std::size_t sh, std::size_t sw, bool same) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), O = k.dim(3);
  std::size_t oh, ow, pt = 0, pl = 0;
  if (same) {
    oh = (H + sh - 1) / sh;
    ow = (W + sw - 1) / sw;
    const long th = std::max<long>(0, static_cast<long>((oh - 1) * sh + kh) - static_cast<long>(H));
    const long tw = std::max<long>(0, static_cast<long>((ow - 1) * sw + kw) - static_cast<long>(W));
    pt = static_cast<std::size_t>(th / 2);
    pl = static_cast<std::size_t>(tw / 2);
  } else {
    oh = (H - kh) / sh + 1;
    ow = (W - kw) / sw + 1;
  }
  BasicTensor<T> y({B, oh, ow, O});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t o = 0; o < O; ++o) {
          double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t c = 0; c < kw; ++c) {
              const long r = static_cast<long>(i * sh + a) - static_cast<long>(pt);
              const long q = static_cast<long>(j * sw + c) - static_cast<long>(pl);
              if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
              for (std::size_t ci = 0; ci < C; ++ci) {
                acc += static_cast<double>(x.at({b, static_cast<std::size_t>(r), static_cast<std::size_t>(q), ci})) *
                       static_cast<double>(k.at({a, c, ci, o}));
              }
            }
          y.at({b, i, j, o}) = static_cast<T>(acc);
        }
  return y;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cle_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace cle::testing
