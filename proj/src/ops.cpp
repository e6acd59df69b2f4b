#include "cle/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace cle {

const char* to_string(Padding p) { return p == Padding::Same ? "same" : "valid"; }

std::size_t conv_out_extent(std::size_t n, std::size_t k, std::size_t s, Padding padding) {
  if (k == 0 || s == 0) throw ShapeError("kernel and stride must be positive");
  if (padding == Padding::Same) return (n + s - 1) / s;
  if (n < k) {
    throw ShapeError("degenerate output: extent " + std::to_string(n) + " is smaller than kernel " +
                     std::to_string(k) + " under VALID padding");
  }
  return (n - k) / s + 1;
}

std::size_t conv_pad_before(std::size_t n, std::size_t k, std::size_t s, Padding padding) {
  if (padding == Padding::Valid) return 0;
  const std::size_t out = conv_out_extent(n, k, s, padding);
  const std::size_t needed = (out - 1) * s + k;
  const std::size_t total = needed > n ? needed - n : 0;
  return total / 2;
}

void ConvSpec::validate() const {
  if (kernel_h == 0 || kernel_w == 0) throw ShapeError("conv kernel extents must be positive");
  if (stride_h == 0 || stride_w == 0) throw ShapeError("conv strides must be positive");
  if (in_channels == 0 || out_channels == 0) throw ShapeError("conv channels must be positive");
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Upper bound on scalars held by one im2col buffer; larger batches are chunked.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

struct Geometry {
  std::size_t h, w, oh, ow, pad_t, pad_l;
  std::size_t patch;  // kh * kw * cin
};

Geometry geometry(std::size_t height, std::size_t width, const ConvSpec& spec) {
  Geometry g{};
  g.h = height;
  g.w = width;
  g.oh = spec.out_height(height);
  g.ow = spec.out_width(width);
  g.pad_t = conv_pad_before(height, spec.kernel_h, spec.stride_h, spec.padding);
  g.pad_l = conv_pad_before(width, spec.kernel_w, spec.stride_w, spec.padding);
  g.patch = spec.kernel_h * spec.kernel_w * spec.in_channels;
  return g;
}

bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride_h == 1 && spec.stride_w == 1;
}

template <typename T>
void im2col(const T* input, std::size_t count, const Geometry& g, const ConvSpec& spec, T* col) {
  const std::size_t cin = spec.in_channels;
  T* dst = col;
  for (std::size_t n = 0; n < count; ++n) {
    const T* img = input + n * g.h * g.w * cin;
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride_h + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad_t);
          for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride_w + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad_l);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                ix >= static_cast<std::ptrdiff_t>(g.w)) {
              std::fill(dst, dst + cin, T(0));
            } else {
              const T* src = img + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * cin;
              std::copy(src, src + cin, dst);
            }
            dst += cin;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t count, const Geometry& g, const ConvSpec& spec,
                T* grad_input) {
  const std::size_t cin = spec.in_channels;
  const T* src = col;
  for (std::size_t n = 0; n < count; ++n) {
    T* img = grad_input + n * g.h * g.w * cin;
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride_h + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad_t);
          for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride_w + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad_l);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                ix < static_cast<std::ptrdiff_t>(g.w)) {
              T* dst = img + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * cin;
              for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
            }
            src += cin;
          }
        }
      }
    }
  }
}

std::size_t chunk_size(std::size_t batch, std::size_t rows_per_image, std::size_t patch) {
  const std::size_t per_image = std::max<std::size_t>(rows_per_image * patch, 1);
  return std::clamp<std::size_t>(kColBudget / per_image, 1, batch);
}

void check_conv_input(const Shape& in, const ConvSpec& spec) {
  if (in.size() != 4) {
    throw ShapeError("conv2d expects a rank-4 NHWC input, got " + shape_to_string(in));
  }
  if (in[3] != spec.in_channels) {
    throw ShapeError("conv2d channel axis (3) has extent " + std::to_string(in[3]) +
                     ", expected " + std::to_string(spec.in_channels));
  }
}

}  // namespace

namespace detail {

template <typename T>
void conv2d_forward_raw(const T* input, std::size_t batch, std::size_t height, std::size_t width,
                        const T* kernel, const T* bias, const ConvSpec& spec, T* out,
                        bool accumulate) {
  const Geometry g = geometry(height, width, spec);
  const std::size_t cout = spec.out_channels;
  const std::size_t rows_per_image = g.oh * g.ow;
  Eigen::Map<const MatR<T>> ker(kernel, static_cast<Eigen::Index>(g.patch),
                                static_cast<Eigen::Index>(cout));

  auto emit = [&](const T* col, std::size_t rows, T* dst) {
    Eigen::Map<const MatR<T>> c(col, static_cast<Eigen::Index>(rows),
                                static_cast<Eigen::Index>(g.patch));
    Eigen::Map<MatR<T>> o(dst, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
    if (accumulate) {
      o.noalias() += c * ker;
    } else {
      o.noalias() = c * ker;
    }
    if (bias != nullptr) {
      Eigen::Map<const RowVec<T>> b(bias, static_cast<Eigen::Index>(cout));
      o.rowwise() += b;
    }
  };

  if (is_pointwise(spec)) {
    emit(input, batch * rows_per_image, out);
    return;
  }
  const std::size_t chunk = chunk_size(batch, rows_per_image, g.patch);
  AlignedVector<T> col(chunk * rows_per_image * g.patch);
  for (std::size_t n0 = 0; n0 < batch; n0 += chunk) {
    const std::size_t count = std::min(chunk, batch - n0);
    im2col(input + n0 * height * width * spec.in_channels, count, g, spec, col.data());
    emit(col.data(), count * rows_per_image, out + n0 * rows_per_image * cout);
  }
}

template <typename T>
void conv2d_backward_raw(const T* input, std::size_t batch, std::size_t height, std::size_t width,
                         const T* kernel, const ConvSpec& spec, const T* upstream, T* grad_input,
                         T* grad_kernel, T* grad_bias) {
  const Geometry g = geometry(height, width, spec);
  const std::size_t cout = spec.out_channels;
  const std::size_t rows_per_image = g.oh * g.ow;
  const auto patch = static_cast<Eigen::Index>(g.patch);
  const auto cols = static_cast<Eigen::Index>(cout);

  if (grad_bias != nullptr) {
    Eigen::Map<const MatR<T>> up(upstream, static_cast<Eigen::Index>(batch * rows_per_image), cols);
    Eigen::Map<RowVec<T>> gb(grad_bias, cols);
    gb += up.colwise().sum();
  }
  if (grad_input == nullptr && grad_kernel == nullptr) return;

  Eigen::Map<const MatR<T>> ker(kernel, patch, cols);
  if (is_pointwise(spec)) {
    const auto rows = static_cast<Eigen::Index>(batch * rows_per_image);
    Eigen::Map<const MatR<T>> up(upstream, rows, cols);
    if (grad_kernel != nullptr) {
      Eigen::Map<const MatR<T>> x(input, rows, patch);
      Eigen::Map<MatR<T>> gk(grad_kernel, patch, cols);
      gk.noalias() += x.transpose() * up;
    }
    if (grad_input != nullptr) {
      Eigen::Map<MatR<T>> gx(grad_input, rows, patch);
      gx.noalias() += up * ker.transpose();
    }
    return;
  }

  const std::size_t chunk = chunk_size(batch, rows_per_image, g.patch);
  AlignedVector<T> col(chunk * rows_per_image * g.patch);
  MatR<T> grad_col;
  for (std::size_t n0 = 0; n0 < batch; n0 += chunk) {
    const std::size_t count = std::min(chunk, batch - n0);
    const auto rows = static_cast<Eigen::Index>(count * rows_per_image);
    Eigen::Map<const MatR<T>> up(upstream + n0 * rows_per_image * cout, rows, cols);
    if (grad_kernel != nullptr) {
      im2col(input + n0 * height * width * spec.in_channels, count, g, spec, col.data());
      Eigen::Map<const MatR<T>> c(col.data(), rows, patch);
      Eigen::Map<MatR<T>> gk(grad_kernel, patch, cols);
      gk.noalias() += c.transpose() * up;
    }
    if (grad_input != nullptr) {
      grad_col.noalias() = up * ker.transpose();
      col2im_add(grad_col.data(), count, g, spec,
                 grad_input + n0 * height * width * spec.in_channels);
    }
  }
}

template void conv2d_forward_raw(const float*, std::size_t, std::size_t, std::size_t, const float*,
                                 const float*, const ConvSpec&, float*, bool);
template void conv2d_forward_raw(const double*, std::size_t, std::size_t, std::size_t,
                                 const double*, const double*, const ConvSpec&, double*, bool);
template void conv2d_backward_raw(const float*, std::size_t, std::size_t, std::size_t,
                                  const float*, const ConvSpec&, const float*, float*, float*,
                                  float*);
template void conv2d_backward_raw(const double*, std::size_t, std::size_t, std::size_t,
                                  const double*, const ConvSpec&, const double*, double*, double*,
                                  double*);

}  // namespace detail

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, const ConvSpec& spec) {
  spec.validate();
  check_conv_input(input.shape(), spec);
  if (kernel.shape() != spec.kernel_shape()) {
    throw ShapeError("conv2d kernel shape " + shape_to_string(kernel.shape()) + ", expected " +
                     shape_to_string(spec.kernel_shape()));
  }
  if (bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d bias shape " + shape_to_string(bias.shape()) + ", expected (" +
                     std::to_string(spec.out_channels) + ")");
  }
  const std::size_t n = input.dim(0);
  const std::size_t h = input.dim(1);
  const std::size_t w = input.dim(2);
  BasicTensor<T> out({n, spec.out_height(h), spec.out_width(w), spec.out_channels});
  detail::conv2d_forward_raw(input.data(), n, h, w, kernel.data(), bias.data(), spec, out.data(),
                             false);
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& upstream, const BasicTensor<T>& input,
                               const BasicTensor<T>& kernel, const ConvSpec& spec) {
  check_conv_input(input.shape(), spec);
  const std::size_t n = input.dim(0);
  const std::size_t h = input.dim(1);
  const std::size_t w = input.dim(2);
  const Shape expected{n, spec.out_height(h), spec.out_width(w), spec.out_channels};
  if (upstream.shape() != expected) {
    throw ShapeError("conv2d_backward upstream shape " + shape_to_string(upstream.shape()) +
                     ", expected " + shape_to_string(expected));
  }
  Conv2dGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(kernel.shape()),
                   BasicTensor<T>({spec.out_channels})};
  detail::conv2d_backward_raw(input.data(), n, h, w, kernel.data(), spec, upstream.data(),
                              g.grad_input.data(), g.grad_kernel.data(), g.grad_bias.data());
  return g;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t resolve_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("invalid axis " + std::to_string(axis) + " for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisWalk {
  std::size_t outer, extent, inner;
};

AxisWalk axis_walk(const Shape& shape, std::size_t axis) {
  AxisWalk w{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) w.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) w.inner *= shape[i];
  return w;
}

template <typename T>
void softmax_inplace(BasicTensor<T>& y, std::size_t axis) {
  const AxisWalk w = axis_walk(y.shape(), axis);
  for (std::size_t o = 0; o < w.outer; ++o) {
    for (std::size_t in = 0; in < w.inner; ++in) {
      T* base = y.data() + o * w.extent * w.inner + in;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < w.extent; ++k) m = std::max(m, base[k * w.inner]);
      T sum = 0;
      for (std::size_t k = 0; k < w.extent; ++k) {
        base[k * w.inner] = std::exp(base[k * w.inner] - m);
        sum += base[k * w.inner];
      }
      for (std::size_t k = 0; k < w.extent; ++k) base[k * w.inner] /= sum;
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, const Activation& act) {
  BasicTensor<T> y = x;
  switch (act.kind) {
    case Activation::Kind::LeakyRelu: {
      if (act.alpha < 0) throw std::invalid_argument("leaky relu slope must be >= 0");
      const T a = static_cast<T>(act.alpha);
      for (auto& v : y.values()) v = v >= T(0) ? v : a * v;
      break;
    }
    case Activation::Kind::Sigmoid:
      for (auto& v : y.values()) v = sigmoid(v);
      break;
    case Activation::Kind::Tanh:
      for (auto& v : y.values()) v = std::tanh(v);
      break;
    case Activation::Kind::Softmax:
      softmax_inplace(y, resolve_axis(act.axis, x.rank()));
      break;
  }
  return y;
}

template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& upstream, const BasicTensor<T>& input,
                                   const BasicTensor<T>& output, const Activation& act) {
  if (upstream.shape() != output.shape()) {
    throw ShapeError("activation_backward: upstream " + shape_to_string(upstream.shape()) +
                     " vs output " + shape_to_string(output.shape()));
  }
  BasicTensor<T> g = upstream;
  switch (act.kind) {
    case Activation::Kind::LeakyRelu: {
      const T a = static_cast<T>(act.alpha);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= input[i] >= T(0) ? T(1) : a;
      break;
    }
    case Activation::Kind::Sigmoid:
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= output[i] * (T(1) - output[i]);
      break;
    case Activation::Kind::Tanh:
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= T(1) - output[i] * output[i];
      break;
    case Activation::Kind::Softmax: {
      const AxisWalk w = axis_walk(output.shape(), resolve_axis(act.axis, output.rank()));
      for (std::size_t o = 0; o < w.outer; ++o) {
        for (std::size_t in = 0; in < w.inner; ++in) {
          const std::size_t base = o * w.extent * w.inner + in;
          T dot = 0;
          for (std::size_t k = 0; k < w.extent; ++k) {
            dot += upstream[base + k * w.inner] * output[base + k * w.inner];
          }
          for (std::size_t k = 0; k < w.extent; ++k) {
            const std::size_t i = base + k * w.inner;
            g[i] = output[i] * (upstream[i] - dot);
          }
        }
      }
      break;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, BatchNormState<T>& state, Mode mode,
                          BatchNormCache<T>* cache) {
  const std::size_t c = state.channels();
  if (x.rank() < 2 || x.shape().back() != c) {
    throw ShapeError("batch_norm channel axis of " + shape_to_string(x.shape()) +
                     " does not match " + std::to_string(c) + " channels");
  }
  const std::size_t count = x.numel() / c;
  if (count == 0) throw ShapeError("batch_norm over zero elements");

  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::Train) {
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    for (std::size_t r = 0; r < count; ++r) {
      const T* row = x.data() + r * c;
      for (std::size_t k = 0; k < c; ++k) sum[k] += row[k];
    }
    for (std::size_t k = 0; k < c; ++k) mean[k] = static_cast<T>(sum[k] / count);
    for (std::size_t r = 0; r < count; ++r) {
      const T* row = x.data() + r * c;
      for (std::size_t k = 0; k < c; ++k) {
        const double d = static_cast<double>(row[k]) - mean[k];
        sq[k] += d * d;
      }
    }
    const T mom = static_cast<T>(state.momentum);
    for (std::size_t k = 0; k < c; ++k) {
      const double var = sq[k] / count;
      inv_std[k] = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
      state.running_mean[k] = mom * state.running_mean[k] + (T(1) - mom) * mean[k];
      state.running_var[k] = mom * state.running_var[k] + (T(1) - mom) * static_cast<T>(var);
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      mean[k] = state.running_mean[k];
      inv_std[k] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[k]) +
                                                  state.epsilon));
    }
  }

  BasicTensor<T> normalized(x.shape());
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < count; ++r) {
    const T* in = x.data() + r * c;
    T* nrm = normalized.data() + r * c;
    T* out = y.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) {
      nrm[k] = (in[k] - mean[k]) * inv_std[k];
      out[k] = state.gamma[k] * nrm[k] + state.beta[k];
    }
  }
  if (cache != nullptr) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>& upstream,
                                      const BatchNormState<T>& state,
                                      const BatchNormCache<T>& cache) {
  const std::size_t c = state.channels();
  if (upstream.shape() != cache.normalized.shape()) {
    throw ShapeError("batch_norm_backward upstream " + shape_to_string(upstream.shape()) +
                     " vs cached " + shape_to_string(cache.normalized.shape()));
  }
  const std::size_t count = upstream.numel() / c;
  BatchNormGrads<T> g{BasicTensor<T>(upstream.shape()), BasicTensor<T>({c}),
                      BasicTensor<T>({c})};
  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  for (std::size_t r = 0; r < count; ++r) {
    const T* dy = upstream.data() + r * c;
    const T* xh = cache.normalized.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) {
      sum_dy[k] += dy[k];
      sum_dy_xhat[k] += static_cast<double>(dy[k]) * xh[k];
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    g.grad_beta[k] = static_cast<T>(sum_dy[k]);
    g.grad_gamma[k] = static_cast<T>(sum_dy_xhat[k]);
  }
  if (cache.mode == Mode::Train) {
    std::vector<T> mean_dy(c), mean_dy_xhat(c);
    for (std::size_t k = 0; k < c; ++k) {
      mean_dy[k] = static_cast<T>(sum_dy[k] / count);
      mean_dy_xhat[k] = static_cast<T>(sum_dy_xhat[k] / count);
    }
    for (std::size_t r = 0; r < count; ++r) {
      const T* dy = upstream.data() + r * c;
      const T* xh = cache.normalized.data() + r * c;
      T* dx = g.grad_input.data() + r * c;
      for (std::size_t k = 0; k < c; ++k) {
        dx[k] = state.gamma[k] * cache.inv_std[k] * (dy[k] - mean_dy[k] - xh[k] * mean_dy_xhat[k]);
      }
    }
  } else {
    for (std::size_t r = 0; r < count; ++r) {
      const T* dy = upstream.data() + r * c;
      T* dx = g.grad_input.data() + r * c;
      for (std::size_t k = 0; k < c; ++k) dx[k] = state.gamma[k] * cache.inv_std[k] * dy[k];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  if (x.rank() != 4) {
    throw ShapeError("global_avg_pool expects [B,H,W,C], got " + shape_to_string(x.shape()));
  }
  const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  BasicTensor<T> y({b, 1, 1, c});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t k = 0; k < c; ++k) {
      double s = 0.0;
      for (std::size_t p = 0; p < hw; ++p) s += x[(n * hw + p) * c + k];
      y[n * c + k] = static_cast<T>(s / hw);
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& upstream, const Shape& input_shape) {
  if (input_shape.size() != 4) throw ShapeError("global_avg_pool_backward expects rank-4 input");
  const std::size_t b = input_shape[0], hw = input_shape[1] * input_shape[2], c = input_shape[3];
  if (upstream.shape() != Shape{b, 1, 1, c}) {
    throw ShapeError("global_avg_pool_backward upstream " + shape_to_string(upstream.shape()));
  }
  BasicTensor<T> g(input_shape);
  const T scale = T(1) / static_cast<T>(hw);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < c; ++k) g[(n * hw + p) * c + k] = upstream[n * c + k] * scale;
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, std::uint64_t seed, Mode mode,
                       std::vector<T>* mask) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (mode == Mode::Infer || rate == 0.0) {
    if (mask != nullptr) mask->assign(x.numel(), T(1));
    return x;
  }
  std::mt19937_64 rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  BasicTensor<T> y = x;
  if (mask != nullptr) mask->resize(x.numel());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const T m = u < rate ? T(0) : keep_scale;
    y[i] *= m;
    if (mask != nullptr) (*mask)[i] = m;
  }
  return y;
}

template <typename T>
CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                      const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy expects [B,K], got " + shape_to_string(logits.shape()));
  }
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) throw ShapeError("label count does not match batch");
  CrossEntropy<T> out;
  out.probabilities = activation(logits, Activation::softmax(1));
  out.grad_logits = out.probabilities;
  double total = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(k) +
                              ")");
    }
    // log-sum-exp form keeps the loss finite for saturated logits
    const T* row = logits.data() + n * k;
    const T m = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j] - m));
    total += std::log(s) - static_cast<double>(row[y] - m);
    out.grad_logits[n * k + static_cast<std::size_t>(y)] -= T(1);
  }
  for (auto& g : out.grad_logits.values()) g /= static_cast<T>(b);
  out.loss = total / static_cast<double>(b);
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  BasicTensor<T> y = a;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b[i];
  return y;
}

#define CLE_INSTANTIATE_OPS(T)                                                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>&, const ConvSpec&);                        \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                          const BasicTensor<T>&, const ConvSpec&);               \
  template BasicTensor<T> activation(const BasicTensor<T>&, const Activation&);                 \
  template BasicTensor<T> activation_backward(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                              const BasicTensor<T>&, const Activation&);         \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, BatchNormState<T>&, Mode,           \
                                     BatchNormCache<T>*);                                        \
  template BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>&,                         \
                                                 const BatchNormState<T>&,                       \
                                                 const BatchNormCache<T>&);                      \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                               \
  template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const Shape&);        \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, std::uint64_t, Mode,           \
                                  std::vector<T>*);                                              \
  template CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>&, const std::vector<int>&); \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);

CLE_INSTANTIATE_OPS(float)
CLE_INSTANTIATE_OPS(double)

}  // namespace cle
