#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cle/tensor.hpp"

namespace cle {

enum class Padding { Same, Valid };
enum class Mode { Train, Infer };

const char* to_string(Padding p);

/// Output extent of a strided window along one axis. Throws ShapeError when
/// the result would be < 1.
std::size_t conv_out_extent(std::size_t n, std::size_t k, std::size_t s, Padding padding);

/// Zero rows/cols added before the first input element. SAME padding puts the
/// odd remainder after (bottom/right).
std::size_t conv_pad_before(std::size_t n, std::size_t k, std::size_t s, Padding padding);

struct ConvSpec {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  Padding padding = Padding::Valid;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  std::size_t out_height(std::size_t h) const {
    return conv_out_extent(h, kernel_h, stride_h, padding);
  }
  std::size_t out_width(std::size_t w) const {
    return conv_out_extent(w, kernel_w, stride_w, padding);
  }
  Shape kernel_shape() const { return {kernel_h, kernel_w, in_channels, out_channels}; }
  void validate() const;
  bool operator==(const ConvSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, NHWC, kernel [kh, kw, Cin, Cout])

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, const ConvSpec& spec);

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> grad_input;
  BasicTensor<T> grad_kernel;
  BasicTensor<T> grad_bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& upstream, const BasicTensor<T>& input,
                               const BasicTensor<T>& kernel, const ConvSpec& spec);

namespace detail {

// Raw kernels shared with the recurrent cell. `bias` may be null.
// When `accumulate` is set the result is added into `out`.
template <typename T>
void conv2d_forward_raw(const T* input, std::size_t batch, std::size_t height, std::size_t width,
                        const T* kernel, const T* bias, const ConvSpec& spec, T* out,
                        bool accumulate);

// Adds gradients into whichever of grad_input / grad_kernel / grad_bias is non-null.
template <typename T>
void conv2d_backward_raw(const T* input, std::size_t batch, std::size_t height, std::size_t width,
                         const T* kernel, const ConvSpec& spec, const T* upstream, T* grad_input,
                         T* grad_kernel, T* grad_bias);

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise activations

struct Activation {
  enum class Kind { LeakyRelu, Sigmoid, Tanh, Softmax };
  Kind kind = Kind::LeakyRelu;
  double alpha = 0.3;  // leaky slope
  int axis = -1;       // softmax axis, negative counts from the end

  static Activation leaky_relu(double alpha = 0.3) { return {Kind::LeakyRelu, alpha, -1}; }
  static Activation sigmoid() { return {Kind::Sigmoid, 0.0, -1}; }
  static Activation tanh() { return {Kind::Tanh, 0.0, -1}; }
  static Activation softmax(int axis = -1) { return {Kind::Softmax, 0.0, axis}; }
};

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, const Activation& act);

/// `input` and `output` are the forward pair; each kind reads whichever it needs.
template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& upstream, const BasicTensor<T>& input,
                                   const BasicTensor<T>& output, const Activation& act);

template <typename T>
inline T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// ---------------------------------------------------------------------------
// Batch normalization over every axis but the last (channels)

template <typename T>
struct BatchNormState {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;

  explicit BatchNormState(std::size_t channels = 1)
      : gamma({channels}, T(1)),
        beta({channels}, T(0)),
        running_mean({channels}, T(0)),
        running_var({channels}, T(1)) {}

  std::size_t channels() const { return gamma.numel(); }
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::Infer;
  BasicTensor<T> normalized;  // pre-affine
  std::vector<T> inv_std;
};

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, BatchNormState<T>& state, Mode mode,
                          BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> grad_input;
  BasicTensor<T> grad_gamma;
  BasicTensor<T> grad_beta;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>& upstream,
                                      const BatchNormState<T>& state,
                                      const BatchNormCache<T>& cache);

// ---------------------------------------------------------------------------
// Pooling, dropout, loss

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& upstream, const Shape& input_shape);

/// TRAIN: each scalar is zeroed with probability `rate`, survivors scaled by
/// 1/(1-rate). INFER: identity. The applied multiplier is written to `mask`.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, std::uint64_t seed, Mode mode,
                       std::vector<T>* mask = nullptr);

template <typename T>
struct CrossEntropy {
  double loss = 0.0;
  BasicTensor<T> grad_logits;
  BasicTensor<T> probabilities;
};

/// Mean over the batch of -log softmax(logits)[label]; gradient is (p - onehot)/B.
template <typename T>
CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                      const std::vector<int>& labels);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace cle
