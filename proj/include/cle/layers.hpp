#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cle/convlstm.hpp"
#include "cle/ops.hpp"

namespace cle {

enum class LayerKind { ConvLstm, Conv2d, BatchNorm, Activation, Add, GlobalAvgPool, Dropout, Softmax };

const char* to_string(LayerKind kind);

/// Declarative description of one layer. Input channel counts are filled in
/// by shape propagation when the network is built.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv2d;
  std::string name;
  ConvSpec conv;  // ConvLstm and Conv2d
  ReturnMode return_mode = ReturnMode::Full;
  double alpha = 0.3;  // LeakyReLU slope
  double rate = 0.0;   // dropout
  bool peephole = false;

  std::size_t filters() const { return conv.out_channels; }
};

/// A stage of a hand-wired network. Layers cache what their backward pass
/// needs when run with keep_cache, and accumulate parameter gradients into the
/// grad slots of their parameter tensors.
template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  virtual LayerKind kind() const = 0;
  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) = 0;
  /// Returns the gradient with respect to the layer input (empty when the
  /// input gradient was not requested).
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad) = 0;
  virtual void collect_parameters(std::vector<ParamRef<T>>& /*out*/) {}
  virtual void collect_buffers(std::vector<ParamRef<T>>& /*out*/) {}
  virtual void reset_state() {}
  virtual void clear_cache() {}

  const std::string& name() const { return name_; }
  void set_input_grad(bool on) { want_input_grad_ = on; }

 protected:
  bool want_input_grad_ = true;

 private:
  std::string name_;
};

template <typename T>
class ConvLstmLayer final : public Layer<T> {
 public:
  /// A Last-mode layer emits [B, H', W', C] so the 2D layers downstream can consume it.
  ConvLstmLayer(std::string name, ConvLstmParams<T> params, ReturnMode mode, bool stateful);

  LayerKind kind() const override { return LayerKind::ConvLstm; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad) override;
  void collect_parameters(std::vector<ParamRef<T>>& out) override;
  void reset_state() override { state_ = {}; }
  void clear_cache() override { cache_ = {}; }

  const ConvLstmParams<T>& params() const { return params_; }
  ConvLstmParams<T>& params() { return params_; }
  const ConvLstmState<T>& state() const { return state_; }
  bool stateful() const { return stateful_; }

 private:
  ConvLstmParams<T> params_;
  ReturnMode mode_;
  bool stateful_;
  ConvLstmState<T> state_;
  SequenceCache<T> cache_;
};

template <typename T>
class Conv2dLayer final : public Layer<T> {
 public:
  Conv2dLayer(std::string name, const ConvSpec& spec, Rng& rng);

  LayerKind kind() const override { return LayerKind::Conv2d; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad) override;
  void collect_parameters(std::vector<ParamRef<T>>& out) override;
  void clear_cache() override { input_ = {}; }

  BasicTensor<T>& kernel() { return kernel_; }
  BasicTensor<T>& bias() { return bias_; }

 private:
  ConvSpec spec_;
  BasicTensor<T> kernel_;
  BasicTensor<T> bias_;
  BasicTensor<T> input_;
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  BatchNormLayer(std::string name, std::size_t channels);

  LayerKind kind() const override { return LayerKind::BatchNorm; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad) override;
  void collect_parameters(std::vector<ParamRef<T>>& out) override;
  void collect_buffers(std::vector<ParamRef<T>>& out) override;
  void clear_cache() override { cache_ = {}; }

  BatchNormState<T>& state() { return state_; }

 private:
  BatchNormState<T> state_;
  BatchNormCache<T> cache_;
};

template <typename T>
class LeakyReluLayer final : public Layer<T> {
 public:
  LeakyReluLayer(std::string name, double alpha) : Layer<T>(std::move(name)), alpha_(alpha) {}

  LayerKind kind() const override { return LayerKind::Activation; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad) override;
  void clear_cache() override { input_ = {}; }

 private:
  double alpha_;
  BasicTensor<T> input_;
};

template <typename T>
class DropoutLayer final : public Layer<T> {
 public:
  DropoutLayer(std::string name, double rate) : Layer<T>(std::move(name)), rate_(rate) {}

  LayerKind kind() const override { return LayerKind::Dropout; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad) override;
  void clear_cache() override { mask_.clear(); }

  /// Seed for the next TRAIN-mode mask.
  void set_seed(std::uint64_t seed) { seed_ = seed; }

 private:
  double rate_;
  std::uint64_t seed_ = 0;
  std::vector<T> mask_;
};

template <typename T>
class GlobalAvgPoolLayer final : public Layer<T> {
 public:
  using Layer<T>::Layer;

  LayerKind kind() const override { return LayerKind::GlobalAvgPool; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad) override;

 private:
  Shape input_shape_;
};

}  // namespace cle
