#include "cle/layers.hpp"

#include <cmath>

namespace cle {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::ConvLstm: return "ConvLSTM";
    case LayerKind::Conv2d: return "Conv2D";
    case LayerKind::BatchNorm: return "BatchNormalization";
    case LayerKind::Activation: return "LeakyReLU";
    case LayerKind::Add: return "Add";
    case LayerKind::GlobalAvgPool: return "GlobalAveragePooling2D";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::Softmax: return "Softmax";
  }
  return "?";
}

namespace {

template <typename T>
void accumulate(BasicTensor<T>& param, const BasicTensor<T>& grad) {
  auto g = param.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
ConvLstmLayer<T>::ConvLstmLayer(std::string name, ConvLstmParams<T> params, ReturnMode mode,
                                bool stateful)
    : Layer<T>(std::move(name)), params_(std::move(params)), mode_(mode), stateful_(stateful) {}

template <typename T>
BasicTensor<T> ConvLstmLayer<T>::forward(const BasicTensor<T>& x, Mode /*mode*/, bool keep_cache) {
  if (x.rank() != 5) {
    throw ShapeError(this->name() + " expects [B,T,H,W,C], got " + shape_to_string(x.shape()));
  }
  const ConvSpec s = params_.input_gate_spec();
  const std::size_t b = x.dim(0);
  const std::size_t oh = s.out_height(x.dim(2)), ow = s.out_width(x.dim(3));
  ConvLstmState<T> init;
  if (stateful_ && !state_.empty()) {
    if (state_.hidden.shape() != Shape{b, oh, ow, params_.hidden_channels()}) {
      throw ShapeError(this->name() + ": carried state " + shape_to_string(state_.hidden.shape()) +
                       " does not fit batch of " + std::to_string(b) + "; reset the state first");
    }
    // values carry across windows, gradients do not
    init = detach_state(state_);
  } else {
    init = ConvLstmState<T>::zeros(b, oh, ow, params_.hidden_channels());
  }
  SequenceOutput<T> out =
      run_sequence(x, init, params_, mode_, keep_cache ? &cache_ : static_cast<SequenceCache<T>*>(nullptr));
  if (stateful_) state_ = std::move(out.final_state);
  if (mode_ == ReturnMode::Last) {
    const Shape& s4 = out.outputs.shape();
    return std::move(out.outputs).reshaped({s4[0], s4[2], s4[3], s4[4]});
  }
  return std::move(out.outputs);
}

template <typename T>
BasicTensor<T> ConvLstmLayer<T>::backward(const BasicTensor<T>& grad) {
  ConvLstmGrads<T> g =
      mode_ == ReturnMode::Last && grad.rank() == 4
          ? convlstm_backward(grad.reshaped({grad.dim(0), 1, grad.dim(1), grad.dim(2), grad.dim(3)}),
                              cache_, params_, this->want_input_grad_)
          : convlstm_backward(grad, cache_, params_, this->want_input_grad_);
  accumulate(params_.input_kernel, g.input_kernel);
  accumulate(params_.recurrent_kernel, g.recurrent_kernel);
  accumulate(params_.bias, g.bias);
  if (params_.has_peephole()) accumulate(params_.peephole, g.peephole);
  return std::move(g.inputs);
}

template <typename T>
void ConvLstmLayer<T>::collect_parameters(std::vector<ParamRef<T>>& out) {
  out.push_back({this->name() + ".input_kernel", &params_.input_kernel});
  out.push_back({this->name() + ".recurrent_kernel", &params_.recurrent_kernel});
  out.push_back({this->name() + ".bias", &params_.bias});
  if (params_.has_peephole()) out.push_back({this->name() + ".peephole", &params_.peephole});
}

// ---------------------------------------------------------------------------

template <typename T>
Conv2dLayer<T>::Conv2dLayer(std::string name, const ConvSpec& spec, Rng& rng)
    : Layer<T>(std::move(name)), spec_(spec), kernel_(spec.kernel_shape()), bias_({spec.out_channels}) {
  spec_.validate();
  const double fan_in = static_cast<double>(spec.kernel_h * spec.kernel_w * spec.in_channels);
  const double limit = std::sqrt(3.0 / fan_in);
  for (auto& v : kernel_.values()) v = static_cast<T>(uniform(rng, -limit, limit));
}

template <typename T>
BasicTensor<T> Conv2dLayer<T>::forward(const BasicTensor<T>& x, Mode /*mode*/, bool keep_cache) {
  BasicTensor<T> y = conv2d(x, kernel_, bias_, spec_);
  if (keep_cache) input_ = x;
  return y;
}

template <typename T>
BasicTensor<T> Conv2dLayer<T>::backward(const BasicTensor<T>& grad) {
  if (input_.empty()) throw std::logic_error(this->name() + ": backward without cached forward");
  const std::size_t n = input_.dim(0), h = input_.dim(1), w = input_.dim(2);
  BasicTensor<T> gx;
  if (this->want_input_grad_) gx = BasicTensor<T>(input_.shape());
  if (grad.shape() != Shape{n, spec_.out_height(h), spec_.out_width(w), spec_.out_channels}) {
    throw ShapeError(this->name() + ": upstream gradient " + shape_to_string(grad.shape()));
  }
  detail::conv2d_backward_raw(input_.data(), n, h, w, kernel_.data(), spec_, grad.data(),
                              this->want_input_grad_ ? gx.data() : nullptr, kernel_.grad().data(),
                              bias_.grad().data());
  return gx;
}

template <typename T>
void Conv2dLayer<T>::collect_parameters(std::vector<ParamRef<T>>& out) {
  out.push_back({this->name() + ".kernel", &kernel_});
  out.push_back({this->name() + ".bias", &bias_});
}

// ---------------------------------------------------------------------------

template <typename T>
BatchNormLayer<T>::BatchNormLayer(std::string name, std::size_t channels)
    : Layer<T>(std::move(name)), state_(channels) {}

template <typename T>
BasicTensor<T> BatchNormLayer<T>::forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) {
  return batch_norm(x, state_, mode, keep_cache ? &cache_ : static_cast<BatchNormCache<T>*>(nullptr));
}

template <typename T>
BasicTensor<T> BatchNormLayer<T>::backward(const BasicTensor<T>& grad) {
  if (cache_.normalized.empty()) throw std::logic_error(this->name() + ": backward without cache");
  BatchNormGrads<T> g = batch_norm_backward(grad, state_, cache_);
  accumulate(state_.gamma, g.grad_gamma);
  accumulate(state_.beta, g.grad_beta);
  return std::move(g.grad_input);
}

template <typename T>
void BatchNormLayer<T>::collect_parameters(std::vector<ParamRef<T>>& out) {
  out.push_back({this->name() + ".gamma", &state_.gamma});
  out.push_back({this->name() + ".beta", &state_.beta});
}

template <typename T>
void BatchNormLayer<T>::collect_buffers(std::vector<ParamRef<T>>& out) {
  out.push_back({this->name() + ".running_mean", &state_.running_mean});
  out.push_back({this->name() + ".running_var", &state_.running_var});
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> LeakyReluLayer<T>::forward(const BasicTensor<T>& x, Mode /*mode*/, bool keep_cache) {
  if (keep_cache) input_ = x;
  return activation(x, Activation::leaky_relu(alpha_));
}

template <typename T>
BasicTensor<T> LeakyReluLayer<T>::backward(const BasicTensor<T>& grad) {
  BasicTensor<T> g = grad;
  const T a = static_cast<T>(alpha_);
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= input_[i] >= T(0) ? T(1) : a;
  return g;
}

template <typename T>
BasicTensor<T> DropoutLayer<T>::forward(const BasicTensor<T>& x, Mode mode, bool keep_cache) {
  std::vector<T> mask;
  BasicTensor<T> y = dropout(x, rate_, seed_, mode, keep_cache ? &mask : nullptr);
  if (keep_cache) mask_ = std::move(mask);
  return y;
}

template <typename T>
BasicTensor<T> DropoutLayer<T>::backward(const BasicTensor<T>& grad) {
  BasicTensor<T> g = grad;
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= mask_[i];
  return g;
}

template <typename T>
BasicTensor<T> GlobalAvgPoolLayer<T>::forward(const BasicTensor<T>& x, Mode /*mode*/,
                                              bool /*keep_cache*/) {
  input_shape_ = x.shape();
  return global_avg_pool(x);
}

template <typename T>
BasicTensor<T> GlobalAvgPoolLayer<T>::backward(const BasicTensor<T>& grad) {
  return global_avg_pool_backward(grad, input_shape_);
}

template class ConvLstmLayer<float>;
template class ConvLstmLayer<double>;
template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class BatchNormLayer<float>;
template class BatchNormLayer<double>;
template class LeakyReluLayer<float>;
template class LeakyReluLayer<double>;
template class DropoutLayer<float>;
template class DropoutLayer<double>;
template class GlobalAvgPoolLayer<float>;
template class GlobalAvgPoolLayer<double>;

}  // namespace cle
