#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cle/layers.hpp"

namespace cle {

enum class Architecture { Stateless, Stateful };

const char* to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

using Metadata = std::map<std::string, std::string>;

/// Hyper-parameters of either architecture. The factories give the published
/// layouts at 64x64; `scaled_*` are the narrow 16x16 variants used for
/// desk-scale experiments.
struct ModelConfig {
  Architecture arch = Architecture::Stateless;
  std::size_t num_classes = 60;
  std::size_t frames = 30;
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<std::size_t> main_filters{32, 32, 128, 256};
  std::vector<std::size_t> support_filters{8, 16};
  std::size_t decision_filters = 128;
  // VALID reproduces the published tables; SAME lets the head run on grids
  // too small for an unpadded 3x3.
  Padding decision_padding = Padding::Valid;
  double dropout = 0.0;
  double leaky_alpha = 0.3;
  bool peephole = false;

  static ModelConfig stateless(std::size_t num_classes = 60);
  static ModelConfig stateful(std::size_t num_classes = 60);
  static ModelConfig scaled_stateless(std::size_t num_classes);
  static ModelConfig scaled_stateful(std::size_t num_classes);

  void validate() const;
  Shape input_shape(std::size_t batch) const { return {batch, frames, height, width, 1}; }

  /// Flat key=value form ("model.*" keys) used in checkpoints.
  Metadata to_metadata() const;
  static ModelConfig from_metadata(const Metadata& meta);
  bool operator==(const ModelConfig&) const = default;
};

struct NetworkSpec {
  Architecture arch = Architecture::Stateless;
  std::size_t num_classes = 0;
  Shape input;  // [T, H, W, 1]
  std::vector<LayerSpec> main;
  std::vector<LayerSpec> support;  // empty for the stateful network
  std::vector<LayerSpec> head;     // after the fusion point (or after main)
};

NetworkSpec build_spec(const ModelConfig& config);

/// One row of a symbolic shape trace. `output` excludes the batch axis, as in
/// a layer summary table; rows for shape-preserving layers repeat the input.
struct ShapeRow {
  std::string branch;  // "main", "support", "head"
  std::string layer;
  LayerKind kind;
  std::size_t kernel = 0, stride = 0;
  Shape output;
};

std::vector<ShapeRow> trace_shapes(const NetworkSpec& spec);

/// Trainable scalar count of a spec, computed without building weights.
std::size_t count_parameters(const NetworkSpec& spec, bool peephole = false);

/// Executable network. Owns its layers; not copyable.
template <typename T>
class Network {
 public:
  Network(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Raw class scores [B, K]. With keep_cache the activations needed by
  /// backward() are retained.
  BasicTensor<T> forward_logits(const BasicTensor<T>& x, Mode mode, bool keep_cache = false);
  /// Class probabilities [B, K]; rows sum to one.
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  /// Accumulates parameter gradients from dLoss/dlogits.
  void backward(const BasicTensor<T>& grad_logits);

  std::vector<ParamRef<T>> parameters();
  std::vector<ParamRef<T>> buffers();
  std::size_t parameter_count();
  void zero_grad();
  void clear_cache();

  /// Drops every carried recurrent state (stateful network).
  void reset_state();
  void set_dropout_seed(std::uint64_t seed);

  std::vector<Layer<T>*> layers();

 private:
  using Stack = std::vector<std::unique_ptr<Layer<T>>>;

  BasicTensor<T> run(Stack& stack, BasicTensor<T> x, Mode mode, bool keep_cache);
  BasicTensor<T> back(Stack& stack, BasicTensor<T> g);

  ModelConfig config_;
  Stack main_, support_, head_;
  Shape head_input_shape_;
};

using Model = Network<float>;

}  // namespace cle
