#include "cle/network.hpp"

#include "cle/io_util.hpp"

namespace cle {

const char* to_string(Architecture a) {
  return a == Architecture::Stateless ? "stateless" : "stateful";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "stateless") return Architecture::Stateless;
  if (s == "stateful") return Architecture::Stateful;
  throw std::invalid_argument("unknown model '" + s + "' (expected stateless or stateful)");
}

ModelConfig ModelConfig::stateless(std::size_t num_classes) {
  ModelConfig c;
  c.num_classes = num_classes;
#ifdef CLE_PEEPHOLE
  c.peephole = true;
#endif
  return c;
}

ModelConfig ModelConfig::stateful(std::size_t num_classes) {
  ModelConfig c = stateless(num_classes);
  c.arch = Architecture::Stateful;
  c.frames = 8;
  c.main_filters = {32, 64, 128, 256};
  c.support_filters.clear();
  c.dropout = 0.25;
  return c;
}

ModelConfig ModelConfig::scaled_stateless(std::size_t num_classes) {
  ModelConfig c = stateless(num_classes);
  c.height = c.width = 16;
  c.main_filters = {8, 8, 16, 32};
  c.support_filters = {4, 8};
  c.decision_filters = 32;
  c.decision_padding = Padding::Same;
  return c;
}

ModelConfig ModelConfig::scaled_stateful(std::size_t num_classes) {
  ModelConfig c = stateful(num_classes);
  c.height = c.width = 16;
  c.main_filters = {8, 16, 16, 32};
  c.decision_filters = 32;
  c.decision_padding = Padding::Same;
  return c;
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (frames < 1 || height < 1 || width < 1) throw std::invalid_argument("empty input shape");
  if (main_filters.size() != 4) throw std::invalid_argument("main branch needs 4 filter counts");
  if (arch == Architecture::Stateless && support_filters.size() != 2) {
    throw std::invalid_argument("support branch needs 2 filter counts");
  }
  if (arch == Architecture::Stateful && !support_filters.empty()) {
    throw std::invalid_argument("the stateful network has no support branch");
  }
  for (auto f : main_filters) if (f == 0) throw std::invalid_argument("zero filter count");
  for (auto f : support_filters) if (f == 0) throw std::invalid_argument("zero filter count");
  if (decision_filters == 0) throw std::invalid_argument("zero filter count");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0,1)");
  if (leaky_alpha < 0.0) throw std::invalid_argument("leaky alpha must be >= 0");
}

Metadata ModelConfig::to_metadata() const {
  return {
      {"model.arch", to_string(arch)},
      {"model.num_classes", std::to_string(num_classes)},
      {"model.frames", std::to_string(frames)},
      {"model.height", std::to_string(height)},
      {"model.width", std::to_string(width)},
      {"model.main_filters", join_sizes(main_filters)},
      {"model.support_filters", join_sizes(support_filters)},
      {"model.decision_filters", std::to_string(decision_filters)},
      {"model.decision_padding", to_string(decision_padding)},
      {"model.dropout", format_double(dropout)},
      {"model.leaky_alpha", format_double(leaky_alpha)},
      {"model.peephole", peephole ? "1" : "0"},
  };
}

ModelConfig ModelConfig::from_metadata(const Metadata& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.arch = parse_architecture(get("model.arch"));
  c.num_classes = parse_u64(get("model.num_classes"));
  c.frames = parse_u64(get("model.frames"));
  c.height = parse_u64(get("model.height"));
  c.width = parse_u64(get("model.width"));
  c.main_filters = parse_size_list(get("model.main_filters"));
  c.support_filters = parse_size_list(get("model.support_filters"));
  c.decision_filters = parse_u64(get("model.decision_filters"));
  const std::string& pad = get("model.decision_padding");
  if (pad != "same" && pad != "valid") throw FormatError("bad model.decision_padding '" + pad + "'");
  c.decision_padding = pad == "same" ? Padding::Same : Padding::Valid;
  c.dropout = parse_double(get("model.dropout"));
  c.leaky_alpha = parse_double(get("model.leaky_alpha"));
  c.peephole = get("model.peephole") == "1";
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

namespace {

struct SpecBuilder {
  std::vector<LayerSpec>* out;
  std::size_t channels;
  double alpha;

  void convlstm(const std::string& name, std::size_t filters, std::size_t k, std::size_t s,
                Padding pad, ReturnMode mode, bool peephole) {
    LayerSpec l;
    l.kind = LayerKind::ConvLstm;
    l.name = name;
    l.conv = {k, k, s, s, pad, channels, filters};
    l.return_mode = mode;
    l.peephole = peephole;
    out->push_back(l);
    channels = filters;
  }
  void conv(const std::string& name, std::size_t filters, std::size_t k, std::size_t s, Padding pad) {
    LayerSpec l;
    l.kind = LayerKind::Conv2d;
    l.name = name;
    l.conv = {k, k, s, s, pad, channels, filters};
    out->push_back(l);
    channels = filters;
  }
  void simple(LayerKind kind, const std::string& name, double rate = 0.0) {
    LayerSpec l;
    l.kind = kind;
    l.name = name;
    l.conv.in_channels = l.conv.out_channels = channels;
    l.alpha = alpha;
    l.rate = rate;
    out->push_back(l);
  }
};

}  // namespace

NetworkSpec build_spec(const ModelConfig& c) {
  c.validate();
  NetworkSpec spec;
  spec.arch = c.arch;
  spec.num_classes = c.num_classes;
  spec.input = {c.frames, c.height, c.width, 1};
  const auto& f = c.main_filters;
  const std::size_t d = c.decision_filters;
  const bool pp = c.peephole;

  SpecBuilder m{&spec.main, 1, c.leaky_alpha};
  if (c.arch == Architecture::Stateless) {
    m.convlstm("convlstm1", f[0], 3, 1, Padding::Same, ReturnMode::Full, pp);
    m.simple(LayerKind::BatchNorm, "bn1");
    m.simple(LayerKind::Activation, "lrelu1");
    m.convlstm("convlstm2", f[1], 3, 2, Padding::Valid, ReturnMode::Full, pp);
    m.simple(LayerKind::BatchNorm, "bn2");
    m.simple(LayerKind::Activation, "lrelu2");
    m.convlstm("convlstm3", f[2], 3, 1, Padding::Same, ReturnMode::Full, pp);
    m.simple(LayerKind::BatchNorm, "bn3");
    m.simple(LayerKind::Activation, "lrelu3");
    m.convlstm("convlstm4", f[3], 3, 2, Padding::Valid, ReturnMode::Last, pp);
    m.simple(LayerKind::BatchNorm, "bn4");
    m.simple(LayerKind::Activation, "lrelu4");
    m.conv("conv_main", d, 3, 1, Padding::Valid);

    SpecBuilder s{&spec.support, 1, c.leaky_alpha};
    s.convlstm("support_convlstm1", c.support_filters[0], 7, 2, Padding::Valid, ReturnMode::Full, pp);
    s.simple(LayerKind::BatchNorm, "support_bn1");
    s.convlstm("support_convlstm2", c.support_filters[1], 5, 2, Padding::Valid, ReturnMode::Last, pp);
    s.simple(LayerKind::BatchNorm, "support_bn2");
    s.conv("support_conv", d, 1, 1, Padding::Valid);

    SpecBuilder h{&spec.head, d, c.leaky_alpha};
    h.simple(LayerKind::Add, "add");
    h.simple(LayerKind::Activation, "lrelu_add");
    h.conv("conv_decision", d, 3, 2, c.decision_padding);
    h.simple(LayerKind::BatchNorm, "bn_decision");
    h.simple(LayerKind::Activation, "lrelu_decision");
    h.conv("classifier", c.num_classes, 1, 1, Padding::Valid);
    h.simple(LayerKind::GlobalAvgPool, "gap");
    h.simple(LayerKind::Softmax, "softmax");
  } else {
    m.convlstm("convlstm1", f[0], 3, 1, Padding::Same, ReturnMode::Full, pp);
    m.simple(LayerKind::BatchNorm, "bn1");
    m.convlstm("convlstm2", f[1], 3, 2, Padding::Valid, ReturnMode::Full, pp);
    m.simple(LayerKind::BatchNorm, "bn2");
    m.convlstm("convlstm3", f[2], 3, 1, Padding::Same, ReturnMode::Full, pp);
    m.simple(LayerKind::BatchNorm, "bn3");
    m.convlstm("convlstm4", f[3], 3, 2, Padding::Valid, ReturnMode::Last, pp);
    m.simple(LayerKind::BatchNorm, "bn4");

    SpecBuilder h{&spec.head, f[3], c.leaky_alpha};
    if (c.dropout > 0.0) h.simple(LayerKind::Dropout, "dropout", c.dropout);
    h.conv("conv1", d, 3, 2, c.decision_padding);
    h.simple(LayerKind::BatchNorm, "bn5");
    h.simple(LayerKind::Activation, "lrelu5");
    h.conv("conv2", d, 3, 2, c.decision_padding);
    h.simple(LayerKind::BatchNorm, "bn6");
    h.simple(LayerKind::Activation, "lrelu6");
    h.conv("classifier", c.num_classes, 1, 1, Padding::Valid);
    h.simple(LayerKind::GlobalAvgPool, "gap");
    h.simple(LayerKind::Softmax, "softmax");
  }
  return spec;
}

namespace {

void trace_stack(const std::vector<LayerSpec>& layers, const std::string& branch, Shape& s,
                 std::vector<ShapeRow>& rows) {
  // s is [T, H, W, C] while temporal, [H, W, C] afterwards
  for (const auto& l : layers) {
    ShapeRow r{branch, l.name, l.kind, 0, 0, {}};
    switch (l.kind) {
      case LayerKind::ConvLstm: {
        if (s.size() != 4) throw ShapeError(l.name + ": ConvLSTM needs a temporal input");
        if (s[3] != l.conv.in_channels) throw ShapeError(l.name + ": channel mismatch");
        const std::size_t h = l.conv.out_height(s[1]), w = l.conv.out_width(s[2]);
        r.kernel = l.conv.kernel_h;
        r.stride = l.conv.stride_h;
        if (l.return_mode == ReturnMode::Full) {
          s = {s[0], h, w, l.filters()};
          r.output = s;
        } else {
          r.output = {1, h, w, l.filters()};
          s = {h, w, l.filters()};
        }
        break;
      }
      case LayerKind::Conv2d: {
        if (s.size() != 3) throw ShapeError(l.name + ": Conv2D needs a [H,W,C] input");
        if (s[2] != l.conv.in_channels) throw ShapeError(l.name + ": channel mismatch");
        s = {l.conv.out_height(s[0]), l.conv.out_width(s[1]), l.filters()};
        r.kernel = l.conv.kernel_h;
        r.stride = l.conv.stride_h;
        r.output = s;
        break;
      }
      case LayerKind::GlobalAvgPool:
        s = {1, 1, s.back()};
        r.output = s;
        break;
      default:
        r.output = s;
        break;
    }
    rows.push_back(std::move(r));
  }
}

}  // namespace

std::vector<ShapeRow> trace_shapes(const NetworkSpec& spec) {
  std::vector<ShapeRow> rows;
  Shape main = spec.input;
  trace_stack(spec.main, "main", main, rows);
  if (!spec.support.empty()) {
    Shape sup = spec.input;
    trace_stack(spec.support, "support", sup, rows);
    if (sup != main) {
      throw ShapeError("branches cannot be added: " + shape_to_string(main) + " vs " +
                       shape_to_string(sup));
    }
  }
  trace_stack(spec.head, "head", main, rows);
  return rows;
}

std::size_t count_parameters(const NetworkSpec& spec, bool peephole) {
  std::size_t total = 0;
  auto count = [&](const std::vector<LayerSpec>& layers, Shape s) {
    std::vector<ShapeRow> rows;
    for (const auto& l : layers) {
      const std::size_t k = l.conv.kernel_h * l.conv.kernel_w;
      const std::size_t ci = l.conv.in_channels, co = l.conv.out_channels;
      if (l.kind == LayerKind::ConvLstm) {
        total += k * ci * 4 * co + k * co * 4 * co + 4 * co;
        if (peephole) {
          total += 3 * l.conv.out_height(s[1]) * l.conv.out_width(s[2]) * co;
        }
      } else if (l.kind == LayerKind::Conv2d) {
        total += k * ci * co + co;
      } else if (l.kind == LayerKind::BatchNorm) {
        total += 2 * co;
      }
      trace_stack({l}, "", s, rows);
    }
    return s;
  };
  Shape m = count(spec.main, spec.input);
  count(spec.support, spec.input);
  count(spec.head, m);
  return total;
}

// ---------------------------------------------------------------------------

template <typename T>
Network<T>::Network(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  const NetworkSpec spec = build_spec(config);
  Rng rng(seed);
  auto build = [&](const std::vector<LayerSpec>& layers, Stack& stack, Shape s, bool first_stack) {
    bool first = true;
    std::vector<ShapeRow> rows;
    for (const auto& l : layers) {
      const Shape in = s;
      trace_stack({l}, "", s, rows);
      std::unique_ptr<Layer<T>> layer;
      switch (l.kind) {
        case LayerKind::ConvLstm: {
          auto p = ConvLstmParams<T>::initialized(l.conv, rng);
          if (l.peephole) p.enable_peephole(l.conv.out_height(in[1]), l.conv.out_width(in[2]));
          layer = std::make_unique<ConvLstmLayer<T>>(l.name, std::move(p), l.return_mode,
                                                     config.arch == Architecture::Stateful);
          break;
        }
        case LayerKind::Conv2d:
          layer = std::make_unique<Conv2dLayer<T>>(l.name, l.conv, rng);
          break;
        case LayerKind::BatchNorm:
          layer = std::make_unique<BatchNormLayer<T>>(l.name, l.conv.out_channels);
          break;
        case LayerKind::Activation:
          layer = std::make_unique<LeakyReluLayer<T>>(l.name, l.alpha);
          break;
        case LayerKind::Dropout:
          layer = std::make_unique<DropoutLayer<T>>(l.name, l.rate);
          break;
        case LayerKind::GlobalAvgPool:
          layer = std::make_unique<GlobalAvgPoolLayer<T>>(l.name);
          break;
        case LayerKind::Add:
        case LayerKind::Softmax:
          continue;  // handled by the network itself
      }
      // the raw video needs no gradient
      if (first && first_stack) layer->set_input_grad(false);
      first = false;
      stack.push_back(std::move(layer));
    }
    return s;
  };
  Shape m = build(spec.main, main_, spec.input, true);
  build(spec.support, support_, spec.input, true);
  head_input_shape_ = m;
  build(spec.head, head_, m, false);
  // Zero classifier weights make a fresh network predict the uniform
  // distribution; the layer below it still receives gradients.
  for (auto& l : head_) {
    if (l->name() == "classifier") static_cast<Conv2dLayer<T>*>(l.get())->kernel().fill(T(0));
  }
}

template <typename T>
BasicTensor<T> Network<T>::run(Stack& stack, BasicTensor<T> x, Mode mode, bool keep_cache) {
  for (auto& l : stack) {
    x = l->forward(x, mode, keep_cache);
    require_finite(x, l->name());
  }
  return x;
}

template <typename T>
BasicTensor<T> Network<T>::back(Stack& stack, BasicTensor<T> g) {
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
    g = (*it)->backward(g);
    if (g.empty()) break;
  }
  return g;
}

template <typename T>
BasicTensor<T> Network<T>::forward_logits(const BasicTensor<T>& x, Mode mode, bool keep_cache) {
  const Shape want = config_.input_shape(x.rank() == 5 ? x.dim(0) : 0);
  if (x.rank() != 5 || x.shape() != want) {
    throw ShapeError("network input must be [B," + std::to_string(config_.frames) + "," +
                     std::to_string(config_.height) + "," + std::to_string(config_.width) +
                     ",1], got " + shape_to_string(x.shape()));
  }
  BasicTensor<T> y = run(main_, x, mode, keep_cache);
  if (!support_.empty()) {
    y = add(y, run(support_, x, mode, keep_cache));
    require_finite(y, "add");
  }
  y = run(head_, std::move(y), mode, keep_cache);
  return std::move(y).reshaped({x.dim(0), config_.num_classes});
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& x, Mode mode) {
  return activation(forward_logits(x, mode), Activation::softmax(-1));
}

template <typename T>
void Network<T>::backward(const BasicTensor<T>& grad_logits) {
  BasicTensor<T> g = grad_logits.reshaped({grad_logits.dim(0), 1, 1, config_.num_classes});
  g = back(head_, std::move(g));
  if (!support_.empty()) back(support_, g);
  back(main_, std::move(g));
}

template <typename T>
std::vector<Layer<T>*> Network<T>::layers() {
  std::vector<Layer<T>*> out;
  for (Stack* s : {&main_, &support_, &head_}) {
    for (auto& l : *s) out.push_back(l.get());
  }
  return out;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (auto* l : layers()) l->collect_parameters(out);
  return out;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::buffers() {
  std::vector<ParamRef<T>> out;
  for (auto* l : layers()) l->collect_buffers(out);
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->numel();
  return n;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

template <typename T>
void Network<T>::clear_cache() {
  for (auto* l : layers()) l->clear_cache();
}

template <typename T>
void Network<T>::reset_state() {
  for (auto* l : layers()) l->reset_state();
}

template <typename T>
void Network<T>::set_dropout_seed(std::uint64_t seed) {
  std::uint64_t k = 0;
  for (auto* l : layers()) {
    if (auto* d = dynamic_cast<DropoutLayer<T>*>(l)) d->set_seed(mix_seed(seed, k++, 0));
  }
}

template class Network<float>;
template class Network<double>;

}  // namespace cle
