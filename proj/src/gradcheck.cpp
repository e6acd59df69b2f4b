#include "cle/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cle/convlstm.hpp"
#include "cle/ops.hpp"
#include "cle/random.hpp"

namespace cle {

double finite_diff_check(const GradClosure& op, const TensorD& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  const LossAndGrad base = op(point);
  if (base.loss.numel() != 1) {
    throw std::invalid_argument("finite_diff_check needs a scalar loss, got shape " +
                                shape_to_string(base.loss.shape()));
  }
  if (base.grad.shape() != point.shape()) {
    throw ShapeError("analytic gradient shape " + shape_to_string(base.grad.shape()) +
                     " differs from point " + shape_to_string(point.shape()));
  }
  TensorD probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = op(probe).loss[0];
    probe[i] = orig - step;
    const double down = op(probe).loss[0];
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = base.grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

namespace {

TensorD random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  TensorD t(shape);
  for (auto& v : t.values()) v = scale * normal(rng);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(lo),
                                              static_cast<std::int64_t>(hi)));
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

// sum(out * weights); its gradient with respect to `out` is `weights`
double weighted_sum(const TensorD& out, const TensorD& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * weights[i];
  return s;
}

TensorD scalar(double v) { return TensorD({1}, std::vector<double>{v}); }

class Suite {
 public:
  explicit Suite(const GradCheckOptions& o) : opt_(o) {}

  template <typename Body>
  void run(const std::string& name, Body body) {
    GradCheckRow row{name, opt_.seeds, 0.0, false};
    for (int s = 0; s < opt_.seeds; ++s) {
      Rng rng(mix_seed(opt_.seed, fnv1a(name), static_cast<std::uint64_t>(s)));
      row.max_relative_error = std::max(row.max_relative_error, body(rng));
    }
    row.passed = row.max_relative_error < opt_.tolerance;
    rows_.push_back(row);
  }

  double check(const GradClosure& f, const TensorD& point) const {
    return finite_diff_check(f, point, opt_.step);
  }

  bool corrupt() const { return opt_.corrupt_backward; }
  std::vector<GradCheckRow> rows() && { return std::move(rows_); }

 private:
  GradCheckOptions opt_;
  std::vector<GradCheckRow> rows_;
};

ConvSpec random_conv(Rng& rng, std::size_t& h, std::size_t& w) {
  ConvSpec spec;
  spec.kernel_h = pick(rng, 1, 3);
  spec.kernel_w = pick(rng, 1, 3);
  spec.stride_h = pick(rng, 1, 2);
  spec.stride_w = pick(rng, 1, 2);
  spec.padding = pick(rng, 0, 1) ? Padding::Same : Padding::Valid;
  spec.in_channels = pick(rng, 1, 3);
  spec.out_channels = pick(rng, 1, 3);
  h = pick(rng, spec.kernel_h, 6);
  w = pick(rng, spec.kernel_w, 6);
  return spec;
}

void conv_checks(Suite& suite) {
  suite.run("conv2d.input", [&](Rng& rng) {
    std::size_t h, w;
    const ConvSpec spec = random_conv(rng, h, w);
    const std::size_t b = pick(rng, 1, 2);
    const TensorD x = random_tensor({b, h, w, spec.in_channels}, rng);
    const TensorD k = random_tensor(spec.kernel_shape(), rng);
    const TensorD bias = random_tensor({spec.out_channels}, rng);
    const TensorD r = random_tensor({b, spec.out_height(h), spec.out_width(w), spec.out_channels}, rng);
    return suite.check(
        [&](const TensorD& p) {
          return LossAndGrad{scalar(weighted_sum(conv2d(p, k, bias, spec), r)),
                             conv2d_backward(r, p, k, spec).grad_input};
        },
        x);
  });
  suite.run("conv2d.kernel", [&](Rng& rng) {
    std::size_t h, w;
    const ConvSpec spec = random_conv(rng, h, w);
    const std::size_t b = pick(rng, 1, 2);
    const TensorD x = random_tensor({b, h, w, spec.in_channels}, rng);
    const TensorD k = random_tensor(spec.kernel_shape(), rng);
    const TensorD bias = random_tensor({spec.out_channels}, rng);
    const TensorD r = random_tensor({b, spec.out_height(h), spec.out_width(w), spec.out_channels}, rng);
    const double sign = suite.corrupt() ? -1.0 : 1.0;
    return suite.check(
        [&](const TensorD& p) {
          TensorD g = conv2d_backward(r, x, p, spec).grad_kernel;
          for (auto& v : g.values()) v *= sign;
          return LossAndGrad{scalar(weighted_sum(conv2d(x, p, bias, spec), r)), g};
        },
        k);
  });
  suite.run("conv2d.bias", [&](Rng& rng) {
    std::size_t h, w;
    const ConvSpec spec = random_conv(rng, h, w);
    const TensorD x = random_tensor({1, h, w, spec.in_channels}, rng);
    const TensorD k = random_tensor(spec.kernel_shape(), rng);
    const TensorD bias = random_tensor({spec.out_channels}, rng);
    const TensorD r = random_tensor({1, spec.out_height(h), spec.out_width(w), spec.out_channels}, rng);
    return suite.check(
        [&](const TensorD& p) {
          return LossAndGrad{scalar(weighted_sum(conv2d(x, k, p, spec), r)),
                             conv2d_backward(r, x, k, spec).grad_bias};
        },
        bias);
  });
  suite.run("conv2d+sigmoid", [&](Rng& rng) {
    std::size_t h, w;
    const ConvSpec spec = random_conv(rng, h, w);
    const TensorD x = random_tensor({1, h, w, spec.in_channels}, rng);
    const TensorD k = random_tensor(spec.kernel_shape(), rng, 0.5);
    const TensorD bias = random_tensor({spec.out_channels}, rng);
    const TensorD r = random_tensor({1, spec.out_height(h), spec.out_width(w), spec.out_channels}, rng);
    const auto act = Activation::sigmoid();
    return suite.check(
        [&](const TensorD& p) {
          const TensorD z = conv2d(x, p, bias, spec);
          const TensorD y = activation(z, act);
          const TensorD dz = activation_backward(r, z, y, act);
          return LossAndGrad{scalar(weighted_sum(y, r)), conv2d_backward(dz, x, p, spec).grad_kernel};
        },
        k);
  });
}

void activation_checks(Suite& suite) {
  const std::pair<const char*, Activation> kinds[] = {
      {"activation.leaky_relu", Activation::leaky_relu(0.3)},
      {"activation.sigmoid", Activation::sigmoid()},
      {"activation.tanh", Activation::tanh()},
  };
  for (const auto& [name, act] : kinds) {
    suite.run(name, [&](Rng& rng) {
      const Shape shape{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
      const TensorD x = random_tensor(shape, rng);
      const TensorD r = random_tensor(shape, rng);
      return suite.check(
          [&](const TensorD& p) {
            const TensorD y = activation(p, act);
            return LossAndGrad{scalar(weighted_sum(y, r)), activation_backward(r, p, y, act)};
          },
          x);
    });
  }
  suite.run("activation.softmax", [&](Rng& rng) {
    const Shape shape{pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 1, 3)};
    const Activation act = Activation::softmax(static_cast<int>(pick(rng, 0, 2)));
    const TensorD x = random_tensor(shape, rng);
    const TensorD r = random_tensor(shape, rng);
    return suite.check(
        [&](const TensorD& p) {
          const TensorD y = activation(p, act);
          return LossAndGrad{scalar(weighted_sum(y, r)), activation_backward(r, p, y, act)};
        },
        x);
  });
}

void batch_norm_checks(Suite& suite) {
  for (Mode mode : {Mode::Train, Mode::Infer}) {
    const std::string tag = mode == Mode::Train ? "train" : "infer";
    auto setup = [mode](Rng& rng, TensorD& x, TensorD& r, BatchNormState<double>& state) {
      const std::size_t c = pick(rng, 1, 3);
      const Shape shape{pick(rng, 2, 3), pick(rng, 1, 3), pick(rng, 1, 3), c};
      x = random_tensor(shape, rng);
      r = random_tensor(shape, rng);
      state = BatchNormState<double>(c);
      state.gamma = random_tensor({c}, rng);
      state.beta = random_tensor({c}, rng);
      state.running_mean = random_tensor({c}, rng);
      for (std::size_t k = 0; k < c; ++k) state.running_var[k] = 0.5 + uniform01(rng);
      (void)mode;
    };
    suite.run("batch_norm." + tag + ".input", [&](Rng& rng) {
      TensorD x, r;
      BatchNormState<double> state;
      setup(rng, x, r, state);
      return suite.check(
          [&](const TensorD& p) {
            BatchNormState<double> s = state;
            BatchNormCache<double> cache;
            const TensorD y = batch_norm(p, s, mode, &cache);
            return LossAndGrad{scalar(weighted_sum(y, r)), batch_norm_backward(r, s, cache).grad_input};
          },
          x);
    });
    suite.run("batch_norm." + tag + ".gamma_beta", [&](Rng& rng) {
      TensorD x, r;
      BatchNormState<double> state;
      setup(rng, x, r, state);
      const std::size_t c = state.channels();
      TensorD packed({2 * c});
      for (std::size_t k = 0; k < c; ++k) {
        packed[k] = state.gamma[k];
        packed[c + k] = state.beta[k];
      }
      return suite.check(
          [&](const TensorD& p) {
            BatchNormState<double> s = state;
            for (std::size_t k = 0; k < c; ++k) {
              s.gamma[k] = p[k];
              s.beta[k] = p[c + k];
            }
            BatchNormCache<double> cache;
            const TensorD y = batch_norm(x, s, mode, &cache);
            const auto g = batch_norm_backward(r, s, cache);
            TensorD grad({2 * c});
            for (std::size_t k = 0; k < c; ++k) {
              grad[k] = g.grad_gamma[k];
              grad[c + k] = g.grad_beta[k];
            }
            return LossAndGrad{scalar(weighted_sum(y, r)), grad};
          },
          packed);
    });
  }
}

void misc_checks(Suite& suite) {
  suite.run("global_avg_pool", [&](Rng& rng) {
    const Shape shape{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 3)};
    const TensorD x = random_tensor(shape, rng);
    const TensorD r = random_tensor({shape[0], 1, 1, shape[3]}, rng);
    return suite.check(
        [&](const TensorD& p) {
          return LossAndGrad{scalar(weighted_sum(global_avg_pool(p), r)),
                             global_avg_pool_backward(r, shape)};
        },
        x);
  });
  suite.run("dropout", [&](Rng& rng) {
    const Shape shape{pick(rng, 1, 3), pick(rng, 2, 6)};
    const TensorD x = random_tensor(shape, rng);
    const TensorD r = random_tensor(shape, rng);
    const std::uint64_t seed = rng();
    return suite.check(
        [&](const TensorD& p) {
          std::vector<double> mask;
          const TensorD y = dropout(p, 0.25, seed, Mode::Train, &mask);
          TensorD g = r;
          for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= mask[i];
          return LossAndGrad{scalar(weighted_sum(y, r)), g};
        },
        x);
  });
  suite.run("softmax_cross_entropy", [&](Rng& rng) {
    const std::size_t b = pick(rng, 1, 4), k = pick(rng, 2, 6);
    const TensorD x = random_tensor({b, k}, rng);
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(pick(rng, 0, k - 1));
    return suite.check(
        [&](const TensorD& p) {
          const auto ce = softmax_cross_entropy(p, labels);
          return LossAndGrad{scalar(ce.loss), ce.grad_logits};
        },
        x);
  });
  suite.run("add", [&](Rng& rng) {
    const Shape shape{pick(rng, 1, 3), pick(rng, 1, 3)};
    const TensorD a = random_tensor(shape, rng);
    const TensorD bt = random_tensor(shape, rng);
    const TensorD r = random_tensor(shape, rng);
    return suite.check(
        [&](const TensorD& p) { return LossAndGrad{scalar(weighted_sum(add(p, bt), r)), r}; }, a);
  });
}

struct CellCase {
  ConvLstmParams<double> params;
  TensorD xs;
  ConvLstmState<double> init;
  TensorD r;
  ReturnMode mode = ReturnMode::Full;
};

CellCase random_cell(Rng& rng, bool peephole) {
  CellCase cc;
  ConvSpec spec;
  spec.kernel_h = spec.kernel_w = pick(rng, 1, 3);
  spec.stride_h = spec.stride_w = pick(rng, 1, 2);
  spec.padding = pick(rng, 0, 1) ? Padding::Same : Padding::Valid;
  spec.in_channels = pick(rng, 1, 2);
  spec.out_channels = pick(rng, 1, 2);
  const std::size_t b = pick(rng, 1, 2), steps = pick(rng, 1, 3);
  const std::size_t h = pick(rng, std::max<std::size_t>(spec.kernel_h, 2), 4);
  const std::size_t w = pick(rng, std::max<std::size_t>(spec.kernel_w, 2), 4);
  cc.params = ConvLstmParams<double>::initialized(spec, rng);
  for (auto& v : cc.params.bias.values()) v += 0.3 * normal(rng);
  const std::size_t oh = spec.out_height(h), ow = spec.out_width(w);
  if (peephole) {
    cc.params.enable_peephole(oh, ow);
    cc.params.peephole = random_tensor(cc.params.peephole.shape(), rng, 0.5);
  }
  cc.xs = random_tensor({b, steps, h, w, spec.in_channels}, rng);
  cc.init.hidden = random_tensor({b, oh, ow, spec.out_channels}, rng, 0.5);
  cc.init.cell = random_tensor({b, oh, ow, spec.out_channels}, rng, 0.5);
  cc.init.attached = true;
  cc.mode = pick(rng, 0, 1) ? ReturnMode::Full : ReturnMode::Last;
  const std::size_t out_steps = cc.mode == ReturnMode::Full ? steps : 1;
  cc.r = random_tensor({b, out_steps, oh, ow, spec.out_channels}, rng);
  return cc;
}

enum class CellArg { Inputs, InputKernel, RecurrentKernel, Bias, Peephole, InitHidden, InitCell };

double check_cell(Suite& suite, Rng& rng, CellArg arg, bool peephole) {
  CellCase cc = random_cell(rng, peephole);
  auto slot = [&](CellCase& c) -> TensorD& {
    switch (arg) {
      case CellArg::Inputs: return c.xs;
      case CellArg::InputKernel: return c.params.input_kernel;
      case CellArg::RecurrentKernel: return c.params.recurrent_kernel;
      case CellArg::Bias: return c.params.bias;
      case CellArg::Peephole: return c.params.peephole;
      case CellArg::InitHidden: return c.init.hidden;
      case CellArg::InitCell: return c.init.cell;
    }
    return c.xs;
  };
  const TensorD point = slot(cc);
  return suite.check(
      [&](const TensorD& p) {
        CellCase local = cc;
        slot(local) = p;
        SequenceCache<double> cache;
        const auto out = run_sequence(local.xs, local.init, local.params, local.mode, &cache);
        const auto g = convlstm_backward(local.r, cache, local.params);
        TensorD grad;
        switch (arg) {
          case CellArg::Inputs: grad = g.inputs; break;
          case CellArg::InputKernel: grad = g.input_kernel; break;
          case CellArg::RecurrentKernel: grad = g.recurrent_kernel; break;
          case CellArg::Bias: grad = g.bias; break;
          case CellArg::Peephole: grad = g.peephole; break;
          case CellArg::InitHidden: grad = g.initial_state->hidden; break;
          case CellArg::InitCell: grad = g.initial_state->cell; break;
        }
        return LossAndGrad{scalar(weighted_sum(out.outputs, local.r)), grad};
      },
      point);
}

void convlstm_checks(Suite& suite) {
  const std::pair<const char*, CellArg> args[] = {
      {"convlstm.inputs", CellArg::Inputs},
      {"convlstm.input_kernel", CellArg::InputKernel},
      {"convlstm.recurrent_kernel", CellArg::RecurrentKernel},
      {"convlstm.bias", CellArg::Bias},
      {"convlstm.initial_hidden", CellArg::InitHidden},
      {"convlstm.initial_cell", CellArg::InitCell},
  };
  for (const auto& [name, arg] : args) {
    suite.run(name, [&](Rng& rng) { return check_cell(suite, rng, arg, false); });
  }
  suite.run("convlstm.peephole", [&](Rng& rng) {
    return std::max(check_cell(suite, rng, CellArg::Peephole, true),
                    check_cell(suite, rng, CellArg::InitCell, true));
  });
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckOptions& options) {
  Suite suite(options);
  conv_checks(suite);
  activation_checks(suite);
  batch_norm_checks(suite);
  misc_checks(suite);
  convlstm_checks(suite);
  return std::move(suite).rows();
}

}  // namespace cle
