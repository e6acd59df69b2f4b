#include "cle/convlstm.hpp"

#include <cmath>

namespace cle {

namespace {

constexpr std::size_t kGates = 4;

template <typename T>
void fill_uniform(BasicTensor<T>& t, double limit, Rng& rng) {
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, -limit, limit));
}

// Copies channel block g of a [..., 4C] tensor into a [..., C] tensor.
template <typename T>
BasicTensor<T> gate_block(const BasicTensor<T>& packed, Gate g, std::size_t c) {
  Shape shape = packed.shape();
  shape.back() = c;
  BasicTensor<T> out(shape);
  const std::size_t rows = packed.numel() / (kGates * c);
  const std::size_t off = static_cast<std::size_t>(g) * c;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = packed[r * kGates * c + off + k];
  }
  return out;
}

// Gate nonlinearities for one step. `pre` holds [P, 4C] pre-activations and
// becomes the activated gates. Writes h and c_new ([P, C]).
template <typename T>
void cell_forward(T* pre, const T* c_prev, const T* peep, std::size_t pixels_per_image,
                  std::size_t pixels, std::size_t c, T* h, T* c_new) {
  const std::size_t grid = pixels_per_image * c;
  for (std::size_t p = 0; p < pixels; ++p) {
    T* z = pre + p * kGates * c;
    const std::size_t pix = p % pixels_per_image;
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t s = p * c + k;
      T zi = z[k], zf = z[c + k], zo = z[2 * c + k];
      if (peep != nullptr) {
        zi += peep[pix * c + k] * c_prev[s];
        zf += peep[grid + pix * c + k] * c_prev[s];
      }
      const T i = sigmoid(zi);
      const T f = sigmoid(zf);
      const T g = std::tanh(z[3 * c + k]);
      const T cn = f * c_prev[s] + i * g;
      if (peep != nullptr) zo += peep[2 * grid + pix * c + k] * cn;
      const T o = sigmoid(zo);
      z[k] = i;
      z[c + k] = f;
      z[2 * c + k] = o;
      z[3 * c + k] = g;
      c_new[s] = cn;
      h[s] = o * std::tanh(cn);
    }
  }
}

template <typename T>
void check_state(const ConvLstmState<T>& state, std::size_t b, std::size_t oh, std::size_t ow,
                 std::size_t c) {
  const Shape expected{b, oh, ow, c};
  if (state.hidden.shape() != expected || state.cell.shape() != expected) {
    throw ShapeError("ConvLSTM state grid " + shape_to_string(state.hidden.shape()) +
                     " does not match input grid " + shape_to_string(expected));
  }
}

template <typename T>
void check_peephole(const ConvLstmParams<T>& params, std::size_t oh, std::size_t ow) {
  if (params.has_peephole() &&
      params.peephole.shape() != Shape{3, oh, ow, params.hidden_channels()}) {
    throw ShapeError("peephole weights " + shape_to_string(params.peephole.shape()) +
                     " do not match the output grid");
  }
}

}  // namespace

template <typename T>
ConvLstmParams<T> ConvLstmParams<T>::zeros(const ConvSpec& spec) {
  spec.validate();
  ConvLstmParams p;
  p.spec = spec;
  const std::size_t c = spec.out_channels;
  p.input_kernel = BasicTensor<T>({spec.kernel_h, spec.kernel_w, spec.in_channels, kGates * c});
  p.recurrent_kernel = BasicTensor<T>({spec.kernel_h, spec.kernel_w, c, kGates * c});
  p.bias = BasicTensor<T>({kGates * c});
  return p;
}

template <typename T>
ConvLstmParams<T> ConvLstmParams<T>::initialized(const ConvSpec& spec, Rng& rng) {
  ConvLstmParams p = zeros(spec);
  const std::size_t c = spec.out_channels;
  const double in_fan = static_cast<double>(spec.kernel_h * spec.kernel_w * spec.in_channels);
  const double rec_fan = static_cast<double>(spec.kernel_h * spec.kernel_w * c);
  fill_uniform(p.input_kernel, std::sqrt(3.0 / in_fan), rng);
  fill_uniform(p.recurrent_kernel, std::sqrt(3.0 / rec_fan), rng);
  for (std::size_t k = 0; k < c; ++k) p.bias[c + k] = T(1);
  return p;
}

template <typename T>
void ConvLstmParams<T>::enable_peephole(std::size_t grid_h, std::size_t grid_w) {
  peephole = BasicTensor<T>({3, grid_h, grid_w, spec.out_channels});
}

template <typename T>
ConvSpec ConvLstmParams<T>::input_gate_spec() const {
  ConvSpec s = spec;
  s.out_channels = kGates * spec.out_channels;
  return s;
}

template <typename T>
ConvSpec ConvLstmParams<T>::recurrent_gate_spec() const {
  ConvSpec s = spec;
  s.stride_h = s.stride_w = 1;
  s.padding = Padding::Same;
  s.in_channels = spec.out_channels;
  s.out_channels = kGates * spec.out_channels;
  return s;
}

template <typename T>
BasicTensor<T> ConvLstmParams<T>::gate_input_kernel(Gate g) const {
  return gate_block(input_kernel, g, spec.out_channels);
}

template <typename T>
BasicTensor<T> ConvLstmParams<T>::gate_recurrent_kernel(Gate g) const {
  return gate_block(recurrent_kernel, g, spec.out_channels);
}

template <typename T>
BasicTensor<T> ConvLstmParams<T>::gate_bias(Gate g) const {
  return gate_block(bias, g, spec.out_channels);
}

template <typename T>
ConvLstmState<T> ConvLstmState<T>::zeros(std::size_t batch, std::size_t h, std::size_t w,
                                         std::size_t c) {
  return {BasicTensor<T>({batch, h, w, c}), BasicTensor<T>({batch, h, w, c}), false};
}

template <typename T>
ConvLstmState<T> reset_state(const ConvLstmState<T>& state) {
  if (state.empty()) return {};
  return {BasicTensor<T>(state.hidden.shape()), BasicTensor<T>(state.cell.shape()), false};
}

template <typename T>
ConvLstmState<T> detach_state(const ConvLstmState<T>& state) {
  ConvLstmState<T> out{state.hidden, state.cell, false};
  out.hidden.drop_grad();
  out.cell.drop_grad();
  return out;
}

template <typename T>
ConvLstmStepResult<T> convlstm_step(const BasicTensor<T>& x_t, const ConvLstmState<T>& state,
                                    const ConvLstmParams<T>& params) {
  if (x_t.rank() != 4) {
    throw ShapeError("convlstm_step expects [B,H,W,Cin], got " + shape_to_string(x_t.shape()));
  }
  const ConvSpec in_spec = params.input_gate_spec();
  const ConvSpec rec_spec = params.recurrent_gate_spec();
  const std::size_t b = x_t.dim(0);
  const std::size_t oh = in_spec.out_height(x_t.dim(1));
  const std::size_t ow = in_spec.out_width(x_t.dim(2));
  const std::size_t c = params.hidden_channels();
  check_state(state, b, oh, ow, c);
  check_peephole(params, oh, ow);
  if (x_t.dim(3) != params.spec.in_channels) {
    throw ShapeError("convlstm_step channel axis (3) has extent " + std::to_string(x_t.dim(3)) +
                     ", expected " + std::to_string(params.spec.in_channels));
  }

  BasicTensor<T> pre({b, oh, ow, kGates * c});
  detail::conv2d_forward_raw(x_t.data(), b, x_t.dim(1), x_t.dim(2), params.input_kernel.data(),
                             params.bias.data(), in_spec, pre.data(), false);
  detail::conv2d_forward_raw(state.hidden.data(), b, oh, ow, params.recurrent_kernel.data(),
                             static_cast<const T*>(nullptr), rec_spec, pre.data(), true);

  ConvLstmStepResult<T> r;
  r.h = BasicTensor<T>({b, oh, ow, c});
  r.state.cell = BasicTensor<T>({b, oh, ow, c});
  cell_forward(pre.data(), state.cell.data(),
               params.has_peephole() ? params.peephole.data() : nullptr, oh * ow, b * oh * ow, c,
               r.h.data(), r.state.cell.data());
  r.state.hidden = r.h;
  r.state.attached = true;
  r.gates = {gate_block(pre, Gate::Input, c), gate_block(pre, Gate::Forget, c),
             gate_block(pre, Gate::Output, c), gate_block(pre, Gate::Candidate, c)};
  return r;
}

template <typename T>
SequenceOutput<T> run_sequence(const BasicTensor<T>& xs, const ConvLstmState<T>& init,
                               const ConvLstmParams<T>& params, ReturnMode mode,
                               SequenceCache<T>* cache) {
  if (xs.rank() != 5) {
    throw ShapeError("run_sequence expects [B,T,H,W,Cin], got " + shape_to_string(xs.shape()));
  }
  const std::size_t b = xs.dim(0), steps = xs.dim(1), h = xs.dim(2), w = xs.dim(3);
  const std::size_t cin = xs.dim(4);
  if (steps == 0) throw ShapeError("run_sequence needs at least one time step");
  if (cin != params.spec.in_channels) {
    throw ShapeError("run_sequence channel axis (4) has extent " + std::to_string(cin) +
                     ", expected " + std::to_string(params.spec.in_channels));
  }
  const ConvSpec in_spec = params.input_gate_spec();
  const ConvSpec rec_spec = params.recurrent_gate_spec();
  const std::size_t oh = in_spec.out_height(h), ow = in_spec.out_width(w);
  const std::size_t c = params.hidden_channels();
  check_state(init, b, oh, ow, c);
  check_peephole(params, oh, ow);

  const std::size_t frame = h * w * cin;
  const std::size_t cell_size = b * oh * ow * c;
  const std::size_t gate_size = cell_size * kGates;

  // time-major copy so each step reads one contiguous [B, ...] block
  BasicTensor<T> xt({steps * b, h, w, cin});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy_n(xs.data() + (n * steps + t) * frame, frame, xt.data() + (t * b + n) * frame);
    }
  }

  BasicTensor<T> gates({steps * b, oh, ow, kGates * c});
  detail::conv2d_forward_raw(xt.data(), steps * b, h, w, params.input_kernel.data(),
                             params.bias.data(), in_spec, gates.data(), false);

  BasicTensor<T> hidden({(steps + 1) * b, oh, ow, c});
  BasicTensor<T> cells({(steps + 1) * b, oh, ow, c});
  std::copy_n(init.hidden.data(), cell_size, hidden.data());
  std::copy_n(init.cell.data(), cell_size, cells.data());
  const T* peep = params.has_peephole() ? params.peephole.data() : nullptr;

  for (std::size_t t = 0; t < steps; ++t) {
    T* pre = gates.data() + t * gate_size;
    detail::conv2d_forward_raw(hidden.data() + t * cell_size, b, oh, ow,
                               params.recurrent_kernel.data(), static_cast<const T*>(nullptr),
                               rec_spec, pre, true);
    cell_forward(pre, cells.data() + t * cell_size, peep, oh * ow, b * oh * ow, c,
                 hidden.data() + (t + 1) * cell_size, cells.data() + (t + 1) * cell_size);
  }

  SequenceOutput<T> out;
  const std::size_t plane = oh * ow * c;
  if (mode == ReturnMode::Full) {
    out.outputs = BasicTensor<T>({b, steps, oh, ow, c});
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t n = 0; n < b; ++n) {
        std::copy_n(hidden.data() + ((t + 1) * b + n) * plane, plane,
                    out.outputs.data() + (n * steps + t) * plane);
      }
    }
  } else {
    out.outputs = BasicTensor<T>({b, 1, oh, ow, c});
    std::copy_n(hidden.data() + steps * cell_size, cell_size, out.outputs.data());
  }
  out.final_state.hidden = BasicTensor<T>({b, oh, ow, c});
  out.final_state.cell = BasicTensor<T>({b, oh, ow, c});
  std::copy_n(hidden.data() + steps * cell_size, cell_size, out.final_state.hidden.data());
  std::copy_n(cells.data() + steps * cell_size, cell_size, out.final_state.cell.data());
  out.final_state.attached = true;

  if (cache != nullptr) {
    cache->mode = mode;
    cache->batch = b;
    cache->steps = steps;
    cache->in_h = h;
    cache->in_w = w;
    cache->init_attached = init.attached;
    cache->inputs = std::move(xt);
    cache->hidden = std::move(hidden);
    cache->cell = std::move(cells);
    cache->gates = std::move(gates);
  }
  return out;
}

template <typename T>
ConvLstmGrads<T> convlstm_backward(const BasicTensor<T>& upstream, const SequenceCache<T>& cache,
                                   const ConvLstmParams<T>& params, bool want_input_grad) {
  if (!cache.valid()) throw std::logic_error("convlstm_backward: no saved activations");
  const std::size_t b = cache.batch, steps = cache.steps;
  const std::size_t oh = cache.hidden.dim(1), ow = cache.hidden.dim(2);
  const std::size_t c = params.hidden_channels();
  const std::size_t cin = params.spec.in_channels;
  const std::size_t plane = oh * ow * c;
  const std::size_t cell_size = b * plane;
  const std::size_t gate_size = cell_size * kGates;
  const std::size_t out_steps = cache.mode == ReturnMode::Full ? steps : 1;
  const Shape expected{b, out_steps, oh, ow, c};
  if (upstream.shape() != expected) {
    throw ShapeError("convlstm_backward upstream " + shape_to_string(upstream.shape()) +
                     ", expected " + shape_to_string(expected));
  }
  const ConvSpec in_spec = params.input_gate_spec();
  const ConvSpec rec_spec = params.recurrent_gate_spec();
  const bool peep_on = params.has_peephole();
  const T* peep = peep_on ? params.peephole.data() : nullptr;
  const std::size_t grid = oh * ow * c;

  ConvLstmGrads<T> g;
  g.input_kernel = BasicTensor<T>(params.input_kernel.shape());
  g.recurrent_kernel = BasicTensor<T>(params.recurrent_kernel.shape());
  g.bias = BasicTensor<T>(params.bias.shape());
  if (peep_on) g.peephole = BasicTensor<T>(params.peephole.shape());

  BasicTensor<T> d_pre({steps * b, oh, ow, kGates * c});
  AlignedVector<T> dh(cell_size, T(0)), dc(cell_size, T(0)), dh_prev(cell_size), dc_prev(cell_size);

  for (std::size_t step = steps; step-- > 0;) {
    // upstream gradient on this step's hidden output
    if (cache.mode == ReturnMode::Full) {
      for (std::size_t n = 0; n < b; ++n) {
        const T* src = upstream.data() + (n * steps + step) * plane;
        for (std::size_t k = 0; k < plane; ++k) dh[n * plane + k] += src[k];
      }
    } else if (step + 1 == steps) {
      for (std::size_t k = 0; k < cell_size; ++k) dh[k] += upstream[k];
    }

    const T* act = cache.gates.data() + step * gate_size;
    const T* c_prev = cache.cell.data() + step * cell_size;
    const T* c_cur = cache.cell.data() + (step + 1) * cell_size;
    T* dz = d_pre.data() + step * gate_size;
    for (std::size_t p = 0; p < b * oh * ow; ++p) {
      const T* a = act + p * kGates * c;
      T* d = dz + p * kGates * c;
      const std::size_t pix = p % (oh * ow);
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t s = p * c + k;
        const T i = a[k], f = a[c + k], o = a[2 * c + k], gg = a[3 * c + k];
        const T tc = std::tanh(c_cur[s]);
        const T d_o = dh[s] * tc * o * (T(1) - o);
        T dcs = dc[s] + dh[s] * o * (T(1) - tc * tc);
        if (peep_on) dcs += d_o * peep[2 * grid + pix * c + k];
        const T d_i = dcs * gg * i * (T(1) - i);
        const T d_f = dcs * c_prev[s] * f * (T(1) - f);
        const T d_g = dcs * i * (T(1) - gg * gg);
        d[k] = d_i;
        d[c + k] = d_f;
        d[2 * c + k] = d_o;
        d[3 * c + k] = d_g;
        T dcp = dcs * f;
        if (peep_on) {
          dcp += d_i * peep[pix * c + k] + d_f * peep[grid + pix * c + k];
          g.peephole[pix * c + k] += d_i * c_prev[s];
          g.peephole[grid + pix * c + k] += d_f * c_prev[s];
          g.peephole[2 * grid + pix * c + k] += d_o * c_cur[s];
        }
        dc_prev[s] = dcp;
      }
    }
    std::fill(dh_prev.begin(), dh_prev.end(), T(0));
    detail::conv2d_backward_raw(cache.hidden.data() + step * cell_size, b, oh, ow,
                                params.recurrent_kernel.data(), rec_spec, dz, dh_prev.data(),
                                g.recurrent_kernel.data(), static_cast<T*>(nullptr));
    dh.swap(dh_prev);
    dc.swap(dc_prev);
  }

  BasicTensor<T> dxt;
  if (want_input_grad) dxt = BasicTensor<T>(cache.inputs.shape());
  detail::conv2d_backward_raw(cache.inputs.data(), steps * b, cache.in_h, cache.in_w,
                              params.input_kernel.data(), in_spec, d_pre.data(),
                              want_input_grad ? dxt.data() : nullptr, g.input_kernel.data(),
                              g.bias.data());
  if (want_input_grad) {
    const std::size_t frame = cache.in_h * cache.in_w * cin;
    g.inputs = BasicTensor<T>({b, steps, cache.in_h, cache.in_w, cin});
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t t = 0; t < steps; ++t) {
        std::copy_n(dxt.data() + (t * b + n) * frame, frame,
                    g.inputs.data() + (n * steps + t) * frame);
      }
    }
  }
  if (cache.init_attached) {
    ConvLstmState<T> s;
    s.hidden = BasicTensor<T>({b, oh, ow, c}, std::vector<T>(dh.begin(), dh.end()));
    s.cell = BasicTensor<T>({b, oh, ow, c}, std::vector<T>(dc.begin(), dc.end()));
    s.attached = true;
    g.initial_state = std::move(s);
  }
  return g;
}

#define CLE_INSTANTIATE_CONVLSTM(T)                                                            \
  template struct ConvLstmParams<T>;                                                           \
  template struct ConvLstmState<T>;                                                            \
  template ConvLstmState<T> reset_state(const ConvLstmState<T>&);                              \
  template ConvLstmState<T> detach_state(const ConvLstmState<T>&);                             \
  template ConvLstmStepResult<T> convlstm_step(const BasicTensor<T>&, const ConvLstmState<T>&, \
                                               const ConvLstmParams<T>&);                      \
  template SequenceOutput<T> run_sequence(const BasicTensor<T>&, const ConvLstmState<T>&,      \
                                          const ConvLstmParams<T>&, ReturnMode,                \
                                          SequenceCache<T>*);                                  \
  template ConvLstmGrads<T> convlstm_backward(const BasicTensor<T>&, const SequenceCache<T>&,   \
                                              const ConvLstmParams<T>&, bool);

CLE_INSTANTIATE_CONVLSTM(float)
CLE_INSTANTIATE_CONVLSTM(double)

}  // namespace cle
