#pragma once

#include <optional>

#include "cle/ops.hpp"
#include "cle/random.hpp"

namespace cle {

/// Gate blocks inside the concatenated kernels, in storage order.
enum class Gate { Input = 0, Forget = 1, Output = 2, Candidate = 3 };

/// Weights of one ConvLSTM layer.
///
/// The four gates are stored side by side along the output-channel axis:
/// gate g owns channels [g*C, (g+1)*C) of `input_kernel`, `recurrent_kernel`
/// and `bias`. The input kernels use `spec` (any stride/padding); the
/// recurrent kernels always run SAME/stride 1 on the post-stride grid, which
/// is where the hidden and cell maps live.
template <typename T>
struct ConvLstmParams {
  ConvSpec spec;  // in_channels = Cin, out_channels = hidden channels C
  BasicTensor<T> input_kernel;      // [kh, kw, Cin, 4C]
  BasicTensor<T> recurrent_kernel;  // [kh, kw, C, 4C]
  BasicTensor<T> bias;              // [4C]
  // Optional Hadamard cell-to-gate weights [3, H', W', C] for (input, forget, output).
  BasicTensor<T> peephole;

  static ConvLstmParams zeros(const ConvSpec& spec);
  /// Uniform fan-in initialization; forget-gate bias 1, other biases 0.
  static ConvLstmParams initialized(const ConvSpec& spec, Rng& rng);

  void enable_peephole(std::size_t grid_h, std::size_t grid_w);
  bool has_peephole() const { return !peephole.empty(); }

  std::size_t hidden_channels() const { return spec.out_channels; }
  ConvSpec input_gate_spec() const;      // Cin -> 4C with the layer stride/padding
  ConvSpec recurrent_gate_spec() const;  // C -> 4C, SAME, stride 1

  BasicTensor<T> gate_input_kernel(Gate g) const;
  BasicTensor<T> gate_recurrent_kernel(Gate g) const;
  BasicTensor<T> gate_bias(Gate g) const;
};

template <typename T>
struct ConvLstmState {
  BasicTensor<T> hidden;  // [B, H', W', C]
  BasicTensor<T> cell;    // [B, H', W', C]
  bool attached = false;  // gradients may flow into this state

  static ConvLstmState zeros(std::size_t batch, std::size_t h, std::size_t w, std::size_t c);
  bool empty() const { return hidden.empty(); }
};

/// All-zero state of the same shape, detached.
template <typename T>
ConvLstmState<T> reset_state(const ConvLstmState<T>& state);

/// Same values, detached: later backward passes treat it as a constant.
template <typename T>
ConvLstmState<T> detach_state(const ConvLstmState<T>& state);

template <typename T>
struct ConvLstmGates {
  BasicTensor<T> input, forget, output, candidate;
};

template <typename T>
struct ConvLstmStepResult {
  BasicTensor<T> h;
  ConvLstmState<T> state;
  ConvLstmGates<T> gates;
};

/// One time step. x_t is [B, H, W, Cin]; the state must live on the grid the
/// input kernels produce from (H, W).
template <typename T>
ConvLstmStepResult<T> convlstm_step(const BasicTensor<T>& x_t, const ConvLstmState<T>& state,
                                    const ConvLstmParams<T>& params);

enum class ReturnMode { Full, Last };

template <typename T>
struct SequenceOutput {
  BasicTensor<T> outputs;  // Full: [B, T, H', W', C]; Last: [B, 1, H', W', C]
  ConvLstmState<T> final_state;
};

/// Activations kept by run_sequence for backpropagation through time.
template <typename T>
struct SequenceCache {
  ReturnMode mode = ReturnMode::Full;
  std::size_t batch = 0, steps = 0, in_h = 0, in_w = 0;
  bool init_attached = false;
  BasicTensor<T> inputs;  // time-major [T*B, H, W, Cin]
  BasicTensor<T> hidden;  // [(T+1)*B, H', W', C]; slot 0 is the initial state
  BasicTensor<T> cell;    // same layout as hidden
  BasicTensor<T> gates;   // activated, [T*B, H', W', 4C]

  bool valid() const { return steps > 0 && !gates.empty(); }
};

template <typename T>
SequenceOutput<T> run_sequence(const BasicTensor<T>& xs, const ConvLstmState<T>& init,
                               const ConvLstmParams<T>& params, ReturnMode mode,
                               SequenceCache<T>* cache = nullptr);

template <typename T>
struct ConvLstmGrads {
  BasicTensor<T> input_kernel;
  BasicTensor<T> recurrent_kernel;
  BasicTensor<T> bias;
  BasicTensor<T> peephole;  // empty unless the layer has peepholes
  BasicTensor<T> inputs;    // [B, T, H, W, Cin]
  std::optional<ConvLstmState<T>> initial_state;  // only for an attached initial state
};

/// Exact gradient of run_sequence through every step of the cached window.
/// With `want_input_grad` unset, `inputs` is left empty.
template <typename T>
ConvLstmGrads<T> convlstm_backward(const BasicTensor<T>& upstream, const SequenceCache<T>& cache,
                                   const ConvLstmParams<T>& params, bool want_input_grad = true);

}  // namespace cle
