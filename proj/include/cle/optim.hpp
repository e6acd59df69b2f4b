#pragma once

#include <map>
#include <string>
#include <vector>

#include "cle/checkpoint.hpp"
#include "cle/tensor.hpp"

namespace cle {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers keyed by parameter name, created on first use.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<T>> m, v;
};

/// One bias-corrected Adam update from the parameters' grad slots (a missing
/// grad slot counts as zero). Throws NonFiniteError before touching anything
/// if a gradient is NaN/Inf.
template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr);

/// Stores moments as "adam.m.<name>" / "adam.v.<name>" and the step counter
/// as metadata "adam.step".
void store_adam(const AdamState<float>& state, Checkpoint& ckpt);
AdamState<float> load_adam(const Checkpoint& ckpt);

}  // namespace cle
