#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cle/tensor.hpp"

namespace cle {

/// A scalar loss (a one-element tensor) together with its analytic gradient
/// with respect to the evaluation point.
struct LossAndGrad {
  TensorD loss;
  TensorD grad;
};

using GradClosure = std::function<LossAndGrad(const TensorD& point)>;

/// Compares the analytic gradient at `point` against central differences.
/// Returns max over coordinates of |a - n| / max(|a|, |n|, 1e-8).
/// Throws std::invalid_argument for a non-scalar loss or step <= 0.
double finite_diff_check(const GradClosure& op, const TensorD& point, double step = 1e-5);

struct GradCheckRow {
  std::string name;
  int seeds = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 1;
  int seeds = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Flips the sign of one backward pass (harness self-test); the suite must fail.
  bool corrupt_backward = false;
};

/// Finite-difference checks over every differentiable op and the ConvLSTM
/// cell, in double precision.
std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckOptions& options);

}  // namespace cle
