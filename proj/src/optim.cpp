#include "cle/optim.hpp"

#include <cmath>

namespace cle {

template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
  for (const auto& p : params) {
    for (T g : p.tensor->grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NonFiniteError("non-finite gradient in " + p.name + "; update skipped");
      }
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  for (const auto& p : params) {
    BasicTensor<T>& w = *p.tensor;
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (m.empty()) {
      m.assign(w.numel(), T(0));
      v.assign(w.numel(), T(0));
    }
    if (m.size() != w.numel()) throw ShapeError("Adam moments of " + p.name + " have the wrong size");
    auto g = std::as_const(w).grad();
    const bool has = !g.empty();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const T gi = has ? g[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const double mh = static_cast<double>(m[i]) / corr1;
      const double vh = static_cast<double>(v[i]) / corr2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mh / (std::sqrt(vh) + c.epsilon));
    }
  }
}

void store_adam(const AdamState<float>& state, Checkpoint& ckpt) {
  ckpt.metadata["adam.step"] = std::to_string(state.step);
  for (const auto& [name, m] : state.m) ckpt.put("adam.m." + name, {m.size()}, m);
  for (const auto& [name, v] : state.v) ckpt.put("adam.v." + name, {v.size()}, v);
}

AdamState<float> load_adam(const Checkpoint& ckpt) {
  AdamState<float> s;
  s.step = parse_u64(ckpt.meta("adam.step"));
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind("adam.m.", 0) == 0) s.m[t.name.substr(7)] = t.values;
    if (t.name.rfind("adam.v.", 0) == 0) s.v[t.name.substr(7)] = t.values;
  }
  return s;
}

template void adam_step(const std::vector<ParamRef<float>>&, AdamState<float>&, double);
template void adam_step(const std::vector<ParamRef<double>>&, AdamState<double>&, double);

}  // namespace cle
