#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "leafgraph/error.hpp"
#include "leafgraph/layers.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Tensor> m;  // one per tensor, in (weight, bias) order per layer
  std::vector<Tensor> v;
};

// Bias-corrected Adam over every weight and bias of `params`; the parameter list must
// keep the same order across calls.
inline void adam_step(std::span<LayerParams* const> params, AdamState& state) {
  std::vector<std::pair<Tensor*, const Tensor*>> slots;
  for (auto* p : params) {
    slots.emplace_back(&p->weight, &p->grad_weight);
    if (p->has_bias()) slots.emplace_back(&p->bias, &p->grad_bias);
  }
  if (state.m.empty()) {
    for (auto& [value, grad] : slots) {
      state.m.emplace_back(value->shape());
      state.v.emplace_back(value->shape());
    }
  }
  if (state.m.size() != slots.size()) throw ShapeError("adam_step: parameter list changed between steps");
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    Tensor& value = *slots[s].first;
    const Tensor& grad = *slots[s].second;
    Tensor& m = state.m[s];
    Tensor& v = state.v[s];
    require_same_shape(value, grad, "adam_step");
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      value[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

}  // namespace leafgraph
