#pragma once

// Closed-form and finite-difference checks for the CAM routines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "leafgraph/explain.hpp"
#include "leafgraph/gradcheck.hpp"
#include "checks.hpp"

namespace leafgraph::checks {

inline std::vector<double> min_max(std::vector<double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double mn = *lo, mx = *hi;
  for (auto& x : v) x = (x - mn) / (mx - mn);
  return v;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (l2_norm(a) * l2_norm(b));
}

// Gaussian bump on an h x w grid, centre drawn from rng.
inline std::vector<double> blob(std::size_t h, std::size_t w, Rng& rng) {
  const double cy = rng.uniform(0.0, static_cast<double>(h - 1)), cx = rng.uniform(0.0, static_cast<double>(w - 1));
  const double s = 0.25 * static_cast<double>(std::min(h, w));
  std::vector<double> g(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      g[y * w + x] = std::exp(-(dy * dy + dx * dx) / (2 * s * s));
    }
  return g;
}

// Eigen-CAM on outer(u, v) plus 1e-3 noise; cosine of the heatmap with min-max normalized u.
inline double eigen_rank1_cosine(std::uint64_t seed) {
  Rng rng(seed, "check-eigen");
  const std::size_t h = 7, w = 6, c = 5;
  const auto u = blob(h, w, rng);
  Tensor v = random_tensor({c}, rng);
  Tensor map({h, w, c});
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t k = 0; k < c; ++k) map[i * c + k] = u[i] * v[k] + 1e-3 * rng.normal();
  const auto heat = eigen_cam(map);
  return cosine(heat.grid.values(), min_max(u));
}

// grad_cam with a linear head vs ReLU(sum_c w_c A[., ., c] / (H'W')) normalized by hand.
inline double linear_head_error(std::uint64_t seed) {
  Rng rng(seed, "check-linear-head");
  const std::size_t h = 5, w = 4, c = 6, k = 3;
  LinearHead head{random_tensor({k, c}, rng)};
  Tensor map = random_tensor({h, w, c}, rng, -0.5, 1.0);
  const std::size_t cls = rng.below(k);
  const auto heat = grad_cam(head, map, cls);
  std::vector<double> raw(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    double s = 0;
    for (std::size_t ch = 0; ch < c; ++ch) s += head.w(cls, ch) / static_cast<double>(h * w) * map[i * c + ch];
    raw[i] = std::max(0.0, s);
  }
  const auto want = min_max(raw);
  double err = 0;
  for (std::size_t i = 0; i < h * w; ++i) err = std::max(err, std::abs(heat.grid[i] - want[i]));
  return err;
}

// Analytic Grad-CAM gradients vs central differences of the class logit, both with respect to
// the pooled vector and to every cell of the spatial map (neighbor set held fixed).
inline double gradcam_fd_error(const GraphModel& model, const Tensor& map, std::size_t cls) {
  const auto pooled = global_average_pool(map);
  const auto nb = model.neighbors_for(pooled).nodes;
  const Tensor g = model.input_gradient(pooled, nb, cls);
  auto logit_of_pooled = [&](const Tensor& x) { return model.logits(x.values(), nb)[cls]; };
  double err = finite_diff_check(logit_of_pooled, Tensor::vector(pooled), g, kStep);

  const std::size_t hw = map.shape()[0] * map.shape()[1], c = map.shape()[2];
  Tensor dmap(map.shape());
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t k = 0; k < c; ++k) dmap[i * c + k] = g[k] / static_cast<double>(hw);
  auto logit_of_map = [&](const Tensor& m) { return model.logits(global_average_pool(m), nb)[cls]; };
  err = std::max(err, finite_diff_check(logit_of_map, map, dmap, kStep));
  return err;
}

}  // namespace leafgraph::checks
