#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "leafgraph/error.hpp"
#include "leafgraph/rng.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

struct SingularTriplet {
  Tensor u;  // [m], unit norm
  double sigma = 0.0;
  Tensor v;  // [n], unit norm
  bool converged = false;
  std::size_t iterations = 0;
};

struct PowerIterationOptions {
  std::size_t max_iters = 200;
  double tol = 1e-9;  // on successive sigma change
};

// Leading singular triplet by power iteration on a^T a.
// Sign convention: (u, v) flipped jointly so that sum(u) >= 0.
inline SingularTriplet top_singular_vector(const Tensor& a, PowerIterationOptions opts = {}) {
  require_matrix(a, "top_singular_vector");
  if (opts.max_iters < 1) throw RangeError("top_singular_vector: max_iters must be >= 1");
  if (!(opts.tol > 0.0)) throw RangeError("top_singular_vector: tol must be > 0");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  bool nonzero = false;
  for (double x : a.values()) {
    if (!std::isfinite(x)) throw RangeError("top_singular_vector: non-finite entry");
    nonzero = nonzero || x != 0.0;
  }
  if (!nonzero || m == 0 || n == 0) {
    throw DegenerateInputError("top_singular_vector: matrix is zero");
  }

  auto normalize = [](Tensor& t) {
    const double nrm = l2_norm(t.data());
    for (auto& x : t.values()) x /= nrm;
    return nrm;
  };

  // Fixed pseudo-random start so the iterate is never structurally orthogonal to the answer.
  Rng start(0x5EEDULL, "power-iteration");
  Tensor v({n, 1});
  for (auto& x : v.values()) x = start.uniform(-1.0, 1.0) + 1e-3;
  normalize(v);

  SingularTriplet out;
  double sigma_prev = -1.0;
  Tensor av;
  for (std::size_t it = 1; it <= opts.max_iters; ++it) {
    av = matmul(a, v);
    Tensor w = matmul_tn(a, av);
    const double wn = l2_norm(w.data());
    out.iterations = it;
    if (wn == 0.0) {
      // Start landed in the null space; perturb deterministically.
      for (std::size_t i = 0; i < n; ++i) v[i] += start.uniform(-1.0, 1.0);
      normalize(v);
      continue;
    }
    for (auto& x : w.values()) x /= wn;
    v = std::move(w);
    av = matmul(a, v);
    const double sigma = l2_norm(av.data());
    out.sigma = sigma;
    if (std::abs(sigma - sigma_prev) <= opts.tol * std::max(1.0, sigma)) {
      out.converged = true;
      break;
    }
    sigma_prev = sigma;
  }

  Tensor u = av.reshaped({m});
  if (out.sigma > 0.0) {
    for (auto& x : u.values()) x /= out.sigma;
  }
  v = v.reshaped({n});
  double usum = 0.0;
  for (double x : u.values()) usum += x;
  if (usum < 0.0) {
    for (auto& x : u.values()) x = -x;
    for (auto& x : v.values()) x = -x;
  }
  out.u = std::move(u);
  out.v = std::move(v);
  return out;
}

}  // namespace leafgraph
