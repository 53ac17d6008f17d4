#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "leafgraph/error.hpp"
#include "leafgraph/rng.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

// Affine map y = x W^T + b with gradient buffers of matching shapes.
// An empty bias tensor means the layer has no bias.
struct LayerParams {
  std::string name;
  Tensor weight;  // [out x in]
  Tensor bias;    // [out] or empty
  Tensor grad_weight;
  Tensor grad_bias;

  // Glorot-uniform weights from the stream named after the layer, zero bias.
  static LayerParams glorot(std::string name, std::size_t in, std::size_t out, Rng& rng, bool use_bias = true) {
    if (in == 0 || out == 0) throw ConfigError("layer '" + name + "': dimensions must be positive");
    LayerParams p;
    p.weight = Tensor({out, in});
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Rng stream = rng.substream(name);
    for (auto& w : p.weight.values()) w = stream.uniform(-limit, limit);
    p.bias = use_bias ? Tensor({out}) : Tensor({0});
    p.name = std::move(name);
    p.zero_grad();
    return p;
  }

  std::size_t in_dim() const { return weight.shape()[1]; }
  std::size_t out_dim() const { return weight.shape()[0]; }
  bool has_bias() const { return bias.size() != 0; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  void zero_grad() {
    grad_weight = Tensor(weight.shape());
    grad_bias = Tensor(bias.shape());
  }
};

inline Tensor linear_forward(const LayerParams& p, const Tensor& x) {
  require_matrix(x, "linear input");
  if (x.cols() != p.in_dim()) {
    throw ShapeError("linear '" + p.name + "': input " + shape_string(x.shape()) + " vs weight " +
                     shape_string(p.weight.shape()));
  }
  Tensor y = matmul_nt(x, p.weight);
  if (p.has_bias()) {
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += p.bias[j];
  }
  return y;
}

// Accumulates grad_weight += dy^T x, grad_bias += colsum(dy); returns dx = dy W.
inline Tensor linear_backward(LayerParams& p, const Tensor& x, const Tensor& dy) {
  if (dy.rows() != x.rows() || dy.cols() != p.out_dim()) {
    throw ShapeError("linear '" + p.name + "' backward: upstream " + shape_string(dy.shape()));
  }
  add_inplace(p.grad_weight, matmul_tn(dy, x));
  if (p.has_bias()) {
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j < dy.cols(); ++j) p.grad_bias[j] += dy(i, j);
  }
  return matmul(dy, p.weight);
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

// Subgradient at 0 is 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "relu_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  return dx;
}

// Inverted dropout: kept entries scaled by 1/(1-rate). Empty mask = identity (eval mode).
struct DropoutMask {
  Tensor scale;
};

inline Tensor dropout_forward(const Tensor& x, double rate, bool train, Rng& rng, DropoutMask* mask = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0)) throw RangeError("dropout: rate must be in [0,1)");
  if (!train || rate == 0.0) {
    if (mask) mask->scale = Tensor();
    return x;
  }
  Tensor m(x.shape());
  const double keep = 1.0 / (1.0 - rate);
  for (auto& v : m.values()) v = rng.uniform() < rate ? 0.0 : keep;
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= m[i];
  if (mask) mask->scale = std::move(m);
  return y;
}

inline Tensor dropout_backward(const DropoutMask& mask, const Tensor& dy) {
  if (mask.scale.empty()) return dy;
  require_same_shape(mask.scale, dy, "dropout_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask.scale[i];
  return dx;
}

// Row-wise max-subtracted softmax.
inline Tensor softmax(const Tensor& logits) {
  require_matrix(logits, "softmax");
  Tensor p = logits;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto r = p.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : r) v /= sum;
  }
  return p;
}

struct SoftmaxCrossEntropy {
  double loss = 0.0;  // batch mean of -sum_k y log p
  Tensor probs;
  Tensor dlogits;     // (probs - onehot) / B
};

inline SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, const Tensor& onehot) {
  require_same_shape(logits, onehot, "softmax_cross_entropy");
  if (logits.cols() < 2) throw ConfigError("softmax_cross_entropy: need at least 2 classes");
  const std::size_t b = logits.rows(), k = logits.cols();
  if (b == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  SoftmaxCrossEntropy out;
  out.probs = softmax(logits);
  out.dlogits = Tensor(logits.shape());
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double mx = *std::max_element(logits.row(i).begin(), logits.row(i).end());
    double lse = 0.0;
    for (std::size_t j = 0; j < k; ++j) lse += std::exp(logits(i, j) - mx);
    lse = mx + std::log(lse);
    for (std::size_t j = 0; j < k; ++j) {
      const double y = onehot(i, j);
      if (y != 0.0) out.loss -= y * (logits(i, j) - lse);
      out.dlogits(i, j) = (out.probs(i, j) - y) * inv_b;
    }
  }
  out.loss *= inv_b;
  return out;
}

// ---------------------------------------------------------------------------
// GCN layer: ReLU(A_hat H W^T + b)
// ---------------------------------------------------------------------------

struct GcnCache {
  Tensor propagated;  // A_hat H
  Tensor pre;         // before ReLU
};

inline Tensor gcn_forward(const Tensor& a_hat, const Tensor& h, const LayerParams& p, GcnCache* cache = nullptr) {
  require_matrix(a_hat, "gcn adjacency");
  if (a_hat.rows() != a_hat.cols() || a_hat.cols() != h.rows()) {
    throw ShapeError("gcn: adjacency " + shape_string(a_hat.shape()) + " vs features " + shape_string(h.shape()));
  }
  Tensor propagated = matmul(a_hat, h);
  Tensor pre = linear_forward(p, propagated);
  Tensor out = relu(pre);
  if (cache) {
    cache->propagated = std::move(propagated);
    cache->pre = std::move(pre);
  }
  return out;
}

// Returns dH; accumulates parameter gradients.
inline Tensor gcn_backward(const Tensor& a_hat, const GcnCache& cache, LayerParams& p, const Tensor& dy) {
  Tensor dpre = relu_backward(cache.pre, dy);
  Tensor dprop = linear_backward(p, cache.propagated, dpre);
  return matmul_tn(a_hat, dprop);
}

// ---------------------------------------------------------------------------
// GraphSAGE layer: ReLU(W [h_v || agg_v] + b), optional L2 row normalization
// ---------------------------------------------------------------------------

enum class Aggregator { mean, maxpool };

// Output row i combines input row self[i] with the aggregate of input rows neighbors[i].
struct SageBlock {
  std::vector<std::size_t> self;
  std::vector<std::vector<std::size_t>> neighbors;

  std::size_t size() const { return self.size(); }
};

struct SageLayer {
  LayerParams update;  // [out x 2*in]
  LayerParams pool;    // [in x in], maxpool only
  Aggregator aggregator = Aggregator::mean;
  bool l2_normalize = false;

  static SageLayer create(const std::string& name, std::size_t in, std::size_t out, Aggregator agg,
                          bool l2_normalize, Rng& rng, bool use_bias = true) {
    SageLayer l;
    l.update = LayerParams::glorot(name + ".update", 2 * in, out, rng, use_bias);
    if (agg == Aggregator::maxpool) l.pool = LayerParams::glorot(name + ".pool", in, in, rng, use_bias);
    l.aggregator = agg;
    l.l2_normalize = l2_normalize;
    return l;
  }

  std::size_t in_dim() const { return update.in_dim() / 2; }
  std::size_t out_dim() const { return update.out_dim(); }
  std::size_t parameter_count() const {
    return update.parameter_count() + (aggregator == Aggregator::maxpool ? pool.parameter_count() : 0);
  }
};

struct SageCache {
  Tensor pool_pre;  // maxpool: h_in P^T + pb
  Tensor pooled;    // maxpool: ReLU(pool_pre)
  std::vector<std::size_t> argmax;  // maxpool: [rows x in], SIZE_MAX when no neighbors
  Tensor concat;    // [h_self || agg]
  Tensor pre;
  Tensor act;
  std::vector<double> norms;
};

inline Tensor sage_forward(const SageLayer& layer, const SageBlock& block, const Tensor& h_in,
                           SageCache* cache = nullptr) {
  require_matrix(h_in, "sage input");
  const std::size_t f = layer.in_dim();
  if (h_in.cols() != f) {
    throw ShapeError("sage '" + layer.update.name + "': input width " + std::to_string(h_in.cols()) +
                     " but layer expects " + std::to_string(f));
  }
  if (block.neighbors.size() != block.size()) throw ShapeError("sage: block self/neighbor count mismatch");
  const std::size_t rows = block.size();
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();

  Tensor concat({rows, 2 * f});
  SageCache local;
  SageCache& c = cache ? *cache : local;
  if (layer.aggregator == Aggregator::maxpool) {
    c.pool_pre = linear_forward(layer.pool, h_in);
    c.pooled = relu(c.pool_pre);
    c.argmax.assign(rows * f, kNone);
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (block.self[i] >= h_in.rows()) throw RangeError("sage: self index out of range");
    auto out = concat.row(i);
    auto self = h_in.row(block.self[i]);
    std::copy(self.begin(), self.end(), out.begin());
    const auto& nb = block.neighbors[i];
    for (auto u : nb)
      if (u >= h_in.rows()) throw RangeError("sage: neighbor index out of range");
    if (nb.empty()) continue;  // aggregate of an empty neighborhood is the zero vector
    if (layer.aggregator == Aggregator::mean) {
      const double inv = 1.0 / static_cast<double>(nb.size());
      for (auto u : nb) {
        auto hu = h_in.row(u);
        for (std::size_t k = 0; k < f; ++k) out[f + k] += hu[k];
      }
      for (std::size_t k = 0; k < f; ++k) out[f + k] *= inv;
    } else {
      for (std::size_t k = 0; k < f; ++k) {
        std::size_t best = nb[0];
        for (auto u : nb)
          if (c.pooled(u, k) > c.pooled(best, k)) best = u;
        out[f + k] = c.pooled(best, k);
        c.argmax[i * f + k] = best;
      }
    }
  }
  Tensor pre = linear_forward(layer.update, concat);
  Tensor act = relu(pre);
  Tensor result = act;
  if (layer.l2_normalize) {
    c.norms.assign(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      const double n = std::max(l2_norm(act.row(i)), 1e-12);
      c.norms[i] = n;
      for (auto& v : result.row(i)) v /= n;
    }
  }
  if (cache) {
    c.concat = std::move(concat);
    c.pre = std::move(pre);
    c.act = std::move(act);
  }
  return result;
}

// Returns dh_in (same shape as h_in); accumulates parameter gradients.
inline Tensor sage_backward(SageLayer& layer, const SageBlock& block, const Tensor& h_in, const SageCache& c,
                            const Tensor& dout) {
  const std::size_t f = layer.in_dim(), rows = block.size();
  if (dout.rows() != rows || dout.cols() != layer.out_dim()) throw ShapeError("sage backward: upstream shape");
  Tensor dact = dout;
  if (layer.l2_normalize) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double n = c.norms[i];
      auto a = c.act.row(i);
      auto d = dact.row(i);
      double proj = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) proj += a[k] * dout(i, k);
      for (std::size_t k = 0; k < a.size(); ++k) d[k] = dout(i, k) / n - a[k] * proj / (n * n * n);
    }
  }
  Tensor dpre = relu_backward(c.pre, dact);
  Tensor dconcat = linear_backward(layer.update, c.concat, dpre);

  Tensor dh(h_in.shape());
  Tensor dpooled;
  if (layer.aggregator == Aggregator::maxpool) dpooled = Tensor(c.pooled.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    auto d = dconcat.row(i);
    auto ds = dh.row(block.self[i]);
    for (std::size_t k = 0; k < f; ++k) ds[k] += d[k];
    const auto& nb = block.neighbors[i];
    if (nb.empty()) continue;
    if (layer.aggregator == Aggregator::mean) {
      const double inv = 1.0 / static_cast<double>(nb.size());
      for (auto u : nb) {
        auto du = dh.row(u);
        for (std::size_t k = 0; k < f; ++k) du[k] += d[f + k] * inv;
      }
    } else {
      for (std::size_t k = 0; k < f; ++k) dpooled(c.argmax[i * f + k], k) += d[f + k];
    }
  }
  if (layer.aggregator == Aggregator::maxpool) {
    Tensor dpool_pre = relu_backward(c.pool_pre, dpooled);
    add_inplace(dh, linear_backward(layer.pool, h_in, dpool_pre));
  }
  return dh;
}

}  // namespace leafgraph
