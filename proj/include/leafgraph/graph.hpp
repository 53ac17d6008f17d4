#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "leafgraph/binary_io.hpp"
#include "leafgraph/error.hpp"
#include "leafgraph/rng.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

enum class NormMode : std::uint8_t { sym, row, none };

// Undirected, unweighted sample graph in CSR form. Self-loops are never stored.
struct SimilarityGraph {
  std::uint32_t n = 0;
  float theta = 0.0f;
  std::vector<std::uint32_t> offsets{0};  // n + 1
  std::vector<std::uint32_t> neighbors;   // sorted per node
  NormMode norm_mode = NormMode::sym;

  friend bool operator==(const SimilarityGraph& a, const SimilarityGraph& b) {
    return a.n == b.n && a.theta == b.theta && a.offsets == b.offsets && a.neighbors == b.neighbors;
  }

  std::span<const std::uint32_t> neighbors_of(std::size_t v) const {
    return std::span<const std::uint32_t>(neighbors).subspan(offsets[v], offsets[v + 1] - offsets[v]);
  }
  std::size_t degree(std::size_t v) const { return offsets[v + 1] - offsets[v]; }
  std::size_t edge_slots() const { return neighbors.size(); }
  std::size_t max_degree() const {
    std::size_t m = 0;
    for (std::size_t v = 0; v < n; ++v) m = std::max(m, degree(v));
    return m;
  }

  static SimilarityGraph from_adjacency_lists(const std::vector<std::vector<std::uint32_t>>& adj, float theta) {
    SimilarityGraph g;
    g.n = static_cast<std::uint32_t>(adj.size());
    g.theta = theta;
    g.offsets.assign(1, 0);
    for (const auto& nb : adj) {
      std::vector<std::uint32_t> sorted = nb;
      std::sort(sorted.begin(), sorted.end());
      sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
      g.neighbors.insert(g.neighbors.end(), sorted.begin(), sorted.end());
      g.offsets.push_back(static_cast<std::uint32_t>(g.neighbors.size()));
    }
    return g;
  }
};

// Row norms plus feature rows; reused for pairwise and query similarities.
class SimilarityIndex {
 public:
  explicit SimilarityIndex(Tensor features) : features_(std::move(features)) {
    require_matrix(features_, "SimilarityIndex features");
    norms_.resize(features_.rows());
    for (std::size_t i = 0; i < features_.rows(); ++i) norms_[i] = l2_norm(features_.row(i));
  }

  const Tensor& features() const { return features_; }
  std::size_t size() const { return features_.rows(); }
  std::size_t dim() const { return features_.cols(); }
  bool is_zero(std::size_t i) const { return norms_[i] == 0.0; }

  // Cosine of row i vs row j; 0 when either is a zero vector.
  double pair(std::size_t i, std::size_t j) const {
    if (norms_[i] == 0.0 || norms_[j] == 0.0) return 0.0;
    return std::clamp(dot(features_.row(i), features_.row(j)) / (norms_[i] * norms_[j]), -1.0, 1.0);
  }

  double query(std::span<const double> q, double q_norm, std::size_t j) const {
    if (q_norm == 0.0 || norms_[j] == 0.0) return 0.0;
    return std::clamp(dot(q, features_.row(j)) / (q_norm * norms_[j]), -1.0, 1.0);
  }

  // Dense S with S_ii = 1 (0 for zero rows). Each entry is computed independently of the
  // thread partition, so the result does not depend on `threads`.
  Tensor matrix(unsigned threads = 0) const {
    const std::size_t n = size();
    Tensor s({n, n});
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
    auto work = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i)
        for (std::size_t j = 0; j < n; ++j) s(i, j) = i == j ? (is_zero(i) ? 0.0 : 1.0) : pair(i, j);
    };
    if (threads <= 1) {
      work(0, n);
      return s;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t lo = 0; lo < n; lo += chunk) pool.emplace_back(work, lo, std::min(n, lo + chunk));
    pool.clear();
    return s;
  }

 private:
  Tensor features_;
  std::vector<double> norms_;
};

struct GraphOptions {
  double theta = 0.7;
  std::size_t min_degree = 3;
  unsigned threads = 0;
};

// Top-k (by similarity, ties to lower index) among candidates j != self.
inline std::vector<std::uint32_t> top_k_similar(std::span<const double> sims, std::size_t k, std::size_t self) {
  std::vector<std::uint32_t> order;
  order.reserve(sims.size());
  for (std::size_t j = 0; j < sims.size(); ++j)
    if (j != self) order.push_back(static_cast<std::uint32_t>(j));
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
  order.resize(k);
  return order;
}

// Edge (i, j) iff S_ij > theta (both rows non-zero); then nodes with degree < min_degree
// are linked to their top-min_degree most similar nodes; the result is symmetrized.
inline SimilarityGraph build_adjacency(const SimilarityIndex& index, GraphOptions opts = {}) {
  const std::size_t n = index.size();
  if (n == 0) throw ConfigError("build_adjacency: no nodes");
  if (!(opts.theta >= -1.0 && opts.theta < 1.0)) throw RangeError("build_adjacency: theta must be in [-1, 1)");
  const Tensor s = index.matrix(opts.threads);
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (index.is_zero(i)) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && !index.is_zero(j) && s(i, j) > opts.theta) adj[i].push_back(static_cast<std::uint32_t>(j));
    }
  }
  std::vector<std::vector<std::uint32_t>> extra(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (adj[i].size() >= opts.min_degree) continue;
    for (auto j : top_k_similar(s.row(i), opts.min_degree, i)) {
      extra[i].push_back(j);
      extra[j].push_back(static_cast<std::uint32_t>(i));
    }
  }
  for (std::size_t i = 0; i < n; ++i) adj[i].insert(adj[i].end(), extra[i].begin(), extra[i].end());
  auto g = SimilarityGraph::from_adjacency_lists(adj, static_cast<float>(opts.theta));
  return g;
}

inline SimilarityGraph build_adjacency(const Tensor& features, GraphOptions opts = {}) {
  return build_adjacency(SimilarityIndex(features), opts);
}

struct Attachment {
  std::vector<std::uint32_t> nodes;  // ascending
  std::vector<double> similarity;
};

// Inductive attachment of a new node: the same threshold + degree-floor rule, against
// existing nodes only.
inline Attachment attach(const SimilarityIndex& index, std::span<const double> query, double theta,
                         std::size_t min_degree) {
  if (query.size() != index.dim()) {
    throw ShapeError("attach: query has " + std::to_string(query.size()) + " features, graph expects " +
                     std::to_string(index.dim()));
  }
  const double qn = l2_norm(query);
  std::vector<double> sims(index.size());
  for (std::size_t j = 0; j < index.size(); ++j) sims[j] = index.query(query, qn, j);
  std::vector<std::uint32_t> nodes;
  if (qn != 0.0) {
    for (std::size_t j = 0; j < index.size(); ++j)
      if (!index.is_zero(j) && sims[j] > theta) nodes.push_back(static_cast<std::uint32_t>(j));
  }
  if (nodes.size() < min_degree) {
    for (auto j : top_k_similar(sims, min_degree, index.size())) nodes.push_back(j);
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  }
  Attachment a;
  a.nodes = std::move(nodes);
  for (auto j : a.nodes) a.similarity.push_back(sims[j]);
  return a;
}

// A_hat = D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
inline Tensor normalize_adjacency(const SimilarityGraph& g, std::size_t dense_cap = 4096) {
  if (g.n > dense_cap) {
    throw ConfigError("normalize_adjacency: " + std::to_string(g.n) + " nodes exceeds dense cap " +
                      std::to_string(dense_cap) + "; use the sampled GraphSAGE path");
  }
  const std::size_t n = g.n;
  Tensor a({n, n});
  auto d = [&](std::size_t v) { return static_cast<double>(g.degree(v) + 1); };
  for (std::size_t v = 0; v < n; ++v) {
    a(v, v) = 1.0 / d(v);
    for (auto u : g.neighbors_of(v)) a(v, u) = 1.0 / std::sqrt(d(v) * d(u));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Neighbor sampling
// ---------------------------------------------------------------------------

struct SampledHop {
  std::vector<std::uint32_t> nodes;                   // frontier at this hop
  std::vector<std::vector<std::uint32_t>> neighbors;  // sampled neighbors of nodes[i]
};

// hops[k].nodes is the frontier whose neighbors were sampled with fan_outs[k]; the next
// frontier is that frontier plus everything sampled, in first-seen order, so every
// frontier is a prefix of the next one.
struct NeighborSample {
  std::vector<std::uint32_t> targets;
  std::vector<SampledHop> hops;
  std::vector<std::uint32_t> input_nodes;  // final frontier
};

inline std::vector<std::uint32_t> sample_without_replacement(std::span<const std::uint32_t> pool, std::size_t k,
                                                             Rng& rng) {
  std::vector<std::uint32_t> items(pool.begin(), pool.end());
  if (k >= items.size()) return items;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

inline NeighborSample sample_neighbors(const SimilarityGraph& g, std::span<const std::uint32_t> targets,
                                       std::span<const std::size_t> fan_outs, Rng& rng) {
  if (fan_outs.empty()) throw ConfigError("sample_neighbors: fan_outs must be non-empty");
  for (auto f : fan_outs)
    if (f < 1) throw ConfigError("sample_neighbors: every fan-out must be >= 1");
  NeighborSample s;
  s.targets.assign(targets.begin(), targets.end());
  std::vector<std::uint32_t> frontier;
  std::unordered_map<std::uint32_t, std::size_t> position;
  for (auto t : targets) {
    if (t >= g.n) throw RangeError("sample_neighbors: unknown node id " + std::to_string(t));
    if (!position.emplace(t, frontier.size()).second) throw ConfigError("sample_neighbors: duplicate target");
    frontier.push_back(t);
  }
  for (auto fan : fan_outs) {
    SampledHop hop;
    hop.nodes = frontier;
    for (auto v : hop.nodes) {
      hop.neighbors.push_back(sample_without_replacement(g.neighbors_of(v), fan, rng));
      for (auto u : hop.neighbors.back()) {
        if (position.emplace(u, frontier.size()).second) frontier.push_back(u);
      }
    }
    s.hops.push_back(std::move(hop));
  }
  s.input_nodes = std::move(frontier);
  return s;
}

// ---------------------------------------------------------------------------
// Graph cache (LGGR)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kGraphVersion = 1;

inline std::vector<std::uint8_t> encode_graph(const SimilarityGraph& g) {
  ByteWriter w;
  w.bytes("LGGR");
  w.put<std::uint32_t>(kGraphVersion);
  w.put<std::uint32_t>(g.n);
  w.put<float>(g.theta);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.neighbors.size()));
  for (auto o : g.offsets) w.put<std::uint32_t>(o);
  for (auto v : g.neighbors) w.put<std::uint32_t>(v);
  return w.take();
}

inline SimilarityGraph decode_graph(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "LGGR");
  r.expect_magic("LGGR");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kGraphVersion) throw UnsupportedVersionError("LGGR: unsupported version " + std::to_string(version));
  SimilarityGraph g;
  g.n = r.get<std::uint32_t>("n");
  g.theta = r.get<float>("theta");
  const auto edges = r.get<std::uint32_t>("edge_count");
  r.need((static_cast<std::size_t>(g.n) + 1 + edges) * 4, "CSR arrays");
  g.offsets.resize(static_cast<std::size_t>(g.n) + 1);
  for (auto& o : g.offsets) o = r.get<std::uint32_t>("offsets");
  g.neighbors.resize(edges);
  for (auto& v : g.neighbors) v = r.get<std::uint32_t>("neighbors");
  if (r.remaining() != 0) r.fail("trailing bytes");
  if (g.offsets.front() != 0 || g.offsets.back() != edges) throw FormatError("LGGR: offsets do not span edge list");
  for (std::size_t i = 0; i + 1 < g.offsets.size(); ++i)
    if (g.offsets[i] > g.offsets[i + 1]) throw FormatError("LGGR: offsets decrease at node " + std::to_string(i));
  for (auto v : g.neighbors)
    if (v >= g.n) throw FormatError("LGGR: neighbor id " + std::to_string(v) + " out of range");
  return g;
}

inline void write_graph(const SimilarityGraph& g, const std::filesystem::path& path) {
  write_file_bytes(path, encode_graph(g));
}

inline SimilarityGraph read_graph(const std::filesystem::path& path) { return decode_graph(read_file_bytes(path)); }

}  // namespace leafgraph
