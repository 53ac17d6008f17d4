#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "leafgraph/adam.hpp"
#include "leafgraph/binary_io.hpp"
#include "leafgraph/dataset.hpp"
#include "leafgraph/error.hpp"
#include "leafgraph/graph.hpp"
#include "leafgraph/layers.hpp"
#include "leafgraph/metrics.hpp"
#include "leafgraph/rng.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

// The four ablation architectures:
//   cnn_only   - MLP head on pooled CNN features
//   gnn_only   - SAGE stack over raw-pixel node features
//   parallel   - MLP branch and SAGE branch over the same features, embeddings concatenated
//   sequential - SAGE stack over CNN features (the proposed model)
enum class Arch { cnn_only, gnn_only, parallel, sequential };

inline constexpr Arch kAllArchs[] = {Arch::cnn_only, Arch::gnn_only, Arch::parallel, Arch::sequential};

inline std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::cnn_only: return "cnn_only";
    case Arch::gnn_only: return "gnn_only";
    case Arch::parallel: return "parallel";
    case Arch::sequential: return "sequential";
  }
  return "?";
}

inline Arch parse_arch(std::string_view s) {
  for (auto a : kAllArchs)
    if (to_string(a) == s) return a;
  throw ConfigError("unknown arch '" + std::string(s) + "'");
}

inline std::string_view to_string(Aggregator a) { return a == Aggregator::mean ? "mean" : "maxpool"; }

inline Aggregator parse_aggregator(std::string_view s) {
  if (s == "mean") return Aggregator::mean;
  if (s == "maxpool") return Aggregator::maxpool;
  throw ConfigError("unknown aggregator '" + std::string(s) + "'");
}

struct ModelConfig {
  Arch arch = Arch::sequential;
  std::vector<std::size_t> hidden_dims{64, 64};  // SAGE widths; front() is the MLP width
  Aggregator aggregator = Aggregator::mean;
  double dropout = 0.5;
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double theta = 0.7;
  std::size_t min_degree = 3;
  std::vector<std::size_t> fan_outs{10, 10};
  std::uint64_t seed = 0;
  bool use_bias = true;
  bool l2_normalize = false;

  bool uses_graph() const { return arch != Arch::cnn_only; }
  bool uses_mlp() const { return arch == Arch::cnn_only || arch == Arch::parallel; }
  std::size_t sage_depth() const { return uses_graph() ? hidden_dims.size() : 0; }

  // One fan-out per SAGE layer; a short list repeats its last entry.
  std::vector<std::size_t> fan_out_per_hop() const {
    std::vector<std::size_t> f(sage_depth());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = fan_outs[std::min(i, fan_outs.size() - 1)];
    return f;
  }

  void validate() const {
    if (hidden_dims.empty()) throw ConfigError("config: hidden_dims must be non-empty");
    for (auto h : hidden_dims)
      if (h == 0) throw ConfigError("config: hidden widths must be positive");
    if (arch == Arch::cnn_only && hidden_dims.size() != 1) throw ConfigError("config: cnn_only takes one hidden width");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("config: dropout must be in [0,1)");
    if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
    if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
    if (!(theta >= -1.0 && theta < 1.0)) throw ConfigError("config: theta must be in [-1,1)");
    if (uses_graph()) {
      if (fan_outs.empty()) throw ConfigError("config: fan_outs must be non-empty");
      for (auto f : fan_outs)
        if (f == 0) throw ConfigError("config: fan_outs must be positive");
    }
  }
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["arch"] = to_string(c.arch);
  j["hidden_dims"] = c.hidden_dims;
  j["aggregator"] = to_string(c.aggregator);
  j["dropout"] = c.dropout;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["theta"] = c.theta;
  j["min_degree"] = c.min_degree;
  j["fan_outs"] = c.fan_outs;
  j["seed"] = c.seed;
  j["use_bias"] = c.use_bias;
  j["l2_normalize"] = c.l2_normalize;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  c.arch = parse_arch(j.at("arch").get<std::string>());
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.aggregator = parse_aggregator(j.at("aggregator").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.theta = j.at("theta").get<double>();
  c.min_degree = j.at("min_degree").get<std::size_t>();
  c.fan_outs = j.at("fan_outs").get<std::vector<std::size_t>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.use_bias = j.at("use_bias").get<bool>();
  c.l2_normalize = j.at("l2_normalize").get<bool>();
  return c;
}

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_accuracy;
};

struct TrainingReport {
  std::vector<EpochReport> epochs;
  std::optional<double> first_batch_loss;
  std::vector<std::size_t> first_batch_targets;  // local training-node indices
};

// Class probabilities for one query plus the training nodes it was attached to.
struct Prediction {
  std::vector<double> probs;
  std::vector<double> logits;
  std::size_t predicted = 0;
  Attachment neighbors;
  std::optional<std::size_t> resolved_train_node;  // query identical to this training row
};

class GraphModel {
 public:
  // Architecture and freshly initialized parameters; no training data attached.
  static GraphModel create(const ModelConfig& config, std::size_t input_dim, std::vector<std::string> class_table) {
    config.validate();
    if (input_dim == 0) throw ConfigError("model: input dimension must be positive");
    if (class_table.size() < 2) throw ConfigError("model: need at least 2 classes");
    GraphModel m;
    m.config_ = config;
    m.input_dim_ = input_dim;
    m.class_table_ = std::move(class_table);
    Rng init(config.seed, "init");
    std::size_t penultimate = 0;
    if (config.uses_mlp()) {
      m.mlp_ = LayerParams::glorot("mlp", input_dim, config.hidden_dims.front(), init, config.use_bias);
      penultimate += config.hidden_dims.front();
    }
    if (config.uses_graph()) {
      std::size_t in = input_dim;
      for (std::size_t l = 0; l < config.hidden_dims.size(); ++l) {
        m.sage_.push_back(SageLayer::create("sage" + std::to_string(l), in, config.hidden_dims[l], config.aggregator,
                                            config.l2_normalize, init, config.use_bias));
        in = config.hidden_dims[l];
      }
      penultimate += in;
    }
    m.head_ = LayerParams::glorot("head", penultimate, m.class_table_.size(), init, config.use_bias);
    return m;
  }

  // Model for `manifest` with the training split of `store` attached (graph built).
  static GraphModel build(const ModelConfig& config, const FeatureStore& store, const DatasetManifest& manifest) {
    if (store.kind != FeatureKind::pooled) throw ShapeError("model: pooled feature store required");
    auto aligned = align_to_manifest(store, manifest);
    auto model = create(config, aligned.row_size(), manifest.class_table);
    auto rows = manifest.rows_in(Split::train);
    if (rows.empty()) throw ConfigError("model: training split is empty");
    std::vector<std::string> ids;
    std::vector<std::size_t> labels;
    for (auto r : rows) {
      ids.push_back(manifest.entries[r].sample_id);
      labels.push_back(manifest.class_index(manifest.entries[r].label));
    }
    model.attach_training_data(aligned.matrix(rows), std::move(ids), std::move(labels));
    return model;
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& class_table() const { return class_table_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_classes() const { return class_table_.size(); }
  const SimilarityGraph& graph() const { return graph_; }
  const Tensor& train_features() const { return index_ ? index_->features() : empty_; }
  const std::vector<std::string>& train_ids() const { return train_ids_; }
  const std::vector<std::size_t>& train_labels() const { return train_labels_; }
  const std::vector<SageLayer>& sage_layers() const { return sage_; }
  std::vector<SageLayer>& sage_layers() { return sage_; }
  const LayerParams& head() const { return head_; }
  LayerParams& head() { return head_; }
  const std::optional<LayerParams>& mlp() const { return mlp_; }
  std::optional<LayerParams>& mlp() { return mlp_; }

  std::size_t parameter_count() const {
    std::size_t n = head_.parameter_count();
    if (mlp_) n += mlp_->parameter_count();
    for (const auto& l : sage_) n += l.parameter_count();
    return n;
  }

  std::vector<LayerParams*> parameters() {
    std::vector<LayerParams*> ps;
    for (const auto* p : std::as_const(*this).parameters()) ps.push_back(const_cast<LayerParams*>(p));
    return ps;
  }

  std::vector<const LayerParams*> parameters() const {
    std::vector<const LayerParams*> ps;
    if (mlp_) ps.push_back(&*mlp_);
    for (const auto& l : sage_) {
      ps.push_back(&l.update);
      if (l.aggregator == Aggregator::maxpool) ps.push_back(&l.pool);
    }
    ps.push_back(&head_);
    return ps;
  }

  void attach_training_data(Tensor features, std::vector<std::string> ids, std::vector<std::size_t> labels) {
    if (features.cols() != input_dim_) throw ShapeError("model: training features have wrong width");
    if (features.rows() != ids.size() || ids.size() != labels.size()) throw ShapeError("model: training rows mismatch");
    index_.emplace(std::move(features));
    train_ids_ = std::move(ids);
    train_labels_ = std::move(labels);
    if (config_.uses_graph()) {
      graph_ = build_adjacency(*index_, GraphOptions{config_.theta, config_.min_degree});
    }
    refresh_embeddings();
  }

  // Replaces the CSR graph (e.g. from a graph cache); it must span the training rows.
  void use_graph(SimilarityGraph g) {
    if (g.n != train_ids_.size()) throw FormatError("graph has " + std::to_string(g.n) + " nodes, model has " +
                                                    std::to_string(train_ids_.size()) + " training rows");
    graph_ = std::move(g);
    refresh_embeddings();
  }

  // Full-neighborhood embeddings of every training node at every SAGE depth.
  void refresh_embeddings() {
    embeddings_.clear();
    if (!config_.uses_graph() || !index_) return;
    embeddings_.push_back(index_->features());
    const auto block = full_block();
    for (const auto& layer : sage_) embeddings_.push_back(sage_forward(layer, block, embeddings_.back()));
  }

  // Rounds every parameter to single precision (the checkpoint payload precision).
  void quantize_parameters() {
    for (auto* p : parameters()) {
      for (auto& v : p->weight.values()) v = static_cast<double>(static_cast<float>(v));
      for (auto& v : p->bias.values()) v = static_cast<double>(static_cast<float>(v));
    }
    refresh_embeddings();
  }

  // ---- inference -----------------------------------------------------------

  // Inductive attachment; a query identical to a training row reuses that node's neighborhood.
  Attachment neighbors_for(std::span<const double> x, std::optional<std::size_t>* resolved = nullptr) const {
    if (resolved) resolved->reset();
    if (!config_.uses_graph()) return {};
    if (auto hit = identical_training_row(x)) {
      if (resolved) *resolved = *hit;
      Attachment a;
      for (auto u : graph_.neighbors_of(*hit)) {
        a.nodes.push_back(u);
        a.similarity.push_back(index_->query(x, l2_norm(x), u));
      }
      return a;
    }
    return attach(*index_, x, config_.theta, config_.min_degree);
  }

  // Logits for a query with a fixed neighbor set (training-node indices).
  std::vector<double> logits(std::span<const double> x, std::span<const std::uint32_t> neighbors) const {
    return query_forward(x, neighbors, nullptr).logits.values();
  }

  Prediction predict_one(std::span<const double> x) const {
    check_query(x);
    Prediction p;
    p.neighbors = neighbors_for(x, &p.resolved_train_node);
    auto fwd = query_forward(x, p.neighbors.nodes, nullptr);
    p.logits = fwd.logits.values();
    p.probs = softmax(fwd.logits).values();
    p.predicted = static_cast<std::size_t>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
    return p;
  }

  // Row-wise class probabilities for rows x n x D; each row is independent of the others.
  Tensor predict_proba(const Tensor& queries) const {
    require_matrix(queries, "predict queries");
    Tensor out({queries.rows(), num_classes()});
    for (std::size_t i = 0; i < queries.rows(); ++i) {
      auto p = predict_one(queries.row(i));
      std::copy(p.probs.begin(), p.probs.end(), out.row(i).begin());
    }
    return out;
  }

  // d logit[class_index] / d x along the query's own path (neighbor embeddings held fixed).
  Tensor input_gradient(std::span<const double> x, std::size_t class_index) const {
    check_query(x);
    if (class_index >= num_classes()) throw RangeError("class index " + std::to_string(class_index) + " out of range");
    auto nb = neighbors_for(x);
    return input_gradient(x, nb.nodes, class_index);
  }

  Tensor input_gradient(std::span<const double> x, std::span<const std::uint32_t> neighbors,
                        std::size_t class_index) const {
    if (class_index >= num_classes()) throw RangeError("class index out of range");
    QueryCaches caches;
    auto fwd = query_forward(x, neighbors, &caches);
    // Work on a scratch copy: backward accumulates parameter gradients.
    GraphModel scratch = *this;
    Tensor dlogits({1, num_classes()});
    dlogits(0, class_index) = 1.0;
    Tensor dpen = linear_backward(scratch.head_, fwd.penultimate, dlogits);
    Tensor dx({1, input_dim_});
    std::size_t mlp_w = 0;
    if (mlp_) {
      mlp_w = mlp_->out_dim();
      auto [dmlp, rest] = hsplit(dpen, mlp_w);
      Tensor dpre = relu_backward(caches.mlp_pre, dmlp);
      add_inplace(dx, linear_backward(*scratch.mlp_, caches.mlp_in, dpre));
      dpen = std::move(rest);
    }
    if (!sage_.empty()) {
      Tensor d = dpen;
      for (std::size_t l = sage_.size(); l-- > 0;) {
        Tensor dh = sage_backward(scratch.sage_[l], caches.blocks[l], caches.inputs[l], caches.sage[l], d);
        d = Tensor({1, dh.cols()});
        std::copy(dh.row(0).begin(), dh.row(0).end(), d.row(0).begin());  // self path only
      }
      add_inplace(dx, d);
    }
    return dx.reshaped({input_dim_});
  }

  // ---- training ------------------------------------------------------------

  // Optional per-epoch replacement of the training feature rows used as SAGE inputs
  // (e.g. augmented views); the graph stays fixed.
  using EpochFeatureHook = std::function<Tensor(std::size_t epoch)>;

  TrainingReport train(EpochFeatureHook hook = {}, const Tensor* val_features = nullptr,
                       std::span<const std::size_t> val_labels = {}) {
    if (!index_ || train_ids_.empty()) throw ConfigError("train: no training data attached");
    TrainingReport report;
    const std::size_t n = train_ids_.size();
    Rng shuffle_rng(config_.seed, "shuffle");
    Rng sample_rng(config_.seed, "sample");
    Rng dropout_rng(config_.seed, "dropout");
    AdamState adam;
    adam.lr = config_.lr;
    auto params = parameters();
    const auto fan_outs = config_.fan_out_per_hop();

    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
      const Tensor features = hook ? hook(epoch) : index_->features();
      std::iota(order.begin(), order.end(), std::size_t{0});
      shuffle_rng.shuffle(std::span(order));
      double loss_sum = 0.0;
      for (std::size_t start = 0, batch = 0; start < n; start += config_.batch_size, ++batch) {
        const std::size_t end = std::min(n, start + config_.batch_size);
        std::span<const std::size_t> targets(order.data() + start, end - start);
        for (auto* p : params) p->zero_grad();
        const double loss = train_batch(features, targets, fan_outs, sample_rng, dropout_rng);
        if (!std::isfinite(loss)) {
          throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch + 1));
        }
        if (!report.first_batch_loss) {
          report.first_batch_loss = loss;
          report.first_batch_targets.assign(targets.begin(), targets.end());
        }
        loss_sum += loss * static_cast<double>(targets.size());
        adam_step(params, adam);
      }
      refresh_embeddings();
      EpochReport er{epoch, loss_sum / static_cast<double>(n), std::nullopt};
      if (val_features && val_features->rows() > 0) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < val_features->rows(); ++i)
          correct += predict_one(val_features->row(i)).predicted == val_labels[i];
        er.val_accuracy = static_cast<double>(correct) / static_cast<double>(val_features->rows());
      }
      report.epochs.push_back(er);
    }
    quantize_parameters();
    return report;
  }

  // Eval-mode mean cross-entropy over the given training nodes with full neighborhoods.
  double eval_loss(std::span<const std::size_t> targets) const {
    Tensor logits({targets.size(), num_classes()});
    Tensor onehot({targets.size(), num_classes()});
    for (std::size_t i = 0; i < targets.size(); ++i) {
      auto x = index_->features().row(targets[i]);
      std::vector<std::uint32_t> nb;
      if (config_.uses_graph()) nb.assign(graph_.neighbors_of(targets[i]).begin(), graph_.neighbors_of(targets[i]).end());
      auto l = query_forward(x, nb, nullptr).logits;
      std::copy(l.values().begin(), l.values().end(), logits.row(i).begin());
      onehot(i, train_labels_[targets[i]]) = 1.0;
    }
    return softmax_cross_entropy(logits, onehot).loss;
  }

  // ---- checkpoint ----------------------------------------------------------

  std::vector<std::uint8_t> encode_checkpoint() const;
  static GraphModel decode_checkpoint(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const { write_file_bytes(path, encode_checkpoint()); }
  static GraphModel load(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

 private:
  struct QueryForward {
    Tensor penultimate;
    Tensor logits;
  };
  struct QueryCaches {
    Tensor mlp_in, mlp_pre;
    std::vector<SageBlock> blocks;
    std::vector<Tensor> inputs;
    std::vector<SageCache> sage;
  };

  void check_query(std::span<const double> x) const {
    if (x.size() != input_dim_) {
      throw ShapeError("query has " + std::to_string(x.size()) + " features, model expects " +
                       std::to_string(input_dim_));
    }
  }

  std::optional<std::size_t> identical_training_row(std::span<const double> x) const {
    if (!index_) return std::nullopt;
    const auto& f = index_->features();
    for (std::size_t i = 0; i < f.rows(); ++i) {
      auto r = f.row(i);
      if (std::equal(r.begin(), r.end(), x.begin(), x.end())) return i;
    }
    return std::nullopt;
  }

  SageBlock full_block() const {
    SageBlock b;
    const std::size_t n = train_ids_.size();
    b.self.resize(n);
    b.neighbors.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      b.self[v] = v;
      for (auto u : graph_.neighbors_of(v)) b.neighbors[v].push_back(u);
    }
    return b;
  }

  // Single-query forward: layer l sees [h_q ; cached training embeddings of the neighbors].
  QueryForward query_forward(std::span<const double> x, std::span<const std::uint32_t> neighbors,
                             QueryCaches* caches) const {
    Tensor xin({1, input_dim_}, std::vector<double>(x.begin(), x.end()));
    Tensor penultimate({1, 0});
    if (mlp_) {
      Tensor pre = linear_forward(*mlp_, xin);
      penultimate = relu(pre);
      if (caches) {
        caches->mlp_in = xin;
        caches->mlp_pre = std::move(pre);
      }
    }
    if (!sage_.empty()) {
      if (embeddings_.size() != sage_.size() + 1) throw ConfigError("model: graph embeddings not initialized");
      SageBlock block;
      block.self = {0};
      block.neighbors.emplace_back();
      for (std::size_t i = 0; i < neighbors.size(); ++i) block.neighbors[0].push_back(i + 1);
      Tensor h = xin;
      for (std::size_t l = 0; l < sage_.size(); ++l) {
        const Tensor& emb = embeddings_[l];
        Tensor in({1 + neighbors.size(), h.cols()});
        std::copy(h.row(0).begin(), h.row(0).end(), in.row(0).begin());
        for (std::size_t i = 0; i < neighbors.size(); ++i)
          std::copy(emb.row(neighbors[i]).begin(), emb.row(neighbors[i]).end(), in.row(i + 1).begin());
        SageCache cache;
        h = sage_forward(sage_[l], block, in, caches ? &cache : nullptr);
        if (caches) {
          caches->blocks.push_back(block);
          caches->inputs.push_back(std::move(in));
          caches->sage.push_back(std::move(cache));
        }
      }
      penultimate = penultimate.cols() ? hconcat(penultimate, h) : h;
    }
    QueryForward out;
    out.logits = linear_forward(head_, penultimate);
    out.penultimate = std::move(penultimate);
    return out;
  }

  // One minibatch: forward in train mode, softmax-CE, backward. Returns the batch loss.
  double train_batch(const Tensor& features, std::span<const std::size_t> targets,
                     std::span<const std::size_t> fan_outs, Rng& sample_rng, Rng& dropout_rng) {
    const std::size_t b = targets.size();
    Tensor onehot({b, num_classes()});
    for (std::size_t i = 0; i < b; ++i) onehot(i, train_labels_[targets[i]]) = 1.0;

    Tensor penultimate({b, 0});
    Tensor mlp_in, mlp_pre;
    if (mlp_) {
      mlp_in = gather_rows(features, targets);
      mlp_pre = linear_forward(*mlp_, mlp_in);
      penultimate = relu(mlp_pre);
    }

    std::vector<SageBlock> blocks;
    std::vector<Tensor> inputs;
    std::vector<SageCache> caches(sage_.size());
    if (!sage_.empty()) {
      std::vector<std::uint32_t> t32(targets.begin(), targets.end());
      const auto sample = sample_neighbors(graph_, t32, fan_outs, sample_rng);
      std::unordered_map<std::uint32_t, std::size_t> pos;
      for (std::size_t i = 0; i < sample.input_nodes.size(); ++i) pos.emplace(sample.input_nodes[i], i);
      std::vector<std::size_t> input_rows(sample.input_nodes.begin(), sample.input_nodes.end());
      Tensor h = gather_rows(features, input_rows);
      const std::size_t depth = sage_.size();
      for (std::size_t l = 0; l < depth; ++l) {
        const auto& hop = sample.hops[depth - 1 - l];
        SageBlock block;
        for (std::size_t i = 0; i < hop.nodes.size(); ++i) {
          block.self.push_back(i);
          auto& nb = block.neighbors.emplace_back();
          for (auto u : hop.neighbors[i]) nb.push_back(pos.at(u));
        }
        Tensor out = sage_forward(sage_[l], block, h, &caches[l]);
        blocks.push_back(std::move(block));
        inputs.push_back(std::move(h));
        h = std::move(out);
      }
      penultimate = penultimate.cols() ? hconcat(penultimate, h) : h;
    }

    DropoutMask mask;
    Tensor dropped = dropout_forward(penultimate, config_.dropout, true, dropout_rng, &mask);
    Tensor logits = linear_forward(head_, dropped);
    auto ce = softmax_cross_entropy(logits, onehot);

    Tensor dpen = dropout_backward(mask, linear_backward(head_, dropped, ce.dlogits));
    if (mlp_) {
      auto [dmlp, rest] = hsplit(dpen, mlp_->out_dim());
      (void)linear_backward(*mlp_, mlp_in, relu_backward(mlp_pre, dmlp));
      dpen = std::move(rest);
    }
    Tensor d = std::move(dpen);
    for (std::size_t l = sage_.size(); l-- > 0;) d = sage_backward(sage_[l], blocks[l], inputs[l], caches[l], d);
    return ce.loss;
  }

  ModelConfig config_;
  std::size_t input_dim_ = 0;
  std::vector<std::string> class_table_;
  std::optional<LayerParams> mlp_;
  std::vector<SageLayer> sage_;
  LayerParams head_;

  std::optional<SimilarityIndex> index_;
  std::vector<std::string> train_ids_;
  std::vector<std::size_t> train_labels_;
  SimilarityGraph graph_;
  std::vector<Tensor> embeddings_;
  Tensor empty_;
};

// ---------------------------------------------------------------------------
// Checkpoint (LGCK): magic | u32 version | u32 header_len | JSON header | f32 payloads
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> GraphModel::encode_checkpoint() const {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  auto add = [&](const LayerParams& p) {
    tensors.emplace_back(p.name + ".weight", &p.weight);
    if (p.has_bias()) tensors.emplace_back(p.name + ".bias", &p.bias);
  };
  if (mlp_) add(*mlp_);
  for (const auto& l : sage_) {
    add(l.update);
    if (l.aggregator == Aggregator::maxpool) add(l.pool);
  }
  add(head_);
  if (index_) tensors.emplace_back("train_features", &index_->features());

  nlohmann::ordered_json header;
  header["arch"] = to_string(config_.arch);
  header["config"] = to_json(config_);
  header["class_table"] = class_table_;
  header["input_dim"] = input_dim_;
  header["train_ids"] = train_ids_;
  header["train_labels"] = train_labels_;
  auto& dir = header["tensors"] = nlohmann::ordered_json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::size_t len = t->size() * 4;
    dir[name] = {{"shape", t->shape()}, {"offset", offset}, {"length", len}};
    offset += len;
  }
  const std::string text = header.dump();
  ByteWriter w;
  w.bytes("LGCK");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (const auto& [name, t] : tensors)
    for (double v : t->values()) w.put<float>(static_cast<float>(v));
  return w.take();
}

inline GraphModel GraphModel::decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "LGCK");
  r.expect_magic("LGCK");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw UnsupportedVersionError("LGCK: unsupported version " + std::to_string(version));
  const auto header_len = r.get<std::uint32_t>("header_len");
  auto header_bytes = r.take(header_len, "header");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("LGCK: header is not valid JSON: ") + e.what());
  }
  const std::size_t payload_start = r.offset();
  try {
    const auto config = model_config_from_json(header.at("config"));
    GraphModel m = create(config, header.at("input_dim").get<std::size_t>(),
                          header.at("class_table").get<std::vector<std::string>>());
    const auto& dir = header.at("tensors");
    auto load = [&](const std::string& name, Tensor& into, bool required) {
      if (!dir.contains(name)) {
        if (required) throw FormatError("LGCK: missing tensor '" + name + "'");
        return false;
      }
      const auto& e = dir.at(name);
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      if (length != shape_volume(shape) * 4) throw FormatError("LGCK: tensor '" + name + "' length/shape mismatch");
      if (payload_start + offset + length > bytes.size()) {
        throw FormatError("LGCK: tensor '" + name + "' truncated: expected " + std::to_string(offset + length) +
                          " payload bytes, found " + std::to_string(bytes.size() - payload_start));
      }
      ByteReader tr(bytes.subspan(payload_start + offset, length), "LGCK " + name);
      Tensor t(shape);
      for (auto& v : t.values()) v = static_cast<double>(tr.get<float>("tensor"));
      if (!into.empty() || into.rank() > 0) {
        if (into.shape() != t.shape()) {
          throw FormatError("LGCK: tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                            shape_string(into.shape()));
        }
      }
      into = std::move(t);
      return true;
    };
    for (auto* p : m.parameters()) {
      load(p->name + ".weight", p->weight, true);
      if (p->has_bias()) load(p->name + ".bias", p->bias, true);
      p->zero_grad();
    }
    Tensor features;
    if (load("train_features", features, false)) {
      m.attach_training_data(std::move(features), header.at("train_ids").get<std::vector<std::string>>(),
                             header.at("train_labels").get<std::vector<std::size_t>>());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("LGCK: malformed header: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation and ablation
// ---------------------------------------------------------------------------

struct SplitEvaluation {
  ConfusionMatrix confusion;
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> truth;
};

inline SplitEvaluation evaluate(const GraphModel& model, const FeatureStore& store, const DatasetManifest& manifest,
                                Split split) {
  auto aligned = align_to_manifest(store, manifest);
  auto rows = manifest.rows_in(split);
  if (rows.empty()) throw ConfigError("evaluate: split '" + std::string(to_string(split)) + "' is empty");
  Tensor x = aligned.matrix(rows);
  SplitEvaluation ev;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ev.predicted.push_back(model.predict_one(x.row(i)).predicted);
    ev.truth.push_back(model.class_table().size() ? manifest.class_index(manifest.entries[rows[i]].label) : 0);
  }
  ev.confusion = confusion(ev.predicted, ev.truth, model.num_classes(), model.class_table());
  return ev;
}

// Trains on the train split (val accuracy reported per epoch).
inline TrainingReport train_model(GraphModel& model, const FeatureStore& store, const DatasetManifest& manifest,
                                  GraphModel::EpochFeatureHook hook = {}) {
  auto aligned = align_to_manifest(store, manifest);
  auto val_rows = manifest.rows_in(Split::val);
  Tensor val = aligned.matrix(val_rows);
  std::vector<std::size_t> val_labels;
  for (auto r : val_rows) val_labels.push_back(manifest.class_index(manifest.entries[r].label));
  return model.train(std::move(hook), &val, val_labels);
}

struct AblationRow {
  Arch arch;
  Metrics metrics;
  TrainingReport report;
};

// Trains each requested architecture with the same seed and budget and scores it on
// `eval_split`. Rows come back in the order cnn_only, gnn_only, parallel, sequential.
// gnn_only reads `pixel_store` (raw-pixel node features) and is skipped when it is null.
inline std::vector<AblationRow> ablate(const FeatureStore& store, const FeatureStore* pixel_store,
                                       const DatasetManifest& manifest, const ModelConfig& base,
                                       std::span<const Arch> archs = kAllArchs, Split eval_split = Split::test) {
  std::vector<Arch> todo;
  for (auto a : kAllArchs)
    if (std::find(archs.begin(), archs.end(), a) != archs.end()) todo.push_back(a);
  if (std::find(todo.begin(), todo.end(), Arch::gnn_only) != todo.end() && !pixel_store) {
    throw ConfigError("ablate: gnn_only requires raw images");
  }
  std::vector<std::future<AblationRow>> jobs;
  for (auto a : todo) {
    jobs.push_back(std::async(std::launch::async, [&, a] {
      ModelConfig cfg = base;
      cfg.arch = a;
      if (a == Arch::cnn_only) cfg.hidden_dims = {base.hidden_dims.front()};
      const FeatureStore& features = a == Arch::gnn_only ? *pixel_store : store;
      auto model = GraphModel::build(cfg, features, manifest);
      AblationRow row{a, {}, train_model(model, features, manifest)};
      row.metrics = metrics(evaluate(model, features, manifest, eval_split).confusion);
      return row;
    }));
  }
  std::vector<AblationRow> rows;
  for (auto& j : jobs) rows.push_back(j.get());
  return rows;
}

}  // namespace leafgraph
