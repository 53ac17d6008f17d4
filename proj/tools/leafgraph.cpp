// leafgraph command-line driver: synthetic data, splitting, graph building, training,
// evaluation, ablation, explanation heatmaps, parameter counts and the HTTP service.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "leafgraph/leafgraph.hpp"
#include "leafgraph/service.hpp"

namespace fs = std::filesystem;
using namespace leafgraph;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

void log(const std::string& msg) { std::cerr << "leafgraph: " << msg << "\n"; }

// Port bind failures and similar are runtime failures, not data errors.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by the pipeline subcommands. Unset flags leave the config file value alone.
struct Overrides {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> manifest, features, images, graph, checkpoint, out;
  std::optional<std::string> arch, aggregator;
  std::vector<std::size_t> hidden_dims, fan_outs;
  std::optional<double> dropout, lr, theta;
  std::optional<std::size_t> batch_size, epochs, min_degree;
  std::optional<bool> l2_normalize, augment;

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    if (seed) cfg.seed = *seed;
    if (manifest) cfg.paths.manifest = *manifest;
    if (features) cfg.paths.features = *features;
    if (images) cfg.paths.images = *images;
    if (graph) cfg.paths.graph = *graph;
    if (checkpoint) cfg.paths.checkpoint = *checkpoint;
    if (out) cfg.paths.out = *out;
    if (arch) cfg.model.arch = parse_arch(*arch);
    if (aggregator) cfg.model.aggregator = parse_aggregator(*aggregator);
    if (!hidden_dims.empty()) cfg.model.hidden_dims = hidden_dims;
    if (!fan_outs.empty()) cfg.model.fan_outs = fan_outs;
    if (dropout) cfg.model.dropout = *dropout;
    if (lr) cfg.model.lr = *lr;
    if (theta) cfg.model.theta = *theta;
    if (batch_size) cfg.model.batch_size = *batch_size;
    if (epochs) cfg.model.epochs = *epochs;
    if (min_degree) cfg.model.min_degree = *min_degree;
    if (l2_normalize) cfg.model.l2_normalize = *l2_normalize;
    if (augment) cfg.augment_enabled = *augment;
    cfg.resolve_seed();
    if (cfg.model.arch == Arch::cnn_only && cfg.model.hidden_dims.size() > 1) {
      cfg.model.hidden_dims.resize(1);
    }
    cfg.validate();
    return cfg;
  }
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_file, "Pipeline config file (TOML subset)");
  cmd->add_option("--seed", o.seed, "Master seed (overrides config and LEAFGRAPH_SEED)");
  cmd->add_option("-o,--out", o.out, "Output directory");
}

void add_data_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--manifest", o.manifest, "Manifest CSV");
  cmd->add_option("--features", o.features, "Pooled LGFS feature store");
  cmd->add_option("--images", o.images, "Directory of <sample_id>.pgm/.ppm images");
  cmd->add_option("--graph", o.graph, "Graph cache (LGGR)");
}

void add_model_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--arch", o.arch, "cnn_only | gnn_only | parallel | sequential");
  cmd->add_option("--hidden", o.hidden_dims, "Hidden widths, one per SAGE layer");
  cmd->add_option("--aggregator", o.aggregator, "mean | maxpool");
  cmd->add_option("--dropout", o.dropout);
  cmd->add_option("--lr", o.lr);
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--theta", o.theta, "Cosine similarity threshold");
  cmd->add_option("--min-degree", o.min_degree, "Degree floor of the similarity graph");
  cmd->add_option("--fan-outs", o.fan_outs, "Neighbors sampled per hop during training");
  cmd->add_option("--l2-normalize", o.l2_normalize);
  cmd->add_option("--augment", o.augment, "Augment raw images each epoch (gnn_only)");
}

fs::path require_path(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("missing path: ") + what);
  return p;
}

DatasetManifest load_manifest(const PipelineConfig& cfg) {
  auto m = read_manifest(require_path(cfg.paths.manifest, "manifest"));
  m.validate();
  return m;
}

std::optional<fs::path> image_path(const fs::path& dir, const std::string& id) {
  for (const char* ext : {".pgm", ".ppm"}) {
    auto p = dir / (id + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

std::vector<RawImage> load_images(const fs::path& dir, const std::vector<std::string>& ids) {
  if (dir.empty()) throw ConfigError("gnn_only needs raw images: set paths.images or --images");
  std::vector<RawImage> images;
  images.reserve(ids.size());
  for (const auto& id : ids) {
    auto p = image_path(dir, id);
    if (!p) throw IoError("no image for sample '" + id + "' in " + dir.string());
    images.push_back(read_pnm(*p));
  }
  return images;
}

std::vector<std::string> manifest_ids(const DatasetManifest& m) {
  std::vector<std::string> ids;
  for (const auto& e : m.entries) ids.push_back(e.sample_id);
  return ids;
}

// Node features for an architecture: pooled CNN features, or raw pixels for gnn_only.
FeatureStore node_features(const PipelineConfig& cfg, Arch arch, const DatasetManifest& m) {
  if (arch == Arch::gnn_only) {
    const auto ids = manifest_ids(m);
    return pixel_feature_store(load_images(cfg.paths.images, ids), ids);
  }
  auto store = read_feature_store(require_path(cfg.paths.features, "features"));
  return store.kind == FeatureKind::spatial ? pooled_view(store) : store;
}

void write_json(const fs::path& path, const Json& j) { write_file_text(path, j.dump(2) + "\n"); }

Json report_json(const TrainingReport& r) {
  Json j;
  j["first_batch_loss"] = r.first_batch_loss ? Json(round_sig9(*r.first_batch_loss)) : Json(nullptr);
  auto& ep = j["epochs"] = Json::array();
  for (const auto& e : r.epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", round_sig9(e.train_loss)},
                  {"val_accuracy", e.val_accuracy ? Json(round_sig9(*e.val_accuracy)) : Json(nullptr)}});
  }
  return j;
}

GraphModel::EpochFeatureHook augment_hook(const PipelineConfig& cfg, const DatasetManifest& m) {
  if (!cfg.augment_enabled) return {};
  if (cfg.model.arch != Arch::gnn_only) {
    log("augmentation acts on raw images; ignored for " + std::string(to_string(cfg.model.arch)));
    return {};
  }
  std::vector<std::string> ids;
  for (auto r : m.rows_in(Split::train)) ids.push_back(m.entries[r].sample_id);
  auto images = std::make_shared<std::vector<RawImage>>(load_images(cfg.paths.images, ids));
  const auto spec = cfg.augment;
  const auto seed = cfg.model.seed;
  return [images, spec, seed](std::size_t epoch) {
    Rng rng = Rng(seed, "augment").substream(epoch);
    Tensor out({images->size(), 32 * 32});
    for (std::size_t i = 0; i < images->size(); ++i) {
      Tensor aug = augment(to_tensor((*images)[i]), spec, rng);
      Tensor small = resize_bilinear(to_grayscale(aug), 32, 32);
      auto px = normalize(small).values();
      std::copy(px.begin(), px.end(), out.row(i).begin());
    }
    return out;
  };
}

void maybe_use_graph_cache(GraphModel& model, const PipelineConfig& cfg) {
  if (cfg.paths.graph.empty() || !model.config().uses_graph()) return;
  if (fs::exists(cfg.paths.graph)) {
    auto g = read_graph(cfg.paths.graph);
    if (g.theta != static_cast<float>(cfg.model.theta)) {
      throw FormatError("graph cache theta " + std::to_string(g.theta) + " differs from config theta " +
                        std::to_string(cfg.model.theta));
    }
    model.use_graph(std::move(g));
    log("using graph cache " + cfg.paths.graph.string());
  } else {
    write_graph(model.graph(), cfg.paths.graph);
  }
}

// ---- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::size_t classes = 10, per_class = 50, dim = 64;
  double sigma = 0.35;
  bool images = false;
  std::size_t spatial = 0;
  double train = 0.8, val = 0.1, test = 0.1;
};

int cmd_synth(const Overrides& o, const SynthArgs& a) {
  auto cfg = o.resolve();
  cfg.split = {a.train, a.val, a.test};
  cfg.split.validate();
  const auto seed = *cfg.seed;
  Rng rng(seed, "synth");
  auto ds = synth_dataset(a.classes, a.per_class, a.dim, a.sigma, rng);
  Rng srng(seed, "split");
  ds.manifest = split(ds.manifest, cfg.split, srng);
  const auto& out = cfg.paths.out;
  write_manifest(out / "manifest.csv", ds.manifest);
  write_feature_store(ds.store, out / "features.lgfs");
  if (a.images) {
    Rng irng(seed, "images");
    auto imgs = synth_images(ds.store, irng);
    for (std::size_t i = 0; i < imgs.size(); ++i) write_pnm(out / "images" / (ds.store.ids[i] + ".pgm"), imgs[i]);
  }
  if (a.spatial) {
    Rng prng(seed, "spatial");
    write_feature_store(synth_spatial(ds.store, a.spatial, a.spatial, prng), out / "spatial.lgfs");
  }
  cfg.paths.manifest = out / "manifest.csv";
  cfg.paths.features = out / "features.lgfs";
  if (a.images) cfg.paths.images = out / "images";
  cfg.echo(out);
  log("wrote " + std::to_string(ds.manifest.entries.size()) + " samples to " + out.string());
  return 0;
}

int cmd_split(const Overrides& o, std::optional<double> train, std::optional<double> val, std::optional<double> test) {
  auto cfg = o.resolve();
  if (train) cfg.split.train = *train;
  if (val) cfg.split.val = *val;
  if (test) cfg.split.test = *test;
  cfg.split.validate();
  auto m = load_manifest(cfg);
  Rng rng(*cfg.seed, "split");
  m = split(m, cfg.split, rng);
  write_manifest(cfg.paths.out / "manifest.csv", m);
  cfg.paths.manifest = cfg.paths.out / "manifest.csv";
  cfg.echo(cfg.paths.out);
  Json counts;
  for (auto s : {Split::train, Split::val, Split::test}) counts[std::string(to_string(s))] = m.rows_in(s).size();
  std::cout << counts.dump() << "\n";
  return 0;
}

int cmd_build_graph(const Overrides& o, unsigned threads) {
  auto cfg = o.resolve();
  auto m = load_manifest(cfg);
  auto store = align_to_manifest(node_features(cfg, cfg.model.arch, m), m);
  const auto rows = m.rows_in(Split::train);
  if (rows.empty()) throw ConfigError("build-graph: training split is empty");
  SimilarityIndex index(store.matrix(rows));
  auto g = build_adjacency(index, GraphOptions{cfg.model.theta, cfg.model.min_degree, threads});
  const fs::path path = cfg.paths.graph.empty() ? cfg.paths.out / "graph.lggr" : cfg.paths.graph;
  write_graph(g, path);
  cfg.paths.graph = path;
  cfg.echo(cfg.paths.out);
  std::cout << Json{{"nodes", g.n}, {"edges", g.neighbors.size() / 2}, {"max_degree", g.max_degree()}}.dump() << "\n";
  return 0;
}

int cmd_train(const Overrides& o) {
  auto cfg = o.resolve();
  auto m = load_manifest(cfg);
  auto store = node_features(cfg, cfg.model.arch, m);
  auto model = GraphModel::build(cfg.model, store, m);
  maybe_use_graph_cache(model, cfg);
  log("training " + std::string(to_string(cfg.model.arch)) + " (" + std::to_string(model.parameter_count()) +
      " parameters)");
  auto report = train_model(model, store, m, augment_hook(cfg, m));
  for (const auto& e : report.epochs) {
    std::ostringstream line;
    line << "epoch " << e.epoch << " loss " << e.train_loss;
    if (e.val_accuracy) line << " val_acc " << *e.val_accuracy;
    log(line.str());
  }
  const fs::path ckpt = cfg.paths.checkpoint.empty() ? cfg.paths.out / "model.lgck" : cfg.paths.checkpoint;
  model.save(ckpt);
  write_json(cfg.paths.out / "training_report.json", report_json(report));
  cfg.paths.checkpoint = ckpt;
  cfg.echo(cfg.paths.out);
  log("checkpoint written to " + ckpt.string());
  return 0;
}

GraphModel load_model(const PipelineConfig& cfg) {
  auto model = GraphModel::load(require_path(cfg.paths.checkpoint, "checkpoint"));
  if (!cfg.paths.graph.empty() && fs::exists(cfg.paths.graph) && model.config().uses_graph()) {
    model.use_graph(read_graph(cfg.paths.graph));
  }
  return model;
}

int cmd_eval(const Overrides& o, const std::string& split_name, const std::string& averaging, bool table) {
  auto cfg = o.resolve();
  const Split split_id = parse_split(split_name);
  const Averaging avg = averaging == "macro" ? Averaging::macro : Averaging::weighted;
  if (averaging != "macro" && averaging != "weighted") throw ConfigError("averaging must be weighted or macro");
  auto model = load_model(cfg);
  auto m = load_manifest(cfg);
  auto store = node_features(cfg, model.config().arch, m);
  auto ev = evaluate(model, store, m, split_id);
  auto met = metrics(ev.confusion, avg);
  Json j;
  j["split"] = split_name;
  j["samples"] = ev.predicted.size();
  j.update(metrics_json(met, model.class_table()));
  write_json(cfg.paths.out / ("eval_" + split_name + ".json"), j);
  cfg.echo(cfg.paths.out);
  std::cout << (table ? metrics_table(met, model.class_table()) : j.dump(2) + "\n");
  return 0;
}

int cmd_ablate(const Overrides& o, const std::vector<std::string>& arch_names) {
  auto cfg = o.resolve();
  std::vector<Arch> archs;
  for (const auto& a : arch_names) archs.push_back(parse_arch(a));
  if (archs.empty()) archs.assign(std::begin(kAllArchs), std::end(kAllArchs));
  auto m = load_manifest(cfg);
  auto store = node_features(cfg, Arch::sequential, m);
  std::optional<FeatureStore> pixels;
  if (std::find(archs.begin(), archs.end(), Arch::gnn_only) != archs.end()) {
    pixels = node_features(cfg, Arch::gnn_only, m);
  }
  auto rows = ablate(store, pixels ? &*pixels : nullptr, m, cfg.model, archs);
  Json j = Json::array();
  std::printf("%-12s %9s %9s %9s %9s\n", "arch", "accuracy", "precision", "recall", "f1");
  for (const auto& r : rows) {
    j.push_back({{"arch", to_string(r.arch)},
                 {"accuracy", round_sig9(r.metrics.accuracy)},
                 {"precision", round_sig9(r.metrics.precision)},
                 {"recall", round_sig9(r.metrics.recall)},
                 {"f1", round_sig9(r.metrics.f1)}});
    std::printf("%-12s %9.4f %9.4f %9.4f %9.4f\n", std::string(to_string(r.arch)).c_str(), r.metrics.accuracy,
                r.metrics.precision, r.metrics.recall, r.metrics.f1);
  }
  write_json(cfg.paths.out / "ablation.json", j);
  cfg.echo(cfg.paths.out);
  return 0;
}

struct ExplainArgs {
  std::string spatial;
  std::vector<std::string> ids;
  std::string method = "gradcam";
  std::optional<std::string> class_label;
};

int cmd_explain(const Overrides& o, const ExplainArgs& a) {
  auto cfg = o.resolve();
  const CamSource method = parse_cam_source(a.method);
  auto store = read_feature_store(require_path(a.spatial, "spatial store"));
  if (store.kind != FeatureKind::spatial) throw FormatError("explain: " + a.spatial + " is not a spatial store");
  std::optional<GraphModel> model;
  if (method == CamSource::gradcam) model = load_model(cfg);
  std::vector<std::string> ids = a.ids.empty() ? store.ids : a.ids;
  Json summary = Json::array();
  for (const auto& id : ids) {
    Tensor map = store.row_tensor(store.row_of(id));
    Heatmap h;
    if (method == CamSource::eigencam) {
      h = eigen_cam(map);
    } else {
      std::size_t cls = 0;
      if (a.class_label) {
        const auto& t = model->class_table();
        auto it = std::find(t.begin(), t.end(), *a.class_label);
        if (it == t.end()) throw ConfigError("unknown class '" + *a.class_label + "'");
        cls = static_cast<std::size_t>(it - t.begin());
      } else {
        cls = model->predict_one(global_average_pool(map)).predicted;
      }
      h = grad_cam(*model, map, cls);
      summary.push_back({{"id", id}, {"class", model->class_table()[cls]}});
    }
    if (method == CamSource::eigencam) summary.push_back({{"id", id}});
    summary.back()["degenerate"] = h.degenerate;
    std::optional<RawImage> base;
    if (!cfg.paths.images.empty()) {
      if (auto p = image_path(cfg.paths.images, id)) base = read_pnm(*p);
    }
    const auto path = cfg.paths.out / (id + "_" + std::string(to_string(method)) + ".pgm");
    render(h, base ? &*base : nullptr, path);
    summary.back()["heatmap"] = path.filename().string();
  }
  write_json(cfg.paths.out / "heatmaps.json", summary);
  cfg.echo(cfg.paths.out);
  return 0;
}

int cmd_params(const Overrides& o, std::size_t input_dim, std::size_t classes, bool all) {
  auto cfg = o.resolve();
  std::vector<std::string> table;
  for (std::size_t k = 0; k < classes; ++k) table.push_back("class_" + std::to_string(k));
  Json j = Json::array();
  auto report = [&](const GraphModel& model) {
    Json layers = Json::array();
    for (const auto* p : model.parameters()) {
      layers.push_back({{"name", p->name},
                        {"weight", p->weight.shape()},
                        {"bias", p->has_bias() ? p->bias.size() : 0},
                        {"parameters", p->parameter_count()}});
    }
    j.push_back({{"arch", to_string(model.config().arch)},
                 {"input_dim", model.input_dim()},
                 {"classes", model.num_classes()},
                 {"parameters", model.parameter_count()},
                 {"layers", std::move(layers)}});
  };
  if (!cfg.paths.checkpoint.empty()) {
    report(GraphModel::load(cfg.paths.checkpoint));
  } else if (all) {
    for (auto a : kAllArchs) {
      auto mc = cfg.model;
      mc.arch = a;
      if (a == Arch::cnn_only) mc.hidden_dims = {mc.hidden_dims.front()};
      report(GraphModel::create(mc, a == Arch::gnn_only ? 32 * 32 : input_dim, table));
    }
  } else {
    report(GraphModel::create(cfg.model, input_dim, table));
  }
  cfg.echo(cfg.paths.out);
  std::cout << j.dump(2) << "\n";
  return 0;
}

httplib::Server* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const Overrides& o, std::optional<std::string> host, std::optional<int> port) {
  auto cfg = o.resolve();
  if (host) cfg.service.host = *host;
  if (port) {
    if (*port < 0 || *port > 65535) throw ConfigError("port out of range");
    cfg.service.port = static_cast<std::uint16_t>(*port);
  }
  auto model = std::make_shared<const GraphModel>(load_model(cfg));
  InferenceService service(model);
  cfg.echo(cfg.paths.out);
  httplib::Server server;
  const unsigned threads = std::max(1u, cfg.service.threads);
  server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  log("serving " + std::string(to_string(model->config().arch)) + " on " + cfg.service.host + ":" +
      std::to_string(cfg.service.port));
  try {
    service.serve(server, cfg.service.host, cfg.service.port);
  } catch (const IoError& e) {
    throw RuntimeFailure(e.what());
  }
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leafgraph: similarity-graph node classification over image features"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Overrides o;

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a synthetic manifest and LGFS feature store");
  add_config_flags(synth, o);
  synth->add_option("--classes", synth_args.classes)->check(CLI::Range(2, 1000));
  synth->add_option("--per-class", synth_args.per_class)->check(CLI::Range(4, 1000000));
  synth->add_option("--dim", synth_args.dim)->check(CLI::Range(2, 1000000));
  synth->add_option("--sigma", synth_args.sigma, "Per-coordinate noise standard deviation");
  synth->add_flag("--images", synth_args.images, "Also render 32x32 PGM images (for gnn_only)");
  synth->add_option("--spatial", synth_args.spatial, "Also write HxHxD spatial maps of this side (for explain)");
  synth->add_option("--train", synth_args.train);
  synth->add_option("--val", synth_args.val);
  synth->add_option("--test", synth_args.test);

  std::optional<double> split_train, split_val, split_test;
  auto* split_cmd = app.add_subcommand("split", "Assign stratified train/val/test splits");
  add_config_flags(split_cmd, o);
  split_cmd->add_option("--manifest", o.manifest);
  split_cmd->add_option("--train", split_train);
  split_cmd->add_option("--val", split_val);
  split_cmd->add_option("--test", split_test);

  unsigned graph_threads = 0;
  auto* build_graph = app.add_subcommand("build-graph", "Build and cache the training similarity graph");
  add_config_flags(build_graph, o);
  add_data_flags(build_graph, o);
  add_model_flags(build_graph, o);
  build_graph->add_option("--threads", graph_threads, "Similarity threads (0 = hardware)");

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_config_flags(train, o);
  add_data_flags(train, o);
  add_model_flags(train, o);
  train->add_option("--checkpoint", o.checkpoint, "Checkpoint output path");

  std::string eval_split = "test", averaging = "weighted";
  bool eval_table = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_config_flags(eval, o);
  add_data_flags(eval, o);
  eval->add_option("--checkpoint", o.checkpoint);
  eval->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--averaging", averaging)->check(CLI::IsMember({"weighted", "macro"}));
  eval->add_flag("--table", eval_table, "Print an aligned text table instead of JSON");

  std::vector<std::string> ablate_archs;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and score every architecture");
  add_config_flags(ablate_cmd, o);
  add_data_flags(ablate_cmd, o);
  add_model_flags(ablate_cmd, o);
  ablate_cmd->add_option("--archs", ablate_archs, "Subset of architectures")
      ->check(CLI::IsMember({"cnn_only", "gnn_only", "parallel", "sequential"}));

  ExplainArgs explain_args;
  auto* explain = app.add_subcommand("explain", "Grad-CAM or Eigen-CAM heatmaps for stored spatial maps");
  add_config_flags(explain, o);
  explain->add_option("--checkpoint", o.checkpoint);
  explain->add_option("--images", o.images, "Base images for overlays");
  explain->add_option("--spatial", explain_args.spatial, "Spatial LGFS store")->required();
  explain->add_option("--ids", explain_args.ids, "Sample ids (default: all)")->delimiter(',');
  explain->add_option("--method", explain_args.method)->check(CLI::IsMember({"gradcam", "eigencam"}));
  explain->add_option("--class", explain_args.class_label, "Class label to explain (default: predicted)");

  std::size_t params_dim = 1280, params_classes = 10;
  bool params_all = false;
  auto* params = app.add_subcommand("params", "Parameter-count report");
  add_config_flags(params, o);
  add_model_flags(params, o);
  params->add_option("--checkpoint", o.checkpoint, "Count a saved model instead");
  params->add_option("--input-dim", params_dim);
  params->add_option("--classes", params_classes);
  params->add_flag("--all-archs", params_all);

  std::optional<std::string> serve_host;
  std::optional<int> serve_port;
  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  add_config_flags(serve, o);
  serve->add_option("--checkpoint", o.checkpoint);
  serve->add_option("--graph", o.graph);
  serve->add_option("--host", serve_host);
  serve->add_option("--port", serve_port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(o, synth_args);
    if (*split_cmd) return cmd_split(o, split_train, split_val, split_test);
    if (*build_graph) return cmd_build_graph(o, graph_threads);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o, eval_split, averaging, eval_table);
    if (*ablate_cmd) return cmd_ablate(o, ablate_archs);
    if (*explain) return cmd_explain(o, explain_args);
    if (*params) return cmd_params(o, params_dim, params_classes, params_all);
    if (*serve) return cmd_serve(o, serve_host, serve_port);
  } catch (const ConfigError& e) {
    log(std::string("usage error: ") + e.what());
    return kExitUsage;
  } catch (const DivergenceError& e) {
    log(std::string("runtime failure: ") + e.what());
    return kExitRuntime;
  } catch (const RuntimeFailure& e) {
    log(std::string("runtime failure: ") + e.what());
    return kExitRuntime;
  } catch (const Error& e) {
    log(std::string("data error: ") + e.what());
    return kExitData;
  } catch (const std::exception& e) {
    log(std::string("runtime failure: ") + e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
