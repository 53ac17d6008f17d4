// Acceptance runner: one PASS/FAIL line per primary criterion; exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>

#include "leafgraph/leafgraph.hpp"
#include "leafgraph/service.hpp"
#include "../support/checks.hpp"
#include "../support/explain_checks.hpp"

namespace fs = std::filesystem;
using namespace leafgraph;
using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <typename E, typename F>
bool throws(F&& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

struct Data {
  FeatureStore store;
  DatasetManifest manifest;
};

Data synth_split(std::uint64_t seed, std::size_t k, std::size_t per_class, std::size_t dim, double sigma) {
  Rng rng(seed, "synth");
  auto d = synth_dataset(k, per_class, dim, sigma, rng);
  Rng srng(seed, "split");
  return {d.store, split(d.manifest, {0.8, 0.1, 0.1}, srng)};
}

ModelConfig small_config(Arch arch, std::uint64_t seed) {
  ModelConfig c;
  c.arch = arch;
  c.hidden_dims = arch == Arch::cnn_only ? std::vector<std::size_t>{12} : std::vector<std::size_t>{12, 8};
  c.min_degree = 4;
  c.fan_outs = {5};
  c.epochs = 5;
  c.seed = seed;
  return c;
}

GraphModel trained(Arch arch, const Data& d, std::uint64_t seed) {
  auto m = GraphModel::build(small_config(arch, seed), d.store, d.manifest);
  m.train();
  return m;
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  struct Layer {
    const char* name;
    std::function<double(std::uint64_t)> err;
  };
  const Layer layers[] = {
      {"linear", checks::linear_grad_error},
      {"relu", checks::relu_grad_error},
      {"dropout", checks::dropout_grad_error},
      {"softmax_ce", checks::softmax_ce_grad_error},
      {"gcn", checks::gcn_grad_error},
      {"sage_mean", [](std::uint64_t s) { return checks::sage_grad_error(s, Aggregator::mean, false); }},
      {"sage_mean_l2", [](std::uint64_t s) { return checks::sage_grad_error(s, Aggregator::mean, true); }},
      {"sage_maxpool", [](std::uint64_t s) { return checks::sage_grad_error(s, Aggregator::maxpool, false); }},
  };
  double worst = 0;
  std::string worst_layer;
  for (const auto& l : layers)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const double e = l.err(seed);
      if (!(e <= worst)) {
        worst = e;
        worst_layer = l.name;
      }
    }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          fmt("8 layer variants x 5 seeds, max rel error %.2e (%s), %.2f s", worst, worst_layer.c_str(), secs)};
}

Outcome dense_oracle() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (auto agg : {Aggregator::mean, Aggregator::maxpool}) worst = std::max(worst, checks::sage_dense_oracle_error(seed, agg));
  return {worst < 1e-9, fmt("10 graphs x {mean, maxpool}, max abs diff %.2e", worst)};
}

Outcome gcn_equivalence() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) worst = std::max(worst, checks::gcn_hand_error(seed));
  const auto two = normalize_adjacency(SimilarityGraph::from_adjacency_lists({{1}, {0}}, 0.5f));
  const bool exact = two == Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}});
  return {worst < 1e-9 && exact, fmt("6-node hand assembly max diff %.2e; 2-node normalized adjacency %s", worst,
                                     exact ? "exact" : "differs")};
}

Outcome permutation_equivariance() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) worst = std::max(worst, checks::permutation_error(seed));
  return {worst < 1e-9, fmt("20 permutations, GCN + SAGE mean/maxpool, max diff %.2e", worst)};
}

Outcome metrics_lock() {
  Rng rng(0, "acceptance-cm");
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = 2 + rng.below(8);
    ConfusionMatrix cm{k, std::vector<std::uint64_t>(k * k), {}};
    for (auto& c : cm.counts) c = rng.below(4) == 0 ? 0 : rng.below(50);
    cm.counts[0] += 1;
    const auto m = metrics(cm);
    mismatches += m.recall != m.accuracy;
  }
  const auto b = metrics(ConfusionMatrix{2, {8, 2, 1, 9}, {}});
  const bool fixture = std::abs(b.accuracy - 0.85) < 1e-12 && std::abs(b.precision - 0.8535353535353536) < 1e-4;
  return {mismatches == 0 && fixture, fmt("weighted recall != accuracy in %d/100; binary fixture acc %.4f prec %.4f",
                                          mismatches, b.accuracy, b.precision)};
}

Outcome ablation_ordering() {
  const auto t0 = Clock::now();
  double cnn = 0, gnn = 0, par = 0, seq = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto d = synth_split(seed, 10, 50, 64, 0.35);
    Rng irng(seed, "images");
    auto pixels = pixel_feature_store(synth_images(d.store, irng), d.store.ids);
    ModelConfig c;
    c.hidden_dims = {64, 64};
    c.min_degree = 10;
    c.fan_outs = {10};
    c.seed = seed;
    for (const auto& row : ablate(d.store, &pixels, d.manifest, c)) {
      const double a = row.metrics.accuracy / 3.0;
      switch (row.arch) {
        case Arch::cnn_only: cnn += a; break;
        case Arch::gnn_only: gnn += a; break;
        case Arch::parallel: par += a; break;
        case Arch::sequential: seq += a; break;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {seq >= cnn + 0.05 && seq >= gnn && secs < 120.0,
          fmt("mean test accuracy over 3 seeds: cnn_only %.3f gnn_only %.3f parallel %.3f sequential %.3f; %.1f s", cnn,
              gnn, par, seq, secs)};
}

Outcome explainability() {
  double cos = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) cos = std::min(cos, checks::eigen_rank1_cosine(seed));
  double lin = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) lin = std::max(lin, checks::linear_head_error(seed));
  double fd = 0;
  const auto d = synth_split(21, 3, 12, 6, 0.3);
  for (auto arch : {Arch::sequential, Arch::parallel, Arch::cnn_only}) {
    const auto model = trained(arch, d, 21);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed, "map");
      fd = std::max(fd, checks::gradcam_fd_error(model, checks::random_tensor({4, 3, 6}, rng, 0.0, 1.0), seed % 3));
    }
  }
  return {cos >= 0.999 && lin < 1e-6 && fd < 1e-3,
          fmt("Eigen-CAM min cosine %.6f; Grad-CAM linear head max diff %.2e; gradient vs FD max rel error %.2e", cos,
              lin, fd)};
}

Outcome determinism(const fs::path& dir) {
  const auto d = synth_split(5, 4, 15, 8, 0.3);
  auto c = small_config(Arch::sequential, 5);
  auto run = [&](const std::string& name) {
    auto m = GraphModel::build(c, d.store, d.manifest);
    m.train();
    m.save(dir / (name + ".lgck"));
    write_graph(m.graph(), dir / (name + ".lggr"));
  };
  run("a");
  run("b");
  const bool ckpt = read_file_bytes(dir / "a.lgck") == read_file_bytes(dir / "b.lgck");
  const bool graph = read_file_bytes(dir / "a.lggr") == read_file_bytes(dir / "b.lggr");
  Rng rng(6);
  SimilarityIndex idx(checks::random_tensor({64, 16}, rng));
  bool threads = true;
  const auto one = idx.matrix(1);
  for (unsigned t : {2u, 3u, 8u}) threads = threads && idx.matrix(t) == one;
  threads = threads && build_adjacency(idx, {0.2, 3, 1}) == build_adjacency(idx, {0.2, 3, 5});
  return {ckpt && graph && threads, fmt("checkpoint bytes %s; graph cache bytes %s; similarity over 1/2/3/8 threads %s",
                                        ckpt ? "identical" : "differ", graph ? "identical" : "differ",
                                        threads ? "identical" : "differ")};
}

Outcome format_round_trips(const fs::path& dir) {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  const auto d = synth_split(7, 3, 10, 6, 0.3);

  write_feature_store(d.store, dir / "f.lgfs");
  const auto lgfs = read_file_bytes(dir / "f.lgfs");
  write_feature_store(read_feature_store(dir / "f.lgfs"), dir / "f2.lgfs");
  check(read_file_bytes(dir / "f2.lgfs") == lgfs, "LGFS round trip");
  Rng srng(7, "spatial");
  const auto spatial = encode_feature_store(synth_spatial(d.store, 3, 2, srng));
  check(encode_feature_store(decode_feature_store(spatial)) == spatial, "LGFS spatial round trip");

  const auto model = trained(Arch::sequential, d, 7);
  write_graph(model.graph(), dir / "g.lggr");
  const auto lggr = read_file_bytes(dir / "g.lggr");
  write_graph(read_graph(dir / "g.lggr"), dir / "g2.lggr");
  check(read_file_bytes(dir / "g2.lggr") == lggr, "LGGR round trip");

  model.save(dir / "m.lgck");
  const auto lgck = read_file_bytes(dir / "m.lgck");
  GraphModel::load(dir / "m.lgck").save(dir / "m2.lgck");
  check(read_file_bytes(dir / "m2.lgck") == lgck, "LGCK round trip");

  using Bytes = std::vector<std::uint8_t>;
  auto corruptions = [&](const char* name, const Bytes& good, auto decode) {
    auto magic = good;
    magic[0] ^= 0xFF;
    check(throws<FormatError>([&] { decode(magic); }), std::string(name) + " bad magic");
    auto version = good;
    version[4] = 0xE7;
    version[5] = 0x03;
    check(throws<UnsupportedVersionError>([&] { decode(version); }), std::string(name) + " version 999");
    auto cut = good;
    cut.resize(good.size() / 2);
    check(throws<FormatError>([&] { decode(cut); }), std::string(name) + " truncation");
    check(throws<FormatError>([&] { decode(Bytes(3, 0)); }), std::string(name) + " short header");
  };
  corruptions("LGFS", lgfs, [](const Bytes& b) { return decode_feature_store(b); });
  corruptions("LGGR", lggr, [](const Bytes& b) { return decode_graph(b); });
  corruptions("LGCK", lgck, [](const Bytes& b) { return GraphModel::decode_checkpoint(b); });
  check(throws<IoError>([&] { read_graph(dir / "missing.lggr"); }), "missing file");

  std::string detail = "LGFS/LGGR/LGCK write-read-write byte identical; magic/version/truncation errors typed";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " [" + f + "]";
  }
  return {failed.empty(), detail};
}

Outcome service_consistency() {
  const auto d = synth_split(8, 3, 15, 8, 0.3);
  auto model = std::make_shared<const GraphModel>(trained(Arch::sequential, d, 8));
  InferenceService s(model);
  double worst = 0;
  bool routes = true;
  const auto& x = model->train_features();
  const std::size_t n = std::min<std::size_t>(20, x.rows());
  for (std::size_t i = 0; i < n; ++i) {
    const auto offline = model->predict_one(x.row(i));
    Json req;
    req["features"] = std::vector<double>(x.row(i).begin(), x.row(i).end());
    const auto reply = s.handle("POST", "/v1/predict", req.dump());
    if (reply.status != 200) {
      routes = false;
      continue;
    }
    const auto j = Json::parse(reply.body);
    for (std::size_t k = 0; k < offline.probs.size(); ++k)
      worst = std::max(worst, std::abs(j["probs"][model->class_table()[k]].get<double>() - offline.probs[k]));
  }
  const bool codes = s.handle("POST", "/v1/predict", "{oops").status == 400 &&
                     s.handle("POST", "/v1/predict", R"({"features":"x"})").status == 400 &&
                     s.handle("POST", "/v1/predict", R"({"features":[1,2,3,4,5,6,7]})").status == 422 &&
                     s.handle("GET", "/health", "").body == R"({"status":"ok"})";

  httplib::Server server;
  const int port = 30000 + static_cast<int>(::getpid() % 20000);
  std::thread worker([&] { s.serve(server, "127.0.0.1", port); });
  server.wait_until_ready();
  Json req;
  req["features"] = std::vector<double>(x.row(0).begin(), x.row(0).end());
  const std::string body = req.dump();
  std::vector<std::string> replies(50);
  std::vector<std::thread> clients;
  for (int i = 0; i < 50; ++i) {
    clients.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      auto r = c.Post("/v1/predict", body, "application/json");
      replies[i] = r && r->status == 200 ? r->body : std::string("error");
    });
  }
  for (auto& t : clients) t.join();
  server.stop();
  worker.join();
  int same = 0;
  for (const auto& r : replies) same += r == replies[0] && r != "error";
  return {routes && worst < 1e-6 && codes && same == 50,
          fmt("%zu training rows, max |online - offline| %.2e; 400/422 guards %s; %d/50 concurrent bodies identical", n,
              worst, codes ? "ok" : "wrong", same)};
}

Outcome parameter_counting() {
  std::vector<std::string> classes;
  for (int k = 0; k < 10; ++k) classes.push_back("c" + std::to_string(k));
  const std::size_t D = 1280, K = 10;
  ModelConfig seq;
  seq.hidden_dims = {64};
  const std::size_t seq_formula = (64 * (2 * D) + 64) + (K * 64 + K);
  const std::size_t seq_count = GraphModel::create(seq, D, classes).parameter_count();
  ModelConfig cnn;
  cnn.arch = Arch::cnn_only;
  cnn.hidden_dims = {128};
  const std::size_t cnn_formula = 128 * D + 128 + K * 128 + K;
  const std::size_t cnn_count = GraphModel::create(cnn, D, classes).parameter_count();
  return {seq_count == seq_formula && cnn_count == cnn_formula,
          fmt("sequential [64]: (64*2560+64)+(10*64+10) = %zu, counted %zu; cnn_only [128]: formula %zu, counted %zu",
              seq_formula, seq_count, cnn_formula, cnn_count)};
}

}  // namespace

int main() {
  const auto scratch = fs::temp_directory_path() / ("leafgraph_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(scratch);
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"gradient-correctness", gradient_correctness},
      {"dense-oracle-equivalence", dense_oracle},
      {"gcn-equivalence", gcn_equivalence},
      {"permutation-equivariance", permutation_equivariance},
      {"metrics-convention-lock", metrics_lock},
      {"ablation-ordering", ablation_ordering},
      {"explainability-closed-forms", explainability},
      {"determinism", [&] { return determinism(scratch); }},
      {"format-round-trips", [&] { return format_round_trips(scratch); }},
      {"service-consistency", service_consistency},
      {"parameter-counting", parameter_counting},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(scratch);
  return failures == 0 ? 0 : 1;
}
