#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "leafgraph/binary_io.hpp"
#include "leafgraph/error.hpp"
#include "leafgraph/image.hpp"
#include "leafgraph/rng.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { none, train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::none: break;
  }
  return "";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s.empty()) return Split::none;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

struct ManifestEntry {
  std::string sample_id;
  std::string label;
  Split split = Split::none;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_table;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;

  // Class table in first-appearance order, unless already set.
  void derive_class_table() {
    if (!class_table.empty()) return;
    std::unordered_set<std::string> seen;
    for (const auto& e : entries) {
      if (seen.insert(e.label).second) class_table.push_back(e.label);
    }
  }

  std::size_t class_index(std::string_view label) const {
    for (std::size_t i = 0; i < class_table.size(); ++i) {
      if (class_table[i] == label) return i;
    }
    throw FormatError("label '" + std::string(label) + "' missing from class table");
  }

  std::vector<std::size_t> rows_in(Split s) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].split == s) rows.push_back(i);
    }
    return rows;
  }

  void validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& e : entries) {
      if (!ids.insert(e.sample_id).second) throw FormatError("duplicate sample_id '" + e.sample_id + "'");
      (void)class_index(e.label);
    }
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    start = nl + 1;
  }
  return lines;
}

}  // namespace detail

// CSV `sample_id,label,split` with header; split may be empty.
inline DatasetManifest parse_manifest_csv(std::string_view text) {
  auto lines = detail::lines_of(text);
  if (lines.empty()) throw FormatError("manifest: empty file");
  auto header = detail::split_csv_line(lines[0]);
  if (header.size() < 2 || header[0] != "sample_id" || header[1] != "label" ||
      (header.size() >= 3 && header[2] != "split") || header.size() > 3) {
    throw FormatError("manifest: header must be 'sample_id,label,split'");
  }
  DatasetManifest m;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = detail::split_csv_line(lines[i]);
    if (f.size() != header.size()) {
      throw FormatError("manifest: line " + std::to_string(i + 1) + " has " + std::to_string(f.size()) +
                        " fields, expected " + std::to_string(header.size()));
    }
    if (f[0].empty()) throw FormatError("manifest: empty sample_id on line " + std::to_string(i + 1));
    m.entries.push_back({f[0], f[1], f.size() == 3 ? parse_split(f[2]) : Split::none});
  }
  m.derive_class_table();
  m.validate();
  return m;
}

inline std::string format_manifest_csv(const DatasetManifest& m) {
  std::string out = "sample_id,label,split\n";
  for (const auto& e : m.entries) {
    out += e.sample_id;
    out += ',';
    out += e.label;
    out += ',';
    out += to_string(e.split);
    out += '\n';
  }
  return out;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest_csv(read_file_text(path));
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  write_file_text(path, format_manifest_csv(m));
}

// N x K one-hot matrix; columns follow class_table order.
inline Tensor one_hot(const DatasetManifest& m) {
  if (m.class_table.empty()) throw ConfigError("one_hot: empty class table");
  Tensor t({m.entries.size(), m.class_table.size()});
  for (std::size_t i = 0; i < m.entries.size(); ++i) t(i, m.class_index(m.entries[i].label)) = 1.0;
  return t;
}

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  void validate() const {
    if (!(train > 0.0 && val >= 0.0 && test >= 0.0)) throw ConfigError("split: fractions must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
  }
};

// Stratified split. Within each class: shuffle, then train = floor(n*train) (at least one),
// val = floor(n*val), test takes the remainder.
inline DatasetManifest split(DatasetManifest m, SplitFractions fr, Rng& rng) {
  fr.validate();
  if (m.entries.empty()) throw ConfigError("split: empty manifest");
  m.derive_class_table();
  std::vector<std::vector<std::size_t>> by_class(m.class_table.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    by_class[m.class_index(m.entries[i].label)].push_back(i);
  }
  constexpr double eps = 1e-9;
  for (auto& rows : by_class) {
    rng.shuffle(std::span(rows));
    const std::size_t n = rows.size();
    if (n == 0) continue;
    std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * fr.train + eps)));
    n_train = std::min(n_train, n);
    std::size_t n_val = std::min(n - n_train, static_cast<std::size_t>(std::floor(n * fr.val + eps)));
    for (std::size_t i = 0; i < n; ++i) {
      m.entries[rows[i]].split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Feature store (LGFS)
// ---------------------------------------------------------------------------

enum class FeatureKind : std::uint8_t { pooled = 0, spatial = 1 };

struct FeatureStore {
  FeatureKind kind = FeatureKind::pooled;
  Shape dims;                   // [D] or [H', W', C']
  std::vector<float> payload;   // n * product(dims), row-major per sample
  std::vector<std::string> ids; // row -> sample_id

  friend bool operator==(const FeatureStore&, const FeatureStore&) = default;

  std::size_t row_size() const { return shape_volume(dims); }
  std::size_t size() const { return ids.size(); }

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(payload).subspan(i * row_size(), row_size());
  }

  std::optional<std::size_t> find(std::string_view id) const {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == id) return i;
    }
    return std::nullopt;
  }

  std::size_t row_of(std::string_view id) const {
    auto r = find(id);
    if (!r) throw FormatError("feature store has no sample '" + std::string(id) + "'");
    return *r;
  }

  Tensor row_tensor(std::size_t i) const {
    auto r = row(i);
    return Tensor(dims, std::vector<double>(r.begin(), r.end()));
  }

  void validate() const {
    if (kind == FeatureKind::pooled && dims.size() != 1) throw FormatError("pooled store must have rank 1");
    if (kind == FeatureKind::spatial && dims.size() != 3) throw FormatError("spatial store must have rank 3");
    if (payload.size() != ids.size() * row_size()) {
      throw FormatError("feature store payload length " + std::to_string(payload.size()) +
                        " != n * product(dims) = " + std::to_string(ids.size() * row_size()));
    }
  }

  // Rows for `row_ids` as an n x D double matrix (pooled stores only).
  Tensor matrix(std::span<const std::size_t> rows) const {
    if (kind != FeatureKind::pooled) throw ShapeError("matrix(): pooled store required");
    const std::size_t d = row_size();
    Tensor t({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto r = row(rows[i]);
      std::copy(r.begin(), r.end(), t.row(i).begin());
    }
    return t;
  }
};

// Per-channel global average of each H' x W' x C' map.
inline FeatureStore pooled_view(const FeatureStore& spatial) {
  if (spatial.kind == FeatureKind::pooled) return spatial;
  const std::size_t h = spatial.dims[0], w = spatial.dims[1], c = spatial.dims[2];
  FeatureStore out{FeatureKind::pooled, {c}, {}, spatial.ids};
  out.payload.resize(spatial.size() * c);
  std::vector<double> acc(c);
  for (std::size_t n = 0; n < spatial.size(); ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    auto r = spatial.row(n);
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t k = 0; k < c; ++k) acc[k] += r[p * c + k];
    for (std::size_t k = 0; k < c; ++k) out.payload[n * c + k] = static_cast<float>(acc[k] / static_cast<double>(h * w));
  }
  return out;
}

inline constexpr std::uint32_t kFeatureStoreVersion = 1;

inline std::vector<std::uint8_t> encode_feature_store(const FeatureStore& s) {
  s.validate();
  ByteWriter w;
  w.bytes("LGFS");
  w.put<std::uint32_t>(kFeatureStoreVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.kind));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.dims.size()));
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  for (auto d : s.dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (float v : s.payload) w.put<float>(v);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(s.payload.size()) * 4);
  return w.take();
}

// Decodes the binary part; ids are filled with the row number until the sibling CSV is read.
inline FeatureStore decode_feature_store(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "LGFS");
  r.expect_magic("LGFS");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFeatureStoreVersion) {
    throw UnsupportedVersionError("LGFS: unsupported version " + std::to_string(version));
  }
  FeatureStore s;
  const auto kind = r.get<std::uint8_t>("kind");
  if (kind > 1) r.fail("bad kind " + std::to_string(kind));
  s.kind = static_cast<FeatureKind>(kind);
  const auto rank = r.get<std::uint8_t>("rank");
  if (r.get<std::uint16_t>("reserved") != 0) r.fail("reserved field must be zero");
  const auto n = r.get<std::uint32_t>("n");
  for (std::uint8_t i = 0; i < rank; ++i) s.dims.push_back(r.get<std::uint32_t>("dims"));
  if ((s.kind == FeatureKind::pooled && rank != 1) || (s.kind == FeatureKind::spatial && rank != 3)) {
    r.fail("rank " + std::to_string(rank) + " inconsistent with kind");
  }
  const std::size_t count = static_cast<std::size_t>(n) * shape_volume(s.dims);
  const std::size_t payload_bytes = count * 4;
  if (r.remaining() < payload_bytes + 8) {
    throw FormatError("LGFS: truncated payload: expected " + std::to_string(payload_bytes + 8) +
                      " bytes (payload + footer), found " + std::to_string(r.remaining()));
  }
  s.payload.resize(count);
  for (auto& v : s.payload) v = r.get<float>("payload");
  const auto footer = r.get<std::uint64_t>("footer");
  if (footer != payload_bytes) {
    throw FormatError("LGFS: footer payload byte count " + std::to_string(footer) + " != " +
                      std::to_string(payload_bytes));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after footer");
  s.ids.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) s.ids[i] = std::to_string(i);
  return s;
}

inline std::filesystem::path id_index_path(const std::filesystem::path& store_path) {
  auto p = store_path;
  p.replace_extension(".ids.csv");
  return p;
}

inline void write_feature_store(const FeatureStore& s, const std::filesystem::path& path) {
  write_file_bytes(path, encode_feature_store(s));
  std::string csv = "sample_id,row\n";
  for (std::size_t i = 0; i < s.ids.size(); ++i) csv += s.ids[i] + "," + std::to_string(i) + "\n";
  write_file_text(id_index_path(path), csv);
}

inline FeatureStore read_feature_store(const std::filesystem::path& path) {
  FeatureStore s = decode_feature_store(read_file_bytes(path));
  const auto idx = id_index_path(path);
  if (std::filesystem::exists(idx)) {
    const std::string text = read_file_text(idx);
    auto lines = detail::lines_of(text);
    if (lines.empty() || lines[0] != "sample_id,row") throw FormatError("id index: bad header in " + idx.string());
    if (lines.size() - 1 != s.size()) {
      throw FormatError("id index: " + std::to_string(lines.size() - 1) + " rows, store has " +
                        std::to_string(s.size()));
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
      auto f = detail::split_csv_line(lines[i]);
      if (f.size() != 2) throw FormatError("id index: malformed line " + std::to_string(i + 1));
      const auto row = std::stoul(f[1]);
      if (row >= s.size()) throw FormatError("id index: row out of range on line " + std::to_string(i + 1));
      s.ids[row] = f[0];
    }
  }
  return s;
}

// Reorders/filters a store to follow manifest order.
inline FeatureStore align_to_manifest(const FeatureStore& s, const DatasetManifest& m) {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < s.ids.size(); ++i) index.emplace(s.ids[i], i);
  FeatureStore out{s.kind, s.dims, {}, {}};
  out.payload.reserve(m.entries.size() * s.row_size());
  for (const auto& e : m.entries) {
    auto it = index.find(e.sample_id);
    if (it == index.end()) throw FormatError("feature store lacks sample '" + e.sample_id + "'");
    auto r = s.row(it->second);
    out.payload.insert(out.payload.end(), r.begin(), r.end());
    out.ids.push_back(e.sample_id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic relational dataset
// ---------------------------------------------------------------------------

struct SynthOptions {
  bool orthogonal_centroids = false;  // test hook: centroids are scaled basis vectors
  std::size_t max_tries = 10000;
};

struct SynthDataset {
  DatasetManifest manifest;
  FeatureStore store;
  Tensor centroids;  // k x dim
};

inline SynthDataset synth_dataset(std::size_t k, std::size_t n_per_class, std::size_t dim, double sigma,
                                  Rng& rng, SynthOptions opts = {}) {
  if (k < 2 || n_per_class < 4 || dim < 2 || !(sigma > 0.0)) {
    throw ConfigError("synth: need k >= 2, n >= 4, dim >= 2, sigma > 0");
  }
  Tensor centroids({k, dim});
  if (opts.orthogonal_centroids) {
    if (k > dim) throw ConfigError("synth: orthogonal centroids need k <= dim");
    for (std::size_t c = 0; c < k; ++c) centroids(c, c) = 1.0;
  } else {
    Rng crng = rng.substream("centroids");
    std::size_t accepted = 0, tries = 0;
    std::vector<double> cand(dim);
    while (accepted < k) {
      if (++tries > opts.max_tries) {
        throw ConfigError("synth: centroid rejection sampling failed after " + std::to_string(opts.max_tries) +
                          " tries; lower k or raise dim");
      }
      for (auto& x : cand) x = crng.normal();
      const double nrm = l2_norm(cand);
      if (nrm == 0.0) continue;
      for (auto& x : cand) x /= nrm;
      bool ok = true;
      for (std::size_t j = 0; j < accepted && ok; ++j) ok = dot(cand, centroids.row(j)) <= 0.5;
      if (!ok) continue;
      std::copy(cand.begin(), cand.end(), centroids.row(accepted).begin());
      ++accepted;
    }
  }

  SynthDataset out;
  out.centroids = centroids;
  out.store.kind = FeatureKind::pooled;
  out.store.dims = {dim};
  out.store.payload.reserve(k * n_per_class * dim);
  Rng nrng = rng.substream("noise");
  for (std::size_t c = 0; c < k; ++c) {
    char label[32];
    std::snprintf(label, sizeof label, "class_%02zu", c);
    out.manifest.class_table.emplace_back(label);
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "s%05zu", c * n_per_class + i);
      out.manifest.entries.push_back({id, out.manifest.class_table[c], Split::none});
      out.store.ids.emplace_back(id);
      for (std::size_t d = 0; d < dim; ++d) {
        out.store.payload.push_back(static_cast<float>(centroids(c, d) + sigma * nrng.normal()));
      }
    }
  }
  return out;
}

struct SynthImageOptions {
  std::size_t side = 32;
  double background = 16.0;  // grey level of a zero latent
  double gain = 48.0;         // grey levels per unit of projected latent
  double pixel_noise = 24.0;  // grey levels
};

// Renders each latent feature row as a noisy side x side grayscale image:
// pixel = clamp(background + gain * (P x) + noise), P a fixed random projection with unit-norm rows.
inline std::vector<RawImage> synth_images(const FeatureStore& store, Rng& rng, SynthImageOptions opts = {}) {
  if (store.kind != FeatureKind::pooled) throw ShapeError("synth_images: pooled store required");
  const std::size_t dim = store.row_size(), pixels = opts.side * opts.side;
  Rng prng = rng.substream("projection");
  Tensor proj({pixels, dim});
  for (std::size_t p = 0; p < pixels; ++p) {
    for (auto& x : proj.row(p)) x = prng.normal();
    const double nrm = l2_norm(proj.row(p));
    for (auto& x : proj.row(p)) x /= nrm;
  }
  Rng nrng = rng.substream("pixel-noise");
  std::vector<RawImage> images;
  images.reserve(store.size());
  for (std::size_t n = 0; n < store.size(); ++n) {
    auto r = store.row(n);
    std::vector<double> x(r.begin(), r.end());
    RawImage img{opts.side, opts.side, 1, std::vector<std::uint8_t>(pixels)};
    for (std::size_t p = 0; p < pixels; ++p) {
      const double v = opts.background + opts.gain * dot(proj.row(p), x) + opts.pixel_noise * nrng.normal();
      img.data[p] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    images.push_back(std::move(img));
  }
  return images;
}

// Pooled store of pixel features (side*side) for the image-only ablation.
inline FeatureStore pixel_feature_store(const std::vector<RawImage>& images, const std::vector<std::string>& ids,
                                        std::size_t side = 32) {
  if (images.size() != ids.size()) throw ShapeError("pixel_feature_store: ids/images length mismatch");
  FeatureStore s{FeatureKind::pooled, {side * side}, {}, ids};
  s.payload.reserve(images.size() * side * side);
  for (const auto& img : images) {
    for (double v : pixel_features(img, side)) s.payload.push_back(static_cast<float>(v));
  }
  return s;
}

// Spatial maps whose global average is each pooled row: every sample gets one Gaussian
// blob at a random location, A[h,w,c] = x_c * (1 + contrast * (g(h,w) - mean g)).
inline FeatureStore synth_spatial(const FeatureStore& pooled, std::size_t height, std::size_t width, Rng& rng,
                                  double contrast = 1.5) {
  if (pooled.kind != FeatureKind::pooled) throw ShapeError("synth_spatial: pooled store required");
  if (height == 0 || width == 0) throw ConfigError("synth_spatial: map size must be positive");
  const std::size_t c = pooled.row_size(), hw = height * width;
  FeatureStore out{FeatureKind::spatial, {height, width, c}, {}, pooled.ids};
  out.payload.reserve(pooled.size() * hw * c);
  Rng brng = rng.substream("blobs");
  std::vector<double> g(hw);
  for (std::size_t n = 0; n < pooled.size(); ++n) {
    const double cy = brng.uniform(0.0, static_cast<double>(height - 1));
    const double cx = brng.uniform(0.0, static_cast<double>(width - 1));
    const double r = 0.2 * static_cast<double>(std::max(height, width)) + 0.5;
    double mean = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      const double dy = static_cast<double>(p / width) - cy, dx = static_cast<double>(p % width) - cx;
      g[p] = std::exp(-(dy * dy + dx * dx) / (2.0 * r * r));
      mean += g[p];
    }
    mean /= static_cast<double>(hw);
    auto x = pooled.row(n);
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k)
        out.payload.push_back(static_cast<float>(x[k] * (1.0 + contrast * (g[p] - mean))));
  }
  return out;
}

}  // namespace leafgraph
