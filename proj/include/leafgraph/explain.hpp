#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "leafgraph/error.hpp"
#include "leafgraph/image.hpp"
#include "leafgraph/linalg.hpp"
#include "leafgraph/model.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

enum class CamSource { gradcam, eigencam };

inline std::string_view to_string(CamSource s) { return s == CamSource::gradcam ? "gradcam" : "eigencam"; }

inline CamSource parse_cam_source(std::string_view s) {
  if (s == "gradcam") return CamSource::gradcam;
  if (s == "eigencam") return CamSource::eigencam;
  throw ConfigError("unknown explain method '" + std::string(s) + "'");
}

struct Heatmap {
  Tensor grid;  // [H' x W'], values in [0, 1]
  CamSource source = CamSource::eigencam;
  std::string sample_id;
  bool degenerate = false;  // raw map was zero or constant; grid is all zeros
};

// Min-max normalization of an H' x W' raw map. Constant maps become all zeros, flagged.
inline Heatmap normalized_heatmap(Tensor raw, CamSource source) {
  Heatmap h;
  h.source = source;
  const auto [lo, hi] = std::minmax_element(raw.values().begin(), raw.values().end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    raw.fill(0.0);
    h.degenerate = true;
  } else {
    for (auto& v : raw.values()) v = (v - mn) / (mx - mn);
  }
  h.grid = std::move(raw);
  return h;
}

inline void require_spatial(const Tensor& map, const char* what) {
  if (map.rank() != 3 || map.size() == 0) {
    throw ShapeError(std::string(what) + ": expected a non-empty H x W x C map, got " + shape_string(map.shape()));
  }
}

// Global average pool of an H' x W' x C' map.
inline std::vector<double> global_average_pool(const Tensor& map) {
  require_spatial(map, "global_average_pool");
  const std::size_t hw = map.shape()[0] * map.shape()[1], c = map.shape()[2];
  std::vector<double> pooled(c, 0.0);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t k = 0; k < c; ++k) pooled[k] += map[i * c + k];
  for (auto& v : pooled) v /= static_cast<double>(hw);
  return pooled;
}

inline Heatmap eigen_cam(const Tensor& map, PowerIterationOptions opts = {}) {
  require_spatial(map, "eigen_cam");
  const std::size_t h = map.shape()[0], w = map.shape()[1], c = map.shape()[2];
  Tensor m = map.reshaped({h * w, c});
  Tensor raw({h, w});
  try {
    const auto top = top_singular_vector(m, opts);
    const Tensor proj = matmul(m, top.v.reshaped({c, 1}));
    std::copy(proj.values().begin(), proj.values().end(), raw.values().begin());
  } catch (const DegenerateInputError&) {
    return normalized_heatmap(std::move(raw), CamSource::eigencam);
  }
  return normalized_heatmap(std::move(raw), CamSource::eigencam);
}

// Scorers expose d(class score)/d(pooled features).
template <typename S>
concept PooledScorer = requires(const S& s, std::span<const double> pooled, std::size_t k) {
  { s.pooled_gradient(pooled, k) } -> std::convertible_to<Tensor>;
  { s.num_classes() } -> std::convertible_to<std::size_t>;
};

// score_k = w[k] . pooled; used to check the Grad-CAM closed form.
struct LinearHead {
  Tensor w;  // [K x C]

  std::size_t num_classes() const { return w.rows(); }
  Tensor pooled_gradient(std::span<const double>, std::size_t k) const {
    Tensor g({w.cols()});
    std::copy(w.row(k).begin(), w.row(k).end(), g.values().begin());
    return g;
  }
};

// Logit of a trained model, differentiated along the query's own path.
struct ModelScorer {
  const GraphModel* model = nullptr;
  std::optional<std::vector<std::uint32_t>> neighbors;  // fixed attachment; default resolves per query

  std::size_t num_classes() const { return model->num_classes(); }
  Tensor pooled_gradient(std::span<const double> pooled, std::size_t k) const {
    if (neighbors) return model->input_gradient(pooled, *neighbors, k);
    return model->input_gradient(pooled, k);
  }
};

template <PooledScorer S>
Heatmap grad_cam(const S& scorer, const Tensor& map, std::size_t class_index) {
  require_spatial(map, "grad_cam");
  if (class_index >= scorer.num_classes()) {
    throw RangeError("grad_cam: class index " + std::to_string(class_index) + " out of range for " +
                     std::to_string(scorer.num_classes()) + " classes");
  }
  const std::size_t h = map.shape()[0], w = map.shape()[1], c = map.shape()[2];
  const auto pooled = global_average_pool(map);
  const Tensor g = scorer.pooled_gradient(pooled, class_index);
  if (g.size() != c) throw ShapeError("grad_cam: gradient width does not match channel count");
  // Under global average pooling dA[h,w,c] = g_c / (H'W') everywhere, so alpha_c is that value.
  std::vector<double> alpha(c);
  for (std::size_t k = 0; k < c; ++k) alpha[k] = g[k] / static_cast<double>(h * w);
  Tensor raw({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += alpha[k] * map[i * c + k];
    raw[i] = std::max(0.0, s);
  }
  return normalized_heatmap(std::move(raw), CamSource::gradcam);
}

inline Heatmap grad_cam(const GraphModel& model, const Tensor& map, std::size_t class_index) {
  return grad_cam(ModelScorer{&model, std::nullopt}, map, class_index);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// 8-bit grayscale heatmap, bilinearly resized to out_h x out_w (native size when 0).
inline RawImage heatmap_image(const Heatmap& h, std::size_t out_h = 0, std::size_t out_w = 0) {
  const std::size_t gh = h.grid.shape()[0], gw = h.grid.shape()[1];
  Tensor grid = h.grid.reshaped({gh, gw, 1});
  if (out_h && out_w && (out_h != gh || out_w != gw)) grid = resize_bilinear(grid, out_h, out_w);
  RawImage img{grid.shape()[0], grid.shape()[1], 1, {}};
  img.data.reserve(grid.size());
  for (double v : grid.values()) img.data.push_back(quantize_unit(v));
  return img;
}

// Fixed 256-entry blue -> cyan -> yellow -> red ramp:
//   t = i/255, r = clamp(1.5 - |4t - 3|), g = clamp(1.5 - |4t - 2|), b = clamp(1.5 - |4t - 1|),
//   each scaled by 255 and rounded.
inline const std::array<std::array<std::uint8_t, 3>, 256>& color_ramp() {
  static const auto ramp = [] {
    std::array<std::array<std::uint8_t, 3>, 256> r{};
    for (int i = 0; i < 256; ++i) {
      const double t = i / 255.0;
      auto ch = [&](double centre) { return quantize_unit(1.5 - std::abs(4.0 * t - centre)); };
      r[static_cast<std::size_t>(i)] = {ch(3.0), ch(2.0), ch(1.0)};
    }
    return r;
  }();
  return ramp;
}

// Side-by-side PPM: base image on the left, base blended 50/50 with the colored heatmap on the right.
inline RawImage heatmap_montage(const Heatmap& h, const RawImage& base) {
  if (base.channels != 1 && base.channels != 3) throw ShapeError("montage: base image must be gray or RGB");
  const RawImage gray = heatmap_image(h, base.height, base.width);
  const auto& ramp = color_ramp();
  RawImage out{base.height, base.width * 2, 3, std::vector<std::uint8_t>(base.height * base.width * 6)};
  for (std::size_t y = 0; y < base.height; ++y) {
    for (std::size_t x = 0; x < base.width; ++x) {
      const std::size_t src = y * base.width + x;
      std::array<std::uint8_t, 3> px{};
      for (std::size_t c = 0; c < 3; ++c) px[c] = base.data[src * base.channels + (base.channels == 3 ? c : 0)];
      const auto& col = ramp[gray.data[src]];
      std::uint8_t* left = &out.data[(y * out.width + x) * 3];
      std::uint8_t* right = &out.data[(y * out.width + base.width + x) * 3];
      for (std::size_t c = 0; c < 3; ++c) {
        left[c] = px[c];
        right[c] = static_cast<std::uint8_t>((px[c] + col[c] + 1) / 2);
      }
    }
  }
  return out;
}

// Writes <path> as a PGM heatmap and, when a base image is given, <stem>_overlay.ppm next to it.
inline void render(const Heatmap& h, const RawImage* base, const std::filesystem::path& path) {
  write_pnm(path, base ? heatmap_image(h, base->height, base->width) : heatmap_image(h));
  if (base) {
    auto overlay = path;
    overlay.replace_filename(path.stem().string() + "_overlay.ppm");
    write_pnm(overlay, heatmap_montage(h, *base));
  }
}

}  // namespace leafgraph
