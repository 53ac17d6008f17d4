#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "leafgraph/binary_io.hpp"
#include "leafgraph/error.hpp"
#include "leafgraph/rng.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

// 8-bit image, row-major, channel-interleaved.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> data;

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

namespace detail {

class PnmHeaderParser {
 public:
  explicit PnmHeaderParser(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 30)) fail(std::string("implausible ") + field);
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + field);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("expected whitespace after maxval");
    ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("pnm: " + what + " at byte offset " + std::to_string(pos_));
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Binary PGM (P5) or PPM (P6), maxval 255.
inline RawImage decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("pnm: bad magic (expected P5 or P6) at byte offset 0");
  }
  RawImage img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  detail::PnmHeaderParser p(bytes.subspan(2));
  img.width = p.number("width");
  img.height = p.number("height");
  const std::size_t maxval = p.number("maxval");
  if (img.width == 0 || img.height == 0) p.fail("zero image dimension");
  if (maxval != 255) p.fail("unsupported maxval " + std::to_string(maxval) + " (need 255)");
  p.single_whitespace();
  const std::size_t start = 2 + p.offset();
  const std::size_t expected = img.width * img.height * img.channels;
  if (bytes.size() - start < expected) {
    throw FormatError("pnm: truncated raster: expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size() - start) + " at byte offset " +
                      std::to_string(start));
  }
  img.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                  bytes.begin() + static_cast<std::ptrdiff_t>(start + expected));
  return img;
}

inline std::vector<std::uint8_t> encode_pnm(const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("pnm: channels must be 1 or 3");
  if (img.data.size() != img.height * img.width * img.channels) {
    throw ShapeError("pnm: data length does not match dimensions");
  }
  ByteWriter w;
  w.bytes(img.channels == 3 ? "P6\n" : "P5\n");
  w.bytes(std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n");
  w.bytes(img.data);
  return w.take();
}

inline RawImage read_pnm(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_ppm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_pnm(const std::filesystem::path& path, const RawImage& img) {
  write_file_bytes(path, encode_pnm(img));
}

inline Tensor to_tensor(const RawImage& img) {
  Tensor t({img.height, img.width, img.channels});
  for (std::size_t i = 0; i < img.data.size(); ++i) t[i] = img.data[i];
  return t;
}

// Bilinear sample of channel c at continuous source coordinates, clamped to the edge.
inline double sample_bilinear(const Tensor& hwc, double y, double x, std::size_t c) {
  const std::size_t h = hwc.shape()[0], w = hwc.shape()[1], ch = hwc.shape()[2];
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto at = [&](std::size_t yy, std::size_t xx) { return hwc[(yy * w + xx) * ch + c]; };
  const double top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
  const double bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
  return top + (bot - top) * fy;
}

// Half-pixel-centre bilinear resize of an H x W x C tensor.
inline Tensor resize_bilinear(const Tensor& hwc, std::size_t out_h, std::size_t out_w) {
  if (hwc.rank() != 3) throw ShapeError("resize_bilinear: expected HxWxC tensor");
  if (out_h < 1 || out_w < 1) throw RangeError("resize_bilinear: output size must be >= 1");
  const std::size_t h = hwc.shape()[0], w = hwc.shape()[1], ch = hwc.shape()[2];
  Tensor out({out_h, out_w, ch});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double y = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double x = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      for (std::size_t c = 0; c < ch; ++c) out[(oy * out_w + ox) * ch + c] = sample_bilinear(hwc, y, x, c);
    }
  }
  return out;
}

inline Tensor resize_bilinear(const RawImage& img, std::size_t out_h, std::size_t out_w) {
  return resize_bilinear(to_tensor(img), out_h, out_w);
}

// Pixel scaling to [0, 1].
inline Tensor normalize(const Tensor& img) {
  Tensor out = img;
  for (auto& v : out.values()) {
    if (!(v >= 0.0 && v <= 255.0)) throw RangeError("normalize: value outside [0,255]");
    v /= 255.0;
  }
  return out;
}

inline Tensor to_grayscale(const Tensor& hwc) {
  const std::size_t h = hwc.shape()[0], w = hwc.shape()[1], ch = hwc.shape()[2];
  if (ch == 1) return hwc;
  Tensor out({h, w, 1});
  for (std::size_t i = 0; i < h * w; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < ch; ++c) s += hwc[i * ch + c];
    out[i] = s / static_cast<double>(ch);
  }
  return out;
}

// Node features for the image-only ablation: side x side grayscale, flattened, scaled to [0,1].
inline std::vector<double> pixel_features(const RawImage& img, std::size_t side = 32) {
  Tensor small = resize_bilinear(to_grayscale(to_tensor(img)), side, side);
  return normalize(small).values();
}

struct AugmentSpec {
  double max_rotation_deg = 20.0;
  bool horizontal_flip = true;
  double max_shift_frac = 0.2;
  double max_zoom_frac = 0.2;

  void validate() const {
    if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0))
      throw RangeError("augment: max_rotation_deg must be in [0,180]");
    if (!(max_shift_frac >= 0.0 && max_shift_frac < 1.0))
      throw RangeError("augment: max_shift_frac must be in [0,1)");
    if (!(max_zoom_frac >= 0.0 && max_zoom_frac < 1.0))
      throw RangeError("augment: max_zoom_frac must be in [0,1)");
  }
};

// One concrete draw of the augmentation parameters.
struct AugmentParams {
  double rotation_deg = 0.0;
  bool flip = false;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
  double zoom = 1.0;
};

// Always consumes five draws so later draws do not depend on the spec's flags.
inline AugmentParams sample_augment(const AugmentSpec& spec, std::size_t height, std::size_t width,
                                    Rng& rng) {
  spec.validate();
  AugmentParams p;
  p.rotation_deg = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
  const bool coin = rng.uniform() < 0.5;
  p.flip = spec.horizontal_flip && coin;
  p.shift_x = rng.uniform(-spec.max_shift_frac, spec.max_shift_frac) * static_cast<double>(width);
  p.shift_y = rng.uniform(-spec.max_shift_frac, spec.max_shift_frac) * static_cast<double>(height);
  p.zoom = rng.uniform(1.0 - spec.max_zoom_frac, 1.0 + spec.max_zoom_frac);
  return p;
}

namespace detail {

template <typename MapFn>
Tensor remap(const Tensor& img, MapFn&& source_of) {
  const std::size_t h = img.shape()[0], w = img.shape()[1], ch = img.shape()[2];
  Tensor out(img.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto [sy, sx] = source_of(static_cast<double>(y), static_cast<double>(x));
      for (std::size_t c = 0; c < ch; ++c) out[(y * w + x) * ch + c] = sample_bilinear(img, sy, sx, c);
    }
  }
  return out;
}

}  // namespace detail

// Applies rotate -> flip -> shift -> zoom with nearest-edge padding.
inline Tensor apply_augment(const Tensor& img, const AugmentParams& p) {
  if (img.rank() != 3) throw ShapeError("augment: expected HxWxC tensor");
  const double cy = (static_cast<double>(img.shape()[0]) - 1.0) / 2.0;
  const double cx = (static_cast<double>(img.shape()[1]) - 1.0) / 2.0;
  Tensor out = img;
  if (p.rotation_deg != 0.0) {
    const double rad = p.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    out = detail::remap(out, [&](double y, double x) {
      const double dy = y - cy, dx = x - cx;
      // inverse rotation maps output pixels back into the source
      return std::pair{cy - s * dx + c * dy, cx + c * dx + s * dy};
    });
  }
  if (p.flip) {
    const std::size_t h = out.shape()[0], w = out.shape()[1], ch = out.shape()[2];
    Tensor flipped(out.shape());
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t k = 0; k < ch; ++k)
          flipped[(y * w + x) * ch + k] = out[(y * w + (w - 1 - x)) * ch + k];
    out = std::move(flipped);
  }
  if (p.shift_x != 0.0 || p.shift_y != 0.0) {
    out = detail::remap(out, [&](double y, double x) { return std::pair{y - p.shift_y, x - p.shift_x}; });
  }
  if (p.zoom != 1.0) {
    out = detail::remap(out, [&](double y, double x) {
      return std::pair{cy + (y - cy) / p.zoom, cx + (x - cx) / p.zoom};
    });
  }
  return out;
}

inline Tensor augment(const Tensor& img, const AugmentSpec& spec, Rng& rng) {
  if (img.rank() != 3) throw ShapeError("augment: expected HxWxC tensor");
  return apply_augment(img, sample_augment(spec, img.shape()[0], img.shape()[1], rng));
}

}  // namespace leafgraph
