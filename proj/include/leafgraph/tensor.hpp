#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "leafgraph/error.hpp"

namespace leafgraph {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_volume(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const {
    if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  std::span<double> row(std::size_t i) {
    const std::size_t c = cols();
    return std::span<double>(data_).subspan(i * c, c);
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t c = cols();
    return std::span<const double>(data_).subspan(i * c, c);
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " must be a matrix, got shape " + shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// c = a * b. Accumulation order is fixed (i, t, j) so results do not depend on threading.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data().data() + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double ait = a(i, t);
      if (ait == 0.0) continue;
      const double* bt = b.data().data() + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += ait * bt[j];
    }
  }
  return c;
}

// c = a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  if (a.shape()[1] != b.shape()[1]) {
    throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data().data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data().data() + j * k;
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += ai[t] * bj[t];
      c(i, j) = s;
    }
  }
  return c;
}

// c = a^T * b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  if (a.shape()[0] != b.shape()[0]) {
    throw ShapeError("matmul_tn: inner dimensions disagree: " + shape_string(a.shape()) +
                     "^T x " + shape_string(b.shape()));
  }
  const std::size_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
  Tensor c({m, n});
  for (std::size_t t = 0; t < k; ++t) {
    const double* at = a.data().data() + t * m;
    const double* bt = b.data().data() + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double ati = at[i];
      if (ati == 0.0) continue;
      double* ci = c.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += ati * bt[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor c = a;
  for (auto& v : c.values()) v *= s;
  return c;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// Rows of `src` selected by `index`, in order.
inline Tensor gather_rows(const Tensor& src, std::span<const std::size_t> index) {
  const std::size_t c = src.cols();
  Tensor out({index.size(), c});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= src.rows()) throw RangeError("gather_rows: row index out of range");
    std::copy_n(src.row(index[i]).begin(), c, out.row(i).begin());
  }
  return out;
}

// [a | b] column-wise.
inline Tensor hconcat(const Tensor& a, const Tensor& b) {
  require_matrix(a, "hconcat lhs");
  require_matrix(b, "hconcat rhs");
  if (a.rows() != b.rows()) {
    throw ShapeError("hconcat: row counts differ " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t ca = a.cols(), cb = b.cols();
  Tensor c({a.rows(), ca + cb});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy_n(a.row(i).begin(), ca, c.row(i).begin());
    std::copy_n(b.row(i).begin(), cb, c.row(i).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return c;
}

// Splits columns [0, left) and [left, cols).
inline std::pair<Tensor, Tensor> hsplit(const Tensor& c, std::size_t left) {
  require_matrix(c, "hsplit");
  const std::size_t cols = c.cols();
  if (left > cols) throw ShapeError("hsplit: split point beyond column count");
  Tensor a({c.rows(), left}), b({c.rows(), cols - left});
  for (std::size_t i = 0; i < c.rows(); ++i) {
    auto r = c.row(i);
    std::copy_n(r.begin(), left, a.row(i).begin());
    std::copy(r.begin() + static_cast<std::ptrdiff_t>(left), r.end(), b.row(i).begin());
  }
  return {std::move(a), std::move(b)};
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace leafgraph
