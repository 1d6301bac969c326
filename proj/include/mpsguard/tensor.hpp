#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <initializer_list>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mpsguard/errors.hpp"
#include "mpsguard/rng.hpp"

namespace mpsguard {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense real tensor, row-major with the last index fastest.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (shape_size(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  static Tensor diagonal(std::span<const double> diag) {
    Tensor t({diag.size(), diag.size()});
    for (std::size_t i = 0; i < diag.size(); ++i) t(i, i) = diag[i];
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  template <typename... Idx>
  double& operator()(Idx... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Idx>
  double operator()(Idx... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  double at(std::span<const std::size_t> idx) const { return data_[checked_offset(idx)]; }
  double& at(std::span<const std::size_t> idx) { return data_[checked_offset(idx)]; }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  }

  void require_same_shape(const Tensor& o, const char* op) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape_string(shape_) +
                       " vs " + shape_string(o.shape_));
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) off = off * shape_[axis++] + i;
    return off;
  }

  std::size_t checked_offset(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("index rank does not match tensor rank");
    std::size_t off = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      if (idx[a] >= shape_[a]) throw ShapeError("index out of range on axis " + std::to_string(a));
      off = off * shape_[a] + idx[a];
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// max|a-b| / (1 + max|b|): the relative residual used by every invariance check.
inline double relative_diff(const Tensor& a, const Tensor& reference) {
  return max_abs_diff(a, reference) / (1.0 + reference.max_abs());
}

inline Tensor reshape(const Tensor& t, Shape new_shape) {
  if (shape_size(new_shape) != t.size())
    throw ShapeError("reshape: cannot view " + shape_string(t.shape()) + " as " +
                     shape_string(new_shape));
  return Tensor(std::move(new_shape), t.values());
}

inline Tensor transpose(const Tensor& t, std::span<const std::size_t> perm) {
  const std::size_t r = t.rank();
  if (perm.size() != r) throw ShapeError("transpose: permutation length differs from rank");
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p]) throw ShapeError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t a = 0; a < r; ++a) out_shape[a] = t.dim(perm[a]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t a = r; a-- > 1;) in_strides[a - 1] = in_strides[a] * t.dim(a);

  Tensor out(out_shape);
  std::vector<std::size_t> idx(r, 0);
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < r; ++a) off += idx[a] * in_strides[perm[a]];
    dst[flat] = src[off];
    for (std::size_t a = r; a-- > 0;) {
      if (++idx[a] < out_shape[a]) break;
      idx[a] = 0;
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& t, std::initializer_list<std::size_t> perm) {
  return transpose(t, std::span<const std::size_t>(perm.begin(), perm.size()));
}

using AxisPair = std::pair<std::size_t, std::size_t>;

/// Sum over the paired axes. Result axes: unpaired axes of `a`, then unpaired axes of `b`.
inline Tensor contract(const Tensor& a, const Tensor& b, std::span<const AxisPair> axes) {
  std::vector<bool> used_a(a.rank(), false), used_b(b.rank(), false);
  for (auto [ia, ib] : axes) {
    const std::string pair = "(" + std::to_string(ia) + "," + std::to_string(ib) + ")";
    if (ia >= a.rank() || ib >= b.rank()) throw ShapeError("contract: axis pair " + pair + " out of range");
    if (used_a[ia] || used_b[ib]) throw ShapeError("contract: axis paired twice in " + pair);
    if (a.dim(ia) != b.dim(ib))
      throw ShapeError("contract: extent mismatch on axis pair " + pair + ": " +
                       std::to_string(a.dim(ia)) + " vs " + std::to_string(b.dim(ib)));
    used_a[ia] = used_b[ib] = true;
  }

  std::vector<std::size_t> perm_a, perm_b;
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (!used_a[i]) {
      perm_a.push_back(i);
      out_shape.push_back(a.dim(i));
    }
  for (auto [ia, ib] : axes) {
    perm_a.push_back(ia);
    perm_b.push_back(ib);
  }
  for (std::size_t i = 0; i < b.rank(); ++i)
    if (!used_b[i]) {
      perm_b.push_back(i);
      out_shape.push_back(b.dim(i));
    }

  std::size_t inner = 1;
  for (auto [ia, ib] : axes) inner *= a.dim(ia);
  const std::size_t rows = a.size() / inner;
  const std::size_t cols = b.size() / inner;

  const Tensor ap = transpose(a, perm_a);
  const Tensor bp = transpose(b, perm_b);
  std::vector<double> out(rows * cols, 0.0);
  auto x = ap.data();
  auto y = bp.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < inner; ++k) {
      const double v = x[i * inner + k];
      if (v == 0.0) continue;
      const double* yk = &y[k * cols];
      double* oi = &out[i * cols];
      for (std::size_t j = 0; j < cols; ++j) oi[j] += v * yk[j];
    }
  return Tensor(std::move(out_shape), std::move(out));
}

inline Tensor contract(const Tensor& a, const Tensor& b, std::initializer_list<AxisPair> axes) {
  return contract(a, b, std::span<const AxisPair>(axes.begin(), axes.size()));
}

/// Matrix product of two rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
  return contract(a, b, {{1, 0}});
}

inline Tensor transpose2(const Tensor& m) { return transpose(m, {1, 0}); }

struct Gaussian {
  double mean = 0.0;
  double stddev = 1.0;
};

struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};

using Distribution = std::variant<Gaussian, Uniform>;

inline Tensor random_tensor(Shape shape, const Distribution& dist, Rng& rng) {
  Tensor t(std::move(shape));
  if (const auto* g = std::get_if<Gaussian>(&dist)) {
    if (!(g->stddev > 0.0)) throw Error("random_tensor: stddev must be positive");
    std::normal_distribution<double> nd(g->mean, g->stddev);
    for (double& v : t.data()) v = nd(rng);
  } else {
    const auto& u = std::get<Uniform>(dist);
    if (!(u.hi > u.lo)) throw Error("random_tensor: empty uniform interval");
    std::uniform_real_distribution<double> ud(u.lo, u.hi);
    for (double& v : t.data()) v = ud(rng);
  }
  return t;
}

inline Tensor random_tensor(Shape shape, const Distribution& dist, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor(std::move(shape), dist, rng);
}

// Text record: "rank d1 .. dn" on one line, then the row-major data on the next.
// %.17g round-trips every finite double exactly.

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os << t.rank();
  for (std::size_t e : t.shape()) os << ' ' << e;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", t.data()[i]);
    if (i) os << ' ';
    os << buf;
  }
  os << '\n';
}

inline Tensor read_tensor(std::istream& is) {
  std::size_t rank = 0;
  if (!(is >> rank)) throw Error("read_tensor: missing rank");
  Shape shape(rank);
  for (auto& e : shape)
    if (!(is >> e)) throw Error("read_tensor: truncated shape");
  Tensor t(shape);
  std::string tok;
  for (double& v : t.data()) {
    if (!(is >> tok)) throw Error("read_tensor: truncated data");
    char* end = nullptr;
    v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw Error("read_tensor: bad number '" + tok + "'");
  }
  return t;
}

}  // namespace mpsguard
