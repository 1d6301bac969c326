#pragma once

// Slow, independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mpsguard/mps.hpp"
#include "mpsguard/tensor.hpp"

namespace oracle {

using mpsguard::MpsModel;
using mpsguard::Tensor;

/// Singular values by one-sided Jacobi rotations on the columns, sorted descending.
inline std::vector<double> jacobi_singular_values(const Tensor& m) {
  std::size_t rows = m.dim(0), cols = m.dim(1);
  bool flip = cols > rows;
  if (flip) std::swap(rows, cols);
  std::vector<std::vector<double>> c(cols, std::vector<double>(rows));
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) (flip ? c[i][j] : c[j][i]) = m(i, j);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < cols; ++p)
      for (std::size_t q = p + 1; q < cols; ++q) {
        double a = 0, b = 0, g = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          a += c[p][r] * c[p][r];
          b += c[q][r] * c[q][r];
          g += c[p][r] * c[q][r];
        }
        if (std::abs(g) <= 1e-300) continue;
        off = std::max(off, std::abs(g) / std::sqrt(a * b));
        const double zeta = (b - a) / (2 * g);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
        const double cs = 1 / std::sqrt(1 + t * t), sn = cs * t;
        for (std::size_t r = 0; r < rows; ++r) {
          const double x = c[p][r], y = c[q][r];
          c[p][r] = cs * x - sn * y;
          c[q][r] = sn * x + cs * y;
        }
      }
    if (off < 1e-15) break;
  }
  std::vector<double> s;
  for (const auto& col : c) {
    double n = 0;
    for (double v : col) n += v * v;
    s.push_back(std::sqrt(n));
  }
  std::sort(s.rbegin(), s.rend());
  return s;
}

/// Leg index of site k in a full multi-index laid out as (output, input 0, input 1, ...).
inline std::size_t leg_of(const MpsModel& m, std::size_t k, const std::vector<std::size_t>& idx) {
  if (k == m.output_site) return idx[0];
  return idx[1 + (k < m.output_site ? k : k - 1)];
}

/// One entry of M by multiplying the chain of bond matrices left to right.
inline double entry(const MpsModel& m, const std::vector<std::size_t>& idx) {
  std::vector<double> v{1.0};
  for (std::size_t k = 0; k < m.length(); ++k) {
    const std::size_t s = leg_of(m, k, idx);
    std::vector<double> next(m.right_bond(k), 0.0);
    for (std::size_t a = 0; a < v.size(); ++a)
      for (std::size_t b = 0; b < next.size(); ++b) next[b] += v[a] * m.entry(k, a, s, b);
    v = std::move(next);
  }
  return v[0];
}

/// Full tensor by looping over every multi-index.
inline Tensor materialize(const MpsModel& m) {
  mpsguard::Shape shape{m.out_dim};
  for (std::size_t i = 0; i < m.num_inputs(); ++i) shape.push_back(m.phys_dim);
  Tensor out(shape);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = shape.size(); a-- > 0;) {
      idx[a] = rem % shape[a];
      rem /= shape[a];
    }
    out.data()[flat] = entry(m, idx);
  }
  return out;
}

/// Three-leg slice of M around interior site j, every other leg pinned to 0.
inline Tensor slice_L(const MpsModel& m, std::size_t j) {
  const std::size_t b = m.bond_dim;
  Tensor out({b, b, b});
  std::vector<std::size_t> idx(m.length(), 0);
  for (std::size_t x = 0; x < b; ++x)
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t y = 0; y < b; ++y) {
        std::fill(idx.begin(), idx.end(), 0);
        auto set = [&](std::size_t k, std::size_t v) {
          if (k == m.output_site)
            idx[0] = v;
          else
            idx[1 + (k < m.output_site ? k : k - 1)] = v;
        };
        set(j - 1, x);
        set(j, s);
        set(j + 1, y);
        out(x, s, y) = entry(m, idx);
      }
  return out;
}

/// Gauss-Jordan inverse of a small square matrix.
inline Tensor inverse(const Tensor& a) {
  const std::size_t n = a.dim(0);
  std::vector<std::vector<double>> w(n, std::vector<double>(2 * n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) w[i][j] = a(i, j);
    w[i][n + i] = 1.0;
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(w[r][c]) > std::abs(w[piv][c])) piv = r;
    std::swap(w[c], w[piv]);
    const double d = w[c][c];
    for (auto& v : w[c]) v /= d;
    for (std::size_t r = 0; r < n; ++r)
      if (r != c) {
        const double f = w[r][c];
        for (std::size_t k = 0; k < 2 * n; ++k) w[r][k] -= f * w[c][k];
      }
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = w[i][n + j];
  return out;
}

/// Skeleton form computed from slices of M alone (left leg pinned to 0).
inline MpsModel skeleton_from_slices(const MpsModel& m) {
  const std::size_t n = m.length(), b = m.bond_dim;
  MpsModel out = m;
  out.sites.front() = Tensor::identity(b);
  out.sites.back() = Tensor::identity(b);
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const Tensor l = slice_L(m, j);
    if (j + 2 == n) {
      out.sites[j] = l;
      continue;
    }
    Tensor p({b, b});
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t y = 0; y < b; ++y) p(s, y) = l(0, s, y);
    const Tensor pinv = inverse(p);
    Tensor a({b, b, b});
    for (std::size_t x = 0; x < b; ++x)
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t y = 0; y < b; ++y) {
          double acc = 0;
          for (std::size_t z = 0; z < b; ++z) acc += l(x, s, z) * pinv(z, y);
          a(x, s, y) = acc;
        }
    out.sites[j] = a;
  }
  return out;
}

/// Central differences of f at every coordinate of x.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// Textbook two-pass Pearson correlation.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Relative error used for gradient checks.
inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace oracle
