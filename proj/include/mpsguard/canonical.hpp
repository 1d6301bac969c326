#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mpsguard/errors.hpp"
#include "mpsguard/linalg.hpp"
#include "mpsguard/mps.hpp"
#include "mpsguard/tensor.hpp"

namespace mpsguard {

// ---------------------------------------------------------------------------
// SVD-based canonical form

/// Left-orthogonal form built on the Schmidt bases of every bond.
///
/// A right-to-left sweep first makes sites 1..N-1 right-orthogonal; a
/// left-to-right SVD sweep then rotates each bond into its Schmidt basis,
/// leaving sites 0..N-2 left-orthogonal and the singular values folded into
/// the last site. For non-degenerate spectra the only freedom left is one
/// sign per Schmidt vector; each sweep resolves it by keeping the new basis
/// aligned with the incoming one (non-negative diagonal of the rotation), so
/// the signs are inherited from the input rather than fixed.
inline MpsModel svd_canonical(const MpsModel& m) {
  m.validate();
  const std::size_t n = m.length();
  const std::size_t b = m.bond_dim;
  if (m.leg_dim(0) < b || m.leg_dim(n - 1) < b)
    throw ShapeError("svd_canonical: boundary legs must be at least as large as the bond dimension");

  MpsModel out = m;
  for (std::size_t k = n - 1; k >= 1; --k) {
    auto [u, s, v] = svd(right_matrix(out, k));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (u(i, i) < 0.0) {
        for (std::size_t r = 0; r < u.dim(0); ++r) u(r, i) = -u(r, i);
        for (std::size_t r = 0; r < v.dim(0); ++r) v(r, i) = -v(r, i);
      }
    out.sites[k] = reshape(transpose2(v), out.site_shape(k));
    for (std::size_t r = 0; r < u.dim(0); ++r)
      for (std::size_t i = 0; i < s.size(); ++i) u(r, i) *= s[i];
    out.sites[k - 1] = reshape(matmul(left_matrix(out, k - 1), u), out.site_shape(k - 1));
  }
  for (std::size_t k = 0; k + 1 < n; ++k) {
    auto [u, s, v] = svd(left_matrix(out, k));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (v(i, i) < 0.0) {
        for (std::size_t r = 0; r < u.dim(0); ++r) u(r, i) = -u(r, i);
        for (std::size_t r = 0; r < v.dim(0); ++r) v(r, i) = -v(r, i);
      }
    out.sites[k] = reshape(u, out.site_shape(k));
    Tensor carry = transpose2(v);
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t c = 0; c < carry.dim(1); ++c) carry(i, c) *= s[i];
    out.sites[k + 1] = reshape(matmul(carry, right_matrix(out, k + 1)), out.site_shape(k + 1));
  }
  return out;
}

/// max over sites 0..N-2 of |sum_s A_s^T A_s - 1|_max.
inline double left_orthogonality_residual(const MpsModel& m) {
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < m.length(); ++k) {
    const Tensor x = left_matrix(m, k);
    const Tensor gram = matmul(transpose2(x), x);
    worst = std::max(worst, max_abs_diff(gram, Tensor::identity(gram.dim(0))));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Skeleton (univocal) canonical form
//
// Every quantity below is a slice of the materialized tensor with all legs
// outside a three-site window pinned to index 0, so it depends only on the
// function the model computes and never on the gauge. For an interior site j
//
//   L_j(beta, s, gamma) = M(0, .., 0, beta@j-1, s@j, gamma@j+1, 0, .., 0)
//
// and the intersection matrix P_j(s, gamma) = L_j(0, s, gamma) is the block
// of the bond-j unfolding at nested pivots. The canonical sites are
//
//   A_0 = 1,  A_j = L_j P_j^{-1}  (1 <= j <= N-3),  A_{N-2} = L_{N-2},  A_{N-1} = 1
//
// which is exact cross interpolation of M: the factor P_{N-2}^{-1} that would
// sit on the last interior site cancels against the final slice, which is
// P_{N-2} itself, and that product is the identity stored at site N-1.

enum class PinnedAxis { left = 0, middle = 1, right = 2 };

struct SkeletonOptions {
  PinnedAxis pinned = PinnedAxis::left;
  /// Also multiply the last interior site by its inverse intersection matrix.
  /// Exists only so tests can show that this placement breaks invariance.
  bool invert_last_interior = false;
  double cond_cap = kDefaultConditionCap;
};

namespace detail {

/// Row vector from contracting sites [0, stop) with every leg pinned to 0.
inline std::vector<double> pinned_left(const MpsModel& m, std::size_t stop) {
  std::vector<double> env{1.0};
  for (std::size_t k = 0; k < stop; ++k) {
    const std::size_t bl = m.left_bond(k), br = m.right_bond(k);
    std::vector<double> next(br, 0.0);
    for (std::size_t a = 0; a < bl; ++a)
      for (std::size_t c = 0; c < br; ++c) next[c] += env[a] * m.entry(k, a, 0, c);
    env = std::move(next);
  }
  return env;
}

/// Column vector from contracting sites (start, N) with every leg pinned to 0.
inline std::vector<double> pinned_right(const MpsModel& m, std::size_t start) {
  std::vector<double> env{1.0};
  for (std::size_t k = m.length(); k-- > start + 1;) {
    const std::size_t bl = m.left_bond(k), br = m.right_bond(k);
    std::vector<double> next(bl, 0.0);
    for (std::size_t a = 0; a < bl; ++a)
      for (std::size_t c = 0; c < br; ++c) next[a] += m.entry(k, a, 0, c) * env[c];
    env = std::move(next);
  }
  return env;
}

inline void require_uniform(const MpsModel& m) {
  m.validate();
  if (m.phys_dim != m.bond_dim || m.out_dim != m.bond_dim)
    throw ShapeError("skeleton canonical form needs equal leg and bond dimensions (d = b = out_dim), got d=" +
                     std::to_string(m.phys_dim) + " b=" + std::to_string(m.bond_dim) +
                     " out=" + std::to_string(m.out_dim));
  if (m.length() < 3) throw ShapeError("skeleton canonical form needs at least three sites");
}

}  // namespace detail

/// Three-site block at interior site j (1 <= j <= N-2) with the environment pinned
/// to leg index 0; axes are (leg of j-1, leg of j, leg of j+1).
inline Tensor build_L(const MpsModel& m, std::size_t j) {
  m.validate();
  if (j == 0 || j + 1 >= m.length())
    throw ShapeError("build_L: site " + std::to_string(j) + " is not interior");
  const auto left = detail::pinned_left(m, j - 1);
  const auto right = detail::pinned_right(m, j + 1);
  const std::size_t b = m.bond_dim;
  const std::size_t dl = m.leg_dim(j - 1), dj = m.leg_dim(j), dr = m.leg_dim(j + 1);

  // u(beta, x) = sum_a left[a] A_{j-1}(a, beta, x);  w(gamma, y) = sum_z A_{j+1}(y, gamma, z) right[z]
  std::vector<double> u(dl * b, 0.0), w(dr * b, 0.0);
  for (std::size_t a = 0; a < m.left_bond(j - 1); ++a)
    for (std::size_t be = 0; be < dl; ++be)
      for (std::size_t x = 0; x < b; ++x) u[be * b + x] += left[a] * m.entry(j - 1, a, be, x);
  for (std::size_t y = 0; y < b; ++y)
    for (std::size_t g = 0; g < dr; ++g)
      for (std::size_t z = 0; z < m.right_bond(j + 1); ++z) w[g * b + y] += m.entry(j + 1, y, g, z) * right[z];

  Tensor out({dl, dj, dr});
  for (std::size_t be = 0; be < dl; ++be)
    for (std::size_t s = 0; s < dj; ++s)
      for (std::size_t g = 0; g < dr; ++g) {
        double acc = 0.0;
        for (std::size_t x = 0; x < b; ++x)
          for (std::size_t y = 0; y < b; ++y) acc += u[be * b + x] * m.entry(j, x, s, y) * w[g * b + y];
        out(be, s, g) = acc;
      }
  return out;
}

/// Slice of a three-site block with `axis` pinned to index 0; remaining axes keep their order.
inline Tensor intersection_matrix(const Tensor& block, PinnedAxis axis = PinnedAxis::left) {
  if (block.rank() != 3) throw ShapeError("intersection_matrix: expected a rank-3 block");
  const std::size_t d0 = block.dim(0), d1 = block.dim(1), d2 = block.dim(2);
  switch (axis) {
    case PinnedAxis::left: {
      Tensor p({d1, d2});
      for (std::size_t i = 0; i < d1; ++i)
        for (std::size_t k = 0; k < d2; ++k) p(i, k) = block(0, i, k);
      return p;
    }
    case PinnedAxis::middle: {
      Tensor p({d0, d2});
      for (std::size_t i = 0; i < d0; ++i)
        for (std::size_t k = 0; k < d2; ++k) p(i, k) = block(i, 0, k);
      return p;
    }
    case PinnedAxis::right:
    default: {
      Tensor p({d0, d1});
      for (std::size_t i = 0; i < d0; ++i)
        for (std::size_t k = 0; k < d1; ++k) p(i, k) = block(i, k, 0);
      return p;
    }
  }
}

namespace detail {

inline Tensor checked_inverse(const Tensor& p, std::size_t site, double cond_cap) {
  try {
    return invert(p, cond_cap);
  } catch (const SingularMatrixError& e) {
    throw SingularIntersectionError("skeleton canonical form: intersection matrix at site " +
                                        std::to_string(site) + " is singular (condition " +
                                        std::to_string(e.condition()) + ")",
                                    site, e.condition());
  }
}

}  // namespace detail

inline MpsModel skeleton_canonical(const MpsModel& m, const SkeletonOptions& opts) {
  detail::require_uniform(m);
  const std::size_t n = m.length();
  const std::size_t b = m.bond_dim;

  std::vector<Tensor> blocks(n);
  for (std::size_t j = 1; j + 1 < n; ++j) blocks[j] = build_L(m, j);

  // The bond-0 pivot block is not used in the formula but must be invertible for it to be exact.
  detail::checked_inverse(intersection_matrix(blocks[1], PinnedAxis::right), 0, opts.cond_cap);

  MpsModel out = m;
  out.sites.front() = Tensor::identity(b);
  out.sites.back() = Tensor::identity(b);
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const Tensor inv = detail::checked_inverse(intersection_matrix(blocks[j], opts.pinned), j, opts.cond_cap);
    const bool last = j + 2 == n;
    if (last && !opts.invert_last_interior) {
      out.sites[j] = blocks[j];
      continue;
    }
    out.sites[j] = reshape(matmul(reshape(blocks[j], {b * b, b}), inv), {b, b, b});
  }
  return out;
}

/// Univocal canonical form: gauge-equivalent models map to the same parameters.
inline MpsModel skeleton_canonical(const MpsModel& m) { return skeleton_canonical(m, SkeletonOptions{}); }

/// Largest parameter difference between two models of identical structure.
inline double max_param_diff(const MpsModel& a, const MpsModel& b) {
  if (a.length() != b.length()) throw ShapeError("max_param_diff: chain lengths differ");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.length(); ++k) worst = std::max(worst, max_abs_diff(a.sites[k], b.sites[k]));
  return worst;
}

/// max|M_a - M_b| / (1 + max|M_b|) between the materialized tensors.
inline double materialization_residual(const MpsModel& a, const MpsModel& b) {
  return relative_diff(materialize(a), materialize(b));
}

}  // namespace mpsguard
