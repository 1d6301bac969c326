#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

#include "mpsguard/errors.hpp"
#include "mpsguard/tensor.hpp"

namespace mpsguard {

inline constexpr double kDefaultConditionCap = 1e12;

namespace detail {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Mat to_eigen(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("expected a rank-2 tensor, got rank " + std::to_string(m.rank()));
  return Eigen::Map<const Mat>(m.data().data(), static_cast<Eigen::Index>(m.dim(0)),
                               static_cast<Eigen::Index>(m.dim(1)));
}

inline Tensor from_eigen(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<Mat>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

}  // namespace detail

struct SvdResult {
  Tensor u;               // rows x k, orthonormal columns
  std::vector<double> s;  // k nonincreasing, nonnegative
  Tensor v;               // cols x k, orthonormal columns; m = u diag(s) v^T
};

/// Thin SVD, k = min(rows, cols).
inline SvdResult svd(const Tensor& m) {
  const detail::Mat a = detail::to_eigen(m);
  if (!a.allFinite()) throw Error("svd: input contains non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success) throw ConvergenceError("svd: Jacobi sweeps did not converge");
  SvdResult r{detail::from_eigen(solver.matrixU()), {}, detail::from_eigen(solver.matrixV())};
  const auto& sv = solver.singularValues();
  r.s.assign(sv.data(), sv.data() + sv.size());
  if (!r.u.all_finite() || !r.v.all_finite()) throw ConvergenceError("svd: non-finite factors");
  return r;
}

/// 2-norm condition number; +inf for exactly singular input.
inline double condition_number(const Tensor& m) {
  const detail::Mat a = detail::to_eigen(m);
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(a);
  const auto& sv = solver.singularValues();
  if (sv.size() == 0) return 1.0;
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

/// Inverse of a square matrix. Fails if the condition estimate exceeds `cond_cap`.
inline Tensor invert(const Tensor& m, double cond_cap = kDefaultConditionCap) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1))
    throw ShapeError("invert: expected a square matrix, got " + shape_string(m.shape()));
  const double cond = condition_number(m);
  if (!(cond <= cond_cap))
    throw SingularMatrixError("invert: condition estimate " + std::to_string(cond) +
                                  " exceeds cap " + std::to_string(cond_cap),
                              cond);
  const detail::Mat a = detail::to_eigen(m);
  return detail::from_eigen(a.fullPivLu().inverse());
}

}  // namespace mpsguard
