#include <gtest/gtest.h>

#include "mpsguard/canonical.hpp"
#include "oracles.hpp"

using namespace mpsguard;

namespace {

MpsModel sample(std::size_t n, std::uint64_t seed, std::size_t out = SIZE_MAX) {
  return random_mps(n, 2, 2, 2, out == SIZE_MAX ? n - 1 : out, seed);
}

}  // namespace

TEST(Canonical, BuildLMatchesSliceOfMaterializedTensor) {
  for (std::size_t n = 3; n <= 6; ++n)
    for (std::size_t o : {std::size_t{0}, n - 1}) {
      const MpsModel m = sample(n, 100 + n, o);
      for (std::size_t j = 1; j + 1 < n; ++j) EXPECT_LT(max_abs_diff(build_L(m, j), oracle::slice_L(m, j)), 1e-12);
    }
}

TEST(Canonical, SkeletonMatchesSliceOracle) {
  for (std::size_t n = 3; n <= 6; ++n)
    for (std::uint64_t s = 0; s < 10; ++s) {
      const MpsModel m = sample(n, 1000 * n + s);
      EXPECT_LT(max_param_diff(skeleton_canonical(m), oracle::skeleton_from_slices(m)), 1e-9);
    }
}

TEST(Canonical, SkeletonBoundaryTensorsAreIdentities) {
  const MpsModel c = skeleton_canonical(sample(5, 3));
  EXPECT_EQ(max_abs_diff(c.sites.front(), Tensor::identity(2)), 0.0);
  EXPECT_EQ(max_abs_diff(c.sites.back(), Tensor::identity(2)), 0.0);
}

TEST(Canonical, SkeletonPreservesTensorAndIsGaugeFree) {
  for (std::size_t n = 3; n <= 6; ++n)
    for (std::uint64_t s = 0; s < 10; ++s) {
      const MpsModel m = sample(n, 50 * n + s);
      const MpsModel c = skeleton_canonical(m);
      EXPECT_LT(materialization_residual(c, m), 1e-10);
      const MpsModel g = apply_gauge(m, random_gauge(m, s + 7));
      EXPECT_LT(max_param_diff(skeleton_canonical(g), c), 1e-7);
      EXPECT_LT(max_param_diff(skeleton_canonical(c), c), 1e-10);
    }
}

TEST(Canonical, InvertingLastInteriorSiteBreaksInvariance) {
  SkeletonOptions bad;
  bad.invert_last_interior = true;
  const MpsModel m = sample(5, 9);
  EXPECT_GT(materialization_residual(skeleton_canonical(m, bad), m), 1e-3);
}

TEST(Canonical, OnlyTheLeftPinPreservesTheTensor) {
  // every pin is a function of M and hence univocal; only the left one reproduces M
  for (std::size_t n = 4; n <= 6; ++n) {
    const MpsModel m = sample(n, 11 + n);
    const MpsModel g = apply_gauge(m, random_gauge(m, 12));
    for (PinnedAxis a : {PinnedAxis::middle, PinnedAxis::right}) {
      SkeletonOptions o;
      o.pinned = a;
      EXPECT_LT(max_param_diff(skeleton_canonical(g, o), skeleton_canonical(m, o)), 1e-8);
      EXPECT_GT(materialization_residual(skeleton_canonical(m, o), m), 1e-3);
    }
  }
}

TEST(Canonical, SingularIntersectionIsReported) {
  MpsModel m = sample(5, 13);
  m.sites[0](0, 0) = 0.0;
  m.sites[0](0, 1) = 0.0;
  try {
    skeleton_canonical(m);
    FAIL() << "expected SingularIntersectionError";
  } catch (const SingularIntersectionError& e) {
    EXPECT_LE(e.site(), 1u);
  }
}

TEST(Canonical, SkeletonNeedsUniformDimensions) {
  EXPECT_THROW(skeleton_canonical(random_mps(5, 2, 3, 2, 4, 1)), ShapeError);
  EXPECT_THROW(skeleton_canonical(random_mps(2, 2, 2, 2, 1, 1)), ShapeError);
}

TEST(Canonical, SvdFormIsLeftOrthogonalAndPreservesTensor) {
  for (std::size_t n = 3; n <= 6; ++n) {
    const MpsModel m = sample(n, 200 + n);
    const MpsModel c = svd_canonical(m);
    EXPECT_LT(left_orthogonality_residual(c), 1e-12);
    EXPECT_LT(materialization_residual(c, m), 1e-12);
    EXPECT_LT(max_param_diff(svd_canonical(c), c), 1e-12);
  }
}

TEST(Canonical, SvdFormKeepsSignFreedom) {
  const MpsModel c = svd_canonical(sample(5, 21));
  const MpsModel flipped = svd_canonical(apply_gauge(c, sign_gauge(c, 22)));
  EXPECT_GT(max_param_diff(flipped, c), 1e-3);
  EXPECT_LT(materialization_residual(flipped, c), 1e-12);
}

TEST(Canonical, SvdFormAbsorbsContinuousGauge) {
  const MpsModel m = sample(5, 31);
  const MpsModel c = svd_canonical(m);
  // a gauge close to the identity keeps the sign alignment, so only rotations are removed
  GaugeTransform g = identity_gauge(m);
  for (auto& y : g.bond_matrices) {
    y(0, 1) = 0.05;
    y(1, 0) = -0.03;
    y(0, 0) = 1.2;
  }
  EXPECT_LT(max_param_diff(svd_canonical(apply_gauge(m, g)), c), 1e-9);
}

TEST(Canonical, CompositionWithSignGaugeGivesSkeleton) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const MpsModel m = sample(3 + s % 4, 300 + s);
    const MpsModel via = skeleton_canonical(apply_gauge(svd_canonical(m), sign_gauge(m, s)));
    EXPECT_LT(max_param_diff(via, skeleton_canonical(m)), 1e-8);
  }
}
