#include <gtest/gtest.h>

#include <cmath>

#include "rectiscope/error.hpp"
#include "rectiscope/geometry.hpp"
#include "rectiscope/kdtree.hpp"
#include "rectiscope/rng.hpp"

using namespace rectiscope;

namespace {

Mat random_points(Rng& rng, int n, int k, double a = 1) {
  Mat p(n, k);
  for (int i = 0; i < k; ++i)
    for (int q = 0; q < n; ++q) p(q, i) = rng.uniform(-a, a);
  return p;
}

Mat random_rotation(Rng& rng, int n) {
  Mat A = random_points(rng, n, n);
  Eigen::HouseholderQR<Mat> qr(A);
  return qr.householderQ();
}

}  // namespace

TEST(Geometry, ProjectorDistanceOfLines) {
  for (double t : {0.0, 0.1, 0.7, M_PI / 2}) {
    Mat a(2, 1), b(2, 1);
    a << 1, 0;
    b << std::cos(t), std::sin(t);
    const AffinePlane P(Vec::Zero(2), a), Q(Vec::Zero(2), b);
    EXPECT_NEAR(projector_distance(P, Q), std::sin(t), 1e-12);
    EXPECT_NEAR(projector_distance_frames(a, b), std::sin(t), 1e-12);
  }
}

TEST(Geometry, ProjectorDistanceFramesMatchesMatrixForm) {
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    const Mat A = random_rotation(rng, 3).leftCols(2);
    const Mat B = random_rotation(rng, 3).leftCols(2);
    const AffinePlane P(Vec::Zero(3), A), Q(Vec::Ones(3), B);
    EXPECT_NEAR(projector_distance(P, Q), projector_distance_frames(A, B), 1e-9);
  }
}

TEST(Geometry, NormalFrameCompletesBasis) {
  Rng rng(7);
  const Mat F = random_rotation(rng, 3).leftCols(1);
  const AffinePlane P(Vec::Zero(3), F);
  const Mat N = P.normal_frame();
  ASSERT_EQ(N.cols(), 2);
  Mat all(3, 3);
  all << F, N;
  EXPECT_LT((all.transpose() * all - Mat::Identity(3, 3)).norm(), 1e-12);
}

TEST(Geometry, RejectsNonOrthonormalFrame) {
  Mat F(2, 1);
  F << 1, 1;
  EXPECT_THROW(AffinePlane(Vec::Zero(2), F), InputError);
  EXPECT_NO_THROW(AffinePlane::from_span(Vec::Zero(2), F));
}

TEST(Geometry, ProjectionAndDistance) {
  const AffinePlane P = AffinePlane::axis(3, 2);
  Vec x(3);
  x << 0.3, -0.2, 1.5;
  EXPECT_NEAR(P.distance(x), 1.5, 1e-15);
  EXPECT_NEAR(P.project(x)[2], 0.0, 1e-15);
}

TEST(Geometry, PcaRecoversPlane) {
  Rng rng(11);
  const Mat R = random_rotation(rng, 3);
  // symmetric grid, so the in-plane covariance is diagonal with distinct entries
  Mat pts(3, 200);
  for (int i = 0; i < 200; ++i) {
    Vec u(3);
    u << -1 + (i % 20 + 0.5) / 10, -0.5 + (i / 20 + 0.5) / 10, 0;
    pts.col(i) = R * u;
  }
  const Vec w = Vec::Ones(200);
  const PlaneFit fit = fit_plane_pca(pts, w, 2, {});
  EXPECT_FALSE(fit.degenerate);
  EXPECT_LT(projector_distance_frames(fit.plane.frame(), R.leftCols(2)), 1e-9);
  EXPECT_NEAR(fit.eigenvalues[2], 0.0, 1e-12);
  const PlaneFit line = fit_plane_pca(pts, w, 1, {});
  EXPECT_LT(projector_distance_frames(line.plane.frame(), R.leftCols(1)), 1e-9);
}

TEST(Geometry, PcaFlagsDegenerateAndTies) {
  Mat pts(2, 1);
  pts << 0.5, 0.5;
  const PlaneFit one = fit_plane_pca(pts, Vec::Ones(1), 1, {});
  EXPECT_TRUE(one.degenerate);
  // four points on a square: isotropic covariance
  Mat sq(2, 4);
  sq << 1, -1, 0, 0, 0, 0, 1, -1;
  const PlaneFit tie = fit_plane_pca(sq, Vec::Ones(4), 1, {});
  EXPECT_TRUE(tie.tie);
  EXPECT_NEAR(tie.plane.frame().norm(), 1.0, 1e-12);
}

TEST(Geometry, SubspaceAboutOriginPassesThroughIt) {
  Rng rng(13);
  const Mat pts = random_points(rng, 3, 50);
  Vec o(3);
  o << 0.1, 0.2, 0.3;
  const PlaneFit fit = fit_subspace_about(pts, Vec::Ones(50), o, 2, {});
  EXPECT_NEAR(fit.plane.distance(o), 0.0, 1e-12);
}

TEST(Geometry, TiltKeepsOrthonormality) {
  Rng rng(17);
  const Mat F = random_rotation(rng, 3).leftCols(2);
  const AffinePlane P(Vec::Zero(3), F);
  const Vec nv = P.normal_frame().col(0);
  const Mat G = tilt_frame(F, 1, nv, 0.3);
  EXPECT_LT((G.transpose() * G - Mat::Identity(2, 2)).norm(), 1e-12);
  EXPECT_NEAR(projector_distance_frames(F, G), std::sin(0.3), 1e-12);
}

TEST(Geometry, HausdorffLocalKnownValue) {
  // E: points on the x axis, F: the same shifted up by 0.1
  Mat E(2, 21), F(2, 21);
  for (int i = 0; i < 21; ++i) {
    E.col(i) << -1 + 0.1 * i, 0;
    F.col(i) << -1 + 0.1 * i, 0.1;
  }
  const auto v = hausdorff_local(E, F, Vec::Zero(2), 0.5);
  ASSERT_TRUE(v.has_value());
  EXPECT_NEAR(*v, 0.2 / 0.5, 1e-12);
  Vec far(2);
  far << 10, 10;
  EXPECT_FALSE(hausdorff_local(E, F, far, 0.5).has_value());
}

TEST(Geometry, HausdorffTreeMatchesBruteForce) {
  Rng rng(19);
  for (int it = 0; it < 20; ++it) {
    const Mat E = random_points(rng, 2, 60), F = random_points(rng, 2, 40);
    const KdTree tE(E), tF(F);
    Vec x(2);
    x << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
    const double r = rng.uniform(0.2, 0.8);
    const auto a = hausdorff_local(E, F, x, r);
    const auto b = hausdorff_local(E, tE, F, tF, x, r);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) EXPECT_NEAR(*a, *b, 1e-12);
  }
}

TEST(KdTree, RadiusAndNearestMatchBruteForce) {
  Rng rng(23);
  const Mat P = random_points(rng, 3, 300);
  const KdTree T(P);
  for (int it = 0; it < 30; ++it) {
    Vec x(3);
    x << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
    const double r = rng.uniform(0.1, 0.7);
    std::vector<int> brute;
    int best = 0;
    for (int i = 0; i < P.cols(); ++i) {
      const double d = (P.col(i) - x).norm();
      if (d < r) brute.push_back(i);
      if (d < (P.col(best) - x).norm()) best = i;
    }
    EXPECT_EQ(T.radius(x, r, false), brute);
    EXPECT_EQ(T.nearest(x).first, best);
  }
}
