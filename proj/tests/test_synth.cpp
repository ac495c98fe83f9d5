#include <gtest/gtest.h>

#include <cmath>

#include "rectiscope/coefficients.hpp"
#include "rectiscope/error.hpp"
#include "rectiscope/normalization.hpp"
#include "rectiscope/synth.hpp"

using namespace rectiscope;

namespace {

double ball_mass(const WeightedPointCloud& c, const Vec& x, double r) {
  double m = 0;
  for (int i = 0; i < c.size(); ++i)
    if ((c.points.col(i) - x).norm() < r) m += c.weights[i];
  return m;
}

}  // namespace

TEST(Normalization, UnitBallVolumes) {
  EXPECT_DOUBLE_EQ(omega_norm(1), 2.0);
  EXPECT_DOUBLE_EQ(omega_norm(2), M_PI);
  EXPECT_NEAR(omega_norm(3), 4 * M_PI / 3, 1e-15);
}

TEST(GenPlane, ChordAndTotalMass) {
  const double h = 1e-3;
  const auto g = gen_plane(2, 1, 1.0, h);
  for (double r : {0.05, 0.1234, 0.3}) EXPECT_NEAR(ball_mass(g.cloud, Vec::Zero(2), r), r, h);
  EXPECT_NEAR(g.cloud.weights.sum(), 1.0 / omega_norm(1), 1e-12);
  const auto g2 = gen_plane(3, 2, 1.0, 0.01);
  EXPECT_NEAR(g2.cloud.weights.sum(), 1.0 / omega_norm(2), 1e-12);
  // disc of radius r carries r^2 up to a boundary ring
  EXPECT_NEAR(ball_mass(g2.cloud, Vec::Zero(3), 0.3), 0.09, 2 * 0.3 * 0.01 * 2);
}

TEST(GenGraph, DeltaZeroIsThePlane) {
  const auto a = gen_lipschitz_graph(3, 2, 0.0, GraphMode::Fourier, 1.0, 0.02, 1);
  const auto b = gen_plane(3, 2, 1.0, 0.02);
  EXPECT_TRUE(a.cloud.points == b.cloud.points);
  EXPECT_TRUE(a.cloud.weights == b.cloud.weights);
}

TEST(GenGraph, PyramidSlopeIsDelta) {
  const auto g = gen_lipschitz_graph(2, 1, 0.2, GraphMode::Pyramid, 1.0, 1e-3, 1);
  EXPECT_EQ(g.truth.lipschitz, 0.2);
  double mx = 0;
  for (int i = 0; i + 1 < g.cloud.size(); ++i) {
    const Vec dz = g.cloud.points.col(i + 1) - g.cloud.points.col(i);
    mx = std::max(mx, std::abs(dz[1] / dz[0]));
  }
  EXPECT_NEAR(mx, 0.2, 1e-9);
}

TEST(GenGraph, FourierSlopeFiniteDifference) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto g = gen_lipschitz_graph(2, 1, 0.1, GraphMode::Fourier, 1.0, 2.5e-4, seed);
    double mx = 0;
    for (int i = 0; i + 1 < g.cloud.size(); ++i) {
      const Vec dz = g.cloud.points.col(i + 1) - g.cloud.points.col(i);
      mx = std::max(mx, std::abs(dz[1] / dz[0]));
    }
    EXPECT_GE(mx, 0.095) << seed;
    EXPECT_LE(mx, 0.105) << seed;
  }
}

TEST(GenGraph, AreaElementWeights) {
  const auto g = gen_lipschitz_graph(3, 2, 0.2, GraphMode::Fourier, 1.0, 0.02, 4);
  const double flat = 0.02 * 0.02 / omega_norm(2);
  const auto& T = g.truth.tangents;
  for (int i = 0; i < g.cloud.size(); i += 37) {
    // the tangent frame spans (e_k + grad f_k e_3); its Gram determinant is the area element squared
    const Mat F = T.middleCols(2 * i, 2);
    const Eigen::Vector3d a = F.col(0), b = F.col(1);
    const Eigen::Vector3d nu = a.cross(b).normalized();
    const double area = 1 / std::abs(nu[2]);
    EXPECT_NEAR(g.cloud.weights[i], flat * area, 1e-12 * flat) << i;
  }
  EXPECT_GE(g.cloud.weights.minCoeff(), flat);
  EXPECT_LE(g.cloud.weights.maxCoeff(), flat * std::sqrt(1 + 0.04) * (1 + 1e-12));
}

TEST(GenGraph, OutOfRange) {
  EXPECT_THROW(gen_lipschitz_graph(2, 1, 0.5, GraphMode::Fourier, 1.0, 0.01, 1), InputError);
  EXPECT_THROW(gen_lipschitz_graph(2, 1, -0.1, GraphMode::Fourier, 1.0, 0.01, 1), InputError);
  EXPECT_THROW(parse_graph_mode("wavelet"), InputError);
}

TEST(GenGraph, Deterministic) {
  const auto a = gen_lipschitz_graph(3, 2, 0.1, GraphMode::Fourier, 1.0, 0.02, 9);
  const auto b = gen_lipschitz_graph(3, 2, 0.1, GraphMode::Fourier, 1.0, 0.02, 9);
  const auto c = gen_lipschitz_graph(3, 2, 0.1, GraphMode::Fourier, 1.0, 0.02, 10);
  EXPECT_TRUE(a.cloud.points == b.cloud.points);
  EXPECT_FALSE(a.cloud.points == c.cloud.points);
}

TEST(GenSnowflake, LengthFactorClosedForm) {
  for (double a : {0.05, 0.2, 0.5}) {
    const auto g = gen_snowflake(a, 6, 1e-3, 4.0);
    const double L = 4.0 * std::pow(snowflake_length_factor(a), 6);
    EXPECT_NEAR(g.cloud.weights.sum() * omega_norm(1), L, 1e-6 * L);
    EXPECT_NEAR(g.truth.analytic_mass, g.cloud.weights.sum(), 1e-6 * L);
    EXPECT_GT(g.truth.length_factor, 1);
  }
  EXPECT_DOUBLE_EQ(snowflake_length_factor(0), 1.0);
}

TEST(GenSnowflake, ZeroFlatnessIsASegment) {
  const auto g = gen_snowflake(0, 5, 1e-3, 1.0);
  EXPECT_EQ(g.cloud.points.row(1).cwiseAbs().maxCoeff(), 0);
  EXPECT_NEAR(g.cloud.weights.sum(), 1.0 / omega_norm(1), 1e-12);
  EXPECT_THROW(gen_snowflake(0.6, 5, 1e-3), InputError);
  EXPECT_THROW(gen_snowflake(0.1, 13, 1e-3), InputError);
}

TEST(GenTwoPlanes, MassAndLocus) {
  const auto g = gen_two_planes(3, M_PI / 3, 1.0, 0.02);
  EXPECT_EQ(g.truth.kind, "two_planes");
  ASSERT_EQ(g.truth.singular.size(), 1u);
  EXPECT_NEAR(g.cloud.weights.sum(), 2 / omega_norm(2), 1e-12);
  EXPECT_NEAR(g.truth.singular[0].distance(Vec::Zero(3)), 0, 1e-15);
  EXPECT_THROW(gen_two_planes(2, 0, 1.0, 0.01), InputError);
}

TEST(GenTwoPlanes, RightAngleAlphaBoundedBelow) {
  const auto g = gen_two_planes(2, M_PI / 2, 1.0, 1e-3);
  const CloudIndex idx(g.cloud);
  const auto a = alpha_ball(idx, Vec::Zero(2), 0.2);
  EXPECT_GE(a.value, 0.05);
}

TEST(GenHalfPlane, EdgeBallHasHalfMass) {
  const auto g = gen_half_plane(3, 1.0, 0.01);
  for (double r : {0.1, 0.2}) EXPECT_NEAR(ball_mass(g.cloud, Vec::Zero(3), r) / (r * r), 0.5, 0.1);
  EXPECT_EQ(g.truth.singular.size(), 1u);
}

TEST(GenSphere, SagittaOfSmallBalls) {
  const double R = 1.0;
  const auto g = gen_sphere(2, R, 1e-3);
  EXPECT_NEAR(g.cloud.weights.sum(), 2 * M_PI * R / omega_norm(1), 1e-9);
  for (int i = 0; i < g.cloud.size(); i += 97) EXPECT_NEAR(g.cloud.points.col(i).norm(), R, 1e-12);
  const CloudIndex idx(g.cloud);
  const Vec x = g.cloud.points.col(0);
  const double r = 0.1;
  // best strip for a circular arc in B(x, r): half the sagitta on each side
  const double b = bbetainf(idx, x, r).value;
  EXPECT_NEAR(b, r / (2 * R), 0.25 * r / (2 * R));
}

TEST(Density, ProfilesRespectBounds) {
  auto g = gen_lipschitz_graph(2, 1, 0.1, GraphMode::Fourier, 1.0, 2e-3, 1);
  attach_density(g.cloud, DensityProfile::Const, 0.1, 1);
  EXPECT_EQ(g.cloud.g->minCoeff(), 1.0);
  EXPECT_EQ(g.cloud.g->maxCoeff(), 1.0);
  attach_density(g.cloud, DensityProfile::Step, 0.1, 1);
  const Window w = g.cloud.trusted_window();
  for (int i = 0; i < g.cloud.size(); ++i)
    EXPECT_EQ((*g.cloud.g)[i], g.cloud.points(0, i) >= w.center[0] ? 1.1 : 1 / 1.1);
  attach_density(g.cloud, DensityProfile::RandomBmo, 0.1, 5);
  EXPECT_GE(g.cloud.g->minCoeff(), 1 / 1.1);
  EXPECT_LE(g.cloud.g->maxCoeff(), 1.1);
  EXPECT_GT(g.cloud.g->maxCoeff() - g.cloud.g->minCoeff(), 0.01);
  EXPECT_THROW(attach_density(g.cloud, DensityProfile::Step, 1.0, 1), InputError);
  EXPECT_THROW(parse_density_profile("smooth"), InputError);
}

TEST(Density, StepAcrossCenterGivesOscOfOrderDelta) {
  auto g = gen_plane(2, 1, 1.0, 1e-3);
  for (double amp : {0.05, 0.1}) {
    attach_density(g.cloud, DensityProfile::Step, amp, 1);
    const CloudIndex idx(g.cloud);
    const double r = 0.2;
    const double o = osc_ball(idx, Vec::Zero(2), r, r);
    EXPECT_GE(o, 0.1 * amp) << amp;
    EXPECT_LE(o, 2 * amp) << amp;
  }
}
