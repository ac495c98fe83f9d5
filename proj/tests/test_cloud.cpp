#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rectiscope/cloud.hpp"
#include "rectiscope/error.hpp"
#include "rectiscope/kdtree.hpp"
#include "rectiscope/rng.hpp"
#include "rectiscope/synth.hpp"

using namespace rectiscope;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rectiscope_test_cloud";
  fs::create_directories(dir);
  return dir / name;
}

WeightedPointCloud random_cloud(int N, int n, int d, std::uint64_t seed, bool with_g) {
  Rng rng(seed);
  WeightedPointCloud c;
  c.n = n;
  c.d = d;
  c.h = 0.01;
  c.points.resize(n, N);
  c.weights.resize(N);
  for (int i = 0; i < N; ++i) {
    for (int k = 0; k < n; ++k) c.points(k, i) = rng.uniform(-1, 1) * std::pow(10.0, rng.uniform(-3, 3));
    c.weights[i] = rng.uniform(0.1, 2.0);
  }
  if (with_g) {
    Vec g(N);
    for (int i = 0; i < N; ++i) g[i] = rng.uniform(0.5, 1.5);
    c.g = g;
  }
  return c;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST(CloudIo, BinaryRoundTripIsExact) {
  const auto c = random_cloud(1000, 3, 2, 1, true);
  const auto p = scratch("c.bin");
  save_cloud(c, p.string());
  const auto back = load_cloud(p.string());
  EXPECT_EQ(back.n, 3);
  EXPECT_EQ(back.d, 2);
  EXPECT_EQ(back.h, c.h);
  EXPECT_TRUE(back.points == c.points);
  EXPECT_TRUE(back.weights == c.weights);
  ASSERT_TRUE(back.g.has_value());
  EXPECT_TRUE(*back.g == *c.g);
}

TEST(CloudIo, TextRoundTrips) {
  const auto c = random_cloud(300, 2, 1, 2, true);
  for (const char* name : {"c.csv", "c.json"}) {
    const auto p = scratch(name);
    save_cloud(c, p.string());
    const auto back = load_cloud(p.string());
    ASSERT_EQ(back.size(), c.size());
    for (int i = 0; i < c.size(); ++i) {
      for (int k = 0; k < 2; ++k) EXPECT_NEAR(back.points(k, i), c.points(k, i), 1e-15 * std::abs(c.points(k, i)));
      EXPECT_NEAR(back.weights[i], c.weights[i], 1e-15 * c.weights[i]);
      EXPECT_NEAR((*back.g)[i], (*c.g)[i], 1e-15 * (*c.g)[i]);
    }
  }
}

TEST(CloudIo, JsonKeepsNormals) {
  auto gen = gen_sphere(3, 1.0, 0.1);
  ASSERT_TRUE(gen.cloud.normals.has_value());
  const auto p = scratch("s.json");
  save_cloud(gen.cloud, p.string(), CloudFormat::Json);
  const auto back = load_cloud(p.string(), CloudFormat::Json);
  ASSERT_TRUE(back.normals.has_value());
  EXPECT_LT((*back.normals - *gen.cloud.normals).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CloudIo, CsvMissingWeightNamesTheColumn) {
  const auto p = scratch("bad.csv");
  write(p, "n,d,h\n2,1,0.1\nx1,x2\n0,0\n1,0\n");
  try {
    load_cloud(p.string());
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos) << e.what();
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(CloudIo, CsvErrorsCarryLineNumbers) {
  const auto p = scratch("bad2.csv");
  write(p, "n,d,h\n2,1,0.1\nx1,x2,w\n0,0,1\n1,0,-1\n");
  try {
    load_cloud(p.string());
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5);
  }
  write(p, "n,d,h\n2,1,0.1\nx1,x2,w\n0,zero,1\n");
  try {
    load_cloud(p.string());
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
  }
  write(p, "");
  EXPECT_THROW(load_cloud(p.string()), ParseError);
}

TEST(CloudIo, FormatFromPath) {
  EXPECT_EQ(format_from_path("a/b.csv"), CloudFormat::Csv);
  EXPECT_EQ(format_from_path("b.json"), CloudFormat::Json);
  EXPECT_EQ(format_from_path("b.bin"), CloudFormat::Binary);
  EXPECT_THROW(format_from_path("noext"), InputError);
  EXPECT_THROW(parse_format("xml"), InputError);
}

TEST(CloudValidate, BrokenInvariantsAreNamed) {
  auto c = random_cloud(10, 2, 1, 3, false);
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.weights[4] = 0;
  EXPECT_THROW(bad.validate(), InputError);
  bad = c;
  bad.h = 0;
  EXPECT_THROW(bad.validate(), InputError);
  bad = c;
  bad.normals = Mat::Constant(2, 10, 1.0);
  EXPECT_THROW(bad.validate(), InputError);
}

TEST(CloudDiameter, MatchesBruteForce) {
  const auto c = random_cloud(200, 3, 2, 4, false);
  double best = 0;
  for (int i = 0; i < c.size(); ++i)
    for (int j = 0; j < i; ++j) best = std::max(best, (c.points.col(i) - c.points.col(j)).norm());
  EXPECT_EQ(cloud_diameter(c), best);
}

TEST(Ahlfors, PlaneIsNearOne) {
  for (int d : {1, 2}) {
    const auto gen = d == 1 ? gen_plane(2, 1, 1.0, 2e-3) : gen_plane(3, 2, 1.0, 0.01);
    ProfileOptions o;
    o.rho_min = 8;
    o.r_max = 0.2;
    o.window = gen.cloud.trusted_window();
    const auto p = ahlfors_profile(gen.cloud, o);
    EXPECT_GE(p.C_upper_est, 1.0);
    EXPECT_LE(p.C_upper_est, 1 + 5 / o.rho_min);
    EXPECT_LE(p.C_lower_est, 1 + 5 / o.rho_min);
  }
}

TEST(Ahlfors, GraphStaysClose) {
  const auto gen = gen_lipschitz_graph(2, 1, 0.1, GraphMode::Fourier, 1.0, 2e-3, 1);
  ProfileOptions o;
  o.rho_min = 8;
  o.window = gen.cloud.trusted_window();
  const auto p = ahlfors_profile(gen.cloud, o);
  // chord of a 0.1-graph weighs at most sqrt(1.01) times its projection
  EXPECT_LE(p.C_upper_est, 1 + 0.1 + 5 / o.rho_min);
  EXPECT_LE(p.C_lower_est, 1 + 0.1 + 5 / o.rho_min);
}

TEST(Ahlfors, TwoPlanesDoubleAtTheCrossing) {
  const auto gen = gen_two_planes(2, M_PI / 2, 1.0, 2e-3);
  const KdTree tree(gen.cloud.points);
  ProfileOptions o;
  o.rho_min = 8;
  o.centers = {tree.nearest(Vec::Zero(2)).first};
  o.r_max = 0.3;
  const auto p = ahlfors_profile(gen.cloud, o);
  // two chords of length 2r through the center: ratio 2
  EXPECT_GE(p.C_upper_est, 1.8);
}

TEST(Ahlfors, MassMonotoneAndScaleInvariant) {
  const auto gen = gen_lipschitz_graph(3, 2, 0.1, GraphMode::Fourier, 1.0, 0.02, 2);
  ProfileOptions o;
  o.rho_min = 5;
  o.n_centers = 8;
  const auto p = ahlfors_profile(gen.cloud, o);
  for (size_t i = 1; i < p.samples.size(); ++i)
    if (p.samples[i].center == p.samples[i - 1].center && p.samples[i].radius > p.samples[i - 1].radius)
      EXPECT_GE(p.samples[i].mass, p.samples[i - 1].mass);
  auto big = gen.cloud;
  const double lam = 4;
  big.points *= lam;
  big.weights *= lam * lam;
  big.h *= lam;
  big.window = Window{lam * gen.cloud.window->center, lam * gen.cloud.window->radius};
  const auto q = ahlfors_profile(big, o);
  ASSERT_EQ(p.samples.size(), q.samples.size());
  for (size_t i = 0; i < p.samples.size(); ++i) {
    EXPECT_EQ(p.samples[i].center, q.samples[i].center);
    EXPECT_NEAR(p.samples[i].ratio, q.samples[i].ratio, 1e-12 * p.samples[i].ratio);
  }
}

TEST(Ahlfors, RhoMinIsMandatory) {
  const auto gen = gen_plane(2, 1, 1.0, 0.01);
  ProfileOptions o;
  EXPECT_THROW(ahlfors_profile(gen.cloud, o), InputError);
  o.rho_min = 5;
  o.r_max = 0.01;
  EXPECT_THROW(ahlfors_profile(gen.cloud, o), InputError);
}
