#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "rectiscope/carleson.hpp"
#include "rectiscope/error.hpp"
#include "rectiscope/rng.hpp"
#include "rectiscope/synth.hpp"

using namespace rectiscope;

namespace {

// root 0 with children 1 and 2, child 1 with children 3 and 4
Lattice toy() {
  Lattice lat;
  lat.j_min = 0;
  lat.j_max = 2;
  const int parent[] = {-1, 0, 0, 1, 1};
  const int gen[] = {2, 1, 1, 0, 0};
  const double mass[] = {6, 4, 2, 1, 3};
  for (int i = 0; i < 5; ++i) {
    DyadicCube Q;
    Q.id = i;
    Q.j = gen[i];
    Q.parent = parent[i];
    Q.mass = mass[i];
    lat.cubes.push_back(Q);
  }
  lat.cubes[0].children = {1, 2};
  lat.cubes[1].children = {3, 4};
  return lat;
}

std::vector<CubeCoefficients> rows_with(const std::vector<double>& a) {
  std::vector<CubeCoefficients> rows(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    rows[i].cube = static_cast<int>(i);
    rows[i].alpha = a[i];
  }
  return rows;
}

}  // namespace

TEST(CarlesonSum, ToyTreeByHand) {
  const Lattice lat = toy();
  const auto rows = rows_with({0.1, 0.2, kNaN, 0.5, 0.3});
  int excluded = -1;
  const double s = carleson_sum(lat, rows, 0, CoefficientKind::Alpha, &excluded);
  // 0.01*6 + 0.04*4 + 0.25*1 + 0.09*3 = 0.74
  EXPECT_NEAR(s, 0.74 / 6, 1e-15);
  EXPECT_EQ(excluded, 1);
  EXPECT_NEAR(carleson_sum(lat, rows, 1, CoefficientKind::Alpha), (0.16 + 0.25 + 0.27) / 4, 1e-15);
}

TEST(CarlesonSum, ZeroAndSingleCube) {
  const Lattice lat = toy();
  EXPECT_EQ(carleson_sum(lat, rows_with({0, 0, 0, 0, 0}), 0, CoefficientKind::Alpha), 0.0);
  Lattice one;
  one.cubes.resize(1);
  one.cubes[0].mass = 2.5;
  EXPECT_NEAR(carleson_sum(one, rows_with({0.3}), 0, CoefficientKind::Alpha), 0.09, 1e-16);
}

TEST(CarlesonSum, NothingReliableIsAnError) {
  const Lattice lat = toy();
  EXPECT_THROW(carleson_sum(lat, rows_with({0.1, kNaN, 0.1, kNaN, kNaN}), 1, CoefficientKind::Alpha), InputError);
  EXPECT_THROW(carleson_sum(lat, rows_with({0, 0, 0, 0, 0}), 7, CoefficientKind::Alpha), InputError);
}

TEST(CarlesonSum, KindSelectsColumn) {
  const Lattice lat = toy();
  auto rows = rows_with({0, 0, 0, 0, 0});
  for (auto& r : rows) r.gamma = 0.5;
  EXPECT_NEAR(carleson_sum(lat, rows, 0, CoefficientKind::Gamma), 0.25 * 16 / 6, 1e-15);
  EXPECT_EQ(parse_coefficient_kind("bbetainf"), CoefficientKind::Bbetainf);
  EXPECT_THROW(parse_coefficient_kind("beta2"), InputError);
}

class CarlesonOnLattice : public ::testing::Test {
 protected:
  void SetUp() override {
    gen = gen_lipschitz_graph(2, 1, 0.1, GraphMode::Fourier, 1.0, 2e-3, 3);
    lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
    Rng rng(5);
    a = rows_with(std::vector<double>(lat.cubes.size(), 0));
    b = a;
    for (size_t i = 0; i < a.size(); ++i) {
      a[i].alpha = rng.uniform();
      b[i].alpha = a[i].alpha + rng.uniform();
      if (rng.uniform() < 0.1) a[i].alpha = b[i].alpha = kNaN;
    }
  }
  Generated gen;
  Lattice lat;
  std::vector<CubeCoefficients> a, b;
};

TEST_F(CarlesonOnLattice, MonotoneUnderDomination) {
  for (const auto& Q : lat.cubes) {
    int ea = 0, eb = 0;
    double sa, sb;
    try {
      sa = carleson_sum(lat, a, Q.id, CoefficientKind::Alpha, &ea);
      sb = carleson_sum(lat, b, Q.id, CoefficientKind::Alpha, &eb);
    } catch (const InputError&) {
      continue;
    }
    EXPECT_LE(sa, sb) << Q.id;
    EXPECT_EQ(ea, eb);
  }
}

TEST_F(CarlesonOnLattice, SubRootMassIdentity) {
  for (const auto& Q : lat.cubes) {
    if (Q.parent < 0) continue;
    const auto& P = lat.cubes[Q.parent];
    double sq, sp;
    try {
      sq = carleson_sum(lat, b, Q.id, CoefficientKind::Alpha);
      sp = carleson_sum(lat, b, P.id, CoefficientKind::Alpha);
    } catch (const InputError&) {
      continue;
    }
    EXPECT_LE(sq, sp * P.mass / Q.mass * (1 + 1e-12)) << Q.id;
  }
}

TEST_F(CarlesonOnLattice, SupMatchesSumsAndFilters) {
  const int mg = lat.j_min + 3;
  const auto rep = carleson_sup(lat, b, gen.cloud, CoefficientKind::Alpha, mg);
  const Window win = gen.cloud.trusted_window();
  ASSERT_FALSE(rep.rows.empty());
  double best = 0;
  for (const auto& r : rep.rows) {
    const auto& Q = lat.cubes[r.root];
    EXPECT_GE(Q.j, mg);
    EXPECT_TRUE(win.contains_ball(gen.cloud.points.col(Q.center_index), 4 * Q.diam));
    EXPECT_NEAR(r.normalized, carleson_sum(lat, b, r.root, CoefficientKind::Alpha), 1e-12 * r.normalized);
    EXPECT_GE(r.normalized, 0);
    best = std::max(best, r.normalized);
  }
  EXPECT_EQ(rep.sup, best);
  const auto again = carleson_sup(lat, b, gen.cloud, CoefficientKind::Alpha, mg);
  EXPECT_EQ(carleson_to_json(rep), carleson_to_json(again));
  const auto j = nlohmann::json::parse(carleson_to_json(rep));
  EXPECT_EQ(j["roots"].size(), rep.rows.size());
  EXPECT_EQ(carleson_to_csv(rep).substr(0, 44), "root,j,sum,mass,normalized,counted,excluded\n");
}

TEST(CarlesonSup, PlaneIsAtTheFloor) {
  const auto gen = gen_plane(2, 1, 1.0, 2e-3);
  const CloudIndex idx(gen.cloud);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  TableOptions o;
  o.which = {true, false, false, false, false};
  const auto rows = compute_cube_coefficients(idx, lat, o);
  const auto rep = carleson_sup(lat, rows, gen.cloud, CoefficientKind::Alpha, lat.j_min + 2);
  ASSERT_FALSE(rep.rows.empty());
  EXPECT_LE(rep.sup, 1e-3);
}
