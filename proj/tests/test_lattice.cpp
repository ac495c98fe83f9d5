#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rectiscope/error.hpp"
#include "rectiscope/kdtree.hpp"
#include "rectiscope/lattice.hpp"
#include "rectiscope/synth.hpp"

using namespace rectiscope;

namespace {

void expect_levels_partition(const Lattice& lat, int N) {
  for (int j = lat.j_min; j <= lat.j_max; ++j) {
    std::vector<int> seen(N, 0);
    for (int q : lat.level(j))
      for (int i : lat.cubes[q].members) ++seen[i];
    for (int i = 0; i < N; ++i) ASSERT_EQ(seen[i], 1) << "j=" << j << " i=" << i;
  }
}

}  // namespace

TEST(Lattice, SegmentLevelsPartitionAndNest) {
  const auto gen = gen_plane(2, 1, 1.0, 1e-3);
  const Lattice lat = build_lattice(gen.cloud, 3, 5, 1);
  EXPECT_EQ(lat.levels.size(), 3u);
  expect_levels_partition(lat, gen.cloud.size());
  for (const auto& Q : lat.cubes) {
    if (Q.parent < 0) continue;
    const auto& P = lat.cubes[Q.parent];
    EXPECT_EQ(P.j, Q.j + 1);
    EXPECT_TRUE(std::includes(P.members.begin(), P.members.end(), Q.members.begin(), Q.members.end()));
  }
  EXPECT_TRUE(verify_lattice(lat, gen.cloud, {0.1}).ok());
}

TEST(Lattice, ChildrenAddUpExactly) {
  const auto gen = gen_lipschitz_graph(3, 2, 0.1, GraphMode::Fourier, 1.0, 0.01, 1);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  for (const auto& Q : lat.cubes) {
    if (Q.children.empty()) continue;
    std::vector<int> u;
    double m = 0;
    for (int c : Q.children) {
      u.insert(u.end(), lat.cubes[c].members.begin(), lat.cubes[c].members.end());
      m += lat.cubes[c].mass;
    }
    std::sort(u.begin(), u.end());
    EXPECT_EQ(u, Q.members);
    EXPECT_NEAR(m, Q.mass, 1e-12 * Q.mass);
  }
}

TEST(Lattice, NestedOrDisjointAcrossLevels) {
  const auto gen = gen_two_planes(2, M_PI / 3, 1.0, 2e-3);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  for (const auto& A : lat.cubes)
    for (const auto& B : lat.cubes) {
      if (A.j > B.j || A.id == B.id) continue;
      std::vector<int> both;
      std::set_intersection(A.members.begin(), A.members.end(), B.members.begin(), B.members.end(),
                            std::back_inserter(both));
      EXPECT_TRUE(both.empty() || both.size() == A.members.size()) << A.id << " " << B.id;
    }
}

TEST(Lattice, PlaneConstantsAndCenters) {
  for (int d : {1, 2}) {
    const auto gen = d == 1 ? gen_plane(2, 1, 1.0, 5e-4) : gen_plane(3, 2, 1.0, 0.01);
    const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
    EXPECT_LE(lat.C_D_emp, 8) << d;
    const auto rep = verify_lattice(lat, gen.cloud, {0.1});
    EXPECT_TRUE(rep.ok());
    EXPECT_GE(rep.center_fraction, 0.99);
    EXPECT_GE(rep.center_fraction_all, 0.99);
    ASSERT_EQ(rep.boundary.size(), 1u);
    EXPECT_TRUE(std::isfinite(rep.boundary[0].value));
    EXPECT_LE(rep.boundary[0].value, rep.C_D_emp);
  }
}

// Interior cubes are scored against C_D_emp only; boundary cubes against C_D_all.
TEST(Lattice, CenterFractionCountsInteriorCubes) {
  const auto gen = gen_plane(3, 2, 1.0, 0.0125);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  const auto rep = verify_lattice(lat, gen.cloud, {0.1});
  ASSERT_GT(rep.interior_cubes, 0);
  EXPECT_LE(rep.center_failures, rep.interior_cubes);
  EXPECT_DOUBLE_EQ(rep.center_fraction, 1.0 - double(rep.center_failures) / rep.interior_cubes);
  EXPECT_DOUBLE_EQ(rep.center_fraction_all, 1.0 - double(rep.center_failures_all) / lat.cubes.size());
  EXPECT_LE(rep.C_D_emp, rep.C_D_all);
}

TEST(Lattice, BallInclusionPerCube) {
  const auto gen = gen_lipschitz_graph(2, 1, 0.2, GraphMode::Fourier, 1.0, 1e-3, 2);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  const KdTree tree(gen.cloud.points);
  for (const auto& Q : lat.cubes) {
    const Vec c = gen.cloud.points.col(Q.center_index);
    auto ball = tree.radius(c, Q.diam * (1 + 1e-12), true);   // diam rounds like any distance
    std::sort(ball.begin(), ball.end());
    EXPECT_TRUE(std::includes(ball.begin(), ball.end(), Q.members.begin(), Q.members.end())) << Q.id;
    const auto twice = enlarged_cube(lat, gen.cloud, tree, Q.id, 2);
    EXPECT_TRUE(std::includes(twice.begin(), twice.end(), ball.begin(), ball.end())) << Q.id;
  }
}

TEST(Lattice, EnlargedCubeMatchesBruteForce) {
  const auto gen = gen_plane(3, 2, 1.0, 0.02);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  const auto& cl = gen.cloud;
  for (int q = 0; q < static_cast<int>(lat.cubes.size()); q += 7) {
    const auto& Q = lat.cubes[q];
    EXPECT_EQ(enlarged_cube(lat, cl, q, 1), Q.members);
    std::vector<int> brute;
    for (int i = 0; i < cl.size(); ++i) {
      double dist = INFINITY;
      for (int m : Q.members) dist = std::min(dist, (cl.points.col(i) - cl.points.col(m)).norm());
      if (dist <= Q.diam) brute.push_back(i);
    }
    EXPECT_EQ(enlarged_cube(lat, cl, q, 2), brute) << q;
  }
  std::vector<int> all(cl.size());
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(enlarged_cube(lat, cl, static_cast<int>(lat.cubes.size()) - 1, 1e6), all);
}

TEST(Lattice, CorruptionIsNamed) {
  const auto gen = gen_plane(2, 1, 1.0, 2e-3);
  Lattice lat = build_lattice(gen.cloud, 2, 6, 1);
  // move one point into a leaf under another parent
  const auto& leaves = lat.level(lat.j_min);
  const int a = leaves.front();
  int b = -1;
  for (int q : leaves)
    if (lat.cubes[q].parent != lat.cubes[a].parent) b = q;
  ASSERT_GE(b, 0);
  const int moved = lat.cubes[a].members.back();
  lat.cubes[a].members.pop_back();
  lat.cubes[b].members.push_back(moved);
  std::sort(lat.cubes[b].members.begin(), lat.cubes[b].members.end());
  const auto rep = verify_lattice(lat, gen.cloud, {});
  EXPECT_FALSE(rep.ok());
  bool named = false;
  for (const auto& p : rep.problems)
    named |= p.find(std::to_string(a)) != std::string::npos || p.find(std::to_string(b)) != std::string::npos;
  EXPECT_TRUE(named);
}

TEST(Lattice, SameSeedSameLattice) {
  const auto gen = gen_lipschitz_graph(2, 1, 0.1, GraphMode::Fourier, 1.0, 1e-3, 3);
  const Lattice a = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 7);
  const Lattice b = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 7);
  EXPECT_EQ(lattice_to_json(a), lattice_to_json(b));
  const Lattice c = lattice_from_json(lattice_to_json(a), gen.cloud);
  ASSERT_EQ(c.cubes.size(), a.cubes.size());
  for (size_t i = 0; i < a.cubes.size(); ++i) {
    EXPECT_EQ(c.cubes[i].members, a.cubes[i].members);
    EXPECT_EQ(c.cubes[i].mass, a.cubes[i].mass);
    EXPECT_EQ(c.cubes[i].diam, a.cubes[i].diam);
  }
}

TEST(Lattice, BadGenerations) {
  const auto gen = gen_plane(2, 1, 1.0, 1e-2);
  EXPECT_THROW(build_lattice(gen.cloud, 1, 4, 1), InputError);
  EXPECT_THROW(build_lattice(gen.cloud, 2, max_generation(gen.cloud) + 3, 1), InputError);
  EXPECT_THROW(build_lattice(gen.cloud, 5, 4, 1), InputError);
}
