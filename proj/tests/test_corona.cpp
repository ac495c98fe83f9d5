#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "rectiscope/corona.hpp"
#include "rectiscope/error.hpp"
#include "rectiscope/normalization.hpp"
#include "rectiscope/synth.hpp"

using namespace rectiscope;

namespace {

double interior_packing_max(const CoronaReport& rep, const Lattice& lat, const WeightedPointCloud& cl) {
  const Window win = cl.trusted_window();
  double best = 0;
  for (const auto& e : rep.packing) {
    const auto& Q = lat.cubes[e.cube];
    if (win.contains_ball(cl.points.col(Q.center_index), Q.diam)) best = std::max(best, e.ratio);
  }
  return best;
}

// root cube holding the sample point nearest to x
int root_at(const Lattice& lat, const CloudIndex& idx, const Vec& x) {
  const int i = idx.tree().nearest(x).first;
  for (int q : lat.roots())
    if (std::binary_search(lat.cubes[q].members.begin(), lat.cubes[q].members.end(), i)) return q;
  return -1;
}

}  // namespace

TEST(GraphFit, PlaneRegionIsFlat) {
  const auto gen = gen_plane(3, 2, 1.0, 0.02);
  const CloudIndex idx(gen.cloud);
  const Vec x = Vec::Zero(3);
  const double r = 0.3;
  const auto f = fit_lipschitz_graph(gen.cloud, idx.ball(x, r), x, r);
  EXPECT_LT(f.graph.heights.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(f.graph.lipschitz, 1e-10);
  EXPECT_EQ(f.far_mass, 0);
  EXPECT_LT(f.normalized, 0.05);
}

TEST(GraphFit, KuhnInterpolationIsExactOnAffineHeights) {
  LipschitzGraphModel g;
  g.base = Vec::Zero(3);
  g.frame = Mat::Identity(3, 2);
  g.normals = Mat::Zero(3, 1);
  g.normals(2, 0) = 1;
  g.cells = 5;
  g.cell = 0.4;
  g.half_extent = 1;
  g.heights.resize(1, 25);
  auto affine = [](double u, double v) { return 0.3 * u - 0.2 * v + 0.05; };
  for (int k1 = 0; k1 < 5; ++k1)
    for (int k0 = 0; k0 < 5; ++k0) g.heights(0, k0 + 5 * k1) = affine(-0.8 + 0.4 * k0, -0.8 + 0.4 * k1);
  for (double u : {-0.8, -0.33, 0.0, 0.51, 0.8})
    for (double v : {-0.8, -0.1, 0.27, 0.8}) {
      Vec p(2);
      p << u, v;
      EXPECT_NEAR(g.height(p)[0], affine(u, v), 1e-14);
      Vec z(3);
      z << u, v, affine(u, v) + 0.125;
      EXPECT_NEAR(g.offset(z), 0.125, 1e-14);
    }
  EXPECT_TRUE(g.covers(Vec::Constant(2, 0.99)));
  EXPECT_FALSE(g.covers(Vec::Constant(2, 1.01)));
}

TEST(GraphFit, LipschitzIsTheSimplexMaximum) {
  {
    const auto gen = gen_lipschitz_graph(2, 1, 0.2, GraphMode::Fourier, 1.0, 1e-3, 7);
    const CloudIndex idx(gen.cloud);
    const Vec x = Vec::Zero(2);
    const auto g = fit_lipschitz_graph(gen.cloud, idx.ball(x, 0.3), x, 0.3).graph;
    double expect = 0;
    for (int k = 0; k + 1 < g.cells; ++k)
      expect = std::max(expect, std::abs(g.heights(0, k + 1) - g.heights(0, k)) / g.cell);
    EXPECT_NEAR(g.lipschitz, expect, 1e-12);
  }
  {
    const auto gen = gen_lipschitz_graph(3, 2, 0.2, GraphMode::Fourier, 1.0, 0.02, 7);
    const CloudIndex idx(gen.cloud);
    const Vec x = Vec::Zero(3);
    const auto g = fit_lipschitz_graph(gen.cloud, idx.ball(x, 0.4), x, 0.4).graph;
    const int K = g.cells;
    auto H = [&](int i, int j) { return g.heights(0, i + K * j); };
    double expect = 0;
    for (int j = 0; j + 1 < K; ++j)
      for (int i = 0; i + 1 < K; ++i) {
        const double a = g.cell;
        expect = std::max(expect, std::hypot(H(i + 1, j) - H(i, j), H(i + 1, j + 1) - H(i + 1, j)) / a);
        expect = std::max(expect, std::hypot(H(i + 1, j + 1) - H(i, j + 1), H(i, j + 1) - H(i, j)) / a);
      }
    EXPECT_NEAR(g.lipschitz, expect, 1e-12);
  }
}

TEST(GraphFit, GeneratedGraphRecovered) {
  for (double delta : {0.05, 0.1}) {
    const auto gen = gen_lipschitz_graph(2, 1, delta, GraphMode::Fourier, 1.0, 5e-4, 2);
    const CloudIndex idx(gen.cloud);
    const Vec x = gen.cloud.points.col(gen.cloud.size() / 2);
    const double r = 0.3;
    const auto f = fit_lipschitz_graph(gen.cloud, idx.ball(x, r), x, r);
    EXPECT_GE(f.graph.lipschitz, delta / 2) << delta;
    EXPECT_LE(f.graph.lipschitz, 2 * delta) << delta;
    EXPECT_LE(f.normalized, 0.05) << delta;
  }
}

TEST(GraphFit, TwoPlanesLeaveOneSheetUnexplained) {
  const auto gen = gen_two_planes(2, M_PI / 4, 1.0, 5e-4);
  const CloudIndex idx(gen.cloud);
  const Vec x = Vec::Zero(2);
  const double r = 0.3;
  const auto f = fit_lipschitz_graph(gen.cloud, idx.ball(x, r), x, r);
  EXPECT_GE(f.normalized, 0.2);
}

TEST(GraphFit, DegenerateRegionIsAnError) {
  const auto gen = gen_plane(3, 2, 1.0, 0.05);
  const Vec x = gen.cloud.points.col(0);
  EXPECT_THROW(fit_lipschitz_graph(gen.cloud, {}, x, 0.2), InputError);
  EXPECT_THROW(fit_lipschitz_graph(gen.cloud, {0, 1}, x, 0.2), InputError);   // collinear in a 2-plane fit
}

TEST(UrScan, PlaneGraphAndTwoPlanes) {
  UrScanOptions o;
  o.n_samples = 24;
  {
    const auto gen = gen_plane(2, 1, 1.0, 5e-4);
    const CloudIndex idx(gen.cloud);
    const auto s = delta_ur_scan(idx, o);
    EXPECT_LE(s.delta_est, 0.01);
    EXPECT_FALSE(s.capped);
    EXPECT_EQ(static_cast<int>(s.samples.size()), o.n_samples);
  }
  {
    const auto gen = gen_lipschitz_graph(2, 1, 0.05, GraphMode::Fourier, 1.0, 5e-4, 1);
    const CloudIndex idx(gen.cloud);
    const auto s = delta_ur_scan(idx, o);
    EXPECT_GE(s.delta_est, 0.02);
    EXPECT_LE(s.delta_est, 0.15);
  }
  {
    const auto gen = gen_two_planes(2, M_PI / 4, 1.0, 5e-4);
    const CloudIndex idx(gen.cloud);
    const auto s = delta_ur_scan(idx, o);
    EXPECT_EQ(s.delta_est, 0.1);
    EXPECT_TRUE(s.capped);
  }
}

TEST(UrScan, ThreadsDoNotChangeTheResult) {
  const auto gen = gen_lipschitz_graph(2, 1, 0.1, GraphMode::Fourier, 1.0, 1e-3, 4);
  const CloudIndex idx(gen.cloud);
  UrScanOptions o;
  o.n_samples = 12;
  const auto a = delta_ur_scan(idx, o);
  o.threads = 4;
  const auto b = delta_ur_scan(idx, o);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i].value, b.samples[i].value);
}

TEST(Corona, PlaneIsOneFamily) {
  for (int d : {1, 2}) {
    const auto gen = d == 1 ? gen_plane(2, 1, 1.0, 1e-3) : gen_plane(3, 2, 1.0, 0.02);
    const CloudIndex idx(gen.cloud);
    const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
    const auto f = corona_decompose(idx, lat, lat.roots()[0]);
    ASSERT_EQ(f.families.size(), 1u);
    EXPECT_TRUE(f.families[0].minimal.empty());
    const auto rep = verify_corona(f, idx, lat);
    EXPECT_TRUE(rep.ok());
    EXPECT_EQ(rep.packing_max, 1.0);
    EXPECT_LT(rep.proximity_delta, 1e-9);
  }
}

TEST(Corona, GraphPacksAndTwoPlanesDoNot) {
  {
    const auto gen = gen_lipschitz_graph(2, 1, 0.1, GraphMode::Fourier, 1.0, 5e-4, 1);
    const CloudIndex idx(gen.cloud);
    const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
    for (int root : lat.roots()) {
      const auto f = corona_decompose(idx, lat, root);
      const auto rep = verify_corona(f, idx, lat);
      EXPECT_TRUE(rep.ok());
      EXPECT_LE(rep.packing_max, 1.5);
    }
  }
  {
    const auto gen = gen_two_planes(2, M_PI / 4, 1.0, 5e-4);
    const CloudIndex idx(gen.cloud);
    const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
    const auto f = corona_decompose(idx, lat, root_at(lat, idx, Vec::Zero(2)));
    const auto rep = verify_corona(f, idx, lat);
    EXPECT_TRUE(rep.ok());
    EXPECT_GT(rep.families, 10);
    EXPECT_GE(interior_packing_max(rep, lat, gen.cloud), 2.0);
  }
}

TEST(Corona, InvalidParameters) {
  const auto gen = gen_plane(2, 1, 1.0, 1e-2);
  const CloudIndex idx(gen.cloud);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  CoronaParams p;
  p.delta = 0.1;
  EXPECT_THROW(corona_decompose(idx, lat, 0, p), InputError);
  p.delta = 0.05;
  EXPECT_THROW(corona_decompose(idx, lat, -1, p), InputError);
  p.theta = 0;
  EXPECT_THROW(corona_decompose(idx, lat, 0, p), InputError);
}

class TwoPlaneForest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    gen = new Generated(gen_two_planes(2, M_PI / 4, 1.0, 1e-3));
    idx = new CloudIndex(gen->cloud);
    lat = new Lattice(build_lattice(gen->cloud, 2, max_generation(gen->cloud), 1));
    forest = new CoronaForest(corona_decompose(*idx, *lat, root_at(*lat, *idx, Vec::Zero(2))));
  }
  static void TearDownTestSuite() {
    delete forest;
    delete lat;
    delete idx;
    delete gen;
  }
  static Generated* gen;
  static CloudIndex* idx;
  static Lattice* lat;
  static CoronaForest* forest;
};
Generated* TwoPlaneForest::gen = nullptr;
CloudIndex* TwoPlaneForest::idx = nullptr;
Lattice* TwoPlaneForest::lat = nullptr;
CoronaForest* TwoPlaneForest::forest = nullptr;

TEST_F(TwoPlaneForest, PartitionAndCoherence) {
  const auto& f = *forest;
  std::vector<int> count(lat->cubes.size(), 0);
  for (size_t s = 0; s < f.families.size(); ++s) {
    const auto& fam = f.families[s];
    for (int q : fam.members) {
      ++count[q];
      EXPECT_EQ(f.family_of[q], static_cast<int>(s));
      if (q != fam.top) EXPECT_EQ(f.family_of[lat->cubes[q].parent], static_cast<int>(s));
    }
    // a cube is minimal iff one of its siblings in the family left it mediocre: minimal sets are sibling-closed
    for (int q : fam.minimal)
      for (int sib : lat->cubes[lat->cubes[q].parent].children)
        EXPECT_TRUE(std::binary_search(fam.minimal.begin(), fam.minimal.end(), sib));
  }
  std::vector<int> stack{f.root};
  while (!stack.empty()) {
    const int q = stack.back();
    stack.pop_back();
    EXPECT_EQ(count[q], 1) << q;
    count[q] = 0;
    for (int c : lat->cubes[q].children) stack.push_back(c);
  }
  for (int c : count) EXPECT_EQ(c, 0);
  EXPECT_TRUE(verify_corona(f, *idx, *lat).ok());
}

TEST_F(TwoPlaneForest, MovedCubeIsReported) {
  CoronaForest bad = *forest;
  // a non-top member of a family with children moved into another family
  int moved = -1, from = -1, to = -1;
  for (size_t s = 0; s < bad.families.size() && moved < 0; ++s)
    for (int q : bad.families[s].members)
      if (q != bad.families[s].top && !lat->cubes[q].children.empty() &&
          bad.family_of[lat->cubes[q].children[0]] == static_cast<int>(s)) {
        moved = q;
        from = static_cast<int>(s);
        break;
      }
  ASSERT_GE(moved, 0);
  to = from == 0 ? 1 : 0;
  auto& src = bad.families[from].members;
  src.erase(std::find(src.begin(), src.end(), moved));
  bad.families[to].members.push_back(moved);
  std::sort(bad.families[to].members.begin(), bad.families[to].members.end());
  bad.family_of[moved] = to;
  const auto rep = verify_corona(bad, *idx, *lat);
  EXPECT_FALSE(rep.coherence_ok);
  bool named = false;
  for (const auto& p : rep.problems) named |= p.find("cube " + std::to_string(moved) + " ") != std::string::npos;
  EXPECT_TRUE(named);
}

TEST_F(TwoPlaneForest, DuplicatedCubeBreaksPartition) {
  CoronaForest bad = *forest;
  bad.families[0].members.push_back(bad.families[1].members[0]);
  std::sort(bad.families[0].members.begin(), bad.families[0].members.end());
  EXPECT_FALSE(verify_corona(bad, *idx, *lat).partition_ok);
}

TEST_F(TwoPlaneForest, RemarkConsistency) {
  const auto rep = verify_corona(*forest, *idx, *lat);
  EXPECT_TRUE(rep.remark_ok);
  double top_sum = 0;
  for (const auto& fam : forest->families) top_sum += lat->cubes[fam.top].mass;
  for (const auto& e : rep.packing)
    if (e.cube == forest->root) EXPECT_NEAR(e.top_mass, top_sum, 1e-12 * top_sum);
  EXPECT_EQ(packing_to_csv(rep).substr(0, 19), "cube,top_mass,ratio");
}

TEST_F(TwoPlaneForest, SmallerEtaStopsTheRootFamilyEarlier) {
  // same top, same graph: the root family can only shrink and its minimal
  // cubes move up
  std::vector<int> prev;
  for (double theta : {0.25, 0.5, 1.0, 1.5, 2.5}) {
    CoronaParams p;
    p.theta = theta;
    p.theta_prime = 0.125;
    const auto f = corona_decompose(*idx, *lat, forest->root, p);
    const auto& mem = f.families[0].members;
    EXPECT_EQ(f.families[0].top, forest->root);
    if (!prev.empty()) EXPECT_TRUE(std::includes(prev.begin(), prev.end(), mem.begin(), mem.end())) << theta;
    prev = mem;
  }
}

TEST(Corona, FamilyCountOnGraphsIgnoresEta) {
  const auto gen = gen_lipschitz_graph(2, 1, 0.1, GraphMode::Fourier, 1.0, 1e-3, 1);
  const CloudIndex idx(gen.cloud);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  size_t prev = 0;
  for (double theta : {0.25, 0.5, 1.0, 2.0}) {
    CoronaParams p;
    p.theta = theta;
    const auto f = corona_decompose(idx, lat, lat.roots()[0], p);
    EXPECT_GE(f.families.size(), prev);
    prev = f.families.size();
  }
}

TEST_F(TwoPlaneForest, Deterministic) {
  const auto again = corona_decompose(*idx, *lat, forest->root);
  EXPECT_EQ(corona_to_json(again), corona_to_json(*forest));
  const auto j = nlohmann::json::parse(corona_to_json(*forest));
  EXPECT_EQ(j["families"].size(), forest->families.size());
  EXPECT_NEAR(j["eta"].get<double>(), std::pow(0.05, 0.5), 1e-15);
}

TEST(Corona, SharedTopGraphs) {
  const auto gen = gen_lipschitz_graph(2, 1, 0.05, GraphMode::Fourier, 1.0, 5e-4, 1);
  const CloudIndex idx(gen.cloud);
  const Lattice lat = build_lattice(gen.cloud, 2, max_generation(gen.cloud), 1);
  CoronaParams p;
  p.theta_prime = 1;   // M = 20
  const Window win = gen.cloud.trusted_window();
  std::vector<int> roots;
  for (int q : lat.level(lat.j_min + 4))
    if (win.contains_ball(gen.cloud.points.col(lat.cubes[q].center_index), 2 * lat.cubes[q].diam)) roots.push_back(q);
  ASSERT_GT(roots.size(), 4u);
  const auto forests = corona_decompose_roots(idx, lat, roots, p);
  int shared = 0;
  for (const auto& f : forests) {
    const auto rep = verify_corona(f, idx, lat, forests);
    EXPECT_TRUE(rep.ok());
    if (f.shared_from < 0) continue;
    ++shared;
    const auto& R = lat.cubes[f.root];
    const auto& S = lat.cubes[f.shared_from];
    const CoronaForest* src = nullptr;
    for (const auto& o : forests)
      if (o.root == f.shared_from) src = &o;
    ASSERT_NE(src, nullptr);
    EXPECT_LE((gen.cloud.points.col(R.center_index) - gen.cloud.points.col(S.center_index)).norm() + R.diam,
              src->M_eff / 3 * S.diam);
  }
  EXPECT_GT(shared, 0);
  // tampering with a shared graph is caught
  for (size_t i = 0; i < forests.size(); ++i) {
    if (forests[i].shared_from < 0) continue;
    CoronaForest bad = forests[i];
    bad.graphs[bad.families[0].graph].heights(0, 0) += 1e-9;
    EXPECT_FALSE(verify_corona(bad, idx, lat, forests).sharing_ok);
    break;
  }
}
