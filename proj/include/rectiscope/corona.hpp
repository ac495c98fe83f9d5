#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rectiscope/coefficients.hpp"
#include "rectiscope/lattice.hpp"

namespace rectiscope {

// Piecewise-linear graph over a d-plane V: heights in the normal directions
// at the centres of a K^d grid of square cells of side a covering
// [-R, R]^d in V coordinates, interpolated on the Kuhn triangulation.
struct LipschitzGraphModel {
  Vec base;          // origin of V coordinates
  Mat frame;         // n x d, V
  Mat normals;       // n x (n - d)
  int cells = 0;     // K per axis
  double cell = 0;   // a
  double half_extent = 0;
  Mat heights;       // (n - d) x K^d, node (k_0, .., k_{d-1}) at column k_0 + K k_1
  double lipschitz = 0;  // max operator norm of the simplex gradients

  int d() const { return static_cast<int>(frame.cols()); }
  Vec coords(const Vec& z) const { return frame.transpose() * (z - base); }
  bool covers(const Vec& u) const;
  Vec height(const Vec& u) const;          // clamped to the node hull
  Vec point(const Vec& u) const;           // base + frame u + normals height(u)
  double offset(const Vec& z) const;       // |normal part of z - height| (vertical distance)
};

struct GraphFitOptions {
  double cells_per_radius = 32;   // cell side max(min_cell_h * h, r / cells_per_radius)
  double min_cell_h = 2;
  double far_multiplier = 3;      // points beyond far_multiplier * cell count as off the graph
  int fill_sweeps = 2000;
};

struct GraphFit {
  LipschitzGraphModel graph;
  double far_mass = 0;        // region mass farther than far_multiplier * cell from the graph
  double empty_area = 0;      // normalized area of graph cells inside the ball holding no point
  double defect = 0;          // far_mass + empty_area
  double normalized = 0;      // defect / r^d
};

// PCA base plane over the region, weighted median heights per cell, empty
// cells filled by Jacobi sweeps of the discrete Laplace equation. The grid
// covers the projection of B(x, r). Throws InputError when the region has
// rank < d.
GraphFit fit_lipschitz_graph(const WeightedPointCloud& cloud, const std::vector<int>& region, const Vec& x, double r,
                             const GraphFitOptions& opt = {});

struct UrSample {
  int center = 0;
  double radius = 0;
  double defect = 0;       // normalized
  double lipschitz = 0;
  bool misses = false;     // graph does not meet B(x, r/2)
  double value = 0;        // max(defect, lipschitz, misses)
};

struct UrScan {
  double delta_est = 0;    // min(max value, 1/10)
  bool capped = false;
  UrSample worst;
  std::vector<UrSample> samples;
};

struct UrScanOptions {
  int n_samples = 32;
  std::uint64_t seed = 1;
  double r_min = 0;        // 0 = 16 h
  double r_max = 0;        // 0 = largest trusted radius
  int threads = 1;
  GraphFitOptions fit;
};

UrScan delta_ur_scan(const CloudIndex& idx, const UrScanOptions& opt = {});

struct CoronaParams {
  double delta = 0.05;      // must lie in (0, 1/10)
  double theta = 0.5;
  double theta_prime = 0;   // 0 = theta / (4 d)
  GraphFitOptions fit;
};

struct CoronaFamily {
  int top = 0;
  std::vector<int> members;   // sorted cube ids
  std::vector<int> minimal;   // sorted cube ids
  int graph = -1;             // index into CoronaForest::graphs, -1 when flagged
  bool flagged = false;       // graph fit failed: singleton family
  double max_far_fraction = 0;
};

struct CoronaForest {
  int root = 0;
  CoronaParams params;
  double eta = 0, M = 0, M_eff = 0;   // M_eff for the root
  int shared_from = -1;               // root whose top graph this forest reuses
  std::vector<CoronaFamily> families;
  std::vector<LipschitzGraphModel> graphs;
  std::vector<int> family_of;         // per lattice cube, -1 outside the root
};

CoronaForest corona_decompose(const CloudIndex& idx, const Lattice& lat, int root, const CoronaParams& p = {});
// Several roots of one generation, in order; a root inside (M/3) B of an
// earlier root that fitted its own graph reuses that top graph.
std::vector<CoronaForest> corona_decompose_roots(const CloudIndex& idx, const Lattice& lat,
                                                 const std::vector<int>& roots, const CoronaParams& p = {});

struct PackingEntry {
  int cube = 0;
  double top_mass = 0;   // sum of mass(Q(S)) over tops inside the cube
  double ratio = 0;      // top_mass / mass(cube)
};

struct CoronaReport {
  bool partition_ok = true;
  bool coherence_ok = true;
  bool sharing_ok = true;
  bool remark_ok = true;     // strict sub-tops of a top weigh at most (packing_max - 1) mass
  std::vector<std::string> problems;
  double packing_max = 0;
  int packing_argmax = -1;
  std::vector<PackingEntry> packing;
  double proximity_delta = 0;   // smallest delta with dist <= delta diam Q on members with diam >= 5h
                                // and B(c_Q, diam Q) in the trusted window
  int proximity_worst = -1;
  int families = 0, minimal_cubes = 0, flagged = 0;
  bool ok() const { return partition_ok && coherence_ok && sharing_ok && remark_ok; }
};

// shared: forests the sharing of this forest refers to (may be empty).
CoronaReport verify_corona(const CoronaForest& forest, const CloudIndex& idx, const Lattice& lat,
                           const std::vector<CoronaForest>& others = {});

std::string corona_to_json(const CoronaForest& f);
// family_of is rebuilt from the member lists.
CoronaForest corona_from_json(const std::string& text, const Lattice& lat);
std::string packing_to_csv(const CoronaReport& r);

}  // namespace rectiscope
