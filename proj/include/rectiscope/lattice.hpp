#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rectiscope/cloud.hpp"

namespace rectiscope {

class KdTree;

struct DyadicCube {
  int id = 0;
  int j = 0;                  // scale 2^j h
  int center_index = 0;       // cloud index of c_Q
  int parent = -1;
  std::vector<int> children;
  std::vector<int> members;   // sorted cloud indices
  double mass = 0;
  double diam = 0;            // exact max pairwise member distance
  bool interior = false;      // B(c_Q, diam Q) inside the cloud's trusted window
};

struct Lattice {
  int j_min = 0, j_max = 0;
  double h = 0;
  int d = 1;
  std::uint64_t seed = 0;
  std::vector<DyadicCube> cubes;          // cubes[id].id == id
  std::vector<std::vector<int>> levels;   // levels[j - j_min]: cube ids
  // Constants over interior cubes and over all cubes. Cubes cut by the edge
  // of a finite sample are not cubes of the underlying set, so C_D_emp is the
  // one compared against max_cd.
  double C_D_emp = 0;
  double C_D_all = 0;

  double scale(int j) const;
  const std::vector<int>& level(int j) const { return levels.at(j - j_min); }
  const std::vector<int>& roots() const { return level(j_max); }
  // Smallest C with C^-1 s <= diam <= C s and C^-1 s^d <= mass <= C s^d.
  double cube_constant(const DyadicCube& Q) const;
  // Member lists of all descendants of Q at level j (ids).
  std::vector<int> descendants(int id, int j) const;
};

// Nested farthest-point nets, nearest-center assignment at j_min and
// nearest-parent-center assignment above.
Lattice build_lattice(const WeightedPointCloud& cloud, int j_min, int j_max, std::uint64_t seed);

// Largest usable j_max for a cloud: floor(log2(diam / h)).
int max_generation(const WeightedPointCloud& cloud);

struct BoundaryStat {
  double tau = 0;
  double value = 0;   // max over cubes of strip mass / (tau^(1/C_D) s^d)
  int worst_cube = -1;
};

struct LatticeReport {
  bool partition_ok = true;
  bool nesting_ok = true;
  bool additivity_ok = true;
  bool ball_inclusion_ok = true;
  std::vector<std::string> problems;
  double diam_ratio_min = 0, diam_ratio_max = 0;   // diam / s
  double mass_ratio_min = 0, mass_ratio_max = 0;   // mass / s^d
  double C_D_emp = 0, C_D_all = 0;
  int interior_cubes = 0;
  std::vector<BoundaryStat> boundary;
  // Share of cubes with B(c_Q, diam/C_D) cap E inside Q: interior cubes
  // against C_D_emp, and all cubes against C_D_all.
  int center_failures = 0, center_failures_all = 0;
  double center_fraction = 1, center_fraction_all = 1;
  bool ok() const { return partition_ok && nesting_ok && additivity_ok && ball_inclusion_ok; }
};

LatticeReport verify_lattice(const Lattice& lat, const WeightedPointCloud& cloud, const std::vector<double>& tau_list,
                             int threads = 1);

// {x in E : dist(x, Q) <= (lambda - 1) diam Q}, sorted.
std::vector<int> enlarged_cube(const Lattice& lat, const WeightedPointCloud& cloud, int cube, double lambda);
std::vector<int> enlarged_cube(const Lattice& lat, const WeightedPointCloud& cloud, const KdTree& tree, int cube,
                               double lambda);

// Exact diameter of the listed columns.
double subset_diameter(const Mat& pts, const std::vector<int>& idx);

std::string lattice_to_json(const Lattice& lat);
// Members, parents and children come from the file; mass and diameter are
// recomputed from the cloud.
Lattice lattice_from_json(const std::string& text, const WeightedPointCloud& cloud);

}  // namespace rectiscope
