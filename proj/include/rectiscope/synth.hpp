#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rectiscope/cloud.hpp"
#include "rectiscope/normalization.hpp"

namespace rectiscope {

// Flat piece of a singular set: base point plus k orthonormal directions (k may be 0).
struct Locus {
  Vec point;
  Mat directions;
  double distance(const Vec& x) const;
};

struct GroundTruth {
  std::string kind;
  double lipschitz = 0;          // graphs: exact max |grad f| (operator norm)
  double length_factor = 1;      // snowflake: length growth per iteration
  double analytic_mass = 0;      // total mass implied by the construction
  std::vector<Locus> singular;   // two planes: intersection; half plane: edge
  Mat tangents;                  // graphs: n x (N*d), orthonormal frame per point
};

struct Generated {
  WeightedPointCloud cloud;
  GroundTruth truth;
};

enum class GraphMode { Fourier, Pyramid };
GraphMode parse_graph_mode(const std::string& s);

// Regular d-grid on the first d axes, nodes at half offsets over [-extent/2, extent/2]^d.
Generated gen_plane(int n, int d, double extent, double h);
// Graph over the same grid. delta = 0 gives gen_plane.
Generated gen_lipschitz_graph(int n, int d, double delta, GraphMode mode, double extent, double h,
                              std::uint64_t seed);
// Koch-type curve over a base segment of length base_length (0 = 2048 h), bump angle flatness.
Generated gen_snowflake(double flatness, int depth, double h, double base_length = 0);
// Length growth per iteration for bump angle a.
double snowflake_length_factor(double a);
// Two (n-1)-planes through the origin meeting at the given angle.
Generated gen_two_planes(int n, double angle, double extent, double h);
// Half (n-1)-plane {u_1 <= 0}, edge included.
Generated gen_half_plane(int n, double extent, double h);
// Round (n-1)-sphere of radius R about the origin.
Generated gen_sphere(int n, double R, double h);

enum class DensityProfile { Const, Step, RandomBmo };
DensityProfile parse_density_profile(const std::string& s);
// g in [(1+amplitude)^-1, 1+amplitude]. Step splits at the window center along e_1.
void attach_density(WeightedPointCloud& cloud, DensityProfile profile, double amplitude, std::uint64_t seed);

}  // namespace rectiscope
