#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rectiscope/geometry.hpp"

namespace rectiscope {

// Ball inside which the finite sample stands in for the unbounded set.
// A ball B(y, s) is trusted when |y - center| + s <= radius.
struct Window {
  Vec center;
  double radius = 0;
  bool contains_ball(const Vec& y, double s) const { return (y - center).norm() + s <= radius; }
};

// Discrete measure sum_i w_i delta_{z_i}. Weights are in normalized H^d units.
struct WeightedPointCloud {
  int n = 0, d = 0;
  double h = 0;
  Mat points;                   // n x N
  Vec weights;                  // N
  std::optional<Vec> g;         // density, N
  std::optional<Mat> normals;   // n x N, codimension one only
  std::optional<Window> window;

  int size() const { return static_cast<int>(points.cols()); }
  // Throws InputError naming the broken invariant.
  void validate() const;
  // Stored window, or the default one (weighted mean, a quarter of the diameter).
  Window trusted_window() const;
  // Measure weights: w_i g_i when use_density and g is present, else w_i.
  Vec measure(bool use_density) const;
};

enum class CloudFormat { Csv, Json, Binary };
CloudFormat format_from_path(const std::string& path);
CloudFormat parse_format(const std::string& name);

WeightedPointCloud load_cloud(const std::string& path, CloudFormat format);
void save_cloud(const WeightedPointCloud& cloud, const std::string& path, CloudFormat format);
WeightedPointCloud load_cloud(const std::string& path);
void save_cloud(const WeightedPointCloud& cloud, const std::string& path);

// Exact diameter (max pairwise distance).
double cloud_diameter(const WeightedPointCloud& cloud);

struct AhlforsSample {
  int center = 0;
  double radius = 0, mass = 0, ratio = 0;  // ratio = mass / r^d
};

struct AhlforsProfile {
  std::vector<AhlforsSample> samples;
  double C_upper_est = 1, C_lower_est = 1;
  double r_min = 0, r_max = 0;
};

struct ProfileOptions {
  int n_centers = 32;
  int n_radii = 12;
  double rho_min = 0;  // mandatory, >= 5
  std::uint64_t seed = 1;
  // When set, only balls inside this window are sampled.
  std::optional<Window> window;
  // Explicit centers override the random choice.
  std::vector<int> centers;
  double r_max = 0;  // 0 = diameter of the cloud
  int threads = 1;
};

AhlforsProfile ahlfors_profile(const WeightedPointCloud& cloud, const ProfileOptions& opt);

}  // namespace rectiscope
