#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rectiscope/cloud.hpp"
#include "rectiscope/kdtree.hpp"
#include "rectiscope/lattice.hpp"
#include "rectiscope/transport.hpp"

namespace rectiscope {

// Cloud plus a kd-tree over its points. Keeps a pointer to the cloud, which
// must outlive the index.
class CloudIndex {
 public:
  explicit CloudIndex(const WeightedPointCloud& cloud);
  const WeightedPointCloud& cloud() const { return *cloud_; }
  const KdTree& tree() const { return tree_; }
  std::vector<int> ball(const Vec& x, double r, bool closed = false) const;

 private:
  const WeightedPointCloud* cloud_;
  KdTree tree_;
};

struct SearchOptions {
  int budget = 200;        // objective evaluations per plane refinement
  double rel_tol = 1e-4;   // c and lambda searches
  int alpha_bins = 0;      // bins per radius for alpha/osc, 0 = 16 for d=1, 4 for d=2
  int beta_grid = 0;       // plane grid nodes per radius for the betas, 0 = 40 for d=1, 16 for d=2
  BlMethod method = BlMethod::Flow;
  bool use_density = true; // alpha uses g*w when g is present
};

// Result of a minimization over planes. value is the best upper bound found.
struct PlaneFitResult {
  double value = 0;
  AffinePlane plane;
  double c = 1;                 // alpha only: density of the flat measure
  int evaluations = 0;          // objective evaluations spent
  std::vector<double> trace;    // best value after each accepted move
};

PlaneFitResult alpha_ball(const CloudIndex& idx, const Vec& x, double r, const SearchOptions& opt = {});
PlaneFitResult bbeta1(const CloudIndex& idx, const Vec& x, double r, const SearchOptions& opt = {});
PlaneFitResult bbetainf(const CloudIndex& idx, const Vec& x, double r, const SearchOptions& opt = {});

// (norm_radius)^(-d-1) min_lambda ||(g - lambda) mu||_BL on B(x, r).
double osc_ball(const CloudIndex& idx, const Vec& x, double r, double norm_radius, const SearchOptions& opt = {});

// Cube versions: ball B(c_Q, 3 diam Q).
double alpha_cube(const CloudIndex& idx, const Lattice& lat, int cube, const SearchOptions& opt = {});
double osc_coefficient(const CloudIndex& idx, const Lattice& lat, int cube, const SearchOptions& opt = {});

struct TangentField {
  int n = 0, d = 0;
  double fit_radius = 0;
  Mat frames;                  // n x (N d), frame of point i in columns [i d, (i+1) d)
  Vec residual;                // weighted mean squared distance to the fitted plane
  std::vector<char> flagged;   // too few neighbours: canonical plane used
  Eigen::Block<const Mat> frame(int i) const { return frames.block(0, i * d, n, d); }
};

TangentField tangent_planes(const CloudIndex& idx, double k = 8, int threads = 1);

struct GammaResult {
  double value = 0;
  double tangent_term = 0;     // mean projector distance to V
  double perp_term = 0;        // max normalized perpendicular offset
  Mat V;                       // n x d frame of the best subspace
  int evaluations = 0;
};

GammaResult gamma_local(const CloudIndex& idx, const TangentField& T, const Vec& x, double r,
                        const SearchOptions& opt = {});

struct GammaGlobal {
  double value = 0;
  int center = -1;
  double radius = 0;
  GammaResult worst;
  int samples = 0;
};

struct GammaSampling {
  int n_samples = 64;
  std::uint64_t seed = 1;
  double r_min = 0;              // 0 = max(5h, 2 fit radius)
  std::vector<int> centers;      // extra centers probed at every sampled radius
  int threads = 1;
};

GammaGlobal gamma_global(const CloudIndex& idx, const TangentField& T, const GammaSampling& s,
                         const SearchOptions& opt = {});

// max over dyadic s <= r (s >= 5h) of the rms deviation of normals in B(x, s)
// from their weighted mean.
double normal_bmo(const CloudIndex& idx, const Vec& x, double r);

struct MaximalSplit {
  std::vector<int> good;   // F
  std::vector<int> bad;    // B
  AffinePlane plane;       // x0 + V with V the gamma argmin on B(x0, 4R)
  Vec maximal;             // M(y) for the points of B(x0, R), aligned with all
  std::vector<int> all;    // B(x0, R) cap E, sorted
  double mass_bad = 0, mass_all = 0;
};

MaximalSplit maximal_split(const CloudIndex& idx, const TangentField& T, const Vec& x0, double R, double tau,
                           const SearchOptions& opt = {});

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CubeCoefficients {
  int cube = 0;
  int j = 0;
  double mass = 0, diam = 0;
  bool reliable = false;   // diam >= reliable_factor h
  bool trusted = false;    // B(c_Q, 3 diam Q) inside the trusted window
  double alpha = kNaN, bbeta1 = kNaN, bbetainf = kNaN, osc = kNaN;
  double tangent_osc = kNaN, perp_extent = kNaN, gamma = kNaN;
  bool computed() const { return reliable && trusted; }
};

struct CoefficientSelection {
  bool alpha = true, bbeta1 = true, bbetainf = true, osc = true, gamma = true;
};

struct TableOptions {
  SearchOptions search;
  CoefficientSelection which;
  double reliable_factor = 5;
  double tangent_k = 8;
  int threads = 1;
};

// One row per cube. Rows for unreliable or untrusted cubes carry NaN values.
std::vector<CubeCoefficients> compute_cube_coefficients(const CloudIndex& idx, const Lattice& lat,
                                                        const TableOptions& opt);

std::string coefficients_to_csv(const std::vector<CubeCoefficients>& rows);
std::string coefficients_to_json(const std::vector<CubeCoefficients>& rows);
std::vector<CubeCoefficients> coefficients_from_json(const std::string& text);

}  // namespace rectiscope
