#pragma once

#include <vector>

#include "rectiscope/geometry.hpp"

namespace rectiscope {

// Finite signed measure sum_i s_i delta_{z_i} with distinct support points.
struct SignedDiscreteMeasure {
  Mat support;  // n x k
  Vec masses;   // k

  // Sums the masses of coincident points.
  static SignedDiscreteMeasure make(const Mat& support, const Vec& masses);
  int size() const { return static_cast<int>(masses.size()); }
  int dim() const { return static_cast<int>(support.rows()); }
};

// a * A + b * B, merged.
SignedDiscreteMeasure combine(const SignedDiscreteMeasure& A, double a, const SignedDiscreteMeasure& B, double b);

// c * H^d restricted to a plane.
struct FlatMeasure {
  AffinePlane plane;
  double c = 1;
};

struct LocalBall {
  Vec x;
  double r = 0;
};

enum class BlMethod { Lp, Flow };

// Optimal test function values on the points that lie strictly inside the ball.
struct BlSolution {
  double value = 0;
  std::vector<int> kept;  // indices into the input support
  Vec f;                  // f on kept points; value = sum s_i f_i
};

// sup |sum f(z_i) s_i| over f with |f(z_i) - f(z_j)| <= |z_i - z_j| and
// |f(z_i)| <= r - |z_i - x|. Points with |z - x| >= r are dropped first.
double bl_norm(const SignedDiscreteMeasure& s, const LocalBall& ball, BlMethod method = BlMethod::Flow);
BlSolution bl_solve(const SignedDiscreteMeasure& s, const LocalBall& ball, BlMethod method = BlMethod::Flow);
// Raw form used by the coefficient code: columns of pts with masses s.
BlSolution bl_solve(const Mat& pts, const Vec& s, const Vec& x, double r, BlMethod method = BlMethod::Flow);

// Independent check: exhaustive spanning-tree enumeration for up to 8 nonzero
// support points, a primal-dual interior point method for 9 or 10.
// Refuses larger supports.
double bl_norm_oracle(const SignedDiscreteMeasure& s, const LocalBall& ball);

// Grid of step grid_step on P inside B(x, r), nodes at half offsets around
// the projection of x, each of mass c * step^d / omega_norm(d).
SignedDiscreteMeasure sample_flat(const FlatMeasure& fm, const LocalBall& ball, double grid_step);

// bl_norm(mu - nu).
double wasserstein_local(const SignedDiscreteMeasure& mu, const SignedDiscreteMeasure& nu, const LocalBall& ball,
                         BlMethod method = BlMethod::Flow);

}  // namespace rectiscope
