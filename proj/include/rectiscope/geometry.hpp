#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace rectiscope {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class KdTree;

// d-plane in R^n: base point plus orthonormal frame (n x d).
class AffinePlane {
 public:
  AffinePlane() = default;
  // frame columns must be orthonormal to 1e-12.
  AffinePlane(Vec base, Mat frame);
  // Orthonormalizes the given spanning columns (Gram-Schmidt, in order).
  static AffinePlane from_span(Vec base, const Mat& directions);
  // Coordinate plane spanned by the first d axes, through the origin.
  static AffinePlane axis(int n, int d);

  int n() const { return static_cast<int>(frame_.rows()); }
  int d() const { return static_cast<int>(frame_.cols()); }
  const Vec& base() const { return base_; }
  const Mat& frame() const { return frame_; }

  Mat projector() const { return frame_ * frame_.transpose(); }
  // Orthonormal basis of the orthogonal complement, n x (n - d). Deterministic.
  Mat normal_frame() const;
  AffinePlane linear() const { return AffinePlane(Vec::Zero(n()), frame_); }

  Vec project(const Vec& x) const;
  double distance(const Vec& x) const;

 private:
  Vec base_;
  Mat frame_;
};

Vec project(const AffinePlane& plane, const Vec& x);

// Operator norm of pi_V - pi_W (linear parts), largest singular value of the
// difference of the n x n projection matrices.
double projector_distance(const AffinePlane& V, const AffinePlane& W);
// Same quantity from two orthonormal frames of equal dimension, via the
// smallest principal cosine. Used in hot loops.
double projector_distance_frames(const Mat& FV, const Mat& FW);

// r^-1 (sup_{E in closed ball} dist(., F) + sup_{F in closed ball} dist(., E)).
// Distances are to the full other set. nullopt when either set misses the ball.
// Sets are the columns of E and F. Brute force.
std::optional<double> hausdorff_local(const Mat& E, const Mat& F, const Vec& x, double r);
// Same, with prebuilt trees over E and F.
std::optional<double> hausdorff_local(const Mat& E, const KdTree& tE, const Mat& F, const KdTree& tF,
                                      const Vec& x, double r);

struct PlaneFit {
  AffinePlane plane;
  Vec eigenvalues;          // covariance spectrum, descending
  bool degenerate = false;  // covariance rank < d, completed canonically
  bool tie = false;         // eigenvalue d and d+1 equal, representative chosen canonically
};

// Weighted PCA plane through the weighted mean. Columns of pts; idx selects
// columns (empty = all). Needs total weight > 0.
PlaneFit fit_plane_pca(const Mat& pts, const Vec& w, int d, const std::vector<int>& idx = {});
// PCA of the second moment about a fixed origin (linear subspace fit).
PlaneFit fit_subspace_about(const Mat& pts, const Vec& w, const Vec& origin, int d,
                            const std::vector<int>& idx = {});
// Top-d eigen frame of a symmetric PSD matrix with the canonical tie rule.
PlaneFit top_frame(const Mat& sym, int d);

// Rotation of the frame: column i tilted toward normal direction nv by angle t.
Mat tilt_frame(const Mat& frame, int i, const Vec& nv, double t);

}  // namespace rectiscope
