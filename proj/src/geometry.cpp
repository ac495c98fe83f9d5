#include "rectiscope/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rectiscope/error.hpp"
#include "rectiscope/kdtree.hpp"

namespace rectiscope {

namespace {

// Modified Gram-Schmidt in place; throws if a column collapses.
void orthonormalize(Mat& F) {
  for (int i = 0; i < F.cols(); ++i) {
    for (int pass = 0; pass < 2; ++pass)
      for (int j = 0; j < i; ++j) F.col(i) -= F.col(j).dot(F.col(i)) * F.col(j);
    const double nrm = F.col(i).norm();
    if (!(nrm > 1e-300)) throw InputError("plane directions are linearly dependent");
    F.col(i) /= nrm;
  }
}

void canonical_sign(Eigen::Ref<Vec> v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  if (v[best] < 0) v = -v;
}

// Picks `need` orthonormal vectors inside span(G), preferring the projections
// of e_1, e_2, ... in order.
void pick_axis_representatives(const Mat& G, int need, std::vector<Vec>& out) {
  const int n = static_cast<int>(G.rows());
  std::vector<Vec> local;
  for (int i = 0; i < n && static_cast<int>(local.size()) < need; ++i) {
    Vec v = G * G.transpose().col(i);
    for (const auto& u : local) v -= u.dot(v) * u;
    const double nrm = v.norm();
    if (nrm > 1e-6) local.push_back(v / nrm);
  }
  // G has full column rank, so n axes always suffice
  for (auto& u : local) out.push_back(u);
}

}  // namespace

AffinePlane::AffinePlane(Vec base, Mat frame) : base_(std::move(base)), frame_(std::move(frame)) {
  const int n = static_cast<int>(frame_.rows()), d = static_cast<int>(frame_.cols());
  if (base_.size() != n) throw InputError("plane base and frame dimensions disagree");
  if (d < 1 || d >= n) throw InputError("plane dimension must satisfy 1 <= d < n");
  const double err = (frame_.transpose() * frame_ - Mat::Identity(d, d)).cwiseAbs().maxCoeff();
  if (!(err <= 1e-12)) throw InputError("plane frame is not orthonormal");
}

AffinePlane AffinePlane::from_span(Vec base, const Mat& directions) {
  Mat F = directions;
  orthonormalize(F);
  return AffinePlane(std::move(base), std::move(F));
}

AffinePlane AffinePlane::axis(int n, int d) {
  if (d < 1 || d >= n) throw InputError("plane dimension must satisfy 1 <= d < n");
  return AffinePlane(Vec::Zero(n), Mat::Identity(n, d));
}

Mat AffinePlane::normal_frame() const {
  const int n = this->n(), d = this->d();
  Mat N(n, n - d);
  std::vector<bool> used(n, false);
  for (int k = 0; k < n - d; ++k) {
    int best = -1;
    double best_norm = -1;
    Vec best_v;
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      Vec v = Vec::Unit(n, i);
      for (int pass = 0; pass < 2; ++pass) {
        v -= frame_ * (frame_.transpose() * v);
        for (int j = 0; j < k; ++j) v -= N.col(j).dot(v) * N.col(j);
      }
      const double nrm = v.norm();
      if (nrm > best_norm + 1e-12) {
        best_norm = nrm;
        best = i;
        best_v = v;
      }
    }
    used[best] = true;
    N.col(k) = best_v / best_norm;
  }
  return N;
}

Vec AffinePlane::project(const Vec& x) const {
  const Vec y = x - base_;
  return base_ + frame_ * (frame_.transpose() * y);
}

double AffinePlane::distance(const Vec& x) const {
  const Vec y = x - base_;
  return (y - frame_ * (frame_.transpose() * y)).norm();
}

Vec project(const AffinePlane& plane, const Vec& x) {
  if (x.size() != plane.n()) throw InputError("point dimension does not match plane");
  return plane.project(x);
}

double projector_distance(const AffinePlane& V, const AffinePlane& W) {
  if (V.n() != W.n() || V.d() != W.d()) throw InputError("projector_distance: dimension mismatch");
  const Mat D = V.projector() - W.projector();
  Eigen::SelfAdjointEigenSolver<Mat> es(D, Eigen::EigenvaluesOnly);
  const double s = es.eigenvalues().cwiseAbs().maxCoeff();
  return std::clamp(s, 0.0, 1.0);
}

double projector_distance_frames(const Mat& FV, const Mat& FW) {
  // sin of the largest principal angle = |(I - P_W) F_V|_2
  const Mat R = FV - FW * (FW.transpose() * FV);
  const int d = static_cast<int>(R.cols());
  double s2;
  if (d == 1) {
    s2 = R.col(0).squaredNorm();
  } else if (d == 2) {
    const double a = R.col(0).squaredNorm(), b = R.col(0).dot(R.col(1)), c = R.col(1).squaredNorm();
    const double tr = 0.5 * (a + c), disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    s2 = tr + disc;
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> es(R.transpose() * R, Eigen::EigenvaluesOnly);
    s2 = es.eigenvalues().maxCoeff();
  }
  return std::clamp(std::sqrt(std::max(s2, 0.0)), 0.0, 1.0);
}

std::optional<double> hausdorff_local(const Mat& E, const Mat& F, const Vec& x, double r) {
  if (E.rows() != x.size() || F.rows() != x.size()) throw InputError("hausdorff_local: dimension mismatch");
  if (!(r > 0)) throw InputError("hausdorff_local: radius must be positive");
  auto one_side = [&](const Mat& A, const Mat& B) -> std::optional<double> {
    bool any = false;
    double worst = 0;
    for (int i = 0; i < A.cols(); ++i) {
      if ((A.col(i) - x).norm() > r) continue;
      any = true;
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < B.cols(); ++j) best = std::min(best, (A.col(i) - B.col(j)).norm());
      worst = std::max(worst, best);
    }
    if (!any) return std::nullopt;
    return worst;
  };
  const auto a = one_side(E, F), b = one_side(F, E);
  if (!a || !b) return std::nullopt;
  return (*a + *b) / r;
}

std::optional<double> hausdorff_local(const Mat& E, const KdTree& tE, const Mat& F, const KdTree& tF,
                                      const Vec& x, double r) {
  if (E.rows() != x.size() || F.rows() != x.size()) throw InputError("hausdorff_local: dimension mismatch");
  if (!(r > 0)) throw InputError("hausdorff_local: radius must be positive");
  auto one_side = [&](const Mat& A, const KdTree& tA, const KdTree& tB) -> std::optional<double> {
    const auto idx = tA.radius(x, r, true);
    if (idx.empty()) return std::nullopt;
    double worst = 0;
    for (int i : idx) worst = std::max(worst, tB.nearest(A.col(i)).second);
    return worst;
  };
  const auto a = one_side(E, tE, tF), b = one_side(F, tF, tE);
  if (!a || !b) return std::nullopt;
  return (*a + *b) / r;
}

PlaneFit top_frame(const Mat& C, int d) {
  const int n = static_cast<int>(C.rows());
  if (d < 1 || d >= n) throw InputError("plane dimension must satisfy 1 <= d < n");
  Eigen::SelfAdjointEigenSolver<Mat> es(C);
  Vec lam(n);
  Mat U(n, n);
  for (int i = 0; i < n; ++i) {
    lam[i] = std::max(es.eigenvalues()[n - 1 - i], 0.0);
    U.col(i) = es.eigenvectors().col(n - 1 - i);
  }
  const double scale = lam[0];
  const double tie_tol = 1e-9 * scale;
  PlaneFit out;
  out.eigenvalues = lam;
  out.degenerate = !(lam[d - 1] > 1e-12 * scale) || scale == 0;

  std::vector<Vec> cols;
  int a = 0;
  while (a < d) {
    int b = a + 1;
    while (b < n && lam[b - 1] - lam[b] <= tie_tol) ++b;
    const int need = std::min(b, d) - a;
    if (b > d) out.tie = true;
    if (b - a == 1) {
      Vec v = U.col(a);
      canonical_sign(v);
      cols.push_back(v);
    } else {
      pick_axis_representatives(U.middleCols(a, b - a), need, cols);
    }
    a = b;
  }
  Mat F(n, d);
  for (int i = 0; i < d; ++i) F.col(i) = cols[i];
  orthonormalize(F);
  out.plane = AffinePlane(Vec::Zero(n), F);
  return out;
}

namespace {

PlaneFit fit_about(const Mat& pts, const Vec& w, int d, const std::vector<int>& idx, const Vec* origin) {
  const int n = static_cast<int>(pts.rows());
  const int m = idx.empty() ? static_cast<int>(pts.cols()) : static_cast<int>(idx.size());
  auto col = [&](int k) { return idx.empty() ? k : idx[k]; };
  double W = 0;
  Vec mean = Vec::Zero(n);
  for (int k = 0; k < m; ++k) {
    const int i = col(k);
    W += w[i];
    mean += w[i] * pts.col(i);
  }
  if (!(W > 0)) throw InputError("plane fit needs positive total weight");
  mean /= W;
  const Vec o = origin ? *origin : mean;
  Mat Cm = Mat::Zero(n, n);
  for (int k = 0; k < m; ++k) {
    const int i = col(k);
    const Vec y = pts.col(i) - o;
    Cm.noalias() += w[i] * y * y.transpose();
  }
  Cm /= W;
  PlaneFit fit = top_frame(Cm, d);
  fit.plane = AffinePlane(o, fit.plane.frame());
  if (m < d + 1) fit.degenerate = true;
  return fit;
}

}  // namespace

PlaneFit fit_plane_pca(const Mat& pts, const Vec& w, int d, const std::vector<int>& idx) {
  return fit_about(pts, w, d, idx, nullptr);
}

PlaneFit fit_subspace_about(const Mat& pts, const Vec& w, const Vec& origin, int d,
                            const std::vector<int>& idx) {
  return fit_about(pts, w, d, idx, &origin);
}

Mat tilt_frame(const Mat& frame, int i, const Vec& nv, double t) {
  Mat F = frame;
  F.col(i) = std::cos(t) * frame.col(i) + std::sin(t) * nv;
  orthonormalize(F);
  return F;
}

}  // namespace rectiscope
