#include "rectiscope/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rectiscope {

namespace {
constexpr int kLeafSize = 12;
}

KdTree::KdTree(const Eigen::MatrixXd& points) {
  std::vector<int> all(points.cols());
  std::iota(all.begin(), all.end(), 0);
  *this = KdTree(points, std::move(all));
}

KdTree::KdTree(const Eigen::MatrixXd& points, std::vector<int> subset) : perm_(std::move(subset)) {
  const int n = static_cast<int>(points.rows());
  pts_ = points;  // temporarily the full matrix, compacted below
  if (perm_.empty()) {
    pts_.resize(n, 0);
    return;
  }
  nodes_.reserve(2 * perm_.size() / kLeafSize + 8);
  nodes_.push_back({0, static_cast<int>(perm_.size())});
  build(0, 0);
  Eigen::MatrixXd compact(n, perm_.size());
  for (size_t i = 0; i < perm_.size(); ++i) compact.col(i) = points.col(perm_[i]);
  pts_ = std::move(compact);
}

void KdTree::build(int node, int depth) {
  const int n = dim();
  const int lo = nodes_[node].lo, hi = nodes_[node].hi;
  if (static_cast<int>(lo_.size()) < (node + 1) * n) {
    lo_.resize((node + 1) * n);
    hi_.resize((node + 1) * n);
  }
  double* bl = &lo_[node * n];
  double* bh = &hi_[node * n];
  for (int k = 0; k < n; ++k) {
    bl[k] = std::numeric_limits<double>::infinity();
    bh[k] = -std::numeric_limits<double>::infinity();
  }
  for (int i = lo; i < hi; ++i) {
    const double* p = pts_.col(perm_[i]).data();
    for (int k = 0; k < n; ++k) {
      bl[k] = std::min(bl[k], p[k]);
      bh[k] = std::max(bh[k], p[k]);
    }
  }
  if (hi - lo <= kLeafSize) return;
  int axis = 0;
  double widest = -1;
  for (int k = 0; k < n; ++k) {
    if (bh[k] - bl[k] > widest) {
      widest = bh[k] - bl[k];
      axis = k;
    }
  }
  if (widest <= 0) return;  // all coincident
  const int mid = (lo + hi) / 2;
  std::nth_element(perm_.begin() + lo, perm_.begin() + mid, perm_.begin() + hi, [&](int a, int b) {
    const double va = pts_(axis, a), vb = pts_(axis, b);
    return va < vb || (va == vb && a < b);
  });
  const int l = static_cast<int>(nodes_.size());
  nodes_.push_back({lo, mid});
  nodes_.push_back({mid, hi});
  nodes_[node].left = l;
  nodes_[node].right = l + 1;
  build(l, depth + 1);
  build(l + 1, depth + 1);
}

double KdTree::box_min_d2(int node, const double* x) const {
  const int n = dim();
  const double* bl = &lo_[node * n];
  const double* bh = &hi_[node * n];
  double s = 0;
  for (int k = 0; k < n; ++k) {
    double t = 0;
    if (x[k] < bl[k]) t = bl[k] - x[k];
    else if (x[k] > bh[k]) t = x[k] - bh[k];
    s += t * t;
  }
  return s;
}

double KdTree::box_max_d2(int node, const double* x) const {
  const int n = dim();
  const double* bl = &lo_[node * n];
  const double* bh = &hi_[node * n];
  double s = 0;
  for (int k = 0; k < n; ++k) {
    const double t = std::max(std::abs(x[k] - bl[k]), std::abs(x[k] - bh[k]));
    s += t * t;
  }
  return s;
}

std::vector<int> KdTree::radius(const Eigen::Ref<const Eigen::VectorXd>& x, double r,
                                bool closed) const {
  std::vector<int> out;
  radius_into(x, r, closed, out);
  std::sort(out.begin(), out.end());
  return out;
}

void KdTree::radius_into(const Eigen::Ref<const Eigen::VectorXd>& x, double r, bool closed,
                         std::vector<int>& out) const {
  if (perm_.empty() || r < 0) return;
  const int n = dim();
  const Eigen::VectorXd xc = x;  // contiguous
  const double* xp = xc.data();
  const double r2 = r * r;
  auto inside = [&](double d2) { return closed ? d2 <= r2 : d2 < r2; };
  int stack[128];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const int node = stack[--sp];
    const double dmin = box_min_d2(node, xp);
    if (!inside(dmin)) continue;
    const Node& nd = nodes_[node];
    if (inside(box_max_d2(node, xp))) {
      for (int i = nd.lo; i < nd.hi; ++i) out.push_back(perm_[i]);
      continue;
    }
    if (nd.left < 0) {
      for (int i = nd.lo; i < nd.hi; ++i) {
        const double* p = pts_.col(i).data();
        double s = 0;
        for (int k = 0; k < n; ++k) {
          const double t = p[k] - xp[k];
          s += t * t;
        }
        if (inside(s)) out.push_back(perm_[i]);
      }
      continue;
    }
    stack[sp++] = nd.left;
    stack[sp++] = nd.right;
  }
}

std::pair<int, double> KdTree::nearest(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (perm_.empty()) return {-1, std::numeric_limits<double>::infinity()};
  const int n = dim();
  const Eigen::VectorXd xc = x;
  const double* xp = xc.data();
  double best = std::numeric_limits<double>::infinity();
  int best_idx = -1;
  struct Item {
    int node;
    double d2;
  };
  Item stack[128];
  int sp = 0;
  stack[sp++] = {0, box_min_d2(0, xp)};
  while (sp > 0) {
    const Item it = stack[--sp];
    if (it.d2 > best) continue;
    const Node& nd = nodes_[it.node];
    if (nd.left < 0) {
      for (int i = nd.lo; i < nd.hi; ++i) {
        const double* p = pts_.col(i).data();
        double s = 0;
        for (int k = 0; k < n; ++k) {
          const double t = p[k] - xp[k];
          s += t * t;
        }
        if (s < best || (s == best && perm_[i] < best_idx)) {
          best = s;
          best_idx = perm_[i];
        }
      }
      continue;
    }
    const double dl = box_min_d2(nd.left, xp), dr = box_min_d2(nd.right, xp);
    // push the farther child first so the nearer one is explored first
    if (dl <= dr) {
      stack[sp++] = {nd.right, dr};
      stack[sp++] = {nd.left, dl};
    } else {
      stack[sp++] = {nd.left, dl};
      stack[sp++] = {nd.right, dr};
    }
  }
  return {best_idx, std::sqrt(best)};
}

double KdTree::farthest(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (perm_.empty()) return 0.0;
  const int n = dim();
  const Eigen::VectorXd xc = x;
  const double* xp = xc.data();
  double best = -1;
  int stack[128];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const int node = stack[--sp];
    if (box_max_d2(node, xp) <= best) continue;
    const Node& nd = nodes_[node];
    if (nd.left < 0) {
      for (int i = nd.lo; i < nd.hi; ++i) {
        const double* p = pts_.col(i).data();
        double s = 0;
        for (int k = 0; k < n; ++k) {
          const double t = p[k] - xp[k];
          s += t * t;
        }
        best = std::max(best, s);
      }
      continue;
    }
    stack[sp++] = nd.left;
    stack[sp++] = nd.right;
  }
  return std::sqrt(std::max(best, 0.0));
}

}  // namespace rectiscope
