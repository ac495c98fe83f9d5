#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace rectiscope {

// Static kd-tree over the columns of an n x N matrix. Queries are exact.
// Returned indices refer to columns of the original matrix.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(const Eigen::MatrixXd& points);
  // Only the listed columns are indexed.
  KdTree(const Eigen::MatrixXd& points, std::vector<int> subset);

  int dim() const { return static_cast<int>(pts_.rows()); }
  int size() const { return static_cast<int>(perm_.size()); }
  bool empty() const { return perm_.empty(); }

  // |p - x| < r, or <= r when closed. Output is sorted ascending.
  std::vector<int> radius(const Eigen::Ref<const Eigen::VectorXd>& x, double r,
                          bool closed = false) const;
  // Same, appending into out without sorting. Cheaper for hot loops.
  void radius_into(const Eigen::Ref<const Eigen::VectorXd>& x, double r, bool closed,
                   std::vector<int>& out) const;

  // Nearest indexed column; ties go to the smaller column index.
  // Returns {-1, inf} on an empty tree.
  std::pair<int, double> nearest(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  // max |p - x| over indexed columns.
  double farthest(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  struct Node {
    int lo, hi;          // range in perm_
    int left = -1, right = -1;
  };
  void build(int node, int depth);
  double box_min_d2(int node, const double* x) const;
  double box_max_d2(int node, const double* x) const;

  Eigen::MatrixXd pts_;   // copy of indexed columns, permuted to perm_ order
  std::vector<int> perm_; // tree order -> original column
  std::vector<Node> nodes_;
  std::vector<double> lo_, hi_;  // per node bounding boxes, dim() entries each
};

}  // namespace rectiscope
