#include "rectiscope/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "rectiscope/error.hpp"
#include "rectiscope/normalization.hpp"

namespace rectiscope {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

SignedDiscreteMeasure SignedDiscreteMeasure::make(const Mat& support, const Vec& masses) {
  if (support.cols() != masses.size()) throw InputError("signed measure: support and masses differ in length");
  const int k = static_cast<int>(masses.size());
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](int a, int b) {
    for (int q = 0; q < support.rows(); ++q) {
      if (support(q, a) < support(q, b)) return true;
      if (support(q, a) > support(q, b)) return false;
    }
    return a < b;
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<int> head;
  std::vector<double> mass;
  for (int t = 0; t < k; ++t) {
    const int i = order[t];
    if (!head.empty() && support.col(head.back()) == support.col(i)) {
      mass.back() += masses[i];
    } else {
      head.push_back(i);
      mass.push_back(masses[i]);
    }
  }
  SignedDiscreteMeasure out;
  out.support.resize(support.rows(), head.size());
  out.masses.resize(head.size());
  for (size_t t = 0; t < head.size(); ++t) {
    out.support.col(t) = support.col(head[t]);
    out.masses[t] = mass[t];
  }
  return out;
}

SignedDiscreteMeasure combine(const SignedDiscreteMeasure& A, double a, const SignedDiscreteMeasure& B, double b) {
  if (A.size() > 0 && B.size() > 0 && A.dim() != B.dim()) throw InputError("combine: dimension mismatch");
  const int n = A.size() > 0 ? A.dim() : B.dim();
  Mat pts(n, A.size() + B.size());
  Vec m(A.size() + B.size());
  if (A.size()) pts.leftCols(A.size()) = A.support;
  if (B.size()) pts.rightCols(B.size()) = B.support;
  m.head(A.size()) = a * A.masses;
  m.tail(B.size()) = b * B.masses;
  return SignedDiscreteMeasure::make(pts, m);
}

namespace {

struct FlowResult {
  double cost = 0;
  Vec pot;
};

// Successive shortest paths on the complete graph with cost matrix D
// (symmetric, V x V). Supplies sum to zero. Dijkstra on reduced costs with
// early exit at the first deficit node.
FlowResult min_cost_flow(const Mat& D, Vec excess) {
  const int V = static_cast<int>(D.rows());
  Mat X = Mat::Zero(V, V);
  Vec p = Vec::Zero(V);
  const double tol = 1e-14 * std::max(excess.cwiseAbs().sum(), 1e-300);
  std::vector<double> dist(V, kInf);
  std::vector<int> pred(V, -1);
  std::vector<char> done(V, 0);
  std::vector<int> touched;
  long iter = 0;
  const long max_iter = 20L * V * V + 100;
  int src = 0;
  while (true) {
    // single source Dijkstra from the first node with excess; stops at the
    // first deficit node, so only the neighbourhood of the source is settled
    while (src < V && excess[src] <= tol) ++src;
    if (src == V) break;
    if (++iter > max_iter)
      throw SolverError("min cost flow did not converge",
                        "augmentations=" + std::to_string(iter) + " nodes=" + std::to_string(V));
    for (int v : touched) {
      dist[v] = kInf;
      pred[v] = -1;
      done[v] = 0;
    }
    touched.clear();
    dist[src] = 0;
    touched.push_back(src);
    int t = -1;
    std::vector<int> settled;
    while (true) {
      int u = -1;
      double best = kInf;
      for (int v : touched)
        if (!done[v] && dist[v] < best) {
          best = dist[v];
          u = v;
        }
      if (u < 0) break;
      done[u] = 1;
      settled.push_back(u);
      if (excess[u] < -tol) {
        t = u;
        break;
      }
      const double* Du = D.col(u).data();
      const double* Xu = X.col(u).data();  // Xu[v] = flow v -> u
      const double base = dist[u] + p[u];
      for (int v = 0; v < V; ++v) {
        if (done[v]) continue;
        const double c = Xu[v] > 0 ? -Du[v] : Du[v];
        double nd = base + c - p[v];
        if (nd < dist[u]) nd = dist[u];  // reduced cost clamp against roundoff
        if (nd < dist[v]) {
          if (dist[v] == kInf) touched.push_back(v);
          dist[v] = nd;
          pred[v] = u;
        }
      }
    }
    if (t < 0) throw SolverError("min cost flow found no augmenting path", "augmentations=" + std::to_string(iter));
    const double dt = dist[t];
    // unsettled nodes gain dt; settled ones their distance
    p.array() += dt;
    for (int v : settled) p[v] += dist[v] - dt;
    double amt = -excess[t];
    int v = t;
    while (pred[v] >= 0) {
      const int u = pred[v];
      if (X(v, u) > 0) amt = std::min(amt, X(v, u));
      v = u;
    }
    amt = std::min(amt, excess[src]);
    v = t;
    while (pred[v] >= 0) {
      const int u = pred[v];
      if (X(v, u) > 0) {
        X(v, u) -= amt;
        if (X(v, u) < 0) X(v, u) = 0;
      } else {
        X(u, v) += amt;
      }
      v = u;
    }
    excess[src] -= amt;
    excess[t] += amt;
  }
  FlowResult out;
  out.cost = X.cwiseProduct(D).sum();
  out.pot = p;
  return out;
}

// Tableau simplex with Bland's rule: maximize c.g s.t. A g <= b, g >= 0, b >= 0.
Vec simplex_max(const Mat& A, const Vec& b, const Vec& c, double& value) {
  const int m = static_cast<int>(A.rows()), k = static_cast<int>(A.cols());
  const int cols = k + m + 1;
  Mat T = Mat::Zero(m + 1, cols);
  T.block(0, 0, m, k) = A;
  for (int r = 0; r < m; ++r) {
    T(r, k + r) = 1.0;
    T(r, cols - 1) = std::max(b[r], 0.0);
  }
  for (int j = 0; j < k; ++j) T(m, j) = -c[j];
  std::vector<int> basis(m);
  for (int r = 0; r < m; ++r) basis[r] = k + r;
  const double eps = 1e-12;
  long iter = 0;
  const long max_iter = 50000;
  while (true) {
    int enter = -1;
    for (int j = 0; j < k + m; ++j)
      if (T(m, j) < -eps) {
        enter = j;
        break;
      }
    if (enter < 0) break;
    if (++iter > max_iter) throw SolverError("simplex did not converge", "pivots=" + std::to_string(iter));
    int leave = -1;
    double best = kInf;
    for (int r = 0; r < m; ++r) {
      if (T(r, enter) <= eps) continue;
      const double ratio = T(r, cols - 1) / T(r, enter);
      if (ratio < best - 1e-15 || (std::abs(ratio - best) <= 1e-15 && basis[r] < basis[leave])) {
        best = ratio;
        leave = r;
      }
    }
    if (leave < 0) throw SolverError("simplex: unbounded direction", "pivots=" + std::to_string(iter));
    T.row(leave) /= T(leave, enter);
    for (int r = 0; r <= m; ++r) {
      if (r == leave) continue;
      const double f = T(r, enter);
      if (f != 0) T.row(r) -= f * T.row(leave);
    }
    basis[leave] = enter;
  }
  Vec g = Vec::Zero(k);
  for (int r = 0; r < m; ++r)
    if (basis[r] < k) g[basis[r]] = T(r, cols - 1);
  value = T(m, cols - 1);
  return g;
}

struct Kept {
  std::vector<int> idx;
  Mat pts;
  Vec s, cap;
};

Kept filter_ball(const Mat& pts, const Vec& s, const Vec& x, double r) {
  if (!(r > 0)) throw InputError("ball radius must be positive");
  if (pts.rows() != x.size()) throw InputError("ball center dimension differs from support");
  Kept k;
  for (int i = 0; i < pts.cols(); ++i) {
    const double dx = (pts.col(i) - x).norm();
    if (dx < r) k.idx.push_back(i);
  }
  const int m = static_cast<int>(k.idx.size());
  k.pts.resize(pts.rows(), m);
  k.s.resize(m);
  k.cap.resize(m);
  for (int t = 0; t < m; ++t) {
    k.pts.col(t) = pts.col(k.idx[t]);
    k.s[t] = s[k.idx[t]];
    k.cap[t] = r - (k.pts.col(t) - x).norm();
  }
  return k;
}

Mat cost_matrix(const Kept& k) {
  const int m = static_cast<int>(k.idx.size());
  Mat D(m + 1, m + 1);
  for (int i = 0; i < m; ++i) {
    D(i, i) = 0;
    for (int j = i + 1; j < m; ++j) D(i, j) = D(j, i) = (k.pts.col(i) - k.pts.col(j)).norm();
    D(i, m) = D(m, i) = k.cap[i];
  }
  D(m, m) = 0;
  return D;
}

}  // namespace

BlSolution bl_solve(const Mat& pts, const Vec& s, const Vec& x, double r, BlMethod method) {
  if (pts.cols() != s.size()) throw InputError("support and masses differ in length");
  const Kept k = filter_ball(pts, s, x, r);
  BlSolution out;
  out.kept = k.idx;
  const int m = static_cast<int>(k.idx.size());
  out.f = Vec::Zero(m);
  if (m == 0) return out;
  if (method == BlMethod::Flow) {
    const Mat D = cost_matrix(k);
    Vec sup(m + 1);
    sup.head(m) = k.s;
    sup[m] = -k.s.sum();
    const FlowResult fr = min_cost_flow(D, sup);
    for (int i = 0; i < m; ++i) out.f[i] = fr.pot[m] - fr.pot[i];
    out.value = std::max(fr.cost, 0.0);
    return out;
  }
  if (m > 40) throw InputError("lp method is limited to 40 support points inside the ball; use flow");
  // g = f + cap lies in [0, 2 cap]; pair rows g_i - g_j <= d_ij + cap_i - cap_j
  const int rows = m * (m - 1) + m;
  Mat A = Mat::Zero(rows, m);
  Vec b(rows);
  int r0 = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      A(r0, i) = 1;
      A(r0, j) = -1;
      b[r0] = (k.pts.col(i) - k.pts.col(j)).norm() + k.cap[i] - k.cap[j];
      ++r0;
    }
  for (int i = 0; i < m; ++i) {
    A(r0, i) = 1;
    b[r0] = 2 * k.cap[i];
    ++r0;
  }
  double val = 0;
  const Vec g = simplex_max(A, b, k.s, val);
  out.f = g - k.cap;
  out.value = std::max(val - k.s.dot(k.cap), 0.0);
  return out;
}

BlSolution bl_solve(const SignedDiscreteMeasure& s, const LocalBall& ball, BlMethod method) {
  return bl_solve(s.support, s.masses, ball.x, ball.r, method);
}

double bl_norm(const SignedDiscreteMeasure& s, const LocalBall& ball, BlMethod method) {
  return bl_solve(s, ball, method).value;
}

namespace {

// Minimum over spanning trees of the complete graph on V nodes (last node is
// the root) of sum over tree edges of D * |subtree supply|. Prufer sequences.
double tree_enumeration(const Mat& D, const Vec& supply) {
  const int V = static_cast<int>(D.rows());
  if (V == 2) return D(0, 1) * std::abs(supply[0]);
  const int L = V - 2;
  std::vector<int> seq(L, 0), deg(V);
  std::vector<double> S(V);
  double best = kInf;
  while (true) {
    std::fill(deg.begin(), deg.end(), 1);
    for (int x : seq) ++deg[x];
    for (int v = 0; v < V; ++v) S[v] = supply[v];
    int ptr = 0;
    while (deg[ptr] != 1) ++ptr;
    int leaf = ptr;
    double cost = 0;
    bool pruned = false;
    for (int x : seq) {
      cost += D(leaf, x) * std::abs(S[leaf]);
      if (cost >= best) {
        pruned = true;
        break;
      }
      S[x] += S[leaf];
      deg[leaf] = 0;
      if (--deg[x] == 1 && x < ptr) {
        leaf = x;
      } else {
        ++ptr;
        while (deg[ptr] != 1) ++ptr;
        leaf = ptr;
      }
    }
    if (!pruned) {
      cost += D(leaf, V - 1) * std::abs(S[leaf]);
      best = std::min(best, cost);
    }
    int q = L - 1;
    while (q >= 0 && ++seq[q] == V) seq[q--] = 0;
    if (q < 0) break;
  }
  return best;
}

// Primal-dual interior point (Mehrotra) for max s.f s.t. A f <= b.
double interior_point(const Mat& A, const Vec& b, const Vec& s) {
  const int m = static_cast<int>(A.rows()), k = static_cast<int>(A.cols());
  const double scale = std::max({b.cwiseAbs().maxCoeff(), s.cwiseAbs().maxCoeff(), 1e-300});
  const Vec bb = b / scale, ss = s / scale;
  Vec f = Vec::Zero(k), w = Vec::Ones(m), y = Vec::Ones(m);
  auto step_to_boundary = [](const Vec& v, const Vec& dv) {
    double a = 1.0;
    for (int i = 0; i < v.size(); ++i)
      if (dv[i] < 0) a = std::min(a, -v[i] / dv[i]);
    return a;
  };
  for (int it = 0; it < 200; ++it) {
    const Vec r1 = ss - A.transpose() * y;
    const Vec r2 = bb - A * f - w;
    const double mu = w.dot(y) / m;
    if (r1.cwiseAbs().maxCoeff() < 1e-13 && r2.cwiseAbs().maxCoeff() < 1e-13 && mu < 1e-15) break;
    const Vec ratio = y.cwiseQuotient(w);
    const Mat M = A.transpose() * ratio.asDiagonal() * A;
    const Eigen::LDLT<Mat> ldlt(M);
    auto solve = [&](const Vec& r3, Vec& df, Vec& dw, Vec& dy) {
      const Vec t = (r3 - y.cwiseProduct(r2)).cwiseQuotient(w);
      df = ldlt.solve(r1 - A.transpose() * t);
      dw = r2 - A * df;
      dy = (r3 - y.cwiseProduct(dw)).cwiseQuotient(w);
    };
    Vec df, dw, dy;
    solve(-w.cwiseProduct(y), df, dw, dy);
    const double ap = step_to_boundary(w, dw), ad = step_to_boundary(y, dy);
    const double mu_aff = (w + ap * dw).dot(y + ad * dy) / m;
    const double sigma = std::pow(mu_aff / mu, 3);
    const Vec r3 = Vec::Constant(m, sigma * mu) - w.cwiseProduct(y) - dw.cwiseProduct(dy);
    solve(r3, df, dw, dy);
    const double sp = std::min(1.0, 0.995 * step_to_boundary(w, dw));
    const double sd = std::min(1.0, 0.995 * step_to_boundary(y, dy));
    f += sp * df;
    w += sp * dw;
    y += sd * dy;
  }
  // primal and dual objectives bracket the optimum
  return 0.5 * (ss.dot(f) + bb.dot(y)) * scale * scale;
}

}  // namespace

double bl_norm_oracle(const SignedDiscreteMeasure& s, const LocalBall& ball) {
  if (s.size() > 10) throw InputError("oracle refuses supports larger than 10 points");
  const Kept all = filter_ball(s.support, s.masses, ball.x, ball.r);
  // zero masses never shorten a route, by the triangle inequality for both
  // the metric and the boundary distances
  Kept k;
  std::vector<int> nz;
  for (int i = 0; i < static_cast<int>(all.idx.size()); ++i)
    if (all.s[i] != 0) nz.push_back(i);
  const int m = static_cast<int>(nz.size());
  if (m == 0) return 0.0;
  k.idx.resize(m);
  k.pts.resize(s.dim(), m);
  k.s.resize(m);
  k.cap.resize(m);
  for (int t = 0; t < m; ++t) {
    k.idx[t] = all.idx[nz[t]];
    k.pts.col(t) = all.pts.col(nz[t]);
    k.s[t] = all.s[nz[t]];
    k.cap[t] = all.cap[nz[t]];
  }
  if (m <= 8) {
    const Mat D = cost_matrix(k);
    Vec sup(m + 1);
    sup.head(m) = k.s;
    sup[m] = -k.s.sum();
    return tree_enumeration(D, sup);
  }
  const int rows = m * (m - 1) + 2 * m;
  Mat A = Mat::Zero(rows, m);
  Vec b(rows);
  int r0 = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      A(r0, i) = 1;
      A(r0, j) = -1;
      b[r0++] = (k.pts.col(i) - k.pts.col(j)).norm();
    }
  for (int i = 0; i < m; ++i) {
    A(r0, i) = 1;
    b[r0++] = k.cap[i];
    A(r0, i) = -1;
    b[r0++] = k.cap[i];
  }
  return std::max(interior_point(A, b, k.s), 0.0);
}

SignedDiscreteMeasure sample_flat(const FlatMeasure& fm, const LocalBall& ball, double grid_step) {
  const AffinePlane& P = fm.plane;
  if (!(fm.c > 0)) throw InputError("flat measure density must be positive");
  if (!(ball.r > 0)) throw InputError("ball radius must be positive");
  if (ball.x.size() != P.n()) throw InputError("ball center dimension differs from plane");
  if (!(grid_step > 0 && grid_step <= ball.r / 10)) throw InputError("grid_step must lie in (0, r/10]");
  const int d = P.d();
  const Vec p0 = P.project(ball.x);
  const double off = (ball.x - p0).norm();
  SignedDiscreteMeasure out;
  out.support.resize(P.n(), 0);
  out.masses.resize(0);
  if (off >= ball.r) return out;
  const double rho = std::sqrt(ball.r * ball.r - off * off);
  const int K = static_cast<int>(std::ceil(rho / grid_step)) + 1;
  const double w = fm.c * std::pow(grid_step, d) / omega_norm(d);
  std::vector<Vec> nodes;
  std::vector<int> idx(d, -K);
  Vec u(d);
  while (true) {
    for (int q = 0; q < d; ++q) u[q] = (idx[q] + 0.5) * grid_step;
    const Vec y = p0 + P.frame() * u;
    if ((y - ball.x).norm() < ball.r) nodes.push_back(y);
    int q = 0;
    while (q < d && ++idx[q] == K) idx[q++] = -K;
    if (q == d) break;
  }
  out.support.resize(P.n(), nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) out.support.col(i) = nodes[i];
  out.masses = Vec::Constant(static_cast<int>(nodes.size()), w);
  return out;
}

double wasserstein_local(const SignedDiscreteMeasure& mu, const SignedDiscreteMeasure& nu, const LocalBall& ball,
                         BlMethod method) {
  return bl_norm(combine(mu, 1.0, nu, -1.0), ball, method);
}

}  // namespace rectiscope
