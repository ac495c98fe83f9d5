#include "rectiscope/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rectiscope/error.hpp"
#include "rectiscope/normalization.hpp"
#include "rectiscope/parallel.hpp"
#include "rectiscope/rng.hpp"

namespace rectiscope {

CloudIndex::CloudIndex(const WeightedPointCloud& cloud) : cloud_(&cloud), tree_(cloud.points) {}

std::vector<int> CloudIndex::ball(const Vec& x, double r, bool closed) const { return tree_.radius(x, r, closed); }

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int default_bins(int d) { return d == 1 ? 16 : 4; }
int default_grid(int d) { return d == 1 ? 40 : 16; }

// Odd multiple of h nearest to r / m, at least h. Odd multiples keep bins
// centred on a data point aligned with grid-sampled input.
double bin_width(double r, double h, int m) {
  const double q = std::max(0.0, std::round((r / m / h - 1) / 2));
  return (2 * q + 1) * h;
}

// Plane with tangent frame F and normal frame N (orthonormal complement).
struct PlaneState {
  Vec b;
  Mat F, N;
  AffinePlane plane() const { return AffinePlane(b, F); }
};

// Tangent frame from the canonical PCA rule, normals diagonalizing the
// second moment on the complement (so they follow rotations of the data).
PlaneState frames_of(const Mat& pts, const Vec& w, const std::vector<int>& idx, int d, const Vec* origin) {
  const PlaneFit fit = origin ? fit_subspace_about(pts, w, *origin, d, idx) : fit_plane_pca(pts, w, d, idx);
  PlaneState s;
  s.b = fit.plane.base();
  s.F = fit.plane.frame();
  const Mat N0 = fit.plane.normal_frame();
  const int n = static_cast<int>(pts.rows());
  Mat C = Mat::Zero(n, n);
  double tw = 0;
  for (int i : idx) {
    const Vec y = pts.col(i) - s.b;
    C.noalias() += w[i] * y * y.transpose();
    tw += w[i];
  }
  if (tw > 0) C /= tw;
  const Mat M = N0.transpose() * C * N0;
  Eigen::SelfAdjointEigenSolver<Mat> es(M);
  s.N = N0 * es.eigenvectors();
  return s;
}

// Givens rotation of frame column i toward normal k by angle t.
PlaneState tilt(const PlaneState& s, int i, int k, double t, const Vec& pivot) {
  PlaneState o = s;
  const double c = std::cos(t), sn = std::sin(t);
  o.F.col(i) = c * s.F.col(i) + sn * s.N.col(k);
  o.N.col(k) = -sn * s.F.col(i) + c * s.N.col(k);
  // keep the base at the foot of the pivot
  o.b = s.b + o.F * (o.F.transpose() * (pivot - s.b));
  return o;
}

struct SearchTrace {
  int evals = 0;
  std::vector<double> trace;
};

// Coordinate search over tilts (and normal offsets when allow_offset) with
// shrinking steps. J returns {value, auxiliary}; aux of the best state is kept.
using Objective = std::function<std::pair<double, double>(const PlaneState&)>;

std::pair<double, double> local_search(const Objective& J, PlaneState& s, const Vec& pivot, double r, int budget,
                                       bool allow_offset, SearchTrace& tr, int halvings = 5) {
  auto [best, aux] = J(s);
  ++tr.evals;
  tr.trace.push_back(best);
  const int d = static_cast<int>(s.F.cols()), m = static_cast<int>(s.N.cols());
  double t = 0.2, o = 0.1 * r;
  const double t_min = std::ldexp(0.2, -halvings);
  while (tr.evals < budget && t >= t_min && best > 0) {
    const double before = best;
    const int moves = d * m + (allow_offset ? m : 0);
    for (int mv = 0; mv < moves && tr.evals + 2 <= budget; ++mv) {
      // both signs are tried so the path does not depend on frame orientation
      PlaneState cand[2];
      std::pair<double, double> val[2];
      for (int k = 0; k < 2; ++k) {
        const double sign = k == 0 ? 1 : -1;
        if (mv < d * m) {
          cand[k] = tilt(s, mv / m, mv % m, sign * t, pivot);
        } else {
          cand[k] = s;
          cand[k].b += sign * o * s.N.col(mv - d * m);
        }
        val[k] = J(cand[k]);
        ++tr.evals;
      }
      const int k = val[1].first < val[0].first ? 1 : 0;
      if (val[k].first < best) {
        best = val[k].first;
        aux = val[k].second;
        s = cand[k];
        tr.trace.push_back(best);
      }
    }
    if (!(best < before * (1 - 1e-3))) {
      t *= 0.5;
      o *= 0.5;
    }
  }
  return {best, aux};
}

// Minimizes a convex piecewise-linear function of one variable from values
// and subgradients (cutting planes in a bracket). eval(c) -> {value, slope}.
struct Min1D {
  double value = kInf, arg = 0;
  int evals = 0;
};

Min1D minimize_convex(const std::function<std::pair<double, double>(double)>& eval, double c0, double lo_lim,
                      double hi_lim, double rel_tol, int max_evals) {
  struct P {
    double c, v, g;
  };
  Min1D out;
  auto run = [&](double c) {
    const auto [v, g] = eval(c);
    ++out.evals;
    if (v < out.value) {
      out.value = v;
      out.arg = c;
    }
    return P{c, v, g};
  };
  P p0 = run(c0);
  if (p0.g == 0) return out;
  P lo{}, hi{};
  bool has_lo = false, has_hi = false;
  if (p0.g < 0) {
    lo = p0;
    has_lo = true;
  } else {
    hi = p0;
    has_hi = true;
  }
  // bracket outward from c0 with steps growing geometrically from 5%
  const double scale = c0 != 0 ? std::abs(c0) : 1.0;
  double step = 0.05 * scale;
  while (!has_hi && out.evals < max_evals) {
    const double c = std::min(lo.c + step, hi_lim);
    step *= 2;
    P p = run(c);
    if (p.g >= 0) {
      hi = p;
      has_hi = true;
    } else {
      lo = p;
      if (c == hi_lim) return out;
    }
  }
  while (!has_lo && out.evals < max_evals) {
    const double c = std::max(hi.c - step, lo_lim);
    step *= 2;
    P p = run(c);
    if (p.g <= 0) {
      lo = p;
      has_lo = true;
    } else {
      hi = p;
      if (c == lo_lim) return out;
    }
  }
  if (!has_lo || !has_hi) return out;
  while (out.evals < max_evals) {
    const double width = hi.c - lo.c;
    if (width <= rel_tol * std::max(std::abs(hi.c), 1e-300)) break;
    if (lo.g == hi.g) break;
    double c = (hi.v - lo.v + lo.g * lo.c - hi.g * hi.c) / (lo.g - hi.g);
    const double lb = lo.v + lo.g * (c - lo.c);
    if (out.value - lb <= rel_tol * out.value || out.value - lb <= 1e-300) break;
    c = std::clamp(c, lo.c + 1e-3 * width, hi.c - 1e-3 * width);
    P p = run(c);
    if (p.g < 0) {
      lo = p;
    } else if (p.g > 0) {
      hi = p;
    } else {
      break;
    }
  }
  return out;
}

// In-plane orientation of the bin grid: the first axis points to the nearest
// neighbour of x (projected), so bins follow the sampling lattice of grid-like
// clouds. Axis signs do not matter since bins are symmetric about x.
Mat bin_frame(const CloudIndex& idx, const std::vector<int>& ball, const Vec& x, const Mat& F) {
  const int d = static_cast<int>(F.cols());
  if (d == 1) return F;
  const auto& pts = idx.cloud().points;
  double best = kInf;
  int pick = -1;
  Vec e;
  for (int i : ball) {
    const Vec y = pts.col(i) - x;
    const double len = y.norm();
    if (len == 0) continue;
    const Vec u = F.transpose() * y;
    if (u.norm() < 0.5 * len) continue;
    // ball is sorted, so near ties go to the smaller index
    if (len < best * (1 - 1e-9)) {
      best = len;
      pick = i;
      e = u.normalized();
    }
  }
  if (pick < 0) return F;
  // rotate the d = 2 tangent frame so its first column is F e
  Mat out(F.rows(), 2);
  out.col(0) = F * e;
  out.col(1) = F * Eigen::Vector2d(-e[1], e[0]);
  return out;
}

// Point masses summarizing a measure on a grid of bins of width eps in the
// orthonormal frame Q (tangent axes then normal axes) around x: centroid and
// total mass per occupied cell. Normal axes are binned too, so separate
// sheets stay separate.
struct Bins {
  Mat pts;
  Vec mass;    // sum of weights
  Vec extra;   // sum of weights * g (osc only)
};

Bins bin_points(const Mat& pts, const Vec& w, const Vec* g, const std::vector<int>& idx, const Vec& x, const Mat& Q,
                double eps) {
  const int n = static_cast<int>(pts.rows());
  struct Acc {
    Vec s;
    double m = 0, e = 0;
  };
  std::map<std::vector<long>, Acc> acc;
  std::vector<long> key(n);
  for (int i : idx) {
    const Vec u = Q.transpose() * (pts.col(i) - x) / eps;
    for (int q = 0; q < n; ++q) key[q] = std::lround(u[q]);
    auto& a = acc[key];
    if (a.s.size() == 0) a.s = Vec::Zero(n);
    a.s += w[i] * pts.col(i);
    a.m += w[i];
    if (g) a.e += w[i] * (*g)[i];
  }
  Bins b;
  b.pts.resize(n, acc.size());
  b.mass.resize(acc.size());
  b.extra.resize(acc.size());
  int k = 0;
  for (const auto& [key_, a] : acc) {
    b.pts.col(k) = a.s / a.m;
    b.mass[k] = a.m;
    b.extra[k] = a.e;
    ++k;
  }
  return b;
}

// Unit-density flat measure on plane s, binned over the same grid in F
// coordinates as the data. Empty when the plane is too steep over F.
bool bin_plane(const PlaneState& s, const Vec& x, double r, const Mat& F, double eps, Mat& pts, Vec& unit) {
  const int d = static_cast<int>(F.cols()), n = static_cast<int>(x.size());
  const Mat A = F.transpose() * s.F;
  const double det = A.determinant();
  if (std::abs(det) < 0.1) return false;
  const Mat Ainv = A.inverse();
  const Mat G = s.F * Ainv;
  const Vec off = F.transpose() * (s.b - x);
  auto at = [&](const Vec& u) -> Vec { return s.b + G * (u - off); };
  const double cell = std::pow(eps, d) / std::abs(det) / omega_norm(d);
  const int K0 = static_cast<int>(std::ceil(r / eps)) + 1;
  constexpr int kSub = 8;
  std::vector<Vec> out;
  std::vector<double> mass;
  std::vector<int> k(d, -K0);
  Vec u(d), v(d);
  while (true) {
    for (int q = 0; q < d; ++q) u[q] = k[q] * eps;
    bool full = true;
    for (int corner = 0; corner < (1 << d) && full; ++corner) {
      for (int q = 0; q < d; ++q) v[q] = u[q] + ((corner >> q) & 1 ? 0.5 : -0.5) * eps;
      if (!((at(v) - x).norm() < r)) full = false;
    }
    if (full) {
      out.push_back(at(u));
      mass.push_back(cell);
    } else {
      Vec sum = Vec::Zero(n);
      int cnt = 0;
      std::vector<int> t(d, 0);
      while (true) {
        for (int q = 0; q < d; ++q) v[q] = u[q] + ((t[q] + 0.5) / kSub - 0.5) * eps;
        const Vec p = at(v);
        if ((p - x).norm() < r) {
          sum += p;
          ++cnt;
        }
        int q = 0;
        while (q < d && ++t[q] == kSub) t[q++] = 0;
        if (q == d) break;
      }
      if (cnt > 0) {
        out.push_back(sum / cnt);
        mass.push_back(cell * cnt / std::pow(double(kSub), d));
      }
    }
    int q = 0;
    while (q < d && ++k[q] > K0) k[q++] = -K0;
    if (q == d) break;
  }
  pts.resize(n, out.size());
  unit.resize(out.size());
  for (size_t i = 0; i < out.size(); ++i) {
    pts.col(i) = out[i];
    unit[i] = mass[i];
  }
  return true;
}

Vec measure_of(const WeightedPointCloud& c, bool use_density) { return c.measure(use_density); }

std::vector<int> nonempty_ball(const CloudIndex& idx, const Vec& x, double r, const char* what) {
  if (!(r > 0)) throw InputError(std::string(what) + ": radius must be positive");
  if (x.size() != idx.cloud().n) throw InputError(std::string(what) + ": center dimension differs from cloud");
  auto ball = idx.ball(x, r);
  if (ball.empty()) throw InputError(std::string(what) + ": empty ball");
  return ball;
}

// Grid nodes of the plane inside B(x, r) (closed when closed), step apart,
// at half offsets around the foot of x.
Mat plane_grid(const PlaneState& s, const Vec& x, double r, double step, bool closed, Vec* foot_out = nullptr,
               double* rho_out = nullptr) {
  const int d = static_cast<int>(s.F.cols()), n = static_cast<int>(x.size());
  const Vec foot = s.b + s.F * (s.F.transpose() * (x - s.b));
  const double off = (x - foot).norm();
  if (foot_out) *foot_out = foot;
  if (rho_out) *rho_out = off <= r ? std::sqrt(std::max(r * r - off * off, 0.0)) : -1;
  if (off > r) return Mat(n, 0);
  const double rho = std::sqrt(std::max(r * r - off * off, 0.0));
  const int K = static_cast<int>(std::ceil(rho / step)) + 1;
  std::vector<Vec> nodes;
  std::vector<int> k(d, -K);
  Vec u(d);
  while (true) {
    for (int q = 0; q < d; ++q) u[q] = (k[q] + 0.5) * step;
    const Vec y = foot + s.F * u;
    const double dist = (y - x).norm();
    if (closed ? dist <= r : dist < r) nodes.push_back(y);
    int q = 0;
    while (q < d && ++k[q] == K) k[q++] = -K;
    if (q == d) break;
  }
  Mat out(n, nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) out.col(i) = nodes[i];
  return out;
}

double dist_to_cloud(const CloudIndex& idx, const Vec& y) {
  const auto& c = idx.cloud();
  // half the cell diagonal of the sampling grid is the resolution of E
  return std::max(0.0, idx.tree().nearest(y).second - 0.5 * c.h * std::sqrt(double(c.d)));
}

double plane_dist(const PlaneState& s, const Vec& z) {
  const Vec y = z - s.b;
  return (y - s.F * (s.F.transpose() * y)).norm();
}

}  // namespace

PlaneFitResult alpha_ball(const CloudIndex& idx, const Vec& x, double r, const SearchOptions& opt) {
  const auto& cl = idx.cloud();
  const auto ball = nonempty_ball(idx, x, r, "alpha_ball");
  const int d = cl.d;
  const Vec m = measure_of(cl, opt.use_density);
  const double eps = bin_width(r, cl.h, opt.alpha_bins > 0 ? opt.alpha_bins : default_bins(d));
  PlaneState s0 = frames_of(cl.points, m, ball, d, nullptr);
  const Mat Fbin = bin_frame(idx, ball, x, s0.F);
  Mat Q(x.size(), x.size());
  Q << Fbin, s0.N;
  const Bins mu = bin_points(cl.points, m, nullptr, ball, x, Q, eps);
  const double mass = mu.mass.sum();
  const double norm = std::pow(r, d + 1);
  s0.b = s0.b + s0.F * (s0.F.transpose() * (x - s0.b));

  PlaneFitResult res;
  SearchTrace tr;
  Objective J = [&](const PlaneState& s) -> std::pair<double, double> {
    Mat nu;
    Vec unit;
    if (!bin_plane(s, x, r, Fbin, eps, nu, unit) || unit.size() == 0) return {kInf, 0};
    const int a = static_cast<int>(mu.mass.size()), b = static_cast<int>(unit.size());
    Mat pts(x.size(), a + b);
    pts.leftCols(a) = mu.pts;
    pts.rightCols(b) = nu;
    Vec sgn(a + b);
    sgn.head(a) = mu.mass;
    auto eval = [&](double c) -> std::pair<double, double> {
      sgn.tail(b) = -c * unit;
      const BlSolution sol = bl_solve(pts, sgn, x, r, opt.method);
      double slope = 0;
      for (size_t t = 0; t < sol.kept.size(); ++t)
        if (sol.kept[t] >= a) slope -= unit[sol.kept[t] - a] * sol.f[t];
      return {sol.value, slope};
    };
    const Min1D best = minimize_convex(eval, mass / unit.sum(), 0.0, kInf, opt.rel_tol, 60);
    return {best.value / norm, best.arg};
  };
  const auto [v, c] = local_search(J, s0, x, r, opt.budget, true, tr);
  res.value = v;
  res.c = c;
  res.plane = s0.plane();
  res.evaluations = tr.evals;
  res.trace = tr.trace;
  return res;
}

PlaneFitResult bbeta1(const CloudIndex& idx, const Vec& x, double r, const SearchOptions& opt) {
  const auto& cl = idx.cloud();
  const auto ball = nonempty_ball(idx, x, r, "bbeta1");
  const int d = cl.d;
  const double step = r / (opt.beta_grid > 0 ? opt.beta_grid : default_grid(d));
  const double node_w = std::pow(step, d) / omega_norm(d);
  const double norm = std::pow(r, d + 1);
  PlaneState s0 = frames_of(cl.points, cl.weights, ball, d, nullptr);
  // the data term is an L1 fit: a few reweighted PCA passes discount outliers
  {
    Vec rw = cl.weights;
    const double floor = 1e-3 * cl.h;
    for (int it = 0; it < 10; ++it) {
      for (int i : ball) rw[i] = cl.weights[i] / std::max(plane_dist(s0, cl.points.col(i)), floor);
      s0 = frames_of(cl.points, rw, ball, d, nullptr);
    }
  }
  s0.b = s0.b + s0.F * (s0.F.transpose() * (x - s0.b));
  Objective J = [&](const PlaneState& s) -> std::pair<double, double> {
    double a = 0;
    for (int i : ball) a += cl.weights[i] * plane_dist(s, cl.points.col(i));
    const Mat grid = plane_grid(s, x, r, step, false);
    double b = 0;
    for (int k = 0; k < grid.cols(); ++k) b += node_w * dist_to_cloud(idx, grid.col(k));
    return {(a + b) / norm, 0.0};
  };
  SearchTrace tr;
  PlaneFitResult res;
  res.value = local_search(J, s0, x, r, opt.budget, true, tr, 12).first;
  res.plane = s0.plane();
  res.evaluations = tr.evals;
  res.trace = tr.trace;
  return res;
}

PlaneFitResult bbetainf(const CloudIndex& idx, const Vec& x, double r, const SearchOptions& opt) {
  const auto& cl = idx.cloud();
  const auto ball = idx.ball(x, r, true);
  if (!(r > 0)) throw InputError("bbetainf: radius must be positive");
  if (ball.empty()) throw InputError("bbetainf: empty ball");
  const int d = cl.d;
  const double step = r / (opt.beta_grid > 0 ? opt.beta_grid : default_grid(d));
  PlaneState s0 = frames_of(cl.points, cl.weights, ball, d, nullptr);
  s0.b = s0.b + s0.F * (s0.F.transpose() * (x - s0.b));
  // Chebyshev re-centering along each normal: midpoint of the signed extremes
  for (int it = 0; it < 3; ++it)
    for (int k = 0; k < s0.N.cols(); ++k) {
      double lo = kInf, hi = -kInf;
      for (int i : ball) {
        const double t = s0.N.col(k).dot(cl.points.col(i) - s0.b);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
      s0.b += 0.5 * (lo + hi) * s0.N.col(k);
    }
  constexpr int kRing = 64;
  Objective J = [&](const PlaneState& s) -> std::pair<double, double> {
    Vec foot;
    double rho = 0;
    Mat grid = plane_grid(s, x, r, step, true, &foot, &rho);
    if (rho < 0) return {kInf, 0};
    double a = 0;
    for (int i : ball) a = std::max(a, plane_dist(s, cl.points.col(i)));
    double b = dist_to_cloud(idx, foot);
    for (int k = 0; k < grid.cols(); ++k) b = std::max(b, dist_to_cloud(idx, grid.col(k)));
    // the rim of P cap closed ball
    if (d == 1) {
      b = std::max(b, dist_to_cloud(idx, foot + rho * s.F.col(0)));
      b = std::max(b, dist_to_cloud(idx, foot - rho * s.F.col(0)));
    } else {
      for (int k = 0; k < kRing; ++k) {
        const double t = 2 * M_PI * k / kRing;
        Vec y = foot + rho * (std::cos(t) * s.F.col(0) + std::sin(t) * s.F.col(1));
        b = std::max(b, dist_to_cloud(idx, y));
      }
    }
    return {(a + b) / r, 0.0};
  };
  SearchTrace tr;
  PlaneFitResult res;
  res.value = local_search(J, s0, x, r, opt.budget, true, tr, 12).first;
  res.plane = s0.plane();
  res.evaluations = tr.evals;
  res.trace = tr.trace;
  return res;
}

double osc_ball(const CloudIndex& idx, const Vec& x, double r, double norm_radius, const SearchOptions& opt) {
  const auto& cl = idx.cloud();
  if (!cl.g) throw InputError("osc_coefficient: the cloud carries no density g");
  const auto ball = nonempty_ball(idx, x, r, "osc_coefficient");
  const Vec& g = *cl.g;
  double gmin = kInf, gmax = -kInf;
  for (int i : ball) {
    gmin = std::min(gmin, g[i]);
    gmax = std::max(gmax, g[i]);
  }
  if (gmin == gmax) return 0.0;  // lambda = g annihilates the measure
  const int d = cl.d;
  const double eps = bin_width(r, cl.h, opt.alpha_bins > 0 ? opt.alpha_bins : default_bins(d));
  const PlaneState s0 = frames_of(cl.points, cl.weights, ball, d, nullptr);
  Mat Q(x.size(), x.size());
  Q << bin_frame(idx, ball, x, s0.F), s0.N;
  const Bins bins = bin_points(cl.points, cl.weights, &g, ball, x, Q, eps);
  auto eval = [&](double lam) -> std::pair<double, double> {
    const Vec s = bins.extra - lam * bins.mass;
    const BlSolution sol = bl_solve(bins.pts, s, x, r, opt.method);
    double slope = 0;
    for (size_t t = 0; t < sol.kept.size(); ++t) slope -= bins.mass[sol.kept[t]] * sol.f[t];
    return {sol.value, slope};
  };
  const double lam0 = bins.extra.sum() / bins.mass.sum();
  const Min1D best = minimize_convex(eval, lam0, gmin, gmax, opt.rel_tol, 60);
  return best.value / std::pow(norm_radius, d + 1);
}

namespace {
double cube_radius(const Lattice& lat, const DyadicCube& Q) { return 3 * Q.diam + 0.5 * lat.h; }
}  // namespace

double alpha_cube(const CloudIndex& idx, const Lattice& lat, int cube, const SearchOptions& opt) {
  const auto& Q = lat.cubes.at(cube);
  return alpha_ball(idx, idx.cloud().points.col(Q.center_index), cube_radius(lat, Q), opt).value;
}

double osc_coefficient(const CloudIndex& idx, const Lattice& lat, int cube, const SearchOptions& opt) {
  const auto& Q = lat.cubes.at(cube);
  return osc_ball(idx, idx.cloud().points.col(Q.center_index), cube_radius(lat, Q), Q.diam, opt);
}

TangentField tangent_planes(const CloudIndex& idx, double k, int threads) {
  if (!(k >= 3)) throw InputError("tangent_planes: fit radius multiplier must be >= 3");
  const auto& cl = idx.cloud();
  const int N = cl.size(), n = cl.n, d = cl.d;
  TangentField T;
  T.n = n;
  T.d = d;
  T.fit_radius = k * cl.h;
  T.frames.resize(n, static_cast<Eigen::Index>(N) * d);
  T.residual = Vec::Zero(N);
  T.flagged.assign(N, 0);
  const Mat canon = AffinePlane::axis(n, d).frame();
  parallel_for(N, threads, [&](int i) {
    const auto nb = idx.ball(cl.points.col(i), T.fit_radius);
    if (static_cast<int>(nb.size()) < d + 1) {
      T.flagged[i] = 1;
      T.frames.block(0, i * d, n, d) = canon;
      return;
    }
    const PlaneFit fit = fit_plane_pca(cl.points, cl.weights, d, nb);
    T.frames.block(0, i * d, n, d) = fit.plane.frame();
    double s = 0, tw = 0;
    for (int j : nb) {
      const double dist = fit.plane.distance(cl.points.col(j));
      s += cl.weights[j] * dist * dist;
      tw += cl.weights[j];
    }
    T.residual[i] = s / tw;
    if (fit.degenerate) T.flagged[i] = 1;
  });
  return T;
}

GammaResult gamma_local(const CloudIndex& idx, const TangentField& T, const Vec& x, double r,
                        const SearchOptions& opt) {
  const auto& cl = idx.cloud();
  if (T.frames.cols() != static_cast<Eigen::Index>(cl.size()) * cl.d) throw InputError("gamma_local: tangent field does not match the cloud");
  const auto ball = nonempty_ball(idx, x, r, "gamma_local");
  double tw = 0;
  for (int i : ball) tw += cl.weights[i];
  PlaneState s0 = frames_of(cl.points, cl.weights, ball, cl.d, &x);
  s0.b = x;
  auto terms = [&](const PlaneState& s, double& tan, double& perp) {
    tan = 0;
    perp = 0;
    for (int i : ball) {
      tan += cl.weights[i] * projector_distance_frames(T.frame(i), s.F);
      perp = std::max(perp, plane_dist(s, cl.points.col(i)));
    }
    tan /= tw;
    perp /= r;
  };
  Objective J = [&](const PlaneState& s) -> std::pair<double, double> {
    double a, b;
    terms(s, a, b);
    return {a + b, 0.0};
  };
  SearchTrace tr;
  GammaResult g;
  g.value = local_search(J, s0, x, r, opt.budget, false, tr, 12).first;
  terms(s0, g.tangent_term, g.perp_term);
  g.V = s0.F;
  g.evaluations = tr.evals;
  return g;
}

GammaGlobal gamma_global(const CloudIndex& idx, const TangentField& T, const GammaSampling& smp,
                         const SearchOptions& opt) {
  const auto& cl = idx.cloud();
  const Window win = cl.trusted_window();
  const double r_min = smp.r_min > 0 ? smp.r_min : std::max(5 * cl.h, 2 * T.fit_radius);
  struct Probe {
    int center;
    double r;
  };
  std::vector<Probe> probes;
  std::vector<int> cand;
  for (int i = 0; i < cl.size(); ++i)
    if (win.contains_ball(cl.points.col(i), r_min)) cand.push_back(i);
  if (cand.empty()) throw InputError("gamma_global: no center admits a trusted ball");
  Rng rng(smp.seed);
  for (int s = 0; s < smp.n_samples; ++s) {
    const int c = cand[rng.below(cand.size())];
    const double r_max = win.radius - (cl.points.col(c) - win.center).norm();
    const double r = r_min * std::pow(r_max / r_min, rng.uniform());
    probes.push_back({c, r});
  }
  for (int c : smp.centers) {
    const double r_max = win.radius - (cl.points.col(c) - win.center).norm();
    if (r_max < r_min) continue;
    for (int k = 0; k < 4; ++k) probes.push_back({c, r_min * std::pow(r_max / r_min, k / 3.0)});
  }
  std::vector<GammaResult> out(probes.size());
  parallel_for(static_cast<int>(probes.size()), smp.threads, [&](int k) {
    out[k] = gamma_local(idx, T, cl.points.col(probes[k].center), probes[k].r, opt);
  });
  GammaGlobal g;
  g.samples = static_cast<int>(probes.size());
  for (size_t k = 0; k < probes.size(); ++k)
    if (g.center < 0 || out[k].value > g.value) {
      g.value = out[k].value;
      g.center = probes[k].center;
      g.radius = probes[k].r;
      g.worst = out[k];
    }
  return g;
}

double normal_bmo(const CloudIndex& idx, const Vec& x, double r) {
  const auto& cl = idx.cloud();
  if (!cl.normals) throw InputError("normal_bmo: the cloud carries no normals");
  if (cl.d != cl.n - 1) throw InputError("normal_bmo: needs codimension one");
  const double floor = 5 * cl.h;
  if (r < floor) throw InputError("normal_bmo: radius below the resolution floor 5h");
  const Mat& nm = *cl.normals;
  double best = 0;
  for (double s = r; s >= floor; s *= 0.5) {
    const auto ball = idx.ball(x, s);
    if (ball.empty()) continue;
    Vec mean = Vec::Zero(cl.n);
    double tw = 0;
    for (int i : ball) {
      mean += cl.weights[i] * nm.col(i);
      tw += cl.weights[i];
    }
    mean /= tw;
    double ss = 0;
    for (int i : ball) ss += cl.weights[i] * (nm.col(i) - mean).squaredNorm();
    best = std::max(best, std::sqrt(ss / tw));
  }
  return best;
}

MaximalSplit maximal_split(const CloudIndex& idx, const TangentField& T, const Vec& x0, double R, double tau,
                           const SearchOptions& opt) {
  if (!(tau > 0 && tau < 1.0 / 3)) throw InputError("maximal_split: tau must lie in (0, 1/3)");
  const auto& cl = idx.cloud();
  const GammaResult g = gamma_local(idx, T, x0, 4 * R, opt);
  MaximalSplit out;
  out.plane = AffinePlane(x0, g.V);
  // D(y) on everything the averaging balls can reach
  const auto reach = idx.ball(x0, 5 * R);
  std::vector<double> D(cl.size(), 0);
  for (int i : reach) D[i] = projector_distance_frames(T.frame(i), g.V);
  out.all = idx.ball(x0, R);
  out.maximal.resize(out.all.size());
  const double floor = 5 * cl.h;
  std::vector<int> buf;
  for (size_t a = 0; a < out.all.size(); ++a) {
    const Vec y = cl.points.col(out.all[a]);
    double M = 0;
    for (double s = 4 * R; s >= floor; s *= 0.5) {
      buf.clear();
      idx.tree().radius_into(y, s, false, buf);
      double num = 0, den = 0;
      for (int i : buf) {
        num += cl.weights[i] * D[i];
        den += cl.weights[i];
      }
      if (den > 0) M = std::max(M, num / den);
    }
    out.maximal[a] = M;
    const int i = out.all[a];
    out.mass_all += cl.weights[i];
    if (M <= tau) {
      out.good.push_back(i);
    } else {
      out.bad.push_back(i);
      out.mass_bad += cl.weights[i];
    }
  }
  return out;
}

std::vector<CubeCoefficients> compute_cube_coefficients(const CloudIndex& idx, const Lattice& lat,
                                                        const TableOptions& opt) {
  const auto& cl = idx.cloud();
  const Window win = cl.trusted_window();
  std::vector<CubeCoefficients> rows(lat.cubes.size());
  std::vector<int> todo;
  for (const auto& Q : lat.cubes) {
    auto& row = rows[Q.id];
    row.cube = Q.id;
    row.j = Q.j;
    row.mass = Q.mass;
    row.diam = Q.diam;
    row.reliable = Q.diam >= opt.reliable_factor * cl.h;
    row.trusted = win.contains_ball(cl.points.col(Q.center_index), cube_radius(lat, Q));
    if (row.computed()) todo.push_back(Q.id);
  }
  TangentField T;
  if (opt.which.gamma) T = tangent_planes(idx, opt.tangent_k, opt.threads);
  const bool with_osc = opt.which.osc && cl.g.has_value();
  parallel_for(static_cast<int>(todo.size()), opt.threads, [&](int t) {
    const auto& Q = lat.cubes[todo[t]];
    auto& row = rows[Q.id];
    const Vec x = cl.points.col(Q.center_index);
    const double r = cube_radius(lat, Q);
    if (opt.which.alpha) row.alpha = alpha_ball(idx, x, r, opt.search).value;
    if (opt.which.bbeta1) row.bbeta1 = bbeta1(idx, x, r, opt.search).value;
    if (opt.which.bbetainf) row.bbetainf = bbetainf(idx, x, r, opt.search).value;
    if (with_osc) row.osc = osc_ball(idx, x, r, Q.diam, opt.search);
    if (opt.which.gamma) {
      const GammaResult g = gamma_local(idx, T, x, r, opt.search);
      row.tangent_osc = g.tangent_term;
      row.perp_extent = g.perp_term;
      row.gamma = g.value;
    }
  });
  return rows;
}

namespace {
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
nlohmann::json jnum(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double from_j(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }
}  // namespace

std::string coefficients_to_csv(const std::vector<CubeCoefficients>& rows) {
  std::ostringstream os;
  os << "cube,j,mass,diam,reliable,trusted,alpha,bbeta1,bbetainf,osc,tangent_osc,perp_extent,gamma\n";
  for (const auto& r : rows)
    os << r.cube << ',' << r.j << ',' << num(r.mass) << ',' << num(r.diam) << ',' << int(r.reliable) << ','
       << int(r.trusted) << ',' << num(r.alpha) << ',' << num(r.bbeta1) << ',' << num(r.bbetainf) << ','
       << num(r.osc) << ',' << num(r.tangent_osc) << ',' << num(r.perp_extent) << ',' << num(r.gamma) << '\n';
  return os.str();
}

std::string coefficients_to_json(const std::vector<CubeCoefficients>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"cube", r.cube},
                   {"j", r.j},
                   {"mass", r.mass},
                   {"diam", r.diam},
                   {"reliable", r.reliable},
                   {"trusted", r.trusted},
                   {"alpha", jnum(r.alpha)},
                   {"bbeta1", jnum(r.bbeta1)},
                   {"bbetainf", jnum(r.bbetainf)},
                   {"osc", jnum(r.osc)},
                   {"tangent_osc", jnum(r.tangent_osc)},
                   {"perp_extent", jnum(r.perp_extent)},
                   {"gamma", jnum(r.gamma)}});
  return nlohmann::json{{"cubes", arr}}.dump(1);
}

std::vector<CubeCoefficients> coefficients_from_json(const std::string& text) {
  std::vector<CubeCoefficients> rows;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& c : j.at("cubes")) {
      CubeCoefficients r;
      r.cube = c.at("cube").get<int>();
      r.j = c.at("j").get<int>();
      r.mass = c.at("mass").get<double>();
      r.diam = c.at("diam").get<double>();
      r.reliable = c.at("reliable").get<bool>();
      r.trusted = c.at("trusted").get<bool>();
      r.alpha = from_j(c.at("alpha"));
      r.bbeta1 = from_j(c.at("bbeta1"));
      r.bbetainf = from_j(c.at("bbetainf"));
      r.osc = from_j(c.at("osc"));
      r.tangent_osc = from_j(c.at("tangent_osc"));
      r.perp_extent = from_j(c.at("perp_extent"));
      r.gamma = from_j(c.at("gamma"));
      rows.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("coefficient table: ") + e.what(), 0);
  }
  return rows;
}

}  // namespace rectiscope
