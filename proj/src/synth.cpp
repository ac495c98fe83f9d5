#include "rectiscope/synth.hpp"

#include <cmath>
#include <functional>
#include <numbers>

#include "rectiscope/error.hpp"
#include "rectiscope/rng.hpp"

namespace rectiscope {

double omega_norm(int d) {
  if (d < 1) throw InputError("omega_norm: dimension must be positive");
  return std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

double Locus::distance(const Vec& x) const {
  Vec y = x - point;
  if (directions.cols() > 0) y -= directions * (directions.transpose() * y);
  return y.norm();
}

GraphMode parse_graph_mode(const std::string& s) {
  if (s == "fourier") return GraphMode::Fourier;
  if (s == "pyramid") return GraphMode::Pyramid;
  throw InputError("unknown graph mode '" + s + "'");
}

DensityProfile parse_density_profile(const std::string& s) {
  if (s == "const") return DensityProfile::Const;
  if (s == "step") return DensityProfile::Step;
  if (s == "random_bmo") return DensityProfile::RandomBmo;
  throw InputError("unknown density profile '" + s + "'");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Calls fn(u) for every node of the half-offset grid with m nodes per axis.
void for_grid(int d, int m, double lo, double step, const std::function<void(const Vec&)>& fn) {
  std::vector<int> idx(d, 0);
  Vec u(d);
  while (true) {
    for (int k = 0; k < d; ++k) u[k] = lo + (idx[k] + 0.5) * step;
    fn(u);
    int k = 0;
    while (k < d && ++idx[k] == m) idx[k++] = 0;
    if (k == d) break;
  }
}

double op_norm(const Mat& J) {
  if (J.rows() == 1) return J.row(0).norm();
  Eigen::JacobiSVD<Mat> svd(J);
  return svd.singularValues()[0];
}

double area_element(const Mat& J) {
  const int d = static_cast<int>(J.cols());
  const Mat G = Mat::Identity(d, d) + J.transpose() * J;
  return std::sqrt(G.determinant());
}

// Height function f: R^d -> R^(n-d) with analytic Jacobian.
struct HeightField {
  struct Wave {
    Vec omega;
    double amp, phase;
    int comp;
  };
  int d = 1, c = 1;
  GraphMode mode = GraphMode::Fourier;
  std::vector<Wave> waves;
  double scale = 0;      // multiplies everything
  double cone_radius = 0;

  Vec value(const Vec& u) const {
    Vec f = Vec::Zero(c);
    if (scale == 0) return f;
    if (mode == GraphMode::Pyramid) {
      f[0] = std::max(0.0, cone_radius - u.norm());
    } else {
      for (const auto& w : waves) f[w.comp] += w.amp * std::sin(w.omega.dot(u) + w.phase);
    }
    return scale * f;
  }
  Mat jacobian(const Vec& u) const {
    Mat J = Mat::Zero(c, d);
    if (scale == 0) return J;
    if (mode == GraphMode::Pyramid) {
      const double r = u.norm();
      if (r < cone_radius && r > 0) J.row(0) = -u.transpose() / r;
    } else {
      for (const auto& w : waves) J.row(w.comp) += w.amp * std::cos(w.omega.dot(u) + w.phase) * w.omega.transpose();
    }
    return scale * J;
  }
};

Generated graph_cloud(int n, int d, const HeightField& f, double extent, double h, const std::string& kind) {
  if (d < 1 || d >= n) throw InputError("generator: need 1 <= d < n");
  if (!(h > 0) || !(extent >= 20 * h)) throw InputError("generator: extent must be at least 20 h");
  const int m = static_cast<int>(std::llround(extent / h));
  const double step = extent / m;
  long total = 1;
  for (int k = 0; k < d; ++k) total *= m;
  if (total > 20'000'000) throw InputError("generator: grid too large");
  Generated g;
  auto& c = g.cloud;
  c.n = n;
  c.d = d;
  c.h = step;
  c.points.resize(n, total);
  c.weights.resize(total);
  g.truth.tangents.resize(n, total * d);
  if (n == d + 1) c.normals = Mat(n, total);
  const double cell = std::pow(step, d) / omega_norm(d);
  long i = 0;
  double lip = 0;
  for_grid(d, m, -0.5 * extent, step, [&](const Vec& u) {
    const Vec fu = f.value(u);
    const Mat J = f.jacobian(u);
    c.points.col(i).head(d) = u;
    c.points.col(i).tail(n - d) = fu;
    c.weights[i] = cell * area_element(J);
    Mat T(n, d);
    T.topRows(d) = Mat::Identity(d, d);
    T.bottomRows(n - d) = J;
    g.truth.tangents.middleCols(i * d, d) = AffinePlane::from_span(Vec::Zero(n), T).frame();
    if (c.normals) {
      Vec nv(n);
      nv.head(d) = -J.row(0).transpose();
      nv[d] = 1.0;
      c.normals->col(i) = nv / nv.norm();
    }
    lip = std::max(lip, op_norm(J));
    ++i;
  });
  Vec center = Vec::Zero(n);
  center.tail(n - d) = f.value(Vec::Zero(d));
  c.window = Window{center, 0.5 * extent - step};
  g.truth.kind = kind;
  g.truth.lipschitz = lip;
  g.truth.analytic_mass = c.weights.sum();
  return g;
}

}  // namespace

Generated gen_plane(int n, int d, double extent, double h) {
  HeightField f;
  f.d = d;
  f.c = n - d;
  Generated g = graph_cloud(n, d, f, extent, h, "plane");
  g.truth.analytic_mass = std::pow(extent, d) / omega_norm(d);
  return g;
}

Generated gen_lipschitz_graph(int n, int d, double delta, GraphMode mode, double extent, double h,
                              std::uint64_t seed) {
  if (!(delta >= 0 && delta < 0.5)) throw InputError("gen_lipschitz_graph: delta must lie in [0, 1/2)");
  if (d < 1 || d >= n) throw InputError("generator: need 1 <= d < n");
  if (delta == 0) {
    Generated g = gen_plane(n, d, extent, h);
    return g;
  }
  HeightField f;
  f.d = d;
  f.c = n - d;
  f.mode = mode;
  if (mode == GraphMode::Pyramid) {
    f.cone_radius = 0.25 * extent;
    f.scale = delta;
    Generated g = graph_cloud(n, d, f, extent, h, "graph");
    g.truth.lipschitz = delta;
    return g;
  }
  Rng rng(seed);
  const int K = std::max(2, std::min(24, static_cast<int>(extent / (16 * h))));
  const double base = kTwoPi / extent;
  for (int comp = 0; comp < f.c; ++comp) {
    if (d == 1) {
      for (int k = 1; k <= K; ++k) {
        Vec om(1);
        om[0] = base * k;
        f.waves.push_back({om, rng.uniform(0.5, 1.0) / (double(k) * k), rng.uniform(0, kTwoPi), comp});
      }
    } else {
      const int K2 = std::min(K, 8);
      // integer wave vectors in a half space, 1 <= |w| <= K2
      std::function<void(int, Vec&)> rec = [&](int axis, Vec& w) {
        if (axis == d) {
          const double len = w.norm();
          if (len < 1 || len > K2) return;
          for (int k = 0; k < d; ++k) {
            if (w[k] > 0) break;
            if (w[k] < 0) return;
          }
          f.waves.push_back({base * w, rng.uniform(0.5, 1.0) / (len * len), rng.uniform(0, kTwoPi), comp});
          return;
        }
        for (int v = -K2; v <= K2; ++v) {
          w[axis] = v;
          rec(axis + 1, w);
        }
      };
      Vec w(d);
      rec(0, w);
    }
  }
  // rescale so that the maximal slope on a grid four times finer than the sample is delta
  f.scale = 1.0;
  const int m = static_cast<int>(std::llround(extent / h));
  double mx = 0;
  for_grid(d, 4 * m, -0.5 * extent, extent / (4 * m), [&](const Vec& u) { mx = std::max(mx, op_norm(f.jacobian(u))); });
  f.scale = delta / mx;
  Generated g = graph_cloud(n, d, f, extent, h, "graph");
  g.truth.lipschitz = delta;
  return g;
}

double snowflake_length_factor(double a) { return (2.0 + 1.0 / std::cos(a)) / 3.0; }

Generated gen_snowflake(double flatness, int depth, double h, double base_length) {
  if (!(flatness >= 0 && flatness < std::numbers::pi / 6)) throw InputError("gen_snowflake: flatness must lie in [0, pi/6)");
  if (depth < 0 || depth > 12) throw InputError("gen_snowflake: depth must lie in [0, 12]");
  if (!(h > 0)) throw InputError("gen_snowflake: h must be positive");
  const double L = base_length > 0 ? base_length : 2048 * h;
  const double w1 = omega_norm(1);
  std::vector<double> xs, ys, ws;
  Eigen::Vector2d prev(0, 0), rep(0, 0);
  double acc = 0;
  bool rep_set = false;
  auto visit = [&](const Eigen::Vector2d& v) {
    acc += (v - prev).norm();
    prev = v;
    if (!rep_set && acc >= 0.5 * h) {
      rep = v;
      rep_set = true;
    }
    if (acc >= h) {
      xs.push_back(rep.x());
      ys.push_back(rep.y());
      ws.push_back(acc / w1);
      acc = 0;
      rep_set = false;
    }
  };
  const double ta = std::tan(flatness);
  std::function<void(const Eigen::Vector2d&, const Eigen::Vector2d&, int)> rec =
      [&](const Eigen::Vector2d& P, const Eigen::Vector2d& Q, int level) {
        if (level == 0) {
          visit(Q);
          return;
        }
        const Eigen::Vector2d D = Q - P;
        const Eigen::Vector2d A = P + D / 3.0, B = P + 2.0 * D / 3.0;
        const Eigen::Vector2d nrm(-D.y(), D.x());
        const Eigen::Vector2d C = 0.5 * (P + Q) + nrm * (ta / 6.0);
        rec(P, A, level - 1);
        rec(A, C, level - 1);
        rec(C, B, level - 1);
        rec(B, Q, level - 1);
      };
  rec(Eigen::Vector2d(0, 0), Eigen::Vector2d(L, 0), depth);
  if (acc > 0) {
    const Eigen::Vector2d p = rep_set ? rep : prev;
    xs.push_back(p.x());
    ys.push_back(p.y());
    ws.push_back(acc / w1);
  }
  Generated g;
  auto& c = g.cloud;
  c.n = 2;
  c.d = 1;
  c.h = h;
  const int N = static_cast<int>(xs.size());
  c.points.resize(2, N);
  c.weights.resize(N);
  for (int i = 0; i < N; ++i) {
    c.points(0, i) = xs[i];
    c.points(1, i) = ys[i];
    c.weights[i] = ws[i];
  }
  Vec center(2);
  center << 0.5 * L, 0.0;
  c.window = Window{center, 0.45 * L};
  g.truth.kind = "snowflake";
  g.truth.length_factor = snowflake_length_factor(flatness);
  g.truth.analytic_mass = L * std::pow(g.truth.length_factor, depth) / w1;
  return g;
}

Generated gen_two_planes(int n, double angle, double extent, double h) {
  if (!(angle > 0 && angle <= std::numbers::pi / 2 + 1e-15)) throw InputError("gen_two_planes: angle must lie in (0, pi/2]");
  const int d = n - 1;
  Generated a = gen_plane(n, d, extent, h);
  const int m = a.cloud.size();
  Mat R = Mat::Identity(n, n);  // rotation in the (e_1, e_n) plane
  R(0, 0) = std::cos(angle);
  R(n - 1, 0) = std::sin(angle);
  R(0, n - 1) = -std::sin(angle);
  R(n - 1, n - 1) = std::cos(angle);
  Generated g;
  auto& c = g.cloud;
  c.n = n;
  c.d = d;
  c.h = a.cloud.h;
  c.points.resize(n, 2 * m);
  c.points.leftCols(m) = a.cloud.points;
  c.points.rightCols(m) = R * a.cloud.points;
  c.weights.resize(2 * m);
  c.weights.head(m) = a.cloud.weights;
  c.weights.tail(m) = a.cloud.weights;
  c.normals = Mat(n, 2 * m);
  c.normals->leftCols(m) = *a.cloud.normals;
  c.normals->rightCols(m) = R * *a.cloud.normals;
  g.truth.tangents.resize(n, 2 * m * d);
  g.truth.tangents.leftCols(m * d) = a.truth.tangents;
  g.truth.tangents.rightCols(m * d) = R * a.truth.tangents;
  c.window = Window{Vec::Zero(n), 0.5 * extent - c.h};
  Locus edge{Vec::Zero(n), Mat::Identity(n, n).middleCols(1, d - 1)};
  g.truth.kind = "two_planes";
  g.truth.singular.push_back(edge);
  g.truth.analytic_mass = 2 * a.truth.analytic_mass;
  return g;
}

Generated gen_half_plane(int n, double extent, double h) {
  const int d = n - 1;
  if (n < 2) throw InputError("gen_half_plane: n must be >= 2");
  if (!(h > 0) || !(extent >= 20 * h)) throw InputError("generator: extent must be at least 20 h");
  const int m = static_cast<int>(std::llround(extent / h));
  const double step = extent / m;
  const int m1 = m / 2 + 1;  // u_1 = 0, -step, ..., -(m/2) step
  long rest = 1;
  for (int k = 1; k < d; ++k) rest *= m;
  const long total = m1 * rest;
  Generated g;
  auto& c = g.cloud;
  c.n = n;
  c.d = d;
  c.h = step;
  c.points = Mat::Zero(n, total);
  c.weights.resize(total);
  c.normals = Mat::Zero(n, total);
  g.truth.tangents = Mat::Zero(n, total * d);
  const double cell = std::pow(step, d) / omega_norm(d);
  long i = 0;
  for (int a = 0; a < m1; ++a) {
    auto put = [&](const Vec& rest_u) {
      c.points(0, i) = -a * step;
      for (int k = 1; k < d; ++k) c.points(k, i) = rest_u[k - 1];
      c.weights[i] = a == 0 ? 0.5 * cell : cell;
      (*c.normals)(n - 1, i) = 1.0;
      g.truth.tangents.middleCols(i * d, d) = Mat::Identity(n, d);
      ++i;
    };
    if (d == 1) put(Vec());
    else for_grid(d - 1, m, -0.5 * extent, step, put);
  }
  c.window = Window{Vec::Zero(n), 0.5 * extent - step};
  g.truth.kind = "half_plane";
  g.truth.singular.push_back(Locus{Vec::Zero(n), Mat::Identity(n, n).middleCols(1, d - 1)});
  g.truth.analytic_mass = c.weights.sum();
  return g;
}

Generated gen_sphere(int n, double R, double h) {
  if (!(R > 0) || !(h > 0) || R < 4 * h) throw InputError("gen_sphere: need R >= 4h > 0");
  Generated g;
  auto& c = g.cloud;
  c.n = n;
  c.d = n - 1;
  c.h = h;
  if (n == 2) {
    const int N = static_cast<int>(std::llround(kTwoPi * R / h));
    c.points.resize(2, N);
    for (int i = 0; i < N; ++i) {
      const double t = kTwoPi * (i + 0.5) / N;
      c.points(0, i) = R * std::cos(t);
      c.points(1, i) = R * std::sin(t);
    }
    c.weights = Vec::Constant(N, kTwoPi * R / N / omega_norm(1));
    g.truth.analytic_mass = kTwoPi * R / omega_norm(1);
  } else if (n == 3) {
    const double area = 4 * std::numbers::pi * R * R;
    const int N = static_cast<int>(std::llround(area / (h * h)));
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    c.points.resize(3, N);
    for (int i = 0; i < N; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / N;
      const double rr = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * i;
      c.points(0, i) = R * rr * std::cos(phi);
      c.points(1, i) = R * rr * std::sin(phi);
      c.points(2, i) = R * z;
    }
    c.weights = Vec::Constant(N, area / N / omega_norm(2));
    g.truth.analytic_mass = area / omega_norm(2);
  } else {
    throw InputError("gen_sphere: only n = 2 or 3");
  }
  c.normals = c.points / R;
  for (int i = 0; i < c.size(); ++i) c.normals->col(i).normalize();
  c.window = Window{Vec::Zero(n), 4 * R};
  g.truth.kind = "sphere";
  return g;
}

void attach_density(WeightedPointCloud& cloud, DensityProfile profile, double amplitude, std::uint64_t seed) {
  if (!(amplitude >= 0 && amplitude < 1)) throw InputError("attach_density: amplitude must lie in [0, 1)");
  const int N = cloud.size();
  const double hi = 1.0 + amplitude, lo = 1.0 / hi;
  Vec g(N);
  const Window w = cloud.trusted_window();
  switch (profile) {
    case DensityProfile::Const:
      g.setOnes();
      break;
    case DensityProfile::Step:
      for (int i = 0; i < N; ++i) g[i] = cloud.points(0, i) >= w.center[0] ? hi : lo;
      break;
    case DensityProfile::RandomBmo: {
      Rng rng(seed);
      const int n = cloud.n;
      std::vector<Vec> om;
      std::vector<double> ph;
      for (int k = 0; k < 6; ++k) {
        Vec dir(n);
        for (int q = 0; q < n; ++q) dir[q] = rng.uniform(-1, 1);
        if (dir.norm() < 1e-3) dir[0] = 1;
        dir.normalize();
        om.push_back(dir * (kTwoPi * rng.uniform(1.0, 4.0) / (2 * w.radius)));
        ph.push_back(rng.uniform(0, kTwoPi));
      }
      Vec phi(N);
      for (int i = 0; i < N; ++i) {
        double s = 0;
        for (int k = 0; k < 6; ++k) s += std::sin(om[k].dot(cloud.points.col(i)) + ph[k]);
        phi[i] = s;
      }
      const double mx = std::max(phi.cwiseAbs().maxCoeff(), 1e-300);
      for (int i = 0; i < N; ++i) g[i] = std::pow(hi, phi[i] / mx);
      break;
    }
  }
  for (int i = 0; i < N; ++i) g[i] = std::clamp(g[i], lo, hi);
  cloud.g = g;
}

}  // namespace rectiscope
