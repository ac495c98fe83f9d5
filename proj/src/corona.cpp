#include "rectiscope/corona.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <queue>
#include <sstream>

#include "rectiscope/error.hpp"
#include "rectiscope/normalization.hpp"
#include "rectiscope/parallel.hpp"
#include "rectiscope/rng.hpp"

namespace rectiscope {

namespace {

int node_index(const std::vector<int>& k, int K) {
  int id = 0;
  for (int q = static_cast<int>(k.size()) - 1; q >= 0; --q) id = id * K + k[q];
  return id;
}

}  // namespace

bool LipschitzGraphModel::covers(const Vec& u) const {
  for (int q = 0; q < u.size(); ++q)
    if (std::abs(u[q]) > half_extent) return false;
  return true;
}

Vec LipschitzGraphModel::height(const Vec& u) const {
  const int dd = d(), K = cells;
  const double u0 = -half_extent + 0.5 * cell;
  std::vector<int> k(dd);
  std::vector<double> t(dd);
  for (int q = 0; q < dd; ++q) {
    const double s = std::clamp((u[q] - u0) / cell, 0.0, double(K - 1));
    k[q] = std::min(static_cast<int>(std::floor(s)), K - 2);
    t[q] = s - k[q];
  }
  // Kuhn simplex: walk the axes by decreasing local coordinate
  std::vector<int> order(dd);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return t[a] > t[b]; });
  Vec out = heights.col(node_index(k, K)) * (1 - t[order[0]]);
  for (int s = 0; s < dd; ++s) {
    ++k[order[s]];
    const double wgt = s + 1 < dd ? t[order[s]] - t[order[s + 1]] : t[order[s]];
    out += wgt * heights.col(node_index(k, K));
  }
  return out;
}

Vec LipschitzGraphModel::point(const Vec& u) const { return base + frame * u + normals * height(u); }

double LipschitzGraphModel::offset(const Vec& z) const {
  const Vec y = z - base;
  return (normals.transpose() * y - height(frame.transpose() * y)).norm();
}

namespace {

double weighted_median(std::vector<std::pair<double, double>>& vw) {
  std::sort(vw.begin(), vw.end());
  double total = 0;
  for (const auto& p : vw) total += p.second;
  double acc = 0;
  for (const auto& p : vw) {
    acc += p.second;
    if (acc >= 0.5 * total) return p.first;
  }
  return vw.back().first;
}

double simplex_lipschitz(const LipschitzGraphModel& g) {
  const int d = g.d(), K = g.cells, m = static_cast<int>(g.normals.cols());
  double best = 0;
  std::vector<int> cell(d, 0), k(d), order(d);
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    do {
      Mat G(m, d);
      k = cell;
      Vec prev = g.heights.col(node_index(k, K));
      for (int s = 0; s < d; ++s) {
        ++k[order[s]];
        const Vec next = g.heights.col(node_index(k, K));
        G.col(order[s]) = (next - prev) / g.cell;
        prev = next;
      }
      const double nrm = m == 1 ? G.norm() : Eigen::JacobiSVD<Mat>(G).singularValues()[0];
      best = std::max(best, nrm);
    } while (std::next_permutation(order.begin(), order.end()));
    int q = 0;
    while (q < d && ++cell[q] == K - 1) cell[q++] = 0;
    if (q == d) break;
  }
  return best;
}

}  // namespace

GraphFit fit_lipschitz_graph(const WeightedPointCloud& cloud, const std::vector<int>& region, const Vec& x, double r,
                             const GraphFitOptions& opt) {
  const int d = cloud.d, n = cloud.n, m = n - d;
  if (region.empty()) throw InputError("fit_lipschitz_graph: empty region");
  if (!(r > 0)) throw InputError("fit_lipschitz_graph: radius must be positive");
  const PlaneFit pf = fit_plane_pca(cloud.points, cloud.weights, d, region);
  if (pf.degenerate || static_cast<int>(region.size()) < d + 1)
    throw InputError("fit_lipschitz_graph: region projects degenerately (rank < d)");
  GraphFit out;
  LipschitzGraphModel& g = out.graph;
  g.frame = pf.plane.frame();
  g.normals = pf.plane.normal_frame();
  g.base = pf.plane.base() + g.frame * (g.frame.transpose() * (x - pf.plane.base()));
  const double target = std::max(opt.min_cell_h * cloud.h, r / opt.cells_per_radius);
  const int K = std::max(2, static_cast<int>(std::ceil(2 * r / target)));
  g.cells = K;
  g.cell = 2 * r / K;
  g.half_extent = r;
  int total = 1;
  for (int q = 0; q < d; ++q) total *= K;

  std::vector<std::vector<std::pair<Vec, double>>> bucket(total);
  std::vector<int> k(d);
  for (int i : region) {
    const Vec y = cloud.points.col(i) - g.base;
    const Vec u = g.frame.transpose() * y;
    for (int q = 0; q < d; ++q) k[q] = std::clamp(static_cast<int>(std::floor((u[q] + r) / g.cell)), 0, K - 1);
    bucket[node_index(k, K)].push_back({g.normals.transpose() * y, cloud.weights[i]});
  }
  g.heights = Mat::Zero(m, total);
  std::vector<char> filled(total, 0);
  Vec mean = Vec::Zero(m);
  double mw = 0;
  std::vector<std::pair<double, double>> vw;
  for (int c = 0; c < total; ++c) {
    if (bucket[c].empty()) continue;
    filled[c] = 1;
    for (int q = 0; q < m; ++q) {
      vw.clear();
      for (const auto& [v, w] : bucket[c]) vw.push_back({v[q], w});
      g.heights(q, c) = weighted_median(vw);
    }
    for (const auto& [v, w] : bucket[c]) {
      mean += w * v;
      mw += w;
    }
  }
  if (mw > 0) mean /= mw;
  for (int c = 0; c < total; ++c)
    if (!filled[c]) g.heights.col(c) = mean;
  // Jacobi sweeps of the Laplace equation on the empty cells
  Mat next = g.heights;
  const double scale = 1 + g.heights.cwiseAbs().maxCoeff();
  for (int sweep = 0; sweep < opt.fill_sweeps; ++sweep) {
    double change = 0;
    for (int c = 0; c < total; ++c) {
      if (filled[c]) continue;
      int rem = c;
      for (int q = 0; q < d; ++q) {
        k[q] = rem % K;
        rem /= K;
      }
      Vec s = Vec::Zero(m);
      int cnt = 0;
      for (int q = 0; q < d; ++q)
        for (int step : {-1, 1}) {
          const int kk = k[q] + step;
          if (kk < 0 || kk >= K) continue;
          k[q] = kk;
          s += g.heights.col(node_index(k, K));
          k[q] -= step;
          ++cnt;
        }
      next.col(c) = s / cnt;
      change = std::max(change, (next.col(c) - g.heights.col(c)).cwiseAbs().maxCoeff());
    }
    g.heights.swap(next);
    next = g.heights;
    if (change <= 1e-13 * scale) break;
  }
  g.lipschitz = simplex_lipschitz(g);

  const double far = opt.far_multiplier * g.cell;
  for (int i : region)
    if (g.offset(cloud.points.col(i)) > far) out.far_mass += cloud.weights[i];
  const double rho2 = r * r - (x - g.base).squaredNorm();
  const double area = std::pow(g.cell, d) / omega_norm(d);
  for (int c = 0; c < total; ++c) {
    if (filled[c]) continue;
    int rem = c;
    double u2 = 0;
    for (int q = 0; q < d; ++q) {
      const double u = -r + (rem % K + 0.5) * g.cell;
      u2 += u * u;
      rem /= K;
    }
    if (u2 < rho2) out.empty_area += area;
  }
  out.defect = out.far_mass + out.empty_area;
  out.normalized = out.defect / std::pow(r, d);
  return out;
}

UrScan delta_ur_scan(const CloudIndex& idx, const UrScanOptions& opt) {
  const auto& cl = idx.cloud();
  const Window win = cl.trusted_window();
  const double r_min = opt.r_min > 0 ? opt.r_min : 16 * cl.h;
  std::vector<int> cand;
  for (int i = 0; i < cl.size(); ++i)
    if (win.contains_ball(cl.points.col(i), r_min)) cand.push_back(i);
  if (cand.empty()) throw InputError("delta_ur_scan: no center admits a trusted ball of radius r_min");
  Rng rng(opt.seed);
  UrScan scan;
  scan.samples.resize(opt.n_samples);
  for (auto& s : scan.samples) {
    s.center = cand[rng.below(cand.size())];
    double r_max = win.radius - (cl.points.col(s.center) - win.center).norm();
    if (opt.r_max > 0) r_max = std::min(r_max, opt.r_max);
    r_max = std::max(r_max, r_min);
    s.radius = r_min * std::pow(r_max / r_min, rng.uniform());
  }
  parallel_for(opt.n_samples, opt.threads, [&](int k) {
    UrSample& s = scan.samples[k];
    const Vec x = cl.points.col(s.center);
    try {
      const GraphFit f = fit_lipschitz_graph(cl, idx.ball(x, s.radius), x, s.radius, opt.fit);
      s.defect = f.normalized;
      s.lipschitz = f.graph.lipschitz;
      s.misses = (f.graph.point(f.graph.coords(x)) - x).norm() >= 0.5 * s.radius;
    } catch (const InputError&) {
      s.defect = 1;
      s.misses = true;
    }
    s.value = std::max({s.defect, s.lipschitz, s.misses ? 1.0 : 0.0});
  });
  double worst = -1;
  for (const auto& s : scan.samples)
    if (s.value > worst) {
      worst = s.value;
      scan.worst = s;
    }
  scan.capped = worst >= 0.1;
  scan.delta_est = std::min(worst, 0.1);
  return scan;
}

namespace {

struct Builder {
  const CloudIndex& idx;
  const Lattice& lat;
  CoronaParams p;
  double eta, M;
  Window win;

  double m_eff(const DyadicCube& Q) const {
    if (Q.diam <= 0) return 1;
    const double extent = win.radius - (idx.cloud().points.col(Q.center_index) - win.center).norm();
    return std::max(1.0, std::min(M, extent / Q.diam));
  }

  double far_fraction(const LipschitzGraphModel& g, const DyadicCube& Q) const {
    const auto& cl = idx.cloud();
    const double far = p.fit.far_multiplier * g.cell;
    double fm = 0;
    for (int i : Q.members)
      if (g.offset(cl.points.col(i)) > far) fm += cl.weights[i];
    return Q.mass > 0 ? fm / Q.mass : 0;
  }

  // returns false when the fit fails
  bool fit(const DyadicCube& T, LipschitzGraphModel& g) const {
    const auto& cl = idx.cloud();
    const Vec c = cl.points.col(T.center_index);
    const double r = m_eff(T) * T.diam + 0.5 * cl.h;
    try {
      g = fit_lipschitz_graph(cl, idx.ball(c, r), c, r, p.fit).graph;
      return true;
    } catch (const InputError&) {
      return false;
    }
  }

  CoronaForest run(int root, const LipschitzGraphModel* top_graph) const {
    CoronaForest f;
    f.root = root;
    f.params = p;
    f.eta = eta;
    f.M = M;
    f.M_eff = m_eff(lat.cubes[root]);
    f.family_of.assign(lat.cubes.size(), -1);
    std::priority_queue<int, std::vector<int>, std::greater<int>> tops;
    tops.push(root);
    while (!tops.empty()) {
      const int t = tops.top();
      tops.pop();
      const DyadicCube& T = lat.cubes[t];
      CoronaFamily fam;
      fam.top = t;
      LipschitzGraphModel g;
      const bool ok = (t == root && top_graph) ? (g = *top_graph, true) : fit(T, g);
      const int fid = static_cast<int>(f.families.size());
      if (!ok) {
        fam.flagged = true;
        fam.members = {t};
        f.family_of[t] = fid;
        for (int c : T.children) tops.push(c);
        f.families.push_back(std::move(fam));
        continue;
      }
      fam.graph = static_cast<int>(f.graphs.size());
      fam.members.push_back(t);
      f.family_of[t] = fid;
      std::queue<int> frontier;
      frontier.push(t);
      while (!frontier.empty()) {
        const DyadicCube& Q = lat.cubes[frontier.front()];
        frontier.pop();
        if (Q.children.empty()) continue;
        bool mediocre = false;
        for (int c : Q.children) {
          const double ff = far_fraction(g, lat.cubes[c]);
          fam.max_far_fraction = std::max(fam.max_far_fraction, ff);
          if (ff > eta) mediocre = true;
        }
        for (int c : Q.children) {
          fam.members.push_back(c);
          f.family_of[c] = fid;
          if (mediocre) {
            fam.minimal.push_back(c);
            for (int gc : lat.cubes[c].children) tops.push(gc);
          } else {
            frontier.push(c);
          }
        }
      }
      std::sort(fam.members.begin(), fam.members.end());
      std::sort(fam.minimal.begin(), fam.minimal.end());
      f.graphs.push_back(std::move(g));
      f.families.push_back(std::move(fam));
    }
    return f;
  }
};

Builder make_builder(const CloudIndex& idx, const Lattice& lat, const CoronaParams& p0) {
  CoronaParams p = p0;
  if (!(p.delta > 0 && p.delta < 0.1)) throw InputError("corona: delta must lie in (0, 1/10)");
  if (!(p.theta > 0)) throw InputError("corona: theta must be positive");
  const int d = idx.cloud().d;
  if (p.theta_prime <= 0) p.theta_prime = p.theta / (4 * d);
  return Builder{idx, lat, p, std::pow(p.delta, p.theta), std::pow(p.delta, -p.theta_prime),
                 idx.cloud().trusted_window()};
}

}  // namespace

CoronaForest corona_decompose(const CloudIndex& idx, const Lattice& lat, int root, const CoronaParams& p) {
  if (root < 0 || root >= static_cast<int>(lat.cubes.size())) throw InputError("corona: no such root cube");
  return make_builder(idx, lat, p).run(root, nullptr);
}

std::vector<CoronaForest> corona_decompose_roots(const CloudIndex& idx, const Lattice& lat,
                                                 const std::vector<int>& roots, const CoronaParams& p) {
  const Builder b = make_builder(idx, lat, p);
  const auto& pts = idx.cloud().points;
  std::vector<CoronaForest> out;
  for (int r : roots) {
    if (r < 0 || r >= static_cast<int>(lat.cubes.size())) throw InputError("corona: no such root cube");
    const DyadicCube& R = lat.cubes[r];
    const LipschitzGraphModel* share = nullptr;
    int from = -1;
    for (const auto& prev : out) {
      const DyadicCube& P = lat.cubes[prev.root];
      if (P.j != R.j || prev.shared_from >= 0 || prev.families.front().flagged) continue;
      const double reach = (pts.col(R.center_index) - pts.col(P.center_index)).norm() + R.diam;
      if (reach <= prev.M_eff / 3 * P.diam) {
        share = &prev.graphs[prev.families.front().graph];
        from = prev.root;
        break;
      }
    }
    CoronaForest f = b.run(r, share);
    f.shared_from = from;
    out.push_back(std::move(f));
  }
  return out;
}

CoronaReport verify_corona(const CoronaForest& f, const CloudIndex& idx, const Lattice& lat,
                           const std::vector<CoronaForest>& others) {
  CoronaReport rep;
  const auto& cl = idx.cloud();
  const int nc = static_cast<int>(lat.cubes.size());
  // the cubes of the root, with a membership count per cube
  std::vector<int> count(nc, 0), in_root(nc, 0);
  std::vector<int> stack{f.root};
  while (!stack.empty()) {
    const int q = stack.back();
    stack.pop_back();
    in_root[q] = 1;
    for (int c : lat.cubes[q].children) stack.push_back(c);
  }
  std::vector<int> fam_of(nc, -1);
  for (size_t s = 0; s < f.families.size(); ++s)
    for (int q : f.families[s].members) {
      ++count[q];
      fam_of[q] = static_cast<int>(s);
    }
  for (int q = 0; q < nc; ++q) {
    if (in_root[q] && count[q] != 1) {
      rep.partition_ok = false;
      rep.problems.push_back("cube " + std::to_string(q) + " lies in " + std::to_string(count[q]) + " families");
    }
    if (!in_root[q] && count[q] != 0) {
      rep.partition_ok = false;
      rep.problems.push_back("cube " + std::to_string(q) + " is outside the root but in a family");
    }
  }
  for (size_t s = 0; s < f.families.size(); ++s) {
    const auto& fam = f.families[s];
    for (int q : fam.members) {
      const DyadicCube& Q = lat.cubes[q];
      if (q != fam.top && (Q.parent < 0 || fam_of[Q.parent] != static_cast<int>(s))) {
        rep.coherence_ok = false;
        rep.problems.push_back("coherence: cube " + std::to_string(q) + " is in family of top " +
                               std::to_string(fam.top) + " but its parent is not");
      }
      int inside = 0;
      for (int c : Q.children) inside += fam_of[c] == static_cast<int>(s);
      if (inside != 0 && inside != static_cast<int>(Q.children.size())) {
        rep.coherence_ok = false;
        rep.problems.push_back("coherence: children of cube " + std::to_string(q) + " split across families");
      }
    }
    for (int q : fam.minimal)
      if (!std::binary_search(fam.members.begin(), fam.members.end(), q)) {
        rep.coherence_ok = false;
        rep.problems.push_back("minimal cube " + std::to_string(q) + " is not a member");
      }
    ++rep.families;
    rep.minimal_cubes += static_cast<int>(fam.minimal.size());
    rep.flagged += fam.flagged;
  }
  // shared top graph must be the very graph of the other root
  if (f.shared_from >= 0) {
    const CoronaForest* src = nullptr;
    for (const auto& o : others)
      if (o.root == f.shared_from) src = &o;
    if (!src) {
      rep.sharing_ok = false;
      rep.problems.push_back("shared graph source root " + std::to_string(f.shared_from) + " not supplied");
    } else {
      const auto& a = f.graphs[f.families.front().graph];
      const auto& b = src->graphs[src->families.front().graph];
      if (a.heights != b.heights || a.base != b.base || a.frame != b.frame) {
        rep.sharing_ok = false;
        rep.problems.push_back("top graph of root " + std::to_string(f.root) + " differs from the shared one");
      }
    }
  }
  // packing: mass of tops inside each cube of the root
  std::vector<double> top_mass(nc, 0);
  for (const auto& fam : f.families) top_mass[fam.top] += lat.cubes[fam.top].mass;
  for (int q = nc - 1; q >= 0; --q) {
    if (!in_root[q]) continue;
    for (int c : lat.cubes[q].children) top_mass[q] += top_mass[c];
  }
  for (int q = 0; q < nc; ++q) {
    if (!in_root[q] || lat.cubes[q].mass <= 0) continue;
    PackingEntry e{q, top_mass[q], top_mass[q] / lat.cubes[q].mass};
    rep.packing.push_back(e);
    if (rep.packing_argmax < 0 || e.ratio > rep.packing_max) {
      rep.packing_max = e.ratio;
      rep.packing_argmax = q;
    }
  }
  for (const auto& fam : f.families) {
    const double m = lat.cubes[fam.top].mass;
    if (top_mass[fam.top] - m > (rep.packing_max - 1) * m + 1e-12 * m) {
      rep.remark_ok = false;
      rep.problems.push_back("strict sub-tops of top " + std::to_string(fam.top) + " exceed the packing bound");
    }
  }
  // proximity of each member to its family graph on an enlarged ball
  const Window win = cl.trusted_window();
  const double inv = 1 / f.params.delta;
  const double slack = 0.5 * cl.h * std::sqrt(double(cl.d));   // a node between samples
  std::vector<int> buf;
  for (const auto& fam : f.families) {
    if (fam.flagged) continue;
    const auto& g = f.graphs[fam.graph];
    for (int q : fam.members) {
      const DyadicCube& Q = lat.cubes[q];
      if (Q.diam < 5 * cl.h) continue;
      const Vec c = cl.points.col(Q.center_index);
      const double extent = win.radius - (c - win.center).norm();
      if (extent < Q.diam) continue;   // the ball leaves the sample
      const double factor = std::min(extent / Q.diam, inv);
      const double rad = factor * Q.diam;
      double worst = 0;
      buf.clear();
      idx.tree().radius_into(c, rad, false, buf);
      for (int i : buf) {
        const Vec z = cl.points.col(i);
        if (g.covers(g.coords(z))) worst = std::max(worst, g.offset(z));
      }
      // graph nodes inside the ball against the cloud
      const int total = static_cast<int>(g.heights.cols());
      const int K = g.cells, d = g.d();
      for (int node = 0; node < total; ++node) {
        Vec u(d);
        int rem = node;
        for (int a = 0; a < d; ++a) {
          u[a] = -g.half_extent + (rem % K + 0.5) * g.cell;
          rem /= K;
        }
        const Vec y = g.point(u);
        if ((y - c).norm() >= rad) continue;
        worst = std::max(worst, idx.tree().nearest(y).second - slack);
      }
      const double ratio = worst / Q.diam;
      if (ratio > rep.proximity_delta) {
        rep.proximity_delta = ratio;
        rep.proximity_worst = q;
      }
    }
  }
  return rep;
}

std::string corona_to_json(const CoronaForest& f) {
  using nlohmann::json;
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto mat = [&](const Mat& m) {
    json cols = json::array();
    for (int c = 0; c < m.cols(); ++c) cols.push_back(vec(m.col(c)));
    return cols;
  };
  json fams = json::array();
  for (const auto& s : f.families)
    fams.push_back({{"top", s.top},
                    {"members", s.members},
                    {"minimal", s.minimal},
                    {"graph", s.graph},
                    {"flagged", s.flagged},
                    {"max_far_fraction", s.max_far_fraction}});
  json graphs = json::array();
  for (const auto& g : f.graphs)
    graphs.push_back({{"base", vec(g.base)},
                      {"frame", mat(g.frame)},
                      {"normals", mat(g.normals)},
                      {"cells", g.cells},
                      {"cell", g.cell},
                      {"half_extent", g.half_extent},
                      {"heights", mat(g.heights)},
                      {"lipschitz", g.lipschitz}});
  json j{{"root", f.root},
         {"delta", f.params.delta},
         {"theta", f.params.theta},
         {"theta_prime", f.params.theta_prime},
         {"eta", f.eta},
         {"M", f.M},
         {"M_eff", f.M_eff},
         {"shared_from", f.shared_from},
         {"families", fams},
         {"graphs", graphs}};
  return j.dump(1);
}

CoronaForest corona_from_json(const std::string& text, const Lattice& lat) {
  using nlohmann::json;
  CoronaForest f;
  try {
    const auto j = json::parse(text);
    auto vec = [](const json& a) {
      const auto v = a.get<std::vector<double>>();
      return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    auto mat = [&](const json& cols, int rows) {
      Mat m(rows, static_cast<Eigen::Index>(cols.size()));
      for (size_t c = 0; c < cols.size(); ++c) {
        const Vec v = vec(cols[c]);
        if (v.size() != rows) throw ParseError("corona: ragged matrix column", 0);
        m.col(static_cast<Eigen::Index>(c)) = v;
      }
      return m;
    };
    f.root = j.at("root").get<int>();
    f.params.delta = j.at("delta").get<double>();
    f.params.theta = j.at("theta").get<double>();
    f.params.theta_prime = j.at("theta_prime").get<double>();
    f.eta = j.at("eta").get<double>();
    f.M = j.at("M").get<double>();
    f.M_eff = j.at("M_eff").get<double>();
    f.shared_from = j.at("shared_from").get<int>();
    for (const auto& s : j.at("families")) {
      CoronaFamily fam;
      fam.top = s.at("top").get<int>();
      fam.members = s.at("members").get<std::vector<int>>();
      fam.minimal = s.at("minimal").get<std::vector<int>>();
      fam.graph = s.at("graph").get<int>();
      fam.flagged = s.at("flagged").get<bool>();
      fam.max_far_fraction = s.at("max_far_fraction").get<double>();
      f.families.push_back(std::move(fam));
    }
    for (const auto& g : j.at("graphs")) {
      LipschitzGraphModel m;
      m.base = vec(g.at("base"));
      const int n = static_cast<int>(m.base.size());
      m.frame = mat(g.at("frame"), n);
      m.normals = mat(g.at("normals"), n);
      m.cells = g.at("cells").get<int>();
      m.cell = g.at("cell").get<double>();
      m.half_extent = g.at("half_extent").get<double>();
      m.heights = mat(g.at("heights"), n - static_cast<int>(m.frame.cols()));
      m.lipschitz = g.at("lipschitz").get<double>();
      f.graphs.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("corona: ") + e.what(), 0);
  }
  f.family_of.assign(lat.cubes.size(), -1);
  for (int s = 0; s < static_cast<int>(f.families.size()); ++s)
    for (int q : f.families[s].members) {
      if (q < 0 || q >= static_cast<int>(lat.cubes.size()))
        throw ParseError("corona: cube " + std::to_string(q) + " is not in the lattice", 0);
      f.family_of[q] = s;
    }
  return f;
}

std::string packing_to_csv(const CoronaReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "cube,top_mass,ratio\n";
  for (const auto& e : r.packing) os << e.cube << ',' << e.top_mass << ',' << e.ratio << '\n';
  return os.str();
}

}  // namespace rectiscope
