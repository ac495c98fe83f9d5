#include "rectiscope/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>

#include "rectiscope/error.hpp"
#include "rectiscope/kdtree.hpp"
#include "rectiscope/parallel.hpp"
#include "rectiscope/rng.hpp"

namespace rectiscope {

using nlohmann::json;

double Lattice::scale(int j) const { return std::ldexp(h, j); }

double Lattice::cube_constant(const DyadicCube& Q) const {
  const double s = scale(Q.j);
  const double sd = std::pow(s, d);
  double c = 1;
  c = std::max(c, Q.diam > 0 ? std::max(Q.diam / s, s / Q.diam) : HUGE_VAL);
  c = std::max(c, Q.mass > 0 ? std::max(Q.mass / sd, sd / Q.mass) : HUGE_VAL);
  return c;
}

std::vector<int> Lattice::descendants(int id, int j) const {
  std::vector<int> cur{id};
  while (!cur.empty() && cubes[cur.front()].j > j) {
    std::vector<int> next;
    for (int q : cur) next.insert(next.end(), cubes[q].children.begin(), cubes[q].children.end());
    cur.swap(next);
  }
  return cur;
}

double subset_diameter(const Mat& pts, const std::vector<int>& idx) {
  if (idx.size() < 2) return 0;
  const KdTree tree(pts, idx);
  Vec lo = pts.col(idx[0]), hi = lo;
  for (int i : idx) {
    lo = lo.cwiseMin(pts.col(i));
    hi = hi.cwiseMax(pts.col(i));
  }
  double best = 0;
  for (int i : idx) {
    const Vec p = pts.col(i);
    const double cap = (p - lo).cwiseAbs().cwiseMax((p - hi).cwiseAbs()).norm();
    if (cap <= best) continue;
    best = std::max(best, tree.farthest(p));
  }
  return best;
}

int max_generation(const WeightedPointCloud& cloud) {
  const double diam = cloud_diameter(cloud);
  if (!(diam > cloud.h)) return 0;
  return static_cast<int>(std::floor(std::log2(diam / cloud.h) + 1e-12));
}

namespace {

// radius of the guarded ball around a parent center, in units of its scale
constexpr double kCenterGuard = 0.25;

// Farthest-point order from start. cover[k] is the covering radius of the
// first k centers (cover[0] unused).
void farthest_point_order(const Mat& pts, int start, double stop_radius, std::vector<int>& order,
                          std::vector<double>& cover) {
  const int N = static_cast<int>(pts.cols());
  std::vector<double> mind(N);
  order.assign(1, start);
  cover.assign(1, HUGE_VAL);
  for (int i = 0; i < N; ++i) mind[i] = (pts.col(i) - pts.col(start)).norm();
  while (true) {
    int next = 0;
    for (int i = 1; i < N; ++i)
      if (mind[i] > mind[next]) next = i;
    cover.push_back(mind[next]);
    if (mind[next] <= stop_radius || static_cast<int>(order.size()) == N) break;
    order.push_back(next);
    const auto c = pts.col(next);
    for (int i = 0; i < N; ++i) {
      if (mind[i] == 0) continue;
      const double dd = (pts.col(i) - c).norm();
      if (dd < mind[i]) mind[i] = dd;
    }
  }
}

void finish_cube(DyadicCube& Q, const WeightedPointCloud& cloud, const Window& win) {
  std::sort(Q.members.begin(), Q.members.end());
  Q.mass = 0;
  for (int i : Q.members) Q.mass += cloud.weights[i];
  Q.diam = subset_diameter(cloud.points, Q.members);
  Q.interior = win.contains_ball(cloud.points.col(Q.center_index), Q.diam);
}

void finish_lattice(Lattice& lat, const WeightedPointCloud& cloud) {
  const Window win = cloud.trusted_window();
  for (auto& Q : lat.cubes) finish_cube(Q, cloud, win);
  lat.C_D_emp = lat.C_D_all = 1;
  bool any = false;
  for (const auto& Q : lat.cubes) {
    const double c = lat.cube_constant(Q);
    lat.C_D_all = std::max(lat.C_D_all, c);
    if (Q.interior) {
      lat.C_D_emp = std::max(lat.C_D_emp, c);
      any = true;
    }
  }
  if (!any) lat.C_D_emp = lat.C_D_all;
}

// Moves c_Q from the net point to the member farthest from E \ Q (capped at
// diam Q). The net point keeps the role when it is among the deepest.
void choose_centers(Lattice& lat, const WeightedPointCloud& cloud) {
  const KdTree all(cloud.points);
  const int N = cloud.size();
  std::vector<int> label(N);
  for (const auto& ids : lat.levels) {
    for (int id : ids)
      for (int i : lat.cubes[id].members) label[i] = id;
    for (int id : ids) {
      auto& Q = lat.cubes[id];
      Q.diam = subset_diameter(cloud.points, Q.members);
      const Vec c = cloud.points.col(Q.center_index);
      std::vector<int> out;
      for (int i : all.radius(c, 2 * Q.diam, true))
        if (label[i] != id) out.push_back(i);
      if (out.empty() || Q.diam == 0) continue;
      const KdTree ot(cloud.points, out);
      double best = std::min(ot.nearest(c).second, Q.diam);
      int arg = Q.center_index;
      for (int i : Q.members) {
        const double dep = std::min(ot.nearest(cloud.points.col(i)).second, Q.diam);
        if (dep > best) {
          best = dep;
          arg = i;
        }
      }
      Q.center_index = arg;
    }
  }
}

}  // namespace

Lattice build_lattice(const WeightedPointCloud& cloud, int j_min, int j_max, std::uint64_t seed) {
  cloud.validate();
  if (j_min < 2) throw InputError("lattice: 2^j_min must be at least 3h, so j_min >= 2");
  if (j_max < j_min) throw InputError("lattice: j_max below j_min");
  const int top = max_generation(cloud);
  if (j_max > top)
    throw InputError("lattice: cloud too small for j_max=" + std::to_string(j_max) + " (at most " +
                     std::to_string(top) + ")");
  const int N = cloud.size();
  Lattice lat;
  lat.j_min = j_min;
  lat.j_max = j_max;
  lat.h = cloud.h;
  lat.d = cloud.d;
  lat.seed = seed;

  Rng rng(seed);
  const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(N)));
  std::vector<int> order;
  std::vector<double> cover;
  farthest_point_order(cloud.points, start, lat.scale(j_min), order, cover);

  // net size per level: fewest prefix centers covering within 2^j h
  const int L = j_max - j_min + 1;
  std::vector<int> net_size(L);
  for (int l = 0; l < L; ++l) {
    const double s = lat.scale(j_min + l);
    int k = 1;
    while (k < static_cast<int>(order.size()) && cover[k] > s) ++k;
    net_size[l] = k;
  }

  lat.levels.assign(L, {});
  // finest level: nearest center
  std::vector<DyadicCube> fine(net_size[0]);
  {
    std::vector<int> centers(order.begin(), order.begin() + net_size[0]);
    const KdTree tree(cloud.points, centers);
    std::map<int, int> rank;
    for (int k = 0; k < net_size[0]; ++k) rank[order[k]] = k;
    for (int i = 0; i < N; ++i) {
      const int c = tree.nearest(cloud.points.col(i)).first;
      fine[rank[c]].members.push_back(i);
    }
    for (int k = 0; k < net_size[0]; ++k) {
      fine[k].j = j_min;
      fine[k].center_index = order[k];
    }
  }
  std::vector<std::vector<DyadicCube>> per_level(L);
  per_level[0] = std::move(fine);
  // parent_rank[l][k]: rank at level l+1 of the parent of cube k at level l
  std::vector<std::vector<int>> parent_rank(L);
  for (int l = 1; l < L; ++l) {
    std::vector<int> centers(order.begin(), order.begin() + net_size[l]);
    const KdTree tree(cloud.points, centers);
    std::map<int, int> rank;
    for (int k = 0; k < net_size[l]; ++k) rank[order[k]] = k;
    std::vector<DyadicCube> cur(net_size[l]);
    for (int k = 0; k < net_size[l]; ++k) {
      cur[k].j = j_min + l;
      cur[k].center_index = order[k];
    }
    auto& below = per_level[l - 1];
    // points close to a parent center pull their whole child cube into that
    // parent, so balls around centers are not split by drift from below
    const double guard = kCenterGuard * lat.scale(j_min + l);
    parent_rank[l - 1].resize(below.size());
    for (size_t k = 0; k < below.size(); ++k) {
      int pr = -1;
      double best = HUGE_VAL;
      for (int i : below[k].members) {
        const auto [c, dist] = tree.nearest(cloud.points.col(i));
        if (dist < guard && dist < best) {
          best = dist;
          pr = rank[c];
        }
      }
      if (pr < 0) pr = rank[tree.nearest(cloud.points.col(below[k].center_index)).first];
      parent_rank[l - 1][k] = pr;
      cur[pr].members.insert(cur[pr].members.end(), below[k].members.begin(), below[k].members.end());
    }
    per_level[l] = std::move(cur);
  }

  // ids from the top level down, by center rank within a level
  std::vector<std::vector<int>> ids(L);
  int next_id = 0;
  for (int l = L - 1; l >= 0; --l) {
    ids[l].resize(per_level[l].size());
    for (size_t k = 0; k < per_level[l].size(); ++k) ids[l][k] = next_id++;
  }
  lat.cubes.resize(next_id);
  for (int l = L - 1; l >= 0; --l) {
    for (size_t k = 0; k < per_level[l].size(); ++k) {
      DyadicCube Q = std::move(per_level[l][k]);
      Q.id = ids[l][k];
      if (l + 1 < L) Q.parent = ids[l + 1][parent_rank[l][k]];
      lat.levels[l].push_back(Q.id);
      lat.cubes[Q.id] = std::move(Q);
    }
  }
  for (int l = 0; l + 1 < L; ++l)
    for (int id : lat.levels[l]) lat.cubes[lat.cubes[id].parent].children.push_back(id);
  choose_centers(lat, cloud);
  finish_lattice(lat, cloud);
  return lat;
}

LatticeReport verify_lattice(const Lattice& lat, const WeightedPointCloud& cloud, const std::vector<double>& tau_list,
                             int threads) {
  LatticeReport rep;
  const int N = cloud.size();
  const int L = static_cast<int>(lat.levels.size());
  auto fail = [&](bool& flag, const std::string& msg) {
    flag = false;
    if (rep.problems.size() < 50) rep.problems.push_back(msg);
  };
  // per level labels
  std::vector<std::vector<int>> label(L, std::vector<int>(N, -1));
  for (int l = 0; l < L; ++l) {
    for (int id : lat.levels[l]) {
      const auto& Q = lat.cubes[id];
      if (Q.j != lat.j_min + l) fail(rep.partition_ok, "cube " + std::to_string(id) + " listed at the wrong level");
      for (int i : Q.members) {
        if (i < 0 || i >= N) {
          fail(rep.partition_ok, "cube " + std::to_string(id) + " has out of range member " + std::to_string(i));
          continue;
        }
        if (label[l][i] >= 0)
          fail(rep.partition_ok, "point " + std::to_string(i) + " in cubes " + std::to_string(label[l][i]) + " and " +
                                     std::to_string(id));
        label[l][i] = id;
      }
    }
    for (int i = 0; i < N; ++i)
      if (label[l][i] < 0)
        fail(rep.partition_ok, "point " + std::to_string(i) + " missing at level " + std::to_string(lat.j_min + l));
  }
  for (const auto& Q : lat.cubes) {
    if (Q.children.empty()) continue;
    std::vector<int> u;
    double m = 0;
    for (int c : Q.children) {
      const auto& C = lat.cubes[c];
      if (C.parent != Q.id) fail(rep.nesting_ok, "cube " + std::to_string(c) + " does not point back to its parent");
      u.insert(u.end(), C.members.begin(), C.members.end());
      m += C.mass;
    }
    std::sort(u.begin(), u.end());
    if (u != Q.members) fail(rep.nesting_ok, "children of cube " + std::to_string(Q.id) + " do not cover it exactly");
    if (std::abs(m - Q.mass) > 1e-12 * std::max(1.0, Q.mass))
      fail(rep.additivity_ok, "child masses of cube " + std::to_string(Q.id) + " do not add up");
  }

  rep.C_D_emp = rep.C_D_all = 1;
  rep.diam_ratio_min = rep.mass_ratio_min = HUGE_VAL;
  rep.diam_ratio_max = rep.mass_ratio_max = 0;
  for (const auto& Q : lat.cubes) {
    const double s = lat.scale(Q.j);
    rep.diam_ratio_min = std::min(rep.diam_ratio_min, Q.diam / s);
    rep.diam_ratio_max = std::max(rep.diam_ratio_max, Q.diam / s);
    rep.mass_ratio_min = std::min(rep.mass_ratio_min, Q.mass / std::pow(s, lat.d));
    rep.mass_ratio_max = std::max(rep.mass_ratio_max, Q.mass / std::pow(s, lat.d));
    const double c = lat.cube_constant(Q);
    rep.C_D_all = std::max(rep.C_D_all, c);
    if (Q.interior) {
      rep.C_D_emp = std::max(rep.C_D_emp, c);
      ++rep.interior_cubes;
    }
  }
  if (rep.interior_cubes == 0) rep.C_D_emp = rep.C_D_all;
  const double CD = rep.C_D_emp;
  const KdTree tree(cloud.points);

  // label lookup by cube id
  std::vector<int> level_of(lat.cubes.size());
  for (int l = 0; l < L; ++l)
    for (int id : lat.levels[l]) level_of[id] = l;

  const int C = static_cast<int>(lat.cubes.size());
  std::vector<char> center_ok(C, 1), center_ok_all(C, 1), incl_ok(C, 1);
  const bool all_count = rep.interior_cubes == 0;
  std::vector<std::vector<double>> strip(tau_list.size(), std::vector<double>(C, 0));
  parallel_for(C, threads, [&](int id) {
    const auto& Q = lat.cubes[id];
    const auto& lab = label[level_of[id]];
    const Vec c = cloud.points.col(Q.center_index);
    std::vector<int> buf;
    if (Q.interior || all_count) {
      tree.radius_into(c, Q.diam / CD, false, buf);
      for (int i : buf)
        if (lab[i] != id) {
          center_ok[id] = 0;
          break;
        }
    }
    buf.clear();
    tree.radius_into(c, Q.diam / rep.C_D_all, false, buf);
    for (int i : buf)
      if (lab[i] != id) {
        center_ok_all[id] = 0;
        break;
      }
    // Q inside the closed ball B(c_Q, diam Q)
    for (int i : Q.members)
      if ((cloud.points.col(i) - c).norm() > Q.diam * (1 + 1e-12)) {
        incl_ok[id] = 0;
        break;
      }
    const double s = lat.scale(Q.j);
    for (size_t t = 0; t < tau_list.size(); ++t) {
      double mass = 0;
      for (int i : Q.members) {
        buf.clear();
        tree.radius_into(cloud.points.col(i), tau_list[t] * s, true, buf);
        for (int k : buf)
          if (lab[k] != id) {
            mass += cloud.weights[i];
            break;
          }
      }
      strip[t][id] = mass / (std::pow(tau_list[t], 1.0 / CD) * std::pow(s, lat.d));
    }
  });
  for (int id = 0; id < C; ++id) {
    if (!center_ok[id]) ++rep.center_failures;
    if (!center_ok_all[id]) ++rep.center_failures_all;
    if (!incl_ok[id]) fail(rep.ball_inclusion_ok, "cube " + std::to_string(id) + " leaves B(c_Q, diam Q)");
  }
  const int checked = all_count ? C : rep.interior_cubes;
  rep.center_fraction = checked ? 1.0 - double(rep.center_failures) / checked : 1.0;
  rep.center_fraction_all = C ? 1.0 - double(rep.center_failures_all) / C : 1.0;
  for (size_t t = 0; t < tau_list.size(); ++t) {
    BoundaryStat b;
    b.tau = tau_list[t];
    for (int id = 0; id < C; ++id)
      if (strip[t][id] > b.value || b.worst_cube < 0) {
        b.value = strip[t][id];
        b.worst_cube = id;
      }
    rep.boundary.push_back(b);
  }
  return rep;
}

std::vector<int> enlarged_cube(const Lattice& lat, const WeightedPointCloud& cloud, const KdTree& tree, int cube,
                               double lambda) {
  if (!(lambda >= 1)) throw InputError("enlarged_cube: lambda must be >= 1");
  const auto& Q = lat.cubes.at(cube);
  if (lambda == 1) return Q.members;
  const double t = (lambda - 1) * Q.diam;
  const Vec c = cloud.points.col(Q.center_index);
  const KdTree qt(cloud.points, Q.members);
  std::vector<int> cand = tree.radius(c, Q.diam + t, true);
  std::vector<int> out;
  for (int i : cand)
    if (qt.nearest(cloud.points.col(i)).second <= t) out.push_back(i);
  // members always qualify; merge in case of roundoff at the outer radius
  std::vector<int> merged;
  std::set_union(out.begin(), out.end(), Q.members.begin(), Q.members.end(), std::back_inserter(merged));
  return merged;
}

std::vector<int> enlarged_cube(const Lattice& lat, const WeightedPointCloud& cloud, int cube, double lambda) {
  const KdTree tree(cloud.points);
  return enlarged_cube(lat, cloud, tree, cube, lambda);
}

std::string lattice_to_json(const Lattice& lat) {
  json j;
  j["j_min"] = lat.j_min;
  j["j_max"] = lat.j_max;
  j["h"] = lat.h;
  j["d"] = lat.d;
  j["seed"] = lat.seed;
  j["C_D_emp"] = lat.C_D_emp;
  j["C_D_all"] = lat.C_D_all;
  json levels = json::array();
  for (size_t l = 0; l < lat.levels.size(); ++l) {
    json cubes = json::array();
    for (int id : lat.levels[l]) {
      const auto& Q = lat.cubes[id];
      json runs = json::array();
      for (size_t a = 0; a < Q.members.size();) {
        size_t b = a + 1;
        while (b < Q.members.size() && Q.members[b] == Q.members[b - 1] + 1) ++b;
        runs.push_back({Q.members[a], static_cast<int>(b - a)});
        a = b;
      }
      cubes.push_back({{"id", Q.id},
                       {"j", Q.j},
                       {"center_index", Q.center_index},
                       {"parent", Q.parent < 0 ? json(nullptr) : json(Q.parent)},
                       {"children", Q.children},
                       {"mass", Q.mass},
                       {"diam", Q.diam},
                       {"members", runs}});
    }
    levels.push_back({{"j", lat.j_min + static_cast<int>(l)}, {"cubes", cubes}});
  }
  j["levels"] = levels;
  return j.dump(1);
}

Lattice lattice_from_json(const std::string& text, const WeightedPointCloud& cloud) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("lattice json: ") + e.what(), 0);
  }
  Lattice lat;
  try {
    lat.j_min = j.at("j_min").get<int>();
    lat.j_max = j.at("j_max").get<int>();
    lat.h = j.at("h").get<double>();
    lat.d = j.at("d").get<int>();
    lat.seed = j.at("seed").get<std::uint64_t>();
    const auto& levels = j.at("levels");
    int count = 0;
    for (const auto& lv : levels) count += static_cast<int>(lv.at("cubes").size());
    lat.cubes.resize(count);
    for (const auto& lv : levels) {
      std::vector<int> ids;
      for (const auto& c : lv.at("cubes")) {
        const int id = c.at("id").get<int>();
        if (id < 0 || id >= count) throw ParseError("lattice json: cube id out of range", 0);
        DyadicCube Q;
        Q.id = id;
        Q.j = c.at("j").get<int>();
        Q.center_index = c.at("center_index").get<int>();
        Q.parent = c.at("parent").is_null() ? -1 : c.at("parent").get<int>();
        Q.children = c.at("children").get<std::vector<int>>();
        for (const auto& run : c.at("members")) {
          const int a = run.at(0).get<int>(), len = run.at(1).get<int>();
          for (int t = 0; t < len; ++t) Q.members.push_back(a + t);
        }
        for (int i : Q.members)
          if (i < 0 || i >= cloud.size()) throw ParseError("lattice json: member index outside the cloud", 0);
        ids.push_back(id);
        lat.cubes[id] = std::move(Q);
      }
      lat.levels.push_back(ids);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("lattice json: ") + e.what(), 0);
  }
  if (static_cast<int>(lat.levels.size()) != lat.j_max - lat.j_min + 1)
    throw ParseError("lattice json: level count does not match j range", 0);
  finish_lattice(lat, cloud);
  return lat;
}

}  // namespace rectiscope
