#include "rectiscope/carleson.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rectiscope/error.hpp"

namespace rectiscope {

CoefficientKind parse_coefficient_kind(const std::string& s) {
  if (s == "alpha") return CoefficientKind::Alpha;
  if (s == "bbeta1") return CoefficientKind::Bbeta1;
  if (s == "bbetainf") return CoefficientKind::Bbetainf;
  if (s == "osc") return CoefficientKind::Osc;
  if (s == "gamma") return CoefficientKind::Gamma;
  throw InputError("unknown coefficient kind '" + s + "' (alpha, bbeta1, bbetainf, osc, gamma)");
}

std::string to_string(CoefficientKind k) {
  switch (k) {
    case CoefficientKind::Alpha: return "alpha";
    case CoefficientKind::Bbeta1: return "bbeta1";
    case CoefficientKind::Bbetainf: return "bbetainf";
    case CoefficientKind::Osc: return "osc";
    case CoefficientKind::Gamma: return "gamma";
  }
  return "alpha";
}

double coefficient_value(const CubeCoefficients& row, CoefficientKind k) {
  switch (k) {
    case CoefficientKind::Alpha: return row.alpha;
    case CoefficientKind::Bbeta1: return row.bbeta1;
    case CoefficientKind::Bbetainf: return row.bbetainf;
    case CoefficientKind::Osc: return row.osc;
    case CoefficientKind::Gamma: return row.gamma;
  }
  return kNaN;
}

namespace {

struct Acc {
  double sum = 0;
  int counted = 0, excluded = 0;
};

// Subtree sums for every cube, children before parents (ids grow downward).
std::vector<Acc> subtree_sums(const Lattice& lat, const std::vector<CubeCoefficients>& coeffs, CoefficientKind kind) {
  if (coeffs.size() != lat.cubes.size()) throw InputError("coefficient table does not match the lattice");
  std::vector<Acc> acc(lat.cubes.size());
  for (int id = static_cast<int>(lat.cubes.size()) - 1; id >= 0; --id) {
    const auto& Q = lat.cubes[id];
    const double v = coefficient_value(coeffs[id], kind);
    Acc& a = acc[id];
    if (std::isnan(v)) {
      ++a.excluded;
    } else {
      a.sum += v * v * Q.mass;
      ++a.counted;
    }
    for (int c : Q.children) {
      a.sum += acc[c].sum;
      a.counted += acc[c].counted;
      a.excluded += acc[c].excluded;
    }
  }
  return acc;
}

}  // namespace

double carleson_sum(const Lattice& lat, const std::vector<CubeCoefficients>& coeffs, int root, CoefficientKind kind,
                    int* excluded) {
  if (root < 0 || root >= static_cast<int>(lat.cubes.size())) throw InputError("carleson_sum: no such cube");
  Acc a;
  std::vector<int> stack{root};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const double v = coefficient_value(coeffs.at(id), kind);
    if (std::isnan(v)) {
      ++a.excluded;
    } else {
      a.sum += v * v * lat.cubes[id].mass;
      ++a.counted;
    }
    for (int c : lat.cubes[id].children) stack.push_back(c);
  }
  if (excluded) *excluded = a.excluded;
  if (a.counted == 0) throw InputError("carleson_sum: no reliable cube under root " + std::to_string(root));
  return a.sum / lat.cubes[root].mass;
}

CarlesonReport carleson_sup(const Lattice& lat, const std::vector<CubeCoefficients>& coeffs,
                            const WeightedPointCloud& cloud, CoefficientKind kind, int min_generation,
                            double interior_factor) {
  const auto acc = subtree_sums(lat, coeffs, kind);
  const Window win = cloud.trusted_window();
  CarlesonReport rep;
  rep.kind = kind;
  rep.min_generation = min_generation;
  rep.interior_factor = interior_factor;
  rep.j_lo = lat.j_max;
  rep.j_hi = lat.j_min;
  for (const auto& Q : lat.cubes) {
    if (!std::isnan(coefficient_value(coeffs[Q.id], kind))) {
      rep.j_lo = std::min(rep.j_lo, Q.j);
      rep.j_hi = std::max(rep.j_hi, Q.j);
    }
    if (Q.j < min_generation) continue;
    if (!win.contains_ball(cloud.points.col(Q.center_index), interior_factor * Q.diam)) continue;
    const Acc& a = acc[Q.id];
    if (a.counted == 0) continue;
    CarlesonRow row;
    row.root = Q.id;
    row.j = Q.j;
    row.sum = a.sum;
    row.mass = Q.mass;
    row.normalized = a.sum / Q.mass;
    row.counted = a.counted;
    row.excluded = a.excluded;
    rep.rows.push_back(row);
    if (rep.argmax < 0 || row.normalized > rep.sup) {
      rep.sup = row.normalized;
      rep.argmax = Q.id;
    }
  }
  return rep;
}

std::string carleson_to_csv(const CarlesonReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "root,j,sum,mass,normalized,counted,excluded\n";
  for (const auto& w : r.rows)
    os << w.root << ',' << w.j << ',' << w.sum << ',' << w.mass << ',' << w.normalized << ',' << w.counted << ','
       << w.excluded << '\n';
  return os.str();
}

std::string carleson_to_json(const CarlesonReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& w : r.rows)
    rows.push_back({{"root", w.root},
                    {"j", w.j},
                    {"sum", w.sum},
                    {"mass", w.mass},
                    {"normalized", w.normalized},
                    {"counted", w.counted},
                    {"excluded", w.excluded}});
  nlohmann::json j{{"kind", to_string(r.kind)},
                   {"sup", r.sup},
                   {"argmax", r.argmax},
                   {"j_lo", r.j_lo},
                   {"j_hi", r.j_hi},
                   {"min_generation", r.min_generation},
                   {"interior_factor", r.interior_factor},
                   {"roots", rows}};
  return j.dump(1);
}

}  // namespace rectiscope
