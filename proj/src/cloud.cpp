#include "rectiscope/cloud.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rectiscope/error.hpp"
#include "rectiscope/kdtree.hpp"
#include "rectiscope/parallel.hpp"
#include "rectiscope/rng.hpp"

namespace rectiscope {

using nlohmann::json;

void WeightedPointCloud::validate() const {
  if (n < 2) throw InputError("cloud: ambient dimension n must be >= 2");
  if (d < 1 || d >= n) throw InputError("cloud: intrinsic dimension must satisfy 1 <= d < n");
  if (!(h > 0)) throw InputError("cloud: resolution h must be positive");
  if (points.rows() != n) throw InputError("cloud: points have the wrong dimension");
  if (points.cols() < 1) throw InputError("cloud: needs at least one point");
  if (weights.size() != points.cols()) throw InputError("cloud: weights length differs from point count");
  for (int i = 0; i < weights.size(); ++i)
    if (!(weights[i] > 0)) throw InputError("cloud: weight " + std::to_string(i) + " is not positive");
  if (g) {
    if (g->size() != points.cols()) throw InputError("cloud: density length differs from point count");
    for (int i = 0; i < g->size(); ++i)
      if (!((*g)[i] > 0)) throw InputError("cloud: density " + std::to_string(i) + " is not positive");
  }
  if (normals) {
    if (d != n - 1) throw InputError("cloud: normals need codimension one");
    if (normals->rows() != n || normals->cols() != points.cols())
      throw InputError("cloud: normals have the wrong shape");
    for (int i = 0; i < normals->cols(); ++i)
      if (std::abs(normals->col(i).norm() - 1.0) > 1e-9)
        throw InputError("cloud: normal " + std::to_string(i) + " is not unit length");
  }
  if (window) {
    if (window->center.size() != n) throw InputError("cloud: window center has the wrong dimension");
    if (!(window->radius > 0)) throw InputError("cloud: window radius must be positive");
  }
}

Window WeightedPointCloud::trusted_window() const {
  if (window) return *window;
  Vec c = Vec::Zero(n);
  double W = 0;
  for (int i = 0; i < size(); ++i) {
    c += weights[i] * points.col(i);
    W += weights[i];
  }
  c /= W;
  return Window{c, 0.25 * cloud_diameter(*this)};
}

Vec WeightedPointCloud::measure(bool use_density) const {
  if (use_density && g) return weights.cwiseProduct(*g);
  return weights;
}

double cloud_diameter(const WeightedPointCloud& cloud) {
  const KdTree tree(cloud.points);
  double best = 0;
  // distance to the farthest bounding-box corner caps what a point can reach
  const Vec lo = cloud.points.rowwise().minCoeff(), hi = cloud.points.rowwise().maxCoeff();
  for (int i = 0; i < cloud.size(); ++i) {
    const Vec p = cloud.points.col(i);
    const double cap = (p - lo).cwiseAbs().cwiseMax((p - hi).cwiseAbs()).norm();
    if (cap <= best) continue;
    best = std::max(best, tree.farthest(p));
  }
  return best;
}

CloudFormat parse_format(const std::string& name) {
  if (name == "csv") return CloudFormat::Csv;
  if (name == "json") return CloudFormat::Json;
  if (name == "bin" || name == "binary") return CloudFormat::Binary;
  throw InputError("unknown cloud format '" + name + "'");
}

CloudFormat format_from_path(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot == std::string::npos) throw InputError("cannot infer cloud format from '" + path + "'");
  return parse_format(path.substr(dot + 1));
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r' && ch != ' ' && ch != '\t') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, long line, const std::string& what) {
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ParseError("malformed number '" + s + "' in " + what, line);
  return v;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

WeightedPointCloud load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  std::string line;
  long ln = 0;
  auto next = [&]() -> bool {
    while (std::getline(in, line)) {
      ++ln;
      if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next()) throw ParseError("missing header", 1);
  const auto keys = split_csv(line);
  if (keys != std::vector<std::string>{"n", "d", "h"}) throw ParseError("header must be 'n,d,h'", ln);
  if (!next()) throw ParseError("missing header values", ln + 1);
  const auto vals = split_csv(line);
  if (vals.size() != 3) throw ParseError("header values must be three numbers", ln);
  WeightedPointCloud c;
  const double nd = parse_double(vals[0], ln, "n"), dd = parse_double(vals[1], ln, "d");
  c.n = static_cast<int>(nd);
  c.d = static_cast<int>(dd);
  c.h = parse_double(vals[2], ln, "h");
  if (c.n != nd || c.d != dd || c.n < 2 || c.d < 1 || c.d >= c.n) throw ParseError("bad n or d", ln);
  if (!(c.h > 0)) throw ParseError("h must be positive", ln);
  if (!next()) throw ParseError("missing column header", ln + 1);
  const auto cols = split_csv(line);
  auto find = [&](const std::string& name) -> int {
    auto it = std::find(cols.begin(), cols.end(), name);
    return it == cols.end() ? -1 : static_cast<int>(it - cols.begin());
  };
  std::vector<int> xi(c.n), ni(c.n);
  for (int k = 0; k < c.n; ++k) {
    xi[k] = find("x" + std::to_string(k + 1));
    if (xi[k] < 0) throw ParseError("missing column 'x" + std::to_string(k + 1) + "'", ln);
  }
  const int wi = find("w");
  if (wi < 0) throw ParseError("missing column 'w'", ln);
  const int gi = find("g");
  bool has_n = find("nx1") >= 0;
  for (int k = 0; k < c.n; ++k) {
    ni[k] = find("nx" + std::to_string(k + 1));
    if (has_n && ni[k] < 0) throw ParseError("missing column 'nx" + std::to_string(k + 1) + "'", ln);
  }
  std::vector<double> P, W, G, N;
  std::vector<long> row_line;
  while (next()) {
    const auto f = split_csv(line);
    if (f.size() != cols.size())
      throw ParseError("row has " + std::to_string(f.size()) + " fields, expected " + std::to_string(cols.size()), ln);
    for (int k = 0; k < c.n; ++k) P.push_back(parse_double(f[xi[k]], ln, "x" + std::to_string(k + 1)));
    const double w = parse_double(f[wi], ln, "w");
    if (!(w > 0)) throw ParseError("nonpositive weight", ln);
    W.push_back(w);
    if (gi >= 0) {
      const double g = parse_double(f[gi], ln, "g");
      if (!(g > 0)) throw ParseError("nonpositive density", ln);
      G.push_back(g);
    }
    if (has_n)
      for (int k = 0; k < c.n; ++k) N.push_back(parse_double(f[ni[k]], ln, "nx" + std::to_string(k + 1)));
    row_line.push_back(ln);
  }
  const int m = static_cast<int>(W.size());
  if (m == 0) throw ParseError("no data rows", ln);
  c.points = Eigen::Map<Mat>(P.data(), c.n, m);
  c.weights = Eigen::Map<Vec>(W.data(), m);
  if (gi >= 0) c.g = Vec(Eigen::Map<Vec>(G.data(), m));
  if (has_n) {
    c.normals = Mat(Eigen::Map<Mat>(N.data(), c.n, m));
    for (int i = 0; i < m; ++i)
      if (std::abs(c.normals->col(i).norm() - 1.0) > 1e-9) throw ParseError("normal is not unit length", row_line[i]);
  }
  try {
    c.validate();
  } catch (const InputError& e) {
    throw ParseError(e.what(), 0);
  }
  return c;
}

void save_csv(const WeightedPointCloud& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << "n,d,h\n" << c.n << ',' << c.d << ',' << fmt_double(c.h) << '\n';
  for (int k = 0; k < c.n; ++k) out << (k ? "," : "") << 'x' << k + 1;
  out << ",w";
  if (c.g) out << ",g";
  if (c.normals)
    for (int k = 0; k < c.n; ++k) out << ",nx" << k + 1;
  out << '\n';
  for (int i = 0; i < c.size(); ++i) {
    for (int k = 0; k < c.n; ++k) out << (k ? "," : "") << fmt_double(c.points(k, i));
    out << ',' << fmt_double(c.weights[i]);
    if (c.g) out << ',' << fmt_double((*c.g)[i]);
    if (c.normals)
      for (int k = 0; k < c.n; ++k) out << ',' << fmt_double((*c.normals)(k, i));
    out << '\n';
  }
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Mat& m) {
  json a = json::array();
  for (int i = 0; i < m.cols(); ++i) a.push_back(vec_json(m.col(i)));
  return a;
}

WeightedPointCloud load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    // byte offset is the best position nlohmann gives; count lines up to it
    std::ifstream again(path);
    std::string text((std::istreambuf_iterator<char>(again)), std::istreambuf_iterator<char>());
    const long line = 1 + std::count(text.begin(), text.begin() + std::min<size_t>(e.byte, text.size()), '\n');
    throw ParseError(e.what(), line);
  }
  WeightedPointCloud c;
  try {
    for (const char* k : {"n", "d", "h", "points", "weights"})
      if (!j.contains(k)) throw ParseError(std::string("missing field '") + k + "'", 0);
    c.n = j.at("n").get<int>();
    c.d = j.at("d").get<int>();
    c.h = j.at("h").get<double>();
    const auto& pts = j.at("points");
    const int m = static_cast<int>(pts.size());
    c.points.resize(c.n, m);
    for (int i = 0; i < m; ++i) {
      if (static_cast<int>(pts[i].size()) != c.n) throw ParseError("point " + std::to_string(i) + " has wrong length", 0);
      for (int k = 0; k < c.n; ++k) c.points(k, i) = pts[i][k].get<double>();
    }
    const auto w = j.at("weights").get<std::vector<double>>();
    c.weights = Eigen::Map<const Vec>(w.data(), static_cast<int>(w.size()));
    if (j.contains("g")) {
      const auto g = j.at("g").get<std::vector<double>>();
      c.g = Vec(Eigen::Map<const Vec>(g.data(), static_cast<int>(g.size())));
    }
    if (j.contains("normals")) {
      const auto& nr = j.at("normals");
      Mat N(c.n, nr.size());
      for (size_t i = 0; i < nr.size(); ++i)
        for (int k = 0; k < c.n; ++k) N(k, i) = nr[i][k].get<double>();
      c.normals = N;
    }
    if (j.contains("window")) {
      const auto ctr = j.at("window").at("center").get<std::vector<double>>();
      c.window = Window{Eigen::Map<const Vec>(ctr.data(), static_cast<int>(ctr.size())),
                        j.at("window").at("radius").get<double>()};
    }
  } catch (const json::exception& e) {
    throw ParseError(e.what(), 0);
  }
  try {
    c.validate();
  } catch (const InputError& e) {
    throw ParseError(e.what(), 0);
  }
  return c;
}

void save_json(const WeightedPointCloud& c, const std::string& path) {
  json j;
  j["n"] = c.n;
  j["d"] = c.d;
  j["h"] = c.h;
  j["points"] = mat_json(c.points);
  j["weights"] = vec_json(c.weights);
  if (c.g) j["g"] = vec_json(*c.g);
  if (c.normals) j["normals"] = mat_json(*c.normals);
  if (c.window) j["window"] = {{"center", vec_json(c.window->center)}, {"radius", c.window->radius}};
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << j.dump() << '\n';
}

// little-endian helpers
template <class T>
void put(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw ParseError(std::string("truncated file reading ") + what, 0);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

void put_array(std::ostream& out, const double* p, std::uint64_t count) {
  put<std::uint64_t>(out, count);
  for (std::uint64_t i = 0; i < count; ++i) put<double>(out, p[i]);
}

std::vector<double> get_array(std::istream& in, std::uint64_t expect, const char* what) {
  const auto count = get<std::uint64_t>(in, what);
  if (count != expect) throw ParseError(std::string("length prefix mismatch for ") + what, 0);
  std::vector<double> v(count);
  for (auto& x : v) x = get<double>(in, what);
  return v;
}

constexpr char kMagic[8] = {'R', 'S', 'C', 'L', 'O', 'U', 'D', '1'};

void save_binary(const WeightedPointCloud& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(kMagic, 8);
  put<std::uint32_t>(out, c.n);
  put<std::uint32_t>(out, c.d);
  put<double>(out, c.h);
  const std::uint32_t flags = (c.g ? 1u : 0u) | (c.normals ? 2u : 0u) | (c.window ? 4u : 0u);
  put<std::uint32_t>(out, flags);
  const std::uint64_t m = c.size();
  put<std::uint64_t>(out, m);
  put_array(out, c.points.data(), m * c.n);
  put_array(out, c.weights.data(), m);
  if (c.g) put_array(out, c.g->data(), m);
  if (c.normals) put_array(out, c.normals->data(), m * c.n);
  if (c.window) {
    Vec wv(c.n + 1);
    wv.head(c.n) = c.window->center;
    wv[c.n] = c.window->radius;
    put_array(out, wv.data(), c.n + 1);
  }
}

WeightedPointCloud load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ParseError("bad magic, not an RSCLOUD1 file", 0);
  WeightedPointCloud c;
  c.n = static_cast<int>(get<std::uint32_t>(in, "n"));
  c.d = static_cast<int>(get<std::uint32_t>(in, "d"));
  c.h = get<double>(in, "h");
  const auto flags = get<std::uint32_t>(in, "flags");
  const auto m = get<std::uint64_t>(in, "count");
  if (c.n < 2 || c.n > 64) throw ParseError("implausible ambient dimension", 0);
  const auto P = get_array(in, m * c.n, "points");
  const auto W = get_array(in, m, "weights");
  c.points = Eigen::Map<const Mat>(P.data(), c.n, static_cast<int>(m));
  c.weights = Eigen::Map<const Vec>(W.data(), static_cast<int>(m));
  if (flags & 1u) {
    const auto G = get_array(in, m, "g");
    c.g = Vec(Eigen::Map<const Vec>(G.data(), static_cast<int>(m)));
  }
  if (flags & 2u) {
    const auto N = get_array(in, m * c.n, "normals");
    c.normals = Mat(Eigen::Map<const Mat>(N.data(), c.n, static_cast<int>(m)));
  }
  if (flags & 4u) {
    const auto wv = get_array(in, c.n + 1, "window");
    c.window = Window{Eigen::Map<const Vec>(wv.data(), c.n), wv[c.n]};
  }
  try {
    c.validate();
  } catch (const InputError& e) {
    throw ParseError(e.what(), 0);
  }
  return c;
}

}  // namespace

WeightedPointCloud load_cloud(const std::string& path, CloudFormat format) {
  switch (format) {
    case CloudFormat::Csv: return load_csv(path);
    case CloudFormat::Json: return load_json(path);
    case CloudFormat::Binary: return load_binary(path);
  }
  throw InputError("unknown format");
}

void save_cloud(const WeightedPointCloud& cloud, const std::string& path, CloudFormat format) {
  cloud.validate();
  switch (format) {
    case CloudFormat::Csv: return save_csv(cloud, path);
    case CloudFormat::Json: return save_json(cloud, path);
    case CloudFormat::Binary: return save_binary(cloud, path);
  }
}

WeightedPointCloud load_cloud(const std::string& path) { return load_cloud(path, format_from_path(path)); }
void save_cloud(const WeightedPointCloud& cloud, const std::string& path) {
  save_cloud(cloud, path, format_from_path(path));
}

AhlforsProfile ahlfors_profile(const WeightedPointCloud& cloud, const ProfileOptions& opt) {
  if (!(opt.rho_min >= 5)) throw InputError("ahlfors_profile: rho_min must be >= 5");
  if (opt.n_radii < 1 || (opt.centers.empty() && opt.n_centers < 1))
    throw InputError("ahlfors_profile: need at least one center and one radius");
  const double diam = cloud_diameter(cloud);
  double r_lo = opt.rho_min * cloud.h;
  double r_hi = opt.r_max > 0 ? std::min(opt.r_max, diam) : diam;
  if (opt.window) r_hi = std::min(r_hi, opt.window->radius);
  if (!(r_lo <= r_hi)) throw InputError("ahlfors_profile: empty radius range");

  std::vector<double> radii(opt.n_radii);
  for (int k = 0; k < opt.n_radii; ++k)
    radii[k] = opt.n_radii == 1 ? r_lo : r_lo * std::pow(r_hi / r_lo, double(k) / (opt.n_radii - 1));

  std::vector<int> centers = opt.centers;
  if (centers.empty()) {
    std::vector<int> cand;
    for (int i = 0; i < cloud.size(); ++i)
      if (!opt.window || opt.window->contains_ball(cloud.points.col(i), r_lo)) cand.push_back(i);
    if (cand.empty()) throw InputError("ahlfors_profile: no center admits a trusted ball");
    Rng rng(opt.seed);
    for (int k : rng.choose(static_cast<int>(cand.size()), opt.n_centers)) centers.push_back(cand[k]);
  }

  const KdTree tree(cloud.points);
  std::vector<std::vector<AhlforsSample>> per(centers.size());
  parallel_for(static_cast<int>(centers.size()), opt.threads, [&](int c) {
    const Vec x = cloud.points.col(centers[c]);
    for (double r : radii) {
      if (opt.window && !opt.window->contains_ball(x, r)) continue;
      double mass = 0;
      for (int i : tree.radius(x, r)) mass += cloud.weights[i];
      per[c].push_back({centers[c], r, mass, mass / std::pow(r, cloud.d)});
    }
  });
  AhlforsProfile prof;
  prof.r_min = r_lo;
  prof.r_max = r_hi;
  double up = 0, low = 0;
  for (auto& v : per)
    for (auto& s : v) {
      prof.samples.push_back(s);
      up = std::max(up, s.ratio);
      low = std::max(low, s.mass > 0 ? 1.0 / s.ratio : std::numeric_limits<double>::infinity());
    }
  if (prof.samples.empty()) throw InputError("ahlfors_profile: no trusted ball in range");
  prof.C_upper_est = std::max(up, 1.0 / up);
  prof.C_lower_est = std::max(low, 1.0 / low);
  return prof;
}

}  // namespace rectiscope
