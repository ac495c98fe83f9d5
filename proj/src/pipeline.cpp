#include "rectiscope/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "rectiscope/error.hpp"
#include "rectiscope/synth.hpp"

#ifndef RECTISCOPE_VERSION
#define RECTISCOPE_VERSION "unknown"
#endif

namespace rectiscope {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError(field, msg);
}

// One JSON object of the config tree. Keys read through it are remembered so
// that leftovers can be reported as unknown.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError(path_, "must be an object");
  }
  std::string field(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return j_ && j_->contains(k) && !j_->at(k).is_null(); }
  const json* raw(const std::string& k) {
    seen_.insert(k);
    return has(k) ? &j_->at(k) : nullptr;
  }
  Section sub(const std::string& k) { return Section(raw(k), field(k)); }

  double num(const std::string& k, double def) {
    const json* v = raw(k);
    if (!v) return def;
    if (!v->is_number()) throw ConfigError(field(k), "must be a number");
    return v->get<double>();
  }
  long long integer(const std::string& k, long long def) {
    const json* v = raw(k);
    if (!v) return def;
    if (!v->is_number_integer()) throw ConfigError(field(k), "must be an integer");
    return v->get<long long>();
  }
  std::uint64_t seed(const std::string& k, std::uint64_t def) {
    const json* v = raw(k);
    if (!v) return def;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
      throw ConfigError(field(k), "must be a non-negative integer");
    return v->get<std::uint64_t>();
  }
  bool flag(const std::string& k, bool def) {
    const json* v = raw(k);
    if (!v) return def;
    if (!v->is_boolean()) throw ConfigError(field(k), "must be true or false");
    return v->get<bool>();
  }
  std::string str(const std::string& k, const std::string& def) {
    const json* v = raw(k);
    if (!v) return def;
    if (!v->is_string()) throw ConfigError(field(k), "must be a string");
    return v->get<std::string>();
  }
  std::vector<std::string> strings(const std::string& k, const std::vector<std::string>& def) {
    const json* v = raw(k);
    if (!v) return def;
    if (!v->is_array()) throw ConfigError(field(k), "must be a list of strings");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) throw ConfigError(field(k), "must be a list of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  std::vector<double> numbers(const std::string& k, const std::vector<double>& def) {
    const json* v = raw(k);
    if (!v) return def;
    if (!v->is_array()) throw ConfigError(field(k), "must be a list of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) throw ConfigError(field(k), "must be a list of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  void finish() const {
    if (!j_) return;
    for (const auto& item : j_->items())
      if (!seen_.count(item.key())) throw ConfigError(field(item.key()), "unknown field");
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::set<std::string> kGeneratorKinds{"plane", "graph", "snowflake", "two_planes", "half_plane", "sphere"};

GeneratorSpec parse_generator(Section s, std::uint64_t seed) {
  GeneratorSpec g;
  const std::string f = "input.generator.";
  g.kind = s.str("kind", g.kind);
  check(kGeneratorKinds.count(g.kind), f + "kind",
        "unknown generator '" + g.kind + "' (plane, graph, snowflake, two_planes, half_plane, sphere)");
  const bool codim1 = g.kind != "plane" && g.kind != "graph";
  g.n = static_cast<int>(s.integer("n", 2));
  check(g.n == 2 || g.n == 3, f + "n", "must be 2 or 3");
  if (g.kind == "snowflake") check(g.n == 2, f + "n", "snowflake lives in the plane, n must be 2");
  g.d = static_cast<int>(s.integer("d", codim1 ? g.n - 1 : 1));
  if (codim1)
    check(g.d == g.n - 1, f + "d", "must equal n - 1 for kind " + g.kind);
  else
    check(g.d >= 1 && g.d < g.n, f + "d", "must satisfy 1 <= d < n");
  g.h = s.num("h", g.h);
  check(g.h > 0, f + "h", "must be positive");
  g.extent = s.num("extent", g.extent);
  if (g.kind != "snowflake" && g.kind != "sphere") check(g.extent >= 20 * g.h, f + "extent", "must be at least 20 h");
  g.delta = s.num("delta", g.delta);
  check(g.delta >= 0 && g.delta < 0.5, f + "delta", "must lie in [0, 0.5)");
  g.mode = s.str("mode", g.mode);
  try {
    parse_graph_mode(g.mode);
  } catch (const InputError&) {
    throw ConfigError(f + "mode", "must be 'fourier' or 'pyramid'");
  }
  g.seed = s.seed("seed", seed);
  g.angle = s.num("angle", g.angle);
  check(g.angle > 0 && g.angle <= std::numbers::pi / 2 + 1e-15, f + "angle", "must lie in (0, pi/2]");
  g.flatness = s.num("flatness", g.flatness);
  check(g.flatness >= 0 && g.flatness < std::numbers::pi / 6, f + "flatness", "must lie in [0, pi/6)");
  g.depth = static_cast<int>(s.integer("depth", g.depth));
  check(g.depth >= 0 && g.depth <= 12, f + "depth", "must lie in [0, 12]");
  g.base_length = s.num("base_length", g.base_length);
  check(g.base_length >= 0, f + "base_length", "must be >= 0 (0 picks 2048 h)");
  g.radius = s.num("radius", g.radius);
  if (g.kind == "sphere") check(g.radius >= 4 * g.h, f + "radius", "must be at least 4 h");
  Section dens = s.sub("density");
  g.density = dens.str("profile", g.density);
  try {
    parse_density_profile(g.density);
  } catch (const InputError&) {
    throw ConfigError(f + "density.profile", "must be 'const', 'step' or 'random_bmo'");
  }
  g.amplitude = dens.num("amplitude", g.amplitude);
  check(g.amplitude >= 0 && g.amplitude < 1, f + "density.amplitude", "must lie in [0, 1)");
  g.density_seed = dens.seed("seed", seed);
  dens.finish();
  s.finish();
  return g;
}

SearchOptions parse_search(Section& s) {
  SearchOptions o;
  const long long budget = s.integer("budget", o.budget);
  check(budget >= 1 && budget <= 1'000'000, s.field("budget"), "must lie in [1, 1e6]");
  o.budget = static_cast<int>(budget);
  o.rel_tol = s.num("rel_tol", o.rel_tol);
  check(o.rel_tol > 0 && o.rel_tol <= 0.1, s.field("rel_tol"), "must lie in (0, 0.1]");
  o.alpha_bins = static_cast<int>(s.integer("alpha_bins", 0));
  check(o.alpha_bins >= 0 && o.alpha_bins <= 256, s.field("alpha_bins"), "must lie in [0, 256] (0 = automatic)");
  o.beta_grid = static_cast<int>(s.integer("beta_grid", 0));
  check(o.beta_grid >= 0 && o.beta_grid <= 1024, s.field("beta_grid"), "must lie in [0, 1024] (0 = automatic)");
  const std::string m = s.str("method", "flow");
  check(m == "flow" || m == "lp", s.field("method"), "must be 'flow' or 'lp'");
  o.method = m == "lp" ? BlMethod::Lp : BlMethod::Flow;
  o.use_density = s.flag("use_density", o.use_density);
  return o;
}

json generator_json(const GeneratorSpec& g) {
  return {{"kind", g.kind},     {"n", g.n},
          {"d", g.d},           {"delta", g.delta},
          {"mode", g.mode},     {"extent", g.extent},
          {"h", g.h},           {"seed", g.seed},
          {"angle", g.angle},   {"flatness", g.flatness},
          {"depth", g.depth},   {"base_length", g.base_length},
          {"radius", g.radius}, {"density", {{"profile", g.density}, {"amplitude", g.amplitude}, {"seed", g.density_seed}}}};
}

std::vector<std::string> selected_names(const CoefficientSelection& w) {
  std::vector<std::string> out;
  if (w.alpha) out.push_back("alpha");
  if (w.bbeta1) out.push_back("bbeta1");
  if (w.bbetainf) out.push_back("bbetainf");
  if (w.osc) out.push_back("osc");
  if (w.gamma) out.push_back("gamma");
  return out;
}

json normalize(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  if (c.input_path)
    j["input"] = {{"path", *c.input_path}};
  else
    j["input"] = {{"generator", generator_json(*c.generator)}};
  j["ahlfors"] = {{"rho_min", c.ahlfors.rho_min},
                  {"n_centers", c.ahlfors.n_centers},
                  {"n_radii", c.ahlfors.n_radii},
                  {"r_max", c.ahlfors.r_max},
                  {"seed", c.ahlfors.seed},
                  {"windowed", c.ahlfors.window.has_value()}};
  j["lattice"] = {{"j_min", c.j_min},
                  {"j_max", c.j_max < 0 ? json(nullptr) : json(c.j_max)},
                  {"max_cd", c.max_cd},
                  {"seed", c.lattice_seed},
                  {"boundary_tau", c.boundary_tau}};
  const auto& s = c.table.search;
  j["coefficients"] = {{"select", selected_names(c.table.which)},
                       {"budget", s.budget},
                       {"rel_tol", s.rel_tol},
                       {"alpha_bins", s.alpha_bins},
                       {"beta_grid", s.beta_grid},
                       {"method", s.method == BlMethod::Lp ? "lp" : "flow"},
                       {"use_density", s.use_density},
                       {"reliable_factor", c.table.reliable_factor},
                       {"tangent_k", c.table.tangent_k},
                       {"gamma_global",
                        {{"enabled", c.gamma_global},
                         {"n_samples", c.gamma_sampling.n_samples},
                         {"seed", c.gamma_sampling.seed},
                         {"r_min", c.gamma_sampling.r_min}}}};
  const auto& f = c.corona.fit;
  j["corona"] = {{"delta", c.corona.delta},
                 {"theta", c.corona.theta},
                 {"theta_prime", c.corona.theta_prime},
                 {"generation", c.corona_generation < 0 ? json(nullptr) : json(c.corona_generation)},
                 {"cells_per_radius", f.cells_per_radius},
                 {"min_cell_h", f.min_cell_h},
                 {"far_multiplier", f.far_multiplier},
                 {"fill_sweeps", f.fill_sweeps},
                 {"ur_scan", {{"n_samples", c.ur.n_samples}, {"seed", c.ur.seed}, {"r_min", c.ur.r_min}}}};
  std::vector<std::string> kinds;
  for (auto k : c.kinds) kinds.push_back(to_string(k));
  j["carleson"] = {{"min_generation", c.min_generation < 0 ? json(nullptr) : json(c.min_generation)},
                   {"interior_factor", c.interior_factor},
                   {"kinds", kinds}};
  return j;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  Section root(&j, "");
  RunConfig c;
  c.seed = root.seed("seed", c.seed);
  c.output = root.str("output", c.output);
  check(!c.output.empty(), "output", "must not be empty");
  const long long threads = root.integer("threads", 1);
  check(threads >= 1 && threads <= 1024, "threads", "must lie in [1, 1024]");
  c.threads = static_cast<int>(threads);

  const json* in = root.raw("input");
  if (!in) throw ConfigError("input", "missing; give a cloud path or {\"generator\": {...}}");
  if (in->is_string()) {
    c.input_path = in->get<std::string>();
  } else {
    Section s(in, "input");
    check(s.has("path") != s.has("generator"), "input", "needs exactly one of 'path' and 'generator'");
    if (s.has("path"))
      c.input_path = s.str("path", "");
    else
      c.generator = parse_generator(s.sub("generator"), c.seed);
    s.finish();
  }
  if (c.input_path) {
    check(!c.input_path->empty(), "input.path", "must not be empty");
    try {
      format_from_path(*c.input_path);
    } catch (const InputError&) {
      throw ConfigError("input.path", "extension must be .csv, .json or .bin");
    }
  }

  Section ah = root.sub("ahlfors");
  c.ahlfors.rho_min = ah.num("rho_min", 8);
  check(c.ahlfors.rho_min >= 5, "ahlfors.rho_min", "must be at least 5");
  c.ahlfors.n_centers = static_cast<int>(ah.integer("n_centers", c.ahlfors.n_centers));
  check(c.ahlfors.n_centers >= 1, "ahlfors.n_centers", "must be positive");
  c.ahlfors.n_radii = static_cast<int>(ah.integer("n_radii", c.ahlfors.n_radii));
  check(c.ahlfors.n_radii >= 2, "ahlfors.n_radii", "must be at least 2");
  c.ahlfors.r_max = ah.num("r_max", 0);
  check(c.ahlfors.r_max >= 0, "ahlfors.r_max", "must be >= 0 (0 = diameter)");
  c.ahlfors.seed = ah.seed("seed", c.seed);
  if (ah.flag("windowed", true)) c.ahlfors.window = Window{};   // placeholder, filled from the cloud
  ah.finish();

  Section lat = root.sub("lattice");
  c.j_min = static_cast<int>(lat.integer("j_min", c.j_min));
  check(c.j_min >= 2 && c.j_min <= 40, "lattice.j_min", "must lie in [2, 40] (2^j_min h must reach 3 h)");
  c.j_max = static_cast<int>(lat.integer("j_max", -1));
  if (lat.has("j_max")) check(c.j_max >= c.j_min, "lattice.j_max", "must be >= lattice.j_min");
  c.max_cd = lat.num("max_cd", c.max_cd);
  check(c.max_cd > 1, "lattice.max_cd", "must exceed 1");
  c.lattice_seed = lat.seed("seed", c.seed);
  c.boundary_tau = lat.numbers("boundary_tau", c.boundary_tau);
  for (double t : c.boundary_tau) check(t > 0 && t < 1, "lattice.boundary_tau", "entries must lie in (0, 1)");
  lat.finish();

  Section co = root.sub("coefficients");
  CoefficientSelection& w = c.table.which;
  w = {false, false, false, false, false};
  for (const auto& name : co.strings("select", {"alpha", "bbeta1", "bbetainf", "osc", "gamma"})) {
    CoefficientKind k;
    try {
      k = parse_coefficient_kind(name);
    } catch (const InputError&) {
      throw ConfigError("coefficients.select", "unknown coefficient '" + name + "'");
    }
    switch (k) {
      case CoefficientKind::Alpha: w.alpha = true; break;
      case CoefficientKind::Bbeta1: w.bbeta1 = true; break;
      case CoefficientKind::Bbetainf: w.bbetainf = true; break;
      case CoefficientKind::Osc: w.osc = true; break;
      case CoefficientKind::Gamma: w.gamma = true; break;
    }
  }
  check(w.alpha || w.bbeta1 || w.bbetainf || w.osc || w.gamma, "coefficients.select", "must name at least one coefficient");
  c.table.search = parse_search(co);
  c.table.reliable_factor = co.num("reliable_factor", c.table.reliable_factor);
  check(c.table.reliable_factor >= 1, "coefficients.reliable_factor", "must be at least 1");
  c.table.tangent_k = co.num("tangent_k", c.table.tangent_k);
  check(c.table.tangent_k >= 2, "coefficients.tangent_k", "must be at least 2");
  Section gg = co.sub("gamma_global");
  c.gamma_global = gg.flag("enabled", w.gamma);
  check(!c.gamma_global || w.gamma, "coefficients.gamma_global.enabled", "needs 'gamma' in coefficients.select");
  c.gamma_sampling.n_samples = static_cast<int>(gg.integer("n_samples", c.gamma_sampling.n_samples));
  check(c.gamma_sampling.n_samples >= 1, "coefficients.gamma_global.n_samples", "must be positive");
  c.gamma_sampling.seed = gg.seed("seed", c.seed);
  c.gamma_sampling.r_min = gg.num("r_min", 0);
  check(c.gamma_sampling.r_min >= 0, "coefficients.gamma_global.r_min", "must be >= 0");
  gg.finish();
  co.finish();

  Section cr = root.sub("corona");
  c.corona.delta = cr.num("delta", c.corona.delta);
  check(c.corona.delta > 0 && c.corona.delta < 0.1, "corona.delta", "must lie in (0, 0.1)");
  c.corona.theta = cr.num("theta", c.corona.theta);
  check(c.corona.theta > 0, "corona.theta", "must be positive");
  c.corona.theta_prime = cr.num("theta_prime", 0);
  check(c.corona.theta_prime >= 0, "corona.theta_prime", "must be >= 0 (0 = theta / (4 d))");
  c.corona_generation = static_cast<int>(cr.integer("generation", -1));
  if (cr.has("generation")) {
    check(c.corona_generation >= c.j_min, "corona.generation", "must be >= lattice.j_min");
    if (c.j_max >= 0) check(c.corona_generation <= c.j_max, "corona.generation", "must be <= lattice.j_max");
  }
  auto& fit = c.corona.fit;
  fit.cells_per_radius = cr.num("cells_per_radius", fit.cells_per_radius);
  check(fit.cells_per_radius >= 2, "corona.cells_per_radius", "must be at least 2");
  fit.min_cell_h = cr.num("min_cell_h", fit.min_cell_h);
  check(fit.min_cell_h > 0, "corona.min_cell_h", "must be positive");
  fit.far_multiplier = cr.num("far_multiplier", fit.far_multiplier);
  check(fit.far_multiplier > 0, "corona.far_multiplier", "must be positive");
  fit.fill_sweeps = static_cast<int>(cr.integer("fill_sweeps", fit.fill_sweeps));
  check(fit.fill_sweeps >= 1, "corona.fill_sweeps", "must be positive");
  Section ur = cr.sub("ur_scan");
  c.ur.n_samples = static_cast<int>(ur.integer("n_samples", c.ur.n_samples));
  check(c.ur.n_samples >= 1, "corona.ur_scan.n_samples", "must be positive");
  c.ur.seed = ur.seed("seed", c.seed);
  c.ur.r_min = ur.num("r_min", 0);
  check(c.ur.r_min >= 0, "corona.ur_scan.r_min", "must be >= 0 (0 = 16 h)");
  c.ur.fit = fit;
  ur.finish();
  cr.finish();

  Section ca = root.sub("carleson");
  c.min_generation = static_cast<int>(ca.integer("min_generation", -1));
  if (ca.has("min_generation")) {
    check(c.min_generation >= c.j_min, "carleson.min_generation", "must be >= lattice.j_min");
    if (c.j_max >= 0) check(c.min_generation <= c.j_max, "carleson.min_generation", "must be <= lattice.j_max");
  }
  c.interior_factor = ca.num("interior_factor", c.interior_factor);
  check(c.interior_factor >= 1, "carleson.interior_factor", "must be at least 1");
  const auto sel = selected_names(w);
  for (const auto& name : ca.strings("kinds", sel)) {
    check(std::find(sel.begin(), sel.end(), name) != sel.end(), "carleson.kinds",
          "'" + name + "' is not among coefficients.select");
    c.kinds.push_back(parse_coefficient_kind(name));
  }
  check(!c.kinds.empty(), "carleson.kinds", "must name at least one coefficient");
  ca.finish();

  root.finish();
  c.normalized = normalize(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config '" + path + "': " + e.what(), 0);
  }
  return parse_run_config(j);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(cfg.normalized.dump()); }

Stage parse_stage(const std::string& s) {
  static const std::pair<const char*, Stage> names[] = {
      {"generate", Stage::Generate}, {"lattice", Stage::Lattice}, {"coeffs", Stage::Coeffs},
      {"corona", Stage::Corona},     {"carleson", Stage::Carleson}, {"verify", Stage::Verify},
      {"report", Stage::Report}};
  for (const auto& [n, st] : names)
    if (s == n) return st;
  throw InputError("unknown stage '" + s + "'");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Generate: return "generate";
    case Stage::Lattice: return "lattice";
    case Stage::Coeffs: return "coeffs";
    case Stage::Corona: return "corona";
    case Stage::Carleson: return "carleson";
    case Stage::Verify: return "verify";
    case Stage::Report: return "report";
  }
  return "generate";
}

namespace {

// Config sections a stage's artifacts depend on.
std::vector<std::string> sections_of(Stage s) {
  switch (s) {
    case Stage::Generate: return {"input", "ahlfors"};
    case Stage::Lattice: return {"input", "ahlfors", "lattice"};
    case Stage::Coeffs: return {"input", "ahlfors", "lattice", "coefficients"};
    case Stage::Corona: return {"input", "ahlfors", "lattice", "corona"};
    case Stage::Carleson: return {"input", "ahlfors", "lattice", "coefficients", "carleson"};
    case Stage::Verify: return {"input", "ahlfors", "lattice", "coefficients", "corona"};
    case Stage::Report: return {"seed", "input", "ahlfors", "lattice", "coefficients", "corona", "carleson"};
  }
  return {};
}

// Stages whose files a stage reads.
std::vector<Stage> needs_of(Stage s) {
  switch (s) {
    case Stage::Generate: return {};
    case Stage::Lattice: return {Stage::Generate};
    case Stage::Coeffs:
    case Stage::Corona: return {Stage::Generate, Stage::Lattice};
    case Stage::Carleson: return {Stage::Generate, Stage::Lattice, Stage::Coeffs};
    case Stage::Verify: return {Stage::Generate, Stage::Lattice, Stage::Coeffs, Stage::Corona};
    case Stage::Report:
      return {Stage::Generate, Stage::Lattice, Stage::Coeffs, Stage::Corona, Stage::Carleson, Stage::Verify};
  }
  return {};
}

std::string stage_hash(const RunConfig& cfg, Stage s) {
  json part = json::object();
  for (const auto& k : sections_of(s)) part[k] = cfg.normalized.at(k);
  return sha256_hex(part.dump());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string dump(const json& j) { return j.dump(1) + "\n"; }

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json num_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

class StageRun {
 public:
  StageRun(const RunConfig& cfg, Stage stage, std::ostream& log)
      : cfg_(cfg), stage_(stage), log_(log), dir_(cfg.output), hash_(config_hash(cfg)) {
    fs::create_directories(dir_);
    for (Stage need : needs_of(stage)) require(need);
  }

  const fs::path& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }

  std::string input(const std::string& name) {
    const fs::path p = dir_ / name;
    std::string bytes = read_file(p);
    inputs_[name] = sha256_hex(bytes);
    return bytes;
  }

  void output(const std::string& name, const std::string& bytes) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << bytes;
    if (!out) throw std::runtime_error("cannot write '" + (dir_ / name).string() + "'");
    outputs_[name] = sha256_hex(bytes);
    result_.outputs.push_back(name);
  }
  // JSON artifact stamped with the config hash.
  void output_json(const std::string& name, json j) {
    j["config_hash"] = hash_;
    output(name, dump(j));
  }

  void warn(const std::string& msg) {
    log_ << "warning: " << to_string(stage_) << ": " << msg << "\n";
    result_.warnings.push_back(msg);
  }

  StageResult finish(bool verified = true) {
    result_.verified = verified;
    json m{{"schema", "rectiscope/1"},
           {"stage", to_string(stage_)},
           {"version", RECTISCOPE_VERSION},
           {"config_hash", hash_},
           {"stage_hash", stage_hash(cfg_, stage_)},
           {"seed", cfg_.seed},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"warnings", result_.warnings}};
    std::ofstream out(dir_ / (to_string(stage_) + ".manifest.json"), std::ios::binary);
    out << dump(m);
    if (!out) throw std::runtime_error("cannot write the " + to_string(stage_) + " manifest");
    return result_;
  }

 private:
  void require(Stage need) {
    const std::string who = to_string(stage_), what = to_string(need);
    const fs::path mp = dir_ / (what + ".manifest.json");
    const std::string rerun = "; rerun 'rectiscope " + what + "' with this config";
    if (!fs::exists(mp))
      throw StaleArtifactError(who + ": no " + what + " artifacts in '" + dir_.string() + "'" + rerun);
    json m;
    try {
      m = json::parse(read_file(mp));
    } catch (const json::exception&) {
      throw StaleArtifactError(who + ": " + mp.filename().string() + " is not valid JSON" + rerun);
    }
    const std::string want = stage_hash(cfg_, need);
    const std::string got = m.value("stage_hash", "");
    if (got != want)
      throw StaleArtifactError(who + ": the " + what + " artifacts were produced by a different configuration (stage hash " +
                               got.substr(0, 12) + ", this config gives " + want.substr(0, 12) + ")" + rerun);
    if (!m.contains("outputs") || !m["outputs"].is_object())
      throw StaleArtifactError(who + ": " + mp.filename().string() + " lists no outputs" + rerun);
    for (const auto& item : m["outputs"].items()) {
      const fs::path p = dir_ / item.key();
      if (!fs::exists(p)) throw StaleArtifactError(who + ": " + item.key() + " is missing" + rerun);
      if (sha256_hex(read_file(p)) != item.value().get<std::string>())
        throw StaleArtifactError(who + ": " + item.key() + " changed after the " + what +
                                 " stage wrote it (content hash mismatch)" + rerun);
    }
  }

  const RunConfig& cfg_;
  Stage stage_;
  std::ostream& log_;
  fs::path dir_;
  std::string hash_;
  json inputs_ = json::object(), outputs_ = json::object();
  StageResult result_;
};

Generated generate(const GeneratorSpec& g) {
  Generated out;
  if (g.kind == "plane")
    out = gen_plane(g.n, g.d, g.extent, g.h);
  else if (g.kind == "graph")
    out = gen_lipschitz_graph(g.n, g.d, g.delta, parse_graph_mode(g.mode), g.extent, g.h, g.seed);
  else if (g.kind == "snowflake")
    out = gen_snowflake(g.flatness, g.depth, g.h, g.base_length);
  else if (g.kind == "two_planes")
    out = gen_two_planes(g.n, g.angle, g.extent, g.h);
  else if (g.kind == "half_plane")
    out = gen_half_plane(g.n, g.extent, g.h);
  else
    out = gen_sphere(g.n, g.radius, g.h);
  const DensityProfile prof = parse_density_profile(g.density);
  attach_density(out.cloud, prof, g.amplitude, g.density_seed);
  return out;
}

WeightedPointCloud load_stage_cloud(StageRun& run) {
  const std::string bytes = run.input("cloud.bin");
  const fs::path p = run.dir() / "cloud.bin";
  return load_cloud(p.string(), CloudFormat::Binary);
}

Lattice load_stage_lattice(StageRun& run, const WeightedPointCloud& cloud) {
  return lattice_from_json(run.input("lattice.json"), cloud);
}

int corona_generation(const RunConfig& cfg, const Lattice& lat) {
  const int g = cfg.corona_generation < 0 ? lat.j_max : cfg.corona_generation;
  if (g < lat.j_min || g > lat.j_max)
    throw ConfigError("corona.generation", "generation " + std::to_string(g) + " is outside the lattice range [" +
                                               std::to_string(lat.j_min) + ", " + std::to_string(lat.j_max) + "]");
  return g;
}

StageResult stage_generate(const RunConfig& cfg, std::ostream& log) {
  StageRun run(cfg, Stage::Generate, log);
  WeightedPointCloud cloud;
  json truth;
  if (cfg.input_path) {
    cloud = load_cloud(*cfg.input_path);
  } else {
    Generated g = generate(*cfg.generator);
    cloud = std::move(g.cloud);
    json loci = json::array();
    for (const auto& L : g.truth.singular) {
      json dirs = json::array();
      for (int k = 0; k < L.directions.cols(); ++k) dirs.push_back(vec_json(L.directions.col(k)));
      loci.push_back({{"point", vec_json(L.point)}, {"directions", dirs}});
    }
    truth = {{"kind", g.truth.kind},
             {"lipschitz", g.truth.lipschitz},
             {"length_factor", g.truth.length_factor},
             {"analytic_mass", g.truth.analytic_mass},
             {"singular", loci}};
  }
  if (!cloud.g) {
    run.warn("the cloud carries no density; g = 1 is attached so osc is defined");
    cloud.g = Vec::Ones(cloud.size());
  }
  cloud.validate();
  const fs::path bin = run.dir() / "cloud.bin";
  save_cloud(cloud, bin.string(), CloudFormat::Binary);
  run.output("cloud.bin", read_file(bin));
  if (!truth.is_null()) run.output_json("truth.json", truth);

  ProfileOptions po = cfg.ahlfors;
  po.threads = cfg.threads;
  const Window win = cloud.trusted_window();
  if (po.window) po.window = win;
  const AhlforsProfile prof = ahlfors_profile(cloud, po);
  std::ostringstream csv;
  csv.precision(17);
  csv << "center,radius,mass,ratio\n";
  for (const auto& s : prof.samples) csv << s.center << ',' << s.radius << ',' << s.mass << ',' << s.ratio << '\n';
  run.output("ahlfors.csv", csv.str());

  run.output_json("cloud.json", {{"n", cloud.n},
                                 {"d", cloud.d},
                                 {"h", cloud.h},
                                 {"points", cloud.size()},
                                 {"mass", cloud.weights.sum()},
                                 {"has_density", cloud.g.has_value()},
                                 {"diameter", cloud_diameter(cloud)},
                                 {"window", {{"center", vec_json(win.center)}, {"radius", win.radius}}},
                                 {"ahlfors",
                                  {{"C_upper_est", prof.C_upper_est},
                                   {"C_lower_est", prof.C_lower_est},
                                   {"r_min", prof.r_min},
                                   {"r_max", prof.r_max},
                                   {"samples", prof.samples.size()}}}});
  return run.finish();
}

json lattice_report_json(const LatticeReport& r, const Lattice& lat) {
  json b = json::array();
  for (const auto& s : r.boundary) b.push_back({{"tau", s.tau}, {"value", num_json(s.value)}, {"worst_cube", s.worst_cube}});
  return {{"ok", r.ok()},
          {"partition_ok", r.partition_ok},
          {"nesting_ok", r.nesting_ok},
          {"additivity_ok", r.additivity_ok},
          {"ball_inclusion_ok", r.ball_inclusion_ok},
          {"problems", r.problems},
          {"j_min", lat.j_min},
          {"j_max", lat.j_max},
          {"cubes", lat.cubes.size()},
          {"roots", lat.roots().size()},
          {"diam_ratio", {r.diam_ratio_min, r.diam_ratio_max}},
          {"mass_ratio", {r.mass_ratio_min, r.mass_ratio_max}},
          {"C_D_emp", r.C_D_emp},
          {"C_D_all", r.C_D_all},
          {"interior_cubes", r.interior_cubes},
          {"boundary", b},
          {"center_failures", r.center_failures},
          {"center_fraction", r.center_fraction},
          {"center_failures_all", r.center_failures_all},
          {"center_fraction_all", r.center_fraction_all}};
}

StageResult stage_lattice(const RunConfig& cfg, std::ostream& log) {
  StageRun run(cfg, Stage::Lattice, log);
  const WeightedPointCloud cloud = load_stage_cloud(run);
  const int top = max_generation(cloud);
  if (cfg.j_max > top)
    throw ConfigError("lattice.j_max", std::to_string(cfg.j_max) + " exceeds the largest usable generation " +
                                           std::to_string(top) + " of this cloud");
  if (cfg.j_min > top)
    throw ConfigError("lattice.j_min", std::to_string(cfg.j_min) + " exceeds the largest usable generation " +
                                           std::to_string(top) + " of this cloud");
  const Lattice lat = build_lattice(cloud, cfg.j_min, cfg.j_max < 0 ? top : cfg.j_max, cfg.lattice_seed);
  const LatticeReport rep = verify_lattice(lat, cloud, cfg.boundary_tau, cfg.threads);
  run.output_json("lattice.json", json::parse(lattice_to_json(lat)));
  run.output_json("lattice_report.json", lattice_report_json(rep, lat));
  if (!rep.ok()) run.warn("lattice invariants broken: " + (rep.problems.empty() ? "" : rep.problems.front()));
  if (lat.C_D_emp > cfg.max_cd)
    run.warn("C_D_emp " + std::to_string(lat.C_D_emp) + " exceeds max_cd; the corona stage will refuse this lattice");
  return run.finish();
}

void warn_partial(StageRun& run, const std::vector<CubeCoefficients>& rows) {
  const auto missing = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.computed(); });
  if (missing > 0)
    run.warn(std::to_string(missing) + " of " + std::to_string(rows.size()) +
             " cubes carry no coefficients (unreliable or outside the trusted window); sums skip them");
}

StageResult stage_coeffs(const RunConfig& cfg, std::ostream& log) {
  StageRun run(cfg, Stage::Coeffs, log);
  const WeightedPointCloud cloud = load_stage_cloud(run);
  const Lattice lat = load_stage_lattice(run, cloud);
  const CloudIndex idx(cloud);
  TableOptions opt = cfg.table;
  opt.threads = cfg.threads;
  const auto rows = compute_cube_coefficients(idx, lat, opt);
  if (static_cast<size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.computed(); })) == 0)
    throw InputError("coeffs: no cube is reliable and trusted; refine h or lower lattice.j_min");
  warn_partial(run, rows);
  run.output("coefficients.csv", coefficients_to_csv(rows));
  run.output_json("coefficients.json", json::parse(coefficients_to_json(rows)));
  if (cfg.gamma_global) {
    const TangentField T = tangent_planes(idx, cfg.table.tangent_k, cfg.threads);
    GammaSampling gs = cfg.gamma_sampling;
    gs.threads = cfg.threads;
    const GammaGlobal g = gamma_global(idx, T, gs, cfg.table.search);
    run.output_json("gamma_global.json", {{"value", g.value},
                                          {"center", g.center},
                                          {"center_point", g.center >= 0 ? vec_json(cloud.points.col(g.center)) : json(nullptr)},
                                          {"radius", g.radius},
                                          {"tangent_term", g.worst.tangent_term},
                                          {"perp_term", g.worst.perp_term},
                                          {"samples", g.samples}});
  }
  return run.finish();
}

json corona_report_json(const CoronaForest& f, const CoronaReport& r) {
  return {{"root", f.root},
          {"ok", r.ok()},
          {"partition_ok", r.partition_ok},
          {"coherence_ok", r.coherence_ok},
          {"sharing_ok", r.sharing_ok},
          {"remark_ok", r.remark_ok},
          {"problems", r.problems},
          {"packing_max", r.packing_max},
          {"packing_argmax", r.packing_argmax},
          {"proximity_delta", r.proximity_delta},
          {"proximity_worst", r.proximity_worst},
          {"families", r.families},
          {"minimal_cubes", r.minimal_cubes},
          {"flagged", r.flagged},
          {"shared_from", f.shared_from},
          {"eta", f.eta},
          {"M", f.M},
          {"M_eff", f.M_eff}};
}

StageResult stage_corona(const RunConfig& cfg, std::ostream& log) {
  StageRun run(cfg, Stage::Corona, log);
  const WeightedPointCloud cloud = load_stage_cloud(run);
  const Lattice lat = load_stage_lattice(run, cloud);
  if (lat.C_D_emp > cfg.max_cd)
    throw InputError("corona: lattice C_D_emp " + std::to_string(lat.C_D_emp) + " exceeds lattice.max_cd " +
                     std::to_string(cfg.max_cd) + "; the cubes are too irregular for a corona decomposition");
  const CloudIndex idx(cloud);
  const int gen = corona_generation(cfg, lat);
  const auto forests = corona_decompose_roots(idx, lat, lat.level(gen), cfg.corona);
  json fj = json::array(), reports = json::array();
  std::ostringstream csv;
  csv.precision(17);
  csv << "root,cube,top_mass,ratio\n";
  double packing = 0, proximity = 0;
  int families = 0;
  bool ok = true;
  for (const auto& f : forests) {
    const CoronaReport r = verify_corona(f, idx, lat, forests);
    fj.push_back(json::parse(corona_to_json(f)));
    reports.push_back(corona_report_json(f, r));
    for (const auto& e : r.packing) csv << f.root << ',' << e.cube << ',' << e.top_mass << ',' << e.ratio << '\n';
    packing = std::max(packing, r.packing_max);
    proximity = std::max(proximity, r.proximity_delta);
    families += r.families;
    ok = ok && r.ok();
  }
  run.output_json("corona.json", {{"generation", gen}, {"forests", fj}});
  run.output("packing.csv", csv.str());
  run.output_json("corona_report.json", {{"generation", gen},
                                         {"ok", ok},
                                         {"packing_max", packing},
                                         {"proximity_delta", proximity},
                                         {"families", families},
                                         {"roots", reports}});
  if (!ok) run.warn("corona structure checks failed; see corona_report.json");

  UrScanOptions uo = cfg.ur;
  uo.threads = cfg.threads;
  const UrScan scan = delta_ur_scan(idx, uo);
  std::ostringstream ucsv;
  ucsv.precision(17);
  ucsv << "center,radius,defect,lipschitz,misses,value\n";
  for (const auto& s : scan.samples)
    ucsv << s.center << ',' << s.radius << ',' << s.defect << ',' << s.lipschitz << ',' << int(s.misses) << ','
         << s.value << '\n';
  run.output("ur_scan.csv", ucsv.str());
  run.output_json("ur_scan.json", {{"delta_est", scan.delta_est},
                                   {"capped", scan.capped},
                                   {"samples", scan.samples.size()},
                                   {"worst",
                                    {{"center", scan.worst.center},
                                     {"radius", scan.worst.radius},
                                     {"defect", scan.worst.defect},
                                     {"lipschitz", scan.worst.lipschitz},
                                     {"misses", scan.worst.misses},
                                     {"value", scan.worst.value}}}});
  return run.finish();
}

StageResult stage_carleson(const RunConfig& cfg, std::ostream& log) {
  StageRun run(cfg, Stage::Carleson, log);
  const WeightedPointCloud cloud = load_stage_cloud(run);
  const Lattice lat = load_stage_lattice(run, cloud);
  const auto rows = coefficients_from_json(run.input("coefficients.json"));
  if (rows.size() != lat.cubes.size())
    throw StaleArtifactError("carleson: coefficients.json has " + std::to_string(rows.size()) + " rows for " +
                             std::to_string(lat.cubes.size()) + " cubes; rerun 'rectiscope coeffs'");
  warn_partial(run, rows);
  const int mg = cfg.min_generation < 0 ? std::min(lat.j_min + 2, lat.j_max) : cfg.min_generation;
  if (mg > lat.j_max)
    throw ConfigError("carleson.min_generation", std::to_string(mg) + " exceeds lattice j_max " + std::to_string(lat.j_max));
  for (auto k : cfg.kinds) {
    const CarlesonReport rep = carleson_sup(lat, rows, cloud, k, mg, cfg.interior_factor);
    if (rep.rows.empty()) run.warn("no interior root for " + to_string(k) + "; sup is reported as 0");
    run.output("carleson_" + to_string(k) + ".csv", carleson_to_csv(rep));
    run.output_json("carleson_" + to_string(k) + ".json", json::parse(carleson_to_json(rep)));
  }
  return run.finish();
}

StageResult stage_verify(const RunConfig& cfg, std::ostream& log) {
  StageRun run(cfg, Stage::Verify, log);
  const WeightedPointCloud cloud = load_stage_cloud(run);
  const Lattice lat = load_stage_lattice(run, cloud);
  const LatticeReport lrep = verify_lattice(lat, cloud, cfg.boundary_tau, cfg.threads);
  bool ok = lrep.ok();

  const auto rows = coefficients_from_json(run.input("coefficients.json"));
  std::vector<std::string> cproblems;
  if (rows.size() != lat.cubes.size()) cproblems.push_back("row count differs from the cube count");
  int computed = 0;
  for (size_t i = 0; i < rows.size() && i < lat.cubes.size(); ++i) {
    const auto& r = rows[i];
    if (r.cube != static_cast<int>(i)) cproblems.push_back("row " + std::to_string(i) + " names cube " + std::to_string(r.cube));
    if (r.mass != lat.cubes[i].mass || r.diam != lat.cubes[i].diam)
      cproblems.push_back("cube " + std::to_string(i) + ": mass or diameter disagrees with the lattice");
    if (!r.computed()) continue;
    ++computed;
    for (auto k : cfg.kinds) {
      const double v = coefficient_value(r, k);
      if (std::isnan(v)) cproblems.push_back("cube " + std::to_string(i) + ": " + to_string(k) + " missing");
      else if (!(v >= 0)) cproblems.push_back("cube " + std::to_string(i) + ": " + to_string(k) + " negative");
    }
  }
  ok = ok && cproblems.empty();

  const CloudIndex idx(cloud);
  const json cj = json::parse(run.input("corona.json"));
  std::vector<CoronaForest> forests;
  for (const auto& f : cj.at("forests")) forests.push_back(corona_from_json(f.dump(), lat));
  json creps = json::array();
  for (const auto& f : forests) {
    const CoronaReport r = verify_corona(f, idx, lat, forests);
    creps.push_back(corona_report_json(f, r));
    ok = ok && r.ok();
  }
  run.output_json("verify.json", {{"ok", ok},
                                  {"lattice", lattice_report_json(lrep, lat)},
                                  {"coefficients", {{"ok", cproblems.empty()}, {"rows", rows.size()}, {"computed", computed}, {"problems", cproblems}}},
                                  {"corona", creps}});
  if (!ok) run.warn("verification failed; see verify.json");
  return run.finish(ok);
}

json read_json(StageRun& run, const std::string& name) { return json::parse(run.input(name)); }

StageResult stage_report(const RunConfig& cfg, std::ostream& log) {
  StageRun run(cfg, Stage::Report, log);
  json s;
  s["schema"] = "rectiscope/1";
  s["version"] = RECTISCOPE_VERSION;
  s["config_hash"] = run.hash();
  s["seed"] = cfg.seed;
  s["config"] = cfg.normalized;

  json cloud = read_json(run, "cloud.json");
  cloud.erase("config_hash");
  s["cloud"] = cloud;
  if (fs::exists(run.dir() / "truth.json") && !cfg.input_path) {
    json t = read_json(run, "truth.json");
    t.erase("config_hash");
    t.erase("singular");
    s["truth"] = t;
  }

  json lr = read_json(run, "lattice_report.json");
  s["lattice"] = {{"ok", lr["ok"]},
                  {"j_min", lr["j_min"]},
                  {"j_max", lr["j_max"]},
                  {"cubes", lr["cubes"]},
                  {"C_D_emp", lr["C_D_emp"]},
                  {"C_D_all", lr["C_D_all"]},
                  {"center_fraction", lr["center_fraction"]},
                  {"boundary", lr["boundary"]}};

  const auto rows = coefficients_from_json(run.input("coefficients.json"));
  json cmax = json::object();
  int computed = 0;
  for (const auto& r : rows) computed += r.computed();
  for (const auto& name : selected_names(cfg.table.which)) {
    const auto k = parse_coefficient_kind(name);
    double m = 0;
    for (const auto& r : rows)
      if (r.computed() && !std::isnan(coefficient_value(r, k))) m = std::max(m, coefficient_value(r, k));
    cmax[name] = m;
  }
  s["coefficients"] = {{"rows", rows.size()}, {"computed", computed}, {"max", cmax}};
  if (cfg.gamma_global) {
    json g = read_json(run, "gamma_global.json");
    g.erase("config_hash");
    s["coefficients"]["gamma_global"] = g;
  }

  json car = json::object();
  for (auto k : cfg.kinds) {
    const json c = read_json(run, "carleson_" + to_string(k) + ".json");
    car[to_string(k)] = {{"sup", c.at("sup")},
                         {"argmax", c.at("argmax")},
                         {"roots", c.at("roots").size()},
                         {"min_generation", c.at("min_generation")}};
  }
  s["carleson"] = car;

  const json cr = read_json(run, "corona_report.json");
  const json ur = read_json(run, "ur_scan.json");
  int flagged = 0, shared = 0;
  for (const auto& r : cr.at("roots")) {
    flagged += r.at("flagged").get<int>();
    shared += r.at("shared_from").get<int>() >= 0;
  }
  s["corona"] = {{"ok", cr.at("ok")},
                 {"generation", cr.at("generation")},
                 {"roots", cr.at("roots").size()},
                 {"families", cr.at("families")},
                 {"flagged", flagged},
                 {"shared_roots", shared},
                 {"packing_max", cr.at("packing_max")},
                 {"proximity_delta", cr.at("proximity_delta")},
                 {"delta_ur_est", ur.at("delta_est")},
                 {"delta_ur_capped", ur.at("capped")}};

  const json ver = read_json(run, "verify.json");
  s["verify"] = {{"ok", ver.at("ok")},
                 {"lattice_ok", ver.at("lattice").at("ok")},
                 {"coefficients_ok", ver.at("coefficients").at("ok")}};

  json warnings = json::object();
  for (Stage st : needs_of(Stage::Report)) {
    const json m = read_json(run, to_string(st) + ".manifest.json");
    if (!m.at("warnings").empty()) warnings[to_string(st)] = m.at("warnings");
  }
  s["warnings"] = warnings;
  run.output("summary.json", dump(s));
  return run.finish();
}

}  // namespace

StageResult run_stage(const RunConfig& cfg, Stage stage, std::ostream& log) {
  switch (stage) {
    case Stage::Generate: return stage_generate(cfg, log);
    case Stage::Lattice: return stage_lattice(cfg, log);
    case Stage::Coeffs: return stage_coeffs(cfg, log);
    case Stage::Corona: return stage_corona(cfg, log);
    case Stage::Carleson: return stage_carleson(cfg, log);
    case Stage::Verify: return stage_verify(cfg, log);
    case Stage::Report: return stage_report(cfg, log);
  }
  return {};
}

void run_pipeline(const RunConfig& cfg, std::ostream& log) {
  for (Stage s : {Stage::Generate, Stage::Lattice, Stage::Coeffs, Stage::Corona, Stage::Carleson, Stage::Verify,
                  Stage::Report})
    run_stage(cfg, s, log);
}

}  // namespace rectiscope
