#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "rectiscope/carleson.hpp"
#include "rectiscope/coefficients.hpp"
#include "rectiscope/corona.hpp"
#include "rectiscope/error.hpp"
#include "rectiscope/pipeline.hpp"
#include "rectiscope/synth.hpp"
#include "rectiscope/transport.hpp"

namespace py = pybind11;
using namespace rectiscope;

namespace {

// Row-per-point arrays on the Python side, column-per-point inside.
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Owns the cloud so the kd-tree index can point into it.
class PyCloud {
 public:
  explicit PyCloud(WeightedPointCloud c) : cloud_(std::move(c)) { cloud_.validate(); }
  const WeightedPointCloud& cloud() const { return cloud_; }
  const CloudIndex& index() const {
    if (!index_) index_ = std::make_unique<CloudIndex>(cloud_);
    return *index_;
  }

 private:
  WeightedPointCloud cloud_;
  mutable std::unique_ptr<CloudIndex> index_;
};

PyCloud make_cloud(const RowMat& points, const Vec& weights, int d, double h, std::optional<Vec> g) {
  WeightedPointCloud c;
  c.n = static_cast<int>(points.cols());
  c.d = d;
  c.h = h;
  c.points = points.transpose();
  c.weights = weights;
  c.g = std::move(g);
  return PyCloud(std::move(c));
}

py::dict truth_dict(const GroundTruth& t) {
  py::dict out;
  out["kind"] = t.kind;
  out["lipschitz"] = t.lipschitz;
  out["length_factor"] = t.length_factor;
  out["analytic_mass"] = t.analytic_mass;
  py::list loci;
  for (const auto& L : t.singular) {
    py::dict l;
    l["point"] = L.point;
    l["directions"] = RowMat(L.directions.transpose());
    loci.append(l);
  }
  out["singular"] = loci;
  return out;
}

py::tuple wrap(Generated g) {
  py::dict truth = truth_dict(g.truth);
  return py::make_tuple(PyCloud(std::move(g.cloud)), truth);
}

SearchOptions search(int budget, double rel_tol, const std::string& method) {
  SearchOptions o;
  o.budget = budget;
  o.rel_tol = rel_tol;
  if (method == "lp")
    o.method = BlMethod::Lp;
  else if (method != "flow")
    throw InputError("method must be 'flow' or 'lp'");
  return o;
}

BlMethod bl_method(const std::string& m) {
  if (m == "flow") return BlMethod::Flow;
  if (m == "lp") return BlMethod::Lp;
  throw InputError("method must be 'flow' or 'lp'");
}

py::dict lattice_report_dict(const LatticeReport& r) {
  py::dict d;
  d["ok"] = r.ok();
  d["partition_ok"] = r.partition_ok;
  d["nesting_ok"] = r.nesting_ok;
  d["additivity_ok"] = r.additivity_ok;
  d["ball_inclusion_ok"] = r.ball_inclusion_ok;
  d["problems"] = r.problems;
  d["C_D_emp"] = r.C_D_emp;
  d["C_D_all"] = r.C_D_all;
  d["center_fraction"] = r.center_fraction;
  d["center_fraction_all"] = r.center_fraction_all;
  d["interior_cubes"] = r.interior_cubes;
  py::list b;
  for (const auto& s : r.boundary) b.append(py::make_tuple(s.tau, s.value, s.worst_cube));
  d["boundary"] = b;
  return d;
}

struct Table {
  std::vector<CubeCoefficients> rows;
};

py::dict table_arrays(const Table& t) {
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  Eigen::VectorXi cube(n), j(n), reliable(n), trusted(n);
  Vec mass(n), diam(n), alpha(n), b1(n), binf(n), osc(n), gamma(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = t.rows[i];
    cube[i] = r.cube;
    j[i] = r.j;
    reliable[i] = r.reliable;
    trusted[i] = r.trusted;
    mass[i] = r.mass;
    diam[i] = r.diam;
    alpha[i] = r.alpha;
    b1[i] = r.bbeta1;
    binf[i] = r.bbetainf;
    osc[i] = r.osc;
    gamma[i] = r.gamma;
  }
  py::dict d;
  d["cube"] = cube;
  d["j"] = j;
  d["mass"] = mass;
  d["diam"] = diam;
  d["reliable"] = reliable;
  d["trusted"] = trusted;
  d["alpha"] = alpha;
  d["bbeta1"] = b1;
  d["bbetainf"] = binf;
  d["osc"] = osc;
  d["gamma"] = gamma;
  return d;
}

}  // namespace

PYBIND11_MODULE(_rectiscope, m) {
  m.doc() = "rectiscope core bindings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<StaleArtifactError>(m, "StaleArtifactError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

  py::class_<PyCloud>(m, "Cloud")
      .def(py::init(&make_cloud), py::arg("points"), py::arg("weights"), py::arg("d"), py::arg("h"),
           py::arg("g") = py::none())
      .def_static("load", [](const std::string& path) { return PyCloud(load_cloud(path)); })
      .def("save", [](const PyCloud& c, const std::string& path) { save_cloud(c.cloud(), path); })
      .def_property_readonly("n", [](const PyCloud& c) { return c.cloud().n; })
      .def_property_readonly("d", [](const PyCloud& c) { return c.cloud().d; })
      .def_property_readonly("h", [](const PyCloud& c) { return c.cloud().h; })
      .def_property_readonly("points", [](const PyCloud& c) { return RowMat(c.cloud().points.transpose()); })
      .def_property_readonly("weights", [](const PyCloud& c) { return c.cloud().weights; })
      .def_property_readonly("g", [](const PyCloud& c) { return c.cloud().g; })
      .def("trusted_window",
           [](const PyCloud& c) {
             const Window w = c.cloud().trusted_window();
             return py::make_tuple(w.center, w.radius);
           })
      .def("__len__", [](const PyCloud& c) { return c.cloud().size(); });

  m.def("gen_plane", [](int n, int d, double extent, double h) { return wrap(gen_plane(n, d, extent, h)); },
        py::arg("n"), py::arg("d"), py::arg("extent"), py::arg("h"));
  m.def(
      "gen_lipschitz_graph",
      [](int n, int d, double delta, const std::string& mode, double extent, double h, std::uint64_t seed) {
        return wrap(gen_lipschitz_graph(n, d, delta, parse_graph_mode(mode), extent, h, seed));
      },
      py::arg("n"), py::arg("d"), py::arg("delta"), py::arg("mode") = "fourier", py::arg("extent") = 1.0,
      py::arg("h") = 1e-3, py::arg("seed") = 1);
  m.def("gen_snowflake",
        [](double flatness, int depth, double h, double base_length) {
          return wrap(gen_snowflake(flatness, depth, h, base_length));
        },
        py::arg("flatness"), py::arg("depth"), py::arg("h"), py::arg("base_length") = 0.0);
  m.def("snowflake_length_factor", &snowflake_length_factor);
  m.def("gen_two_planes",
        [](int n, double angle, double extent, double h) { return wrap(gen_two_planes(n, angle, extent, h)); },
        py::arg("n"), py::arg("angle"), py::arg("extent"), py::arg("h"));
  m.def("gen_half_plane", [](int n, double extent, double h) { return wrap(gen_half_plane(n, extent, h)); },
        py::arg("n"), py::arg("extent"), py::arg("h"));
  m.def("gen_sphere", [](int n, double R, double h) { return wrap(gen_sphere(n, R, h)); }, py::arg("n"),
        py::arg("R"), py::arg("h"));
  m.def(
      "with_density",
      [](const PyCloud& c, const std::string& profile, double amplitude, std::uint64_t seed) {
        WeightedPointCloud out = c.cloud();
        attach_density(out, parse_density_profile(profile), amplitude, seed);
        return PyCloud(std::move(out));
      },
      py::arg("cloud"), py::arg("profile"), py::arg("amplitude"), py::arg("seed") = 1);

  m.def(
      "bl_norm",
      [](const RowMat& pts, const Vec& masses, const Vec& x, double r, const std::string& method) {
        return bl_norm(SignedDiscreteMeasure::make(pts.transpose(), masses), LocalBall{x, r}, bl_method(method));
      },
      py::arg("points"), py::arg("masses"), py::arg("center"), py::arg("radius"), py::arg("method") = "flow");
  m.def(
      "bl_norm_oracle",
      [](const RowMat& pts, const Vec& masses, const Vec& x, double r) {
        return bl_norm_oracle(SignedDiscreteMeasure::make(pts.transpose(), masses), LocalBall{x, r});
      },
      py::arg("points"), py::arg("masses"), py::arg("center"), py::arg("radius"));

  m.def(
      "alpha",
      [](const PyCloud& c, const Vec& x, double r, int budget, double rel_tol, const std::string& method) {
        return alpha_ball(c.index(), x, r, search(budget, rel_tol, method)).value;
      },
      py::arg("cloud"), py::arg("center"), py::arg("radius"), py::arg("budget") = 200, py::arg("rel_tol") = 1e-4,
      py::arg("method") = "flow");
  m.def(
      "bbeta1",
      [](const PyCloud& c, const Vec& x, double r, int budget) {
        return bbeta1(c.index(), x, r, search(budget, 1e-4, "flow")).value;
      },
      py::arg("cloud"), py::arg("center"), py::arg("radius"), py::arg("budget") = 200);
  m.def(
      "bbetainf",
      [](const PyCloud& c, const Vec& x, double r, int budget) {
        return bbetainf(c.index(), x, r, search(budget, 1e-4, "flow")).value;
      },
      py::arg("cloud"), py::arg("center"), py::arg("radius"), py::arg("budget") = 200);
  m.def(
      "osc",
      [](const PyCloud& c, const Vec& x, double r, double norm_radius) {
        return osc_ball(c.index(), x, r, norm_radius);
      },
      py::arg("cloud"), py::arg("center"), py::arg("radius"), py::arg("norm_radius"));
  m.def(
      "gamma_global",
      [](const PyCloud& c, int n_samples, std::uint64_t seed, double tangent_k, int threads) {
        const TangentField T = tangent_planes(c.index(), tangent_k, threads);
        GammaSampling s;
        s.n_samples = n_samples;
        s.seed = seed;
        s.threads = threads;
        const GammaGlobal g = gamma_global(c.index(), T, s);
        py::dict d;
        d["value"] = g.value;
        d["center"] = g.center;
        d["radius"] = g.radius;
        d["samples"] = g.samples;
        return d;
      },
      py::arg("cloud"), py::arg("n_samples") = 64, py::arg("seed") = 1, py::arg("tangent_k") = 8.0,
      py::arg("threads") = 1);
  m.def(
      "ahlfors_profile",
      [](const PyCloud& c, double rho_min, int n_centers, int n_radii, bool windowed, std::uint64_t seed) {
        ProfileOptions o;
        o.rho_min = rho_min;
        o.n_centers = n_centers;
        o.n_radii = n_radii;
        o.seed = seed;
        if (windowed) o.window = c.cloud().trusted_window();
        const AhlforsProfile p = ahlfors_profile(c.cloud(), o);
        py::dict d;
        d["C_upper_est"] = p.C_upper_est;
        d["C_lower_est"] = p.C_lower_est;
        d["r_min"] = p.r_min;
        d["r_max"] = p.r_max;
        d["samples"] = p.samples.size();
        return d;
      },
      py::arg("cloud"), py::arg("rho_min"), py::arg("n_centers") = 32, py::arg("n_radii") = 12,
      py::arg("windowed") = true, py::arg("seed") = 1);

  py::class_<Lattice>(m, "Lattice")
      .def_readonly("j_min", &Lattice::j_min)
      .def_readonly("j_max", &Lattice::j_max)
      .def_readonly("C_D_emp", &Lattice::C_D_emp)
      .def_readonly("C_D_all", &Lattice::C_D_all)
      .def("__len__", [](const Lattice& l) { return l.cubes.size(); })
      .def("level", [](const Lattice& l, int j) { return l.level(j); })
      .def("roots", [](const Lattice& l) { return l.roots(); })
      .def("cube",
           [](const Lattice& l, int id) {
             const auto& Q = l.cubes.at(id);
             py::dict d;
             d["id"] = Q.id;
             d["j"] = Q.j;
             d["center_index"] = Q.center_index;
             d["parent"] = Q.parent;
             d["children"] = Q.children;
             d["members"] = Q.members;
             d["mass"] = Q.mass;
             d["diam"] = Q.diam;
             return d;
           })
      .def("to_json", [](const Lattice& l) { return lattice_to_json(l); });
  m.def(
      "build_lattice",
      [](const PyCloud& c, int j_min, std::optional<int> j_max, std::uint64_t seed) {
        return build_lattice(c.cloud(), j_min, j_max ? *j_max : max_generation(c.cloud()), seed);
      },
      py::arg("cloud"), py::arg("j_min") = 2, py::arg("j_max") = py::none(), py::arg("seed") = 1);
  m.def(
      "verify_lattice",
      [](const Lattice& l, const PyCloud& c, const std::vector<double>& taus) {
        return lattice_report_dict(verify_lattice(l, c.cloud(), taus));
      },
      py::arg("lattice"), py::arg("cloud"), py::arg("taus") = std::vector<double>{0.1});

  py::class_<Table>(m, "CoefficientTable")
      .def("__len__", [](const Table& t) { return t.rows.size(); })
      .def("arrays", &table_arrays)
      .def("to_csv", [](const Table& t) { return coefficients_to_csv(t.rows); });
  m.def(
      "coefficient_table",
      [](const PyCloud& c, const Lattice& l, const std::vector<std::string>& select, int budget, int threads) {
        TableOptions o;
        o.which = {false, false, false, false, false};
        for (const auto& s : select) switch (parse_coefficient_kind(s)) {
            case CoefficientKind::Alpha: o.which.alpha = true; break;
            case CoefficientKind::Bbeta1: o.which.bbeta1 = true; break;
            case CoefficientKind::Bbetainf: o.which.bbetainf = true; break;
            case CoefficientKind::Osc: o.which.osc = true; break;
            case CoefficientKind::Gamma: o.which.gamma = true; break;
          }
        o.search.budget = budget;
        o.threads = threads;
        py::gil_scoped_release nogil;
        return Table{compute_cube_coefficients(c.index(), l, o)};
      },
      py::arg("cloud"), py::arg("lattice"), py::arg("select") = std::vector<std::string>{"alpha", "bbeta1", "bbetainf"},
      py::arg("budget") = 200, py::arg("threads") = 1);
  m.def(
      "carleson_sup",
      [](const Lattice& l, const Table& t, const PyCloud& c, const std::string& kind, int min_generation,
         double interior_factor) {
        const CarlesonReport r = carleson_sup(l, t.rows, c.cloud(), parse_coefficient_kind(kind), min_generation,
                                              interior_factor);
        py::dict d;
        d["sup"] = r.sup;
        d["argmax"] = r.argmax;
        d["roots"] = r.rows.size();
        d["j_lo"] = r.j_lo;
        d["j_hi"] = r.j_hi;
        return d;
      },
      py::arg("lattice"), py::arg("table"), py::arg("cloud"), py::arg("kind"), py::arg("min_generation"),
      py::arg("interior_factor") = 4.0);

  m.def(
      "corona",
      [](const PyCloud& c, const Lattice& l, std::optional<std::vector<int>> roots, double delta, double theta,
         double theta_prime) {
        CoronaParams p;
        p.delta = delta;
        p.theta = theta;
        p.theta_prime = theta_prime;
        const auto forests = corona_decompose_roots(c.index(), l, roots ? *roots : l.roots(), p);
        py::list out;
        for (const auto& f : forests) {
          const CoronaReport r = verify_corona(f, c.index(), l, forests);
          py::dict d;
          d["root"] = f.root;
          d["ok"] = r.ok();
          d["problems"] = r.problems;
          d["families"] = r.families;
          d["flagged"] = r.flagged;
          d["packing_max"] = r.packing_max;
          d["proximity_delta"] = r.proximity_delta;
          d["eta"] = f.eta;
          d["shared_from"] = f.shared_from;
          out.append(d);
        }
        return out;
      },
      py::arg("cloud"), py::arg("lattice"), py::arg("roots") = py::none(), py::arg("delta") = 0.05,
      py::arg("theta") = 0.5, py::arg("theta_prime") = 0.0);
  m.def(
      "delta_ur_scan",
      [](const PyCloud& c, int n_samples, std::uint64_t seed) {
        UrScanOptions o;
        o.n_samples = n_samples;
        o.seed = seed;
        const UrScan s = delta_ur_scan(c.index(), o);
        py::dict d;
        d["delta_est"] = s.delta_est;
        d["capped"] = s.capped;
        d["samples"] = s.samples.size();
        return d;
      },
      py::arg("cloud"), py::arg("n_samples") = 32, py::arg("seed") = 1);

  m.def("config_hash", [](const std::string& config) { return config_hash(parse_run_config(nlohmann::json::parse(config))); });
  m.def("normalized_config",
        [](const std::string& config) { return parse_run_config(nlohmann::json::parse(config)).normalized.dump(); });
  m.def(
      "run_stage",
      [](const std::string& config, const std::string& stage) {
        const RunConfig cfg = parse_run_config(nlohmann::json::parse(config));
        std::ostringstream log;
        StageResult r;
        {
          py::gil_scoped_release nogil;
          r = run_stage(cfg, parse_stage(stage), log);
        }
        py::dict d;
        d["outputs"] = r.outputs;
        d["warnings"] = r.warnings;
        d["verified"] = r.verified;
        return d;
      },
      py::arg("config"), py::arg("stage"));
}
