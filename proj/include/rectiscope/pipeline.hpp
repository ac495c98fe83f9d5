#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rectiscope/carleson.hpp"
#include "rectiscope/coefficients.hpp"
#include "rectiscope/corona.hpp"

namespace rectiscope {

// Bad run configuration. field is the dotted path of the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& msg)
      : std::invalid_argument("config field '" + field + "': " + msg), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// A stage found its predecessor missing, produced under another
// configuration, or edited after the fact.
class StaleArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeneratorSpec {
  std::string kind = "graph";   // plane, graph, snowflake, two_planes, half_plane, sphere
  int n = 2, d = 1;
  double delta = 0.1;
  std::string mode = "fourier";
  double extent = 1.0;
  double h = 1e-3;
  std::uint64_t seed = 1;
  double angle = 0.7853981633974483;
  double flatness = 0.05;
  int depth = 6;
  double base_length = 0;
  double radius = 1.0;
  std::string density = "const";
  double amplitude = 0;
  std::uint64_t density_seed = 1;
};

struct RunConfig {
  std::optional<std::string> input_path;
  std::optional<GeneratorSpec> generator;
  std::uint64_t seed = 1;

  ProfileOptions ahlfors;        // rho_min defaults to 8, window on

  int j_min = 2;
  int j_max = -1;                // -1 = max_generation
  double max_cd = 16;
  std::uint64_t lattice_seed = 1;
  std::vector<double> boundary_tau{0.1};

  TableOptions table;
  bool gamma_global = true;
  GammaSampling gamma_sampling;

  CoronaParams corona;
  int corona_generation = -1;    // -1 = j_max
  UrScanOptions ur;

  int min_generation = -1;       // -1 = j_min + 2
  double interior_factor = 4;
  std::vector<CoefficientKind> kinds;   // empty = every selected coefficient

  std::string output = "rectiscope_out";
  int threads = 1;

  // Every field with defaults filled in; output and threads left out.
  nlohmann::json normalized;
};

// Defaults, validation and seed inheritance. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

std::string sha256_hex(const std::string& bytes);
std::string config_hash(const RunConfig& cfg);

enum class Stage { Generate, Lattice, Coeffs, Corona, Carleson, Verify, Report };
Stage parse_stage(const std::string& s);
std::string to_string(Stage s);

struct StageResult {
  std::vector<std::string> outputs;    // file names inside the output directory
  std::vector<std::string> warnings;
  bool verified = true;                // verify stage: every check passed
};

// Runs one stage into cfg.output. Warnings also go to log.
StageResult run_stage(const RunConfig& cfg, Stage stage, std::ostream& log);
// Every stage in order.
void run_pipeline(const RunConfig& cfg, std::ostream& log);

}  // namespace rectiscope
