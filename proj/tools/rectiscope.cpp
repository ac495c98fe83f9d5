#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "rectiscope/error.hpp"
#include "rectiscope/pipeline.hpp"

using namespace rectiscope;

namespace {

// exit codes
constexpr int kOk = 0, kFailed = 1, kBadConfig = 2, kStale = 3, kUnverified = 4;

struct Flags {
  std::string config;
  std::string out;
  int threads = 0;
  long long seed = -1;
};

RunConfig load(const Flags& f) {
  std::ifstream in(f.config);
  if (!in) throw InputError("cannot open config '" + f.config + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("config '" + f.config + "': " + e.what(), 0);
  }
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  if (!f.out.empty()) j["output"] = f.out;
  if (f.threads > 0) j["threads"] = f.threads;
  if (f.seed >= 0) j["seed"] = f.seed;
  return parse_run_config(j);
}

int run(const Flags& f, const std::vector<Stage>& stages) {
  try {
    const RunConfig cfg = load(f);
    bool verified = true;
    for (Stage s : stages) {
      const StageResult r = run_stage(cfg, s, std::cerr);
      verified = verified && r.verified;
      std::cerr << to_string(s) << ": wrote";
      for (const auto& o : r.outputs) std::cerr << ' ' << o;
      std::cerr << '\n';
    }
    return verified ? kOk : kUnverified;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const StaleArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStale;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rectiscope: multiscale flatness coefficients, dyadic lattices and corona decompositions of point clouds"};
  app.require_subcommand(1);
  Flags f;
  std::vector<Stage> stages;

  auto add = [&](const std::string& name, const std::string& help, std::vector<Stage> which) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "output directory (overrides config 'output')");
    sub->add_option("--threads", f.threads, "worker threads (overrides config 'threads')")->check(CLI::Range(1, 1024));
    sub->add_option("--seed", f.seed, "base seed (overrides config 'seed')")->check(CLI::NonNegativeNumber);
    sub->callback([&stages, which] { stages = which; });
  };
  add("generate", "load or synthesize the cloud, write cloud.bin and its Ahlfors profile", {Stage::Generate});
  add("lattice", "build and check the dyadic lattice", {Stage::Lattice});
  add("coeffs", "per-cube coefficient table and global gamma", {Stage::Coeffs});
  add("corona", "corona decomposition of the top cubes plus the delta-UR scan", {Stage::Corona});
  add("carleson", "Carleson sums of the coefficient table", {Stage::Carleson});
  add("verify", "re-check lattice, coefficient and corona artifacts", {Stage::Verify});
  add("report", "collate summary.json", {Stage::Report});
  add("run", "every stage in order",
      {Stage::Generate, Stage::Lattice, Stage::Coeffs, Stage::Corona, Stage::Carleson, Stage::Verify, Stage::Report});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadConfig;
  }
  return run(f, stages);
}
