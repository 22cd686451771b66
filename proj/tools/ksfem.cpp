// ksfem command line: ksfem run <config> [options]

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "ksfem/augmented.hpp"
#include "ksfem/config.hpp"
#include "ksfem/error.hpp"

namespace fs = std::filesystem;
using namespace ksfem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;
constexpr int kExitIo = 4;

struct Options {
  std::string config;
  std::optional<std::string> mode;
  std::optional<int> levels;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool verbose = false;
};

void write_summary(const std::string& path, const DriverResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path));
  const EnergyTerms& e = r.energy;
  out << "quantity,value\n";
  out << fmt::format("total,{:.6f}\nband,{:.6f}\nhartree_dc,{:.6f}\nxc_dc,{:.6f}\nxc,{:.6f}\nnuclear,{:.6f}\n", e.total,
                     e.band, e.hartree_dc, e.xc_dc, e.xc, e.nn);
  for (int i = 0; i < r.eigenvalues.size(); ++i) out << fmt::format("lambda_{},{:.6f}\n", i + 1, r.eigenvalues[i]);
  if (!out) throw IoError(fmt::format("write to {} failed", path));
}

void write_fields(const fs::path& dir, const DriverResult& r) {
  const Mesh& mesh = *r.mesh;
  write_mesh(mesh, (dir / "final.mesh").string());
  write_scalar_sol(mesh, r.rho, (dir / "rho.sol").string());
  std::vector<NamedField> fields{{"rho", r.rho}};
  for (int i = 0; i < r.waves.cols(); ++i) {
    const std::string name = fmt::format("psi_{}", i + 1);
    write_scalar_sol(mesh, r.waves.col(i), (dir / (name + ".sol")).string());
    fields.push_back({name, r.waves.col(i)});
  }
  write_vtk(mesh, fields, (dir / "fields.vtk").string());
  if (!r.metric.tensors.empty()) write_metric_sol(r.metric, (dir / "metric.sol").string());
}

void write_manifest(const fs::path& dir, const RunConfig& cfg, const Options& opt, const DriverResult& r,
                    int workers) {
  nlohmann::ordered_json j;
  j["program"] = "ksfem";
  j["version"] = KSFEM_VERSION;
  j["config"] = opt.config;
  j["config_fnv1a"] = fnv1a_hex(cfg.source);
  j["system"] = cfg.name;
  j["mode"] = to_string(cfg.driver.mode);
  j["levels"] = cfg.driver.k_max;
  j["seed"] = cfg.driver.seed;
  j["workers"] = workers;
  j["libraries"] = {{"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
                    {"fmt", FMT_VERSION},
                    {"spdlog", fmt::format("{}.{}.{}", SPDLOG_VER_MAJOR, SPDLOG_VER_MINOR, SPDLOG_VER_PATCH)}};
  j["completed_levels"] = r.levels.size();
  j["status"] = r.failure ? "failed" : "ok";
  if (r.failure) j["failure"] = *r.failure;
  if (!r.levels.empty()) j["final_energy"] = fmt::format("{:.6f}", r.levels.back().energy);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError(fmt::format("cannot write {}", (dir / "manifest.json").string()));
  out << j.dump(2) << "\n";
}

int run(const Options& opt) {
  RunConfig cfg = parse_config(opt.config, environment_overrides());
  if (opt.mode) cfg.driver.mode = parse_mode(*opt.mode);
  if (opt.levels) cfg.driver.k_max = *opt.levels;
  if (opt.seed) cfg.driver.seed = *opt.seed;
  if (opt.out) cfg.out_dir = *opt.out;
  validate(cfg.driver, cfg.system);

  int workers = 1;
#ifdef _OPENMP
  if (opt.workers) {
    if (*opt.workers < 1) throw ConfigError("--workers must be positive");
    omp_set_num_threads(*opt.workers);
  }
  workers = omp_get_max_threads();
#endif

  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", dir.string(), ec.message()));

  spdlog::info("{}: {} atoms, {} orbitals, mode {}, levels 0..{}", cfg.name, cfg.system.atoms.size(),
               cfg.system.num_orbitals, to_string(cfg.driver.mode), cfg.driver.k_max);
  const DriverResult r = adaptive_driver(cfg.system, cfg.driver);

  write_level_table((dir / "levels.csv").string(), r.levels);
  for (const LevelResult& l : r.levels) {
    if (l.solver == "augmented") {
      write_augmented_log((dir / fmt::format("level_{}_augmented.csv", l.level)).string(), l.augmented_log);
    } else {
      write_scf_log((dir / fmt::format("level_{}_scf.csv", l.level)).string(), l.scf_log);
    }
  }
  if (r.mesh) {
    write_summary((dir / "summary.csv").string(), r);
    write_fields(dir, r);
  }
  write_manifest(dir, cfg, opt, r, workers);

  for (const LevelResult& l : r.levels) {
    std::cout << fmt::format("level {:2d}  elements {:7d}  E {:.6f}  {:9s}  {:.3f} s\n", l.level, l.elements,
                             l.energy, l.solver, l.wall_s);
  }
  switch (r.failure_kind) {
    case FailureKind::kNone: return 0;
    case FailureKind::kConfig: return kExitConfig;
    case FailureKind::kIo: return kExitIo;
    case FailureKind::kSolver: return kExitSolver;
  }
  return kExitSolver;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("ksfem"));
  CLI::App app{"All-electron Kohn-Sham DFT on adaptive tetrahedral P1 finite elements"};
  app.require_subcommand(1);
  Options opt;
  CLI::App* cmd = app.add_subcommand("run", "Run the adaptive level driver on a system config");
  cmd->add_option("config", opt.config, "System configuration file")->required();
  cmd->add_option("--mode", opt.mode, "direct, augmented or uniform")->envname("KSFEM_MODE");
  cmd->add_option("--levels", opt.levels, "Index of the last level")->envname("KSFEM_LEVELS");
  cmd->add_option("--workers", opt.workers, "Thread count")->envname("KSFEM_WORKERS");
  cmd->add_option("--seed", opt.seed, "Seed of the randomized point walk")->envname("KSFEM_SEED");
  cmd->add_option("--out", opt.out, "Output directory")->envname("KSFEM_OUT");
  cmd->add_flag("-v,--verbose", opt.verbose, "Debug logging");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  if (opt.verbose) spdlog::set_level(spdlog::level::debug);

  try {
    return run(opt);
  } catch (const ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    spdlog::error("i/o: {}", e.what());
    return kExitIo;
  } catch (const Error& e) {
    spdlog::error("solver: {}", e.what());
    return kExitSolver;
  }
}
