#include "ksfem/driver.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ksfem/error.hpp"
#include "ksfem/locator.hpp"

namespace ksfem {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor absolute(const Tensor& h) {
  const Eigen::SelfAdjointEigenSolver<Tensor> es(h);
  return es.eigenvectors() * es.eigenvalues().cwiseAbs().asDiagonal() * es.eigenvectors().transpose();
}

const char* solver_name(bool augmented) { return augmented ? "augmented" : "direct"; }

std::string external_mesh_path(const std::string& pattern, int level) {
  if (pattern.empty()) return {};
  std::string path = pattern;
  const auto pos = path.find("{}");
  if (pos != std::string::npos) path.replace(pos, 2, std::to_string(level));
  return std::filesystem::exists(path) ? path : std::string{};
}

void check_external_mesh(const Mesh& mesh, const Box& box, const std::string& path) {
  const double scale = box.extent().maxCoeff();
  if ((mesh.box().lo - box.lo).cwiseAbs().maxCoeff() > 1e-10 * scale ||
      (mesh.box().hi - box.hi).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ConfigError(fmt::format("{} does not cover the system box", path));
  }
}

}  // namespace

void validate(const DriverConfig& c, const MolecularSystem& system) {
  system.validate();
  if (c.n0 < 2) throw ConfigError(fmt::format("n0 must be at least 2, got {}", c.n0));
  if (c.dn < 1) throw ConfigError(fmt::format("dn must be positive, got {}", c.dn));
  if (c.k_max < 0) throw ConfigError(fmt::format("k_max must be nonnegative, got {}", c.k_max));
  if (c.k_asm < 0) throw ConfigError(fmt::format("k_asm must be nonnegative, got {}", c.k_asm));
  if (!(c.tol >= 0.0)) throw ConfigError("driver tolerance must be nonnegative");
  if (c.coarse_n < 2) throw ConfigError(fmt::format("coarse_n must be at least 2, got {}", c.coarse_n));
  if (!(c.metric.epsilon > 0.0)) throw ConfigError("metric epsilon must be positive");
  if (!(c.metric.h_min > 0.0 && c.metric.h_min < c.metric.h_max)) {
    throw ConfigError(fmt::format("need 0 < h_min < h_max, got {} and {}", c.metric.h_min, c.metric.h_max));
  }
  if (c.move.sweeps < 0) throw ConfigError("move sweeps must be nonnegative");
  if (c.scf.max_iter < 1 || !(c.scf.tol > 0.0)) throw ConfigError("invalid SCF iteration limits");
  if (c.augmented.max_outer < 1 || c.augmented.max_inner < 1 || !(c.augmented.tol > 0.0)) {
    throw ConfigError("invalid augmented iteration limits");
  }
}

std::vector<Tensor> adaptation_hessian(const Mesh& mesh, const Eigen::VectorXd& rho, const Eigen::MatrixXd& waves,
                                       AdaptiveFunction function) {
  switch (function) {
    case AdaptiveFunction::kSqrtDensity:
      return recover_hessian(mesh, rho.cwiseMax(0.0).cwiseSqrt());
    case AdaptiveFunction::kDensity:
      return recover_hessian(mesh, rho);
    case AdaptiveFunction::kWavefunctions: {
      std::vector<Tensor> sum(mesh.num_nodes(), Tensor::Zero());
      for (int i = 0; i < waves.cols(); ++i) {
        const std::vector<Tensor> h = recover_hessian(mesh, waves.col(i));
        for (int v = 0; v < mesh.num_nodes(); ++v) sum[v] += absolute(h[v]);
      }
      return sum;
    }
  }
  throw ConfigError("unknown adaptive function");
}

DriverResult adaptive_driver(const MolecularSystem& system, const DriverConfig& config) {
  validate(config, system);
  DriverResult result;
  const Box& box = system.box;

  MoveOptions move = config.move;
  if (config.pin_nuclei) {
    for (const Atom& a : system.atoms) move.pinned_points.push_back(a.position);
  }

  MeshPtr prev_logical;
  double prev_energy = std::numeric_limits<double>::quiet_NaN();
  for (int k = 0; k <= config.k_max; ++k) {
    LevelResult level;
    level.level = k;
    level.n = config.n0 + k * config.dn;
    try {
      const auto ta = Clock::now();
      const auto logical = std::make_shared<const Mesh>(build_box_mesh(box, level.n));
      MeshPtr mesh = logical;
      const std::string external = external_mesh_path(config.external_mesh_pattern, k);
      if (!external.empty()) {
        mesh = std::make_shared<const Mesh>(read_mesh(external));
        check_external_mesh(*mesh, box, external);
        spdlog::info("level {}: using external mesh {}", k, external);
      } else if (k > 0 && config.mode != SolverMode::kUniform) {
        const Mesh start = prev_logical ? transfer_deformation(*logical, *prev_logical, *result.mesh) : *logical;
        mesh = std::make_shared<const Mesh>(move_mesh(start, result.metric, move));
      }
      level.elements = mesh->num_tets();

      const KohnShamProblem problem(mesh, system, config.terms);
      std::optional<Eigen::MatrixXd> waves0;
      if (k > 0) {
        const Locator locator(result.mesh, config.seed);
        const Interpolator interp(locator, *mesh);
        Eigen::MatrixXd moved(mesh->num_nodes(), result.waves.cols());
        for (int i = 0; i < moved.cols(); ++i) moved.col(i) = interp.apply(Eigen::VectorXd(result.waves.col(i)));
        moved = problem.space().restrict(moved);
        level.transferred_charge = problem.charge(interp.apply(result.rho)) / result.levels.back().charge;
        waves0 = b_orthonormalize(moved, problem.mass());
        const Eigen::MatrixXd gram = waves0->transpose() * (problem.mass() * *waves0);
        level.orthonormality_defect =
            (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
        level.renormalized_charge = problem.charge(problem.density(*waves0)) / result.levels.back().charge;
        level.growth = static_cast<double>(mesh->num_nodes()) / result.mesh->num_nodes();
        spdlog::info("level {}: charge ratio {:.6f} interpolated, {:.6f} renormalized; node growth {:.3f}", k,
                     level.transferred_charge, level.renormalized_charge, level.growth);
      }
      level.adapt_s = seconds_since(ta);

      const bool augmented = config.mode == SolverMode::kAugmented && k > config.k_asm;
      level.solver = solver_name(augmented);
      const auto ts = Clock::now();
      ScfResult state;
      if (augmented) {
        const Mesh coarse_logical = build_box_mesh(box, config.coarse_n);
        const auto coarse = std::make_shared<const Mesh>(
            external.empty() ? transfer_deformation(coarse_logical, *logical, *mesh) : coarse_logical);
        AugmentedResult a = augmented_solve(problem, coarse, *waves0, config.augmented);
        level.augmented_log = std::move(a.log);
        state = std::move(a.state);
      } else {
        state = scf_solve(problem, config.scf, waves0);
      }
      level.wall_s = seconds_since(ts);
      if (augmented && config.shadow_direct) {
        const auto td = Clock::now();
        const ScfResult direct = scf_solve(problem, config.scf, waves0);
        level.shadow = LevelResult::Shadow{direct.energy.total, seconds_since(td), direct.converged,
                                           problem.norm(state.rho - direct.rho)};
        spdlog::info("level {}: direct comparison E = {:.6f} in {:.3f} s, density difference {:.3e}", k,
                     direct.energy.total, level.shadow->wall_s, level.shadow->density_difference);
      }
      level.energy = state.energy.total;
      level.error = config.reference_energy ? std::abs(level.energy - *config.reference_energy)
                                            : std::numeric_limits<double>::quiet_NaN();
      level.charge = problem.charge(state.rho);
      level.converged = state.converged;
      level.iterations = state.iterations;
      if (!augmented) level.scf_log = std::move(state.log);
      spdlog::info("level {}: {} elements, E = {:.6f}, {} in {:.3f} s ({} iterations{})", k, level.elements,
                   level.energy, level.solver, level.wall_s, level.iterations,
                   level.converged ? "" : ", not converged");

      result.mesh = mesh;
      result.waves = problem.space().lift(state.waves);
      result.eigenvalues = state.eigenvalues;
      result.rho = state.rho;
      result.energy = state.energy;
      prev_logical = external.empty() ? logical : nullptr;
      if (config.mode != SolverMode::kUniform) {
        const auto hessians = adaptation_hessian(*mesh, result.rho, result.waves, config.adaptive_function);
        result.metric = metric_from_hessian(mesh, hessians, config.metric);
      }
    } catch (const Error& e) {
      result.failure = fmt::format("level {}: {}", k, e.what());
      result.failure_kind = dynamic_cast<const ConfigError*>(&e) ? FailureKind::kConfig
                            : dynamic_cast<const IoError*>(&e)   ? FailureKind::kIo
                                                                 : FailureKind::kSolver;
      spdlog::error("{}", *result.failure);
      break;
    }
    result.levels.push_back(level);

    const double change = std::abs(level.energy - prev_energy) / std::abs(level.energy);
    prev_energy = level.energy;
    if (k > 0 && change < config.tol) {
      spdlog::info("relative energy change {:.3e} below {:.1e}; stopping", change, config.tol);
      break;
    }
  }
  return result;
}

void write_level_table(const std::string& path, const std::vector<LevelResult>& levels) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path));
  out << "level,elements,energy,error,solver,wall_s\n";
  for (const LevelResult& l : levels) {
    out << fmt::format("{},{},{:.6f},{:.6f},{},{:.3f}\n", l.level, l.elements, l.energy, l.error, l.solver,
                       l.wall_s);
  }
  if (!out) throw IoError(fmt::format("write to {} failed", path));
}

}  // namespace ksfem
