#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ksfem/adapt.hpp"
#include "ksfem/augmented.hpp"
#include "ksfem/scf.hpp"

namespace ksfem {

enum class SolverMode {
  kAugmented,  ///< direct SCF up to level k_asm, augmented solves after
  kDirect,     ///< direct SCF on every adapted level
  kUniform,    ///< direct SCF on unmoved box meshes
};

enum class AdaptiveFunction { kSqrtDensity, kDensity, kWavefunctions };

struct DriverConfig {
  SolverMode mode = SolverMode::kAugmented;
  AdaptiveFunction adaptive_function = AdaptiveFunction::kSqrtDensity;
  /// Level k uses the logical grid build_box_mesh(box, n0 + k * dn).
  int n0 = 12;
  int dn = 4;
  int k_asm = 4;
  int k_max = 5;
  /// Stop once |E_k - E_{k-1}| / |E_k| falls below; 0 runs every level.
  double tol = 1e-3;
  /// Subdivisions of the logical coarse grid of the augmented space.
  int coarse_n = 8;
  bool pin_nuclei = true;
  MetricOptions metric;
  MoveOptions move;
  ScfConfig scf;
  AugmentedConfig augmented;
  HamiltonianTerms terms;
  /// Path pattern with "{}" standing for the level number. A level whose
  /// file exists uses that mesh (e.g. from an external remesher fed the
  /// metric of the previous level) instead of the moved box mesh.
  std::string external_mesh_pattern;
  std::optional<double> reference_energy;
  /// On augmented levels, also run the direct SCF from the same start on the
  /// same mesh and record the comparison; the level keeps the augmented state.
  bool shadow_direct = false;
  std::uint64_t seed = 0x5eed;
};

struct LevelResult {
  int level = 0;
  int n = 0;
  int elements = 0;
  double energy = 0.0;
  /// |E - E_ref|, NaN without a reference.
  double error = 0.0;
  std::string solver;
  /// Solver time only; mesh adaptation and transfer are excluded.
  double wall_s = 0.0;
  double adapt_s = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Integral of the output density.
  double charge = 0.0;
  /// Integral of the previous level's density after interpolation onto this
  /// mesh, relative to its integral on the previous mesh (1 on level 0).
  double transferred_charge = 1.0;
  /// Same ratio for the density of the transferred waves after
  /// re-orthonormalization.
  double renormalized_charge = 1.0;
  /// max |W^T M W - I| of the transferred, re-orthonormalized waves.
  double orthonormality_defect = 0.0;
  /// Node count ratio to the previous level.
  double growth = 1.0;
  /// Filled by DriverConfig::shadow_direct on augmented levels.
  struct Shadow {
    double energy = 0.0;
    double wall_s = 0.0;
    bool converged = false;
    /// Mass-weighted L2 norm of rho_augmented - rho_direct.
    double density_difference = 0.0;
  };
  std::optional<Shadow> shadow;
  std::vector<ScfLogRow> scf_log;
  std::vector<AugmentedLogRow> augmented_log;
};

enum class FailureKind { kNone, kConfig, kIo, kSolver };

struct DriverResult {
  std::vector<LevelResult> levels;
  /// Set when a level threw; earlier levels are kept.
  std::optional<std::string> failure;
  FailureKind failure_kind = FailureKind::kNone;
  /// State of the last completed level.
  MeshPtr mesh;
  Eigen::MatrixXd waves;  // all nodes x N
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd rho;
  EnergyTerms energy;
  MetricField metric;  // metric computed from the last level, if any
};

/// Validates the configuration; throws ConfigError.
void validate(const DriverConfig& config, const MolecularSystem& system);

/// Nodal function whose Hessian drives adaptation.
std::vector<Tensor> adaptation_hessian(const Mesh& mesh, const Eigen::VectorXd& rho, const Eigen::MatrixXd& waves,
                                       AdaptiveFunction function);

/// Runs the level loop. Throws ConfigError for an invalid configuration;
/// failures inside a level are reported through DriverResult::failure.
DriverResult adaptive_driver(const MolecularSystem& system, const DriverConfig& config);

/// CSV with columns level, elements, energy, error, solver, wall_s.
void write_level_table(const std::string& path, const std::vector<LevelResult>& levels);

}  // namespace ksfem
