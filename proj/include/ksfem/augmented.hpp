#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ksfem/scf.hpp"

namespace ksfem {

/// mu = 8 M sum_k Z_k^2 for M nuclei.
double default_shift(const MolecularSystem& system);

/// Nodal interpolation from `coarse` onto the nodes of `fine`: row i holds
/// the barycentric weights of fine node i in the coarse tet containing it.
/// Both meshes must cover the same box.
EigenCsr interpolation_matrix(MeshPtr coarse, const Mesh& fine);
/// Rows of fine free nodes, columns of coarse free nodes.
EigenCsr free_interpolation(const FemSpace& coarse, const FemSpace& fine);

/// Galerkin blocks of a fine operator in the basis [I, extra]:
/// [[I^T A I, I^T A X], [X^T A I, X^T A X]].
Eigen::MatrixXd project_augmented(const SparseSymMatrix& a, const EigenCsr& interp, const Eigen::MatrixXd& extra);

struct BvpResult {
  Eigen::MatrixXd waves;
  std::vector<CgResult> cg;
  int total_iterations() const;
};

/// Solves (H + mu M) psi_hat_i = (lambda_i + mu) M psi_i column by column,
/// starting CG from psi_i. Throws SolverError naming the first column whose
/// CG did not converge.
BvpResult solve_shifted_bvps(const SparseSymMatrix& h, const SparseSymMatrix& mass, double mu,
                             const Eigen::VectorXd& lambda, const Eigen::MatrixXd& psi, const CgOptions& cg = {});

/// Lowest `count` eigenpairs of the dense augmented pair. Throws SolverError
/// when fb is numerically singular, i.e. the augmented basis is dependent.
DenseEigenResult solve_augmented_eigenproblem(const Eigen::MatrixXd& fa, const Eigen::MatrixXd& fb, int count);

/// Coarse space of one fine problem, with the parts of the projected
/// operators that stay fixed over a level cached.
class AugmentedSpace {
 public:
  AugmentedSpace(const KohnShamProblem& fine, MeshPtr coarse);

  const KohnShamProblem& fine() const { return fine_; }
  const FemSpace& coarse() const { return coarse_; }
  const EigenCsr& interpolation() const { return interp_; }
  int coarse_size() const { return coarse_.num_free(); }

  /// Fixes the fine block. Columns are B-orthonormalized; a dependent column
  /// is perturbed by 1e-8 relative noise and orthonormalized again.
  void set_extra(const Eigen::MatrixXd& extra);
  const Eigen::MatrixXd& extra() const { return extra_; }

  /// Fine 1/2 stiffness + V_ext over free nodes.
  const SparseSymMatrix& linear_operator() const { return linear_; }
  /// Projected mass, and projected 1/2 stiffness + V_ext.
  const Eigen::MatrixXd& mass_blocks() const { return fb_; }
  const Eigen::MatrixXd& linear_blocks() const { return fa_linear_; }
  /// Projection of a fine operator on the free-node pattern.
  Eigen::MatrixXd project(const SparseSymMatrix& a) const;

  /// Fine free-node coefficients [I, extra] u.
  Eigen::MatrixXd lift(const Eigen::MatrixXd& u) const;

 private:
  const KohnShamProblem& fine_;
  FemSpace coarse_;
  EigenCsr interp_;
  SparseSymMatrix linear_;
  Eigen::MatrixXd coarse_linear_, coarse_mass_;
  Eigen::MatrixXd extra_, fa_linear_, fb_;
  std::uint64_t perturb_seed_ = 7;
};

/// How augmented_solve picks the shift when AugmentedConfig::mu is not set.
enum class ShiftRule {
  kCharges,   ///< default_shift(system)
  kSpectral,  ///< max(1, -2 lambda_1) from the starting Rayleigh-Ritz values
};

struct AugmentedConfig {
  int max_outer = 30;
  /// Stop when the mass-weighted L2 change of the density between outer
  /// iterations falls below.
  double tol = 2e-4;
  int max_inner = 40;
  double inner_tol = 1e-6;
  int depth = 5;
  double beta = 0.7;
  bool mass_inner_product = true;
  /// Shift of the linear solves; `shift_rule` decides when not positive.
  double mu = 0.0;
  ShiftRule shift_rule = ShiftRule::kCharges;
  CgOptions cg{1e-8, 20000, Preconditioner::kJacobi};
};

struct AugmentedLogRow {
  int outer = 0;
  double energy = 0.0;
  double density_change = 0.0;
  double max_eigen_residual = 0.0;
  int bvp_cg_iterations = 0;
  int inner_iterations = 0;
  double wall_ms = 0.0;
};

struct AugmentedResult {
  /// Final fine-space state; `state.log` lists every inner iteration, with
  /// NaN energies since those are only evaluated once per outer iteration.
  ScfResult state;
  std::vector<AugmentedLogRow> log;
  double mu = 0.0;
};

/// Alternates the shifted linear solves on the fine mesh with the small
/// Kohn-Sham problem in span(coarse basis) + span(psi_hat), starting from
/// `waves0` (fine free nodes x N). Never throws on nonconvergence; the best
/// outer iterate is returned flagged.
AugmentedResult augmented_solve(AugmentedSpace& space, const Eigen::MatrixXd& waves0,
                                const AugmentedConfig& config = {});

/// Overload that owns its coarse space.
AugmentedResult augmented_solve(const KohnShamProblem& fine, MeshPtr coarse, const Eigen::MatrixXd& waves0,
                                const AugmentedConfig& config = {});

/// CSV with columns outer, energy, density_change, max_eigen_residual,
/// bvp_cg_iterations, inner_iterations, wall_ms.
void write_augmented_log(const std::string& path, const std::vector<AugmentedLogRow>& log);

}  // namespace ksfem
