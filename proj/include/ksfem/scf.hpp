#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ksfem/eigensolve.hpp"
#include "ksfem/fem.hpp"
#include "ksfem/potentials.hpp"

namespace ksfem {

/// Switches for the nonlinear terms; disabling both leaves a linear problem.
struct HamiltonianTerms {
  bool hartree = true;
  bool xc = true;
};

/// Mean-field potentials of one density.
struct MeanField {
  Eigen::VectorXd hartree;  // all nodes
  Eigen::VectorXd xc;       // all nodes
  XcEnergy xc_energy;
  int cg_iterations = 0;
};

/// Discrete Kohn-Sham operators of one mesh: the fixed parts of the
/// Hamiltonian, the Poisson solver and the mass matrices. Wave functions are
/// coefficient columns over free nodes; densities and potentials are nodal
/// vectors over all nodes.
class KohnShamProblem {
 public:
  KohnShamProblem(MeshPtr mesh, MolecularSystem system, HamiltonianTerms terms = {}, CgOptions poisson = {});
  KohnShamProblem(const KohnShamProblem&) = delete;
  KohnShamProblem& operator=(const KohnShamProblem&) = delete;

  const FemSpace& space() const { return *space_; }
  const Mesh& mesh() const { return space_->mesh(); }
  const MolecularSystem& system() const { return system_; }
  const HamiltonianTerms& terms() const { return terms_; }
  int num_orbitals() const { return system_.num_orbitals; }

  const SparseSymMatrix& stiffness() const { return stiffness_; }
  const SparseSymMatrix& mass() const { return mass_; }
  const SparseSymMatrix& mass_full() const { return poisson_->mass_full(); }
  /// (V_ext phi_i, phi_j) over free nodes.
  const SparseSymMatrix& external() const { return external_; }
  double nuclear_repulsion() const { return e_nn_; }

  /// Skipping the energy leaves `xc_energy` zero.
  MeanField mean_field(const Eigen::VectorXd& rho, const Eigen::VectorXd* hartree_guess = nullptr,
                       bool with_energy = true) const;
  /// (V_H + V_xc) nodal weight, or zeros when both terms are off.
  Eigen::VectorXd mean_field_weight(const MeanField& field) const;
  /// 1/2 stiffness + V_ext + V_H + V_xc over free nodes.
  SparseSymMatrix hamiltonian(const MeanField& field) const;

  /// f_occ sum psi_i^2 at the nodes.
  Eigen::VectorXd density(const Eigen::MatrixXd& waves) const;
  double charge(const Eigen::VectorXd& rho) const;
  /// Mass-weighted L2 norm of a nodal field.
  double norm(const Eigen::VectorXd& f) const;
  double inner(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const;

  EnergyTerms energy(const Eigen::VectorXd& eigenvalues, const Eigen::VectorXd& rho, const MeanField& field) const;

  /// Atom-centered Gaussians of unit width (s-type, then p-type), taken in
  /// order until N independent functions are found, B-orthonormalized.
  Eigen::MatrixXd initial_waves() const;

 private:
  std::unique_ptr<FemSpace> space_;
  MolecularSystem system_;
  HamiltonianTerms terms_;
  SparseSymMatrix stiffness_;
  SparseSymMatrix mass_;
  SparseSymMatrix external_;
  std::unique_ptr<PoissonSolver> poisson_;
  double e_nn_ = 0.0;
};

/// Anderson mixing over a sliding window of (rho_in, rho_out) pairs.
class AndersonMixer {
 public:
  /// `depth` counts the current pair; depth 1 is simple damped mixing.
  /// `mass` selects the inner product; plain coefficient dot products when
  /// null.
  AndersonMixer(int depth, double beta, const SparseSymMatrix* mass = nullptr);

  Eigen::VectorXd mix(const Eigen::VectorXd& rho_in, const Eigen::VectorXd& rho_out);
  /// Coefficients of the last mix, oldest first; they sum to 1.
  const Eigen::VectorXd& last_coefficients() const { return alpha_; }
  bool last_fell_back() const { return fell_back_; }
  int history_size() const { return static_cast<int>(in_.size()); }
  void reset();

 private:
  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;

  int depth_;
  double beta_;
  const SparseSymMatrix* mass_;
  std::deque<Eigen::VectorXd> in_, out_;
  Eigen::VectorXd alpha_;
  bool fell_back_ = false;
};

struct ScfConfig {
  int max_iter = 60;
  /// Stop when the mass-weighted L2 norm of rho_out - rho_in falls below.
  double tol = 1e-6;
  int depth = 5;
  double beta = 0.7;
  double eig_tol = 1e-8;
  bool mass_inner_product = true;
};

struct ScfLogRow {
  int iter = 0;
  double energy = 0.0;
  double residual = 0.0;
  Eigen::VectorXd eigenvalues;
  double wall_ms = 0.0;
};

struct ScfResult {
  Eigen::MatrixXd waves;  // free nodes x N, B-orthonormal
  Eigen::VectorXd eigenvalues;
  /// Output density of the last iteration.
  Eigen::VectorXd rho;
  /// Input density of the last iteration; energies refer to it.
  Eigen::VectorXd rho_in;
  MeanField field;
  EnergyTerms energy;
  bool converged = false;
  int iterations = 0;
  int eigen_iterations = 0;
  std::vector<ScfLogRow> log;
};

/// Fixed-point iteration rho -> H(rho) -> lowest N eigenpairs -> rho with
/// Anderson mixing. Starts from `waves0` (free nodes x N) or the Gaussian
/// guess, and from `rho0` or the density of the starting waves.
ScfResult scf_solve(const KohnShamProblem& problem, const ScfConfig& config,
                    const std::optional<Eigen::MatrixXd>& waves0 = std::nullopt,
                    const std::optional<Eigen::VectorXd>& rho0 = std::nullopt);

/// CSV with columns iter, energy, residual, lambda_1..lambda_N, wall_ms.
void write_scf_log(const std::string& path, const std::vector<ScfLogRow>& log);

}  // namespace ksfem
