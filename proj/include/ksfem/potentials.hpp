#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "ksfem/fem.hpp"
#include "ksfem/mesh.hpp"
#include "ksfem/sparse.hpp"

namespace ksfem {

struct Atom {
  std::string symbol;
  Point position;
  double z = 0.0;
};

/// Nuclei, orbital count and occupation in a computational box. Lengths in
/// bohr, charges in units of e.
struct MolecularSystem {
  std::vector<Atom> atoms;
  int num_orbitals = 1;
  /// Electrons per orbital (2 for spin-paired).
  double f_occ = 2.0;
  Box box = Box::cube(-10.0, 10.0);

  double num_electrons() const { return f_occ * num_orbitals; }
  double total_charge() const;
  /// Throws ConfigError when an atom lies outside the box interior, a charge
  /// is non-positive, two nuclei coincide, or the orbital count is invalid.
  void validate() const;
};

/// -sum_k Z_k / |x - R_k|. Returns -infinity at a nucleus.
double v_ext(const MolecularSystem& system, const Point& x);

/// Sum over pairs of Z_j Z_k / |R_j - R_k|.
double nuclear_repulsion(const MolecularSystem& system);

/// LDA exchange energy per particle, -(3/4)(3 rho/pi)^(1/3).
double exchange_energy_density(double rho);
/// -(3 rho/pi)^(1/3). Throws SolverError for rho < 0.
double exchange_potential(double rho);

/// Perdew-Zunger correlation energy per particle; log form for r_s < 1,
/// rational form for r_s >= 1. Zero at rho = 0.
double correlation_energy_density(double rho);
double correlation_potential(double rho);

inline double xc_potential(double rho) { return exchange_potential(rho) + correlation_potential(rho); }

/// Pointwise V_xc of a nodal density.
Eigen::VectorXd xc_potential(const Eigen::VectorXd& rho);

struct XcEnergy {
  double exchange = 0.0;
  double correlation = 0.0;
  double total() const { return exchange + correlation; }
};

/// Integrals of rho eps_x(rho) and rho eps_c(rho) with rho the P1 interpolant.
XcEnergy xc_energy(const FemSpace& space, const Eigen::VectorXd& rho, int degree = 4);

/// Monopole, dipole and quadrupole moments of a density about its charge
/// center.
struct Multipole {
  double charge = 0.0;
  Point center = Point::Zero();
  Eigen::Vector3d dipole = Eigen::Vector3d::Zero();
  /// Second moments int (x - c)_i (x - c)_j rho.
  Eigen::Matrix3d second = Eigen::Matrix3d::Zero();

  /// Far-field potential of the expansion at x.
  double operator()(const Point& x) const;
};

/// Moments by quadrature of the P1 density. Falls back to the box center
/// when the total charge vanishes.
Multipole compute_multipole(const FemSpace& space, const Eigen::VectorXd& rho);

enum class HartreeBoundary { kMultipole, kZero };

struct HartreeResult {
  Eigen::VectorXd values;  // all nodes
  CgResult cg;
};

/// -Laplace V = 4 pi rho with Dirichlet data on the box surface. Caches the
/// stiffness and mass operators of one mesh.
class PoissonSolver {
 public:
  explicit PoissonSolver(const FemSpace& space, CgOptions options = {});

  /// `guess` (all nodes) warm-starts CG. Throws SolverError when CG fails
  /// to reach the tolerance.
  HartreeResult solve(const Eigen::VectorXd& rho, HartreeBoundary boundary = HartreeBoundary::kMultipole,
                      const Eigen::VectorXd* guess = nullptr) const;

  const FemSpace& space() const { return space_; }
  const SparseSymMatrix& mass_full() const { return mass_full_; }

 private:
  const FemSpace& space_;
  CgOptions options_;
  SparseSymMatrix stiffness_full_;
  SparseSymMatrix stiffness_;
  SparseSymMatrix mass_full_;
};

struct EnergyTerms {
  double band = 0.0;        // f_occ sum lambda_i
  double hartree_dc = 0.0;  // int (1/2) V_H rho
  double xc_dc = 0.0;       // int V_xc rho
  double xc = 0.0;
  double nn = 0.0;
  double total = 0.0;
};

/// E = f_occ sum lambda - int (V_H / 2 + V_xc) rho + E_xc + E_nn, with the
/// potential integrals taken as V^T M rho on all nodes.
EnergyTerms total_energy(double f_occ, const Eigen::VectorXd& eigenvalues, const Eigen::VectorXd& rho,
                         const Eigen::VectorXd& v_hartree, const Eigen::VectorXd& v_xc, double e_xc, double e_nn,
                         const SparseSymMatrix& mass_full);

}  // namespace ksfem
