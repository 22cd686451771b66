#include "ksfem/potentials.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "ksfem/error.hpp"

namespace ksfem {

namespace {

constexpr double kPi = std::numbers::pi;

// Perdew-Zunger parameters.
constexpr double kA = 0.0311;
constexpr double kB = -0.048;
constexpr double kC = 0.0020;
constexpr double kD = -0.0116;
constexpr double kGamma = -0.1423;
constexpr double kBeta1 = 1.0529;
constexpr double kBeta2 = 0.3334;

void check_density(double rho, const char* where) {
  if (!(rho >= 0.0)) throw SolverError(fmt::format("{}: invalid density {}", where, rho));
}

// eps_x = kExchangeFactor rho^(1/3) and r_s = kRsFactor / rho^(1/3).
const double kExchangeFactor = -0.75 * std::cbrt(3.0 / kPi);
const double kRsFactor = std::cbrt(3.0 / (4.0 * kPi));

double wigner_seitz_radius(double rho) { return std::cbrt(3.0 / (4.0 * kPi * rho)); }

}  // namespace

double MolecularSystem::total_charge() const {
  double q = 0.0;
  for (const Atom& a : atoms) q += a.z;
  return q;
}

void MolecularSystem::validate() const {
  if (num_orbitals < 1) throw ConfigError(fmt::format("number of orbitals must be positive, got {}", num_orbitals));
  if (!(f_occ > 0.0)) throw ConfigError(fmt::format("occupation factor must be positive, got {}", f_occ));
  if ((box.extent().array() <= 0.0).any()) throw ConfigError("computational box has zero extent");
  for (size_t k = 0; k < atoms.size(); ++k) {
    const Atom& a = atoms[k];
    if (!(a.z > 0.0)) throw ConfigError(fmt::format("atom {} ({}) has non-positive charge {}", k, a.symbol, a.z));
    const Point& p = a.position;
    if ((p.array() <= box.lo.array()).any() || (p.array() >= box.hi.array()).any()) {
      throw ConfigError(fmt::format("atom {} ({}) at ({}, {}, {}) is not inside the box", k, a.symbol, p[0], p[1], p[2]));
    }
    for (size_t j = 0; j < k; ++j) {
      if ((atoms[j].position - p).norm() < 1e-8) throw ConfigError(fmt::format("atoms {} and {} coincide", j, k));
    }
  }
}

double v_ext(const MolecularSystem& system, const Point& x) {
  double v = 0.0;
  for (const Atom& a : system.atoms) {
    const double r = (x - a.position).norm();
    if (r == 0.0) return -std::numeric_limits<double>::infinity();
    v -= a.z / r;
  }
  return v;
}

double nuclear_repulsion(const MolecularSystem& system) {
  double e = 0.0;
  for (size_t k = 0; k < system.atoms.size(); ++k) {
    for (size_t j = 0; j < k; ++j) {
      const double r = (system.atoms[k].position - system.atoms[j].position).norm();
      if (r < 1e-8) throw ConfigError(fmt::format("atoms {} and {} coincide", j, k));
      e += system.atoms[k].z * system.atoms[j].z / r;
    }
  }
  return e;
}

double exchange_energy_density(double rho) {
  check_density(rho, "exchange_energy_density");
  return -0.75 * std::cbrt(3.0 * rho / kPi);
}

double exchange_potential(double rho) {
  check_density(rho, "exchange_potential");
  return -std::cbrt(3.0 * rho / kPi);
}

double correlation_energy_density(double rho) {
  check_density(rho, "correlation_energy_density");
  if (rho == 0.0) return 0.0;
  const double rs = wigner_seitz_radius(rho);
  if (rs < 1.0) return kA * std::log(rs) + kB + kC * rs * std::log(rs) + kD * rs;
  return kGamma / (1.0 + kBeta1 * std::sqrt(rs) + kBeta2 * rs);
}

double correlation_potential(double rho) {
  check_density(rho, "correlation_potential");
  if (rho == 0.0) return 0.0;
  const double rs = wigner_seitz_radius(rho);
  if (rs < 1.0) {
    const double lr = std::log(rs);
    return kA * lr + (kB - kA / 3.0) + (2.0 / 3.0) * kC * rs * lr + (2.0 * kD - kC) * rs / 3.0;
  }
  const double sq = std::sqrt(rs);
  const double den = 1.0 + kBeta1 * sq + kBeta2 * rs;
  return kGamma / den * (1.0 + 7.0 / 6.0 * kBeta1 * sq + 4.0 / 3.0 * kBeta2 * rs) / den;
}

Eigen::VectorXd xc_potential(const Eigen::VectorXd& rho) {
  Eigen::VectorXd v(rho.size());
  for (Eigen::Index i = 0; i < rho.size(); ++i) v[i] = xc_potential(rho[i]);
  return v;
}

XcEnergy xc_energy(const FemSpace& space, const Eigen::VectorXd& rho, int degree) {
  const QuadratureRule& rule = QuadratureRule::of_degree(degree);
  const Mesh& mesh = space.mesh();
  double ex = 0.0, ec = 0.0;
#pragma omp parallel for reduction(+ : ex, ec) schedule(static)
  for (int t = 0; t < mesh.num_tets(); ++t) {
    const Tet& k = mesh.tet(t);
    double sx = 0.0, sc = 0.0;
    for (int q = 0; q < rule.size(); ++q) {
      const auto& lam = rule.points[q];
      double r = 0.0;
      for (int a = 0; a < 4; ++a) r += lam[a] * rho[k[a]];
      check_density(r, "xc_energy");
      if (r == 0.0) continue;
      const double c = std::cbrt(r);
      sx += rule.weights[q] * r * kExchangeFactor * c;
      const double rs = kRsFactor / c;
      const double ec = rs < 1.0 ? kA * std::log(rs) + kB + kC * rs * std::log(rs) + kD * rs
                                 : kGamma / (1.0 + kBeta1 * std::sqrt(rs) + kBeta2 * rs);
      sc += rule.weights[q] * r * ec;
    }
    ex += sx * space.volume(t);
    ec += sc * space.volume(t);
  }
  return {ex, ec};
}

double Multipole::operator()(const Point& x) const {
  if (charge == 0.0) return 0.0;
  const Eigen::Vector3d r = x - center;
  const double r2 = r.squaredNorm();
  const double rn = std::sqrt(r2);
  const double r3 = r2 * rn;
  const double r5 = r3 * r2;
  double quad = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) quad += second(i, j) * (3.0 * r[i] * r[j] - (i == j ? r2 : 0.0));
  }
  return charge / rn + dipole.dot(r) / r3 + 0.5 * quad / r5;
}

Multipole compute_multipole(const FemSpace& space, const Eigen::VectorXd& rho) {
  const Mesh& mesh = space.mesh();
  const QuadratureRule& rule = QuadratureRule::of_degree(4);
  std::vector<Point> points;
  std::vector<double> weights;  // w * rho at the point
  points.reserve(static_cast<size_t>(mesh.num_tets()) * rule.size());
  weights.reserve(points.capacity());
  double q = 0.0;
  Eigen::Vector3d first = Eigen::Vector3d::Zero();
  for (int t = 0; t < mesh.num_tets(); ++t) {
    const Tet& k = mesh.tet(t);
    for (int p = 0; p < rule.size(); ++p) {
      const auto& b = rule.points[p];
      const double r = b[0] * rho[k[0]] + b[1] * rho[k[1]] + b[2] * rho[k[2]] + b[3] * rho[k[3]];
      const double w = rule.weights[p] * space.volume(t) * r;
      const Point x = space.map(t, b);
      q += w;
      first += w * x;
      points.push_back(x);
      weights.push_back(w);
    }
  }
  Multipole m;
  m.charge = q;
  m.center = q != 0.0 ? Point(first / q) : mesh.box().center();
  for (size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d d = points[i] - m.center;
    m.dipole += weights[i] * d;
    m.second += weights[i] * d * d.transpose();
  }
  return m;
}

PoissonSolver::PoissonSolver(const FemSpace& space, CgOptions options)
    : space_(space),
      options_(options),
      stiffness_full_(assemble_stiffness(space, Dofs::kAll)),
      stiffness_(apply_dirichlet(stiffness_full_, space)),
      mass_full_(assemble_mass(space, Dofs::kAll)) {}

HartreeResult PoissonSolver::solve(const Eigen::VectorXd& rho, HartreeBoundary boundary,
                                   const Eigen::VectorXd* guess) const {
  const Mesh& mesh = space_.mesh();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(mesh.num_nodes());
  if (boundary == HartreeBoundary::kMultipole) {
    const Multipole m = compute_multipole(space_, rho);
    for (int i : mesh.boundary_nodes()) g[i] = m(mesh.node(i));
  }
  const Eigen::VectorXd rhs = 4.0 * kPi * (mass_full_ * rho) - stiffness_full_ * g;
  Eigen::VectorXd u = guess ? space_.restrict(*guess) : Eigen::VectorXd();
  HartreeResult res;
  res.cg = solve_cg(stiffness_, space_.restrict(rhs), u, options_);
  if (!res.cg.converged) {
    throw SolverError(fmt::format("Hartree solve: CG stopped after {} iterations at relative residual {:.3e}",
                                  res.cg.iterations, res.cg.rel_residual));
  }
  res.values = space_.lift(u) + g;
  return res;
}

EnergyTerms total_energy(double f_occ, const Eigen::VectorXd& eigenvalues, const Eigen::VectorXd& rho,
                         const Eigen::VectorXd& v_hartree, const Eigen::VectorXd& v_xc, double e_xc, double e_nn,
                         const SparseSymMatrix& mass_full) {
  EnergyTerms e;
  const Eigen::VectorXd m_rho = mass_full * rho;
  e.band = f_occ * eigenvalues.sum();
  e.hartree_dc = 0.5 * v_hartree.dot(m_rho);
  e.xc_dc = v_xc.dot(m_rho);
  e.xc = e_xc;
  e.nn = e_nn;
  e.total = e.band - e.hartree_dc - e.xc_dc + e.xc + e.nn;
  return e;
}

}  // namespace ksfem
