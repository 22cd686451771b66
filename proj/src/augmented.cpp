#include "ksfem/augmented.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <Eigen/Cholesky>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ksfem/error.hpp"
#include "ksfem/locator.hpp"

namespace ksfem {

double default_shift(const MolecularSystem& system) {
  double z2 = 0.0;
  for (const Atom& a : system.atoms) z2 += a.z * a.z;
  return 8.0 * static_cast<double>(system.atoms.size()) * z2;
}

EigenCsr interpolation_matrix(MeshPtr coarse, const Mesh& fine) {
  const Locator loc(coarse);
  std::vector<Eigen::Triplet<double, int>> entries;
  entries.reserve(4 * static_cast<size_t>(fine.num_nodes()));
  for (int i = 0; i < fine.num_nodes(); ++i) {
    const Location l = loc.locate(fine.node(i));
    const Tet& k = coarse->tet(l.tet);
    for (int a = 0; a < 4; ++a) {
      if (l.bary[a] != 0.0) entries.emplace_back(i, k[a], l.bary[a]);
    }
  }
  EigenCsr out(fine.num_nodes(), coarse->num_nodes());
  out.setFromTriplets(entries.begin(), entries.end());
  return out;
}

EigenCsr free_interpolation(const FemSpace& coarse, const FemSpace& fine) {
  const EigenCsr full = interpolation_matrix(coarse.mesh_ptr(), fine.mesh());
  std::vector<Eigen::Triplet<double, int>> entries;
  for (int f = 0; f < fine.num_free(); ++f) {
    for (EigenCsr::InnerIterator it(full, fine.free_nodes()[f]); it; ++it) {
      const int c = coarse.free_index(static_cast<int>(it.col()));
      if (c >= 0) entries.emplace_back(f, c, it.value());
    }
  }
  EigenCsr out(fine.num_free(), coarse.num_free());
  out.setFromTriplets(entries.begin(), entries.end());
  return out;
}

namespace {

Eigen::MatrixXd coarse_block(const SparseSymMatrix& a, const EigenCsr& interp) {
  const EigenCsr ai = a.eigen() * interp;
  Eigen::MatrixXd out = Eigen::MatrixXd(interp.transpose() * ai);
  return 0.5 * (out + out.transpose());
}

/// Assembles the full symmetric block matrix from the coarse block and the
/// products a*extra.
Eigen::MatrixXd assemble_blocks(const Eigen::MatrixXd& coarse, const EigenCsr& interp, const Eigen::MatrixXd& extra,
                                const Eigen::MatrixXd& a_extra) {
  const int nh = static_cast<int>(coarse.rows());
  const int n = static_cast<int>(extra.cols());
  Eigen::MatrixXd out(nh + n, nh + n);
  out.topLeftCorner(nh, nh) = coarse;
  const Eigen::MatrixXd b = interp.transpose() * a_extra;
  out.topRightCorner(nh, n) = b;
  out.bottomLeftCorner(n, nh) = b.transpose();
  const Eigen::MatrixXd beta = extra.transpose() * a_extra;
  out.bottomRightCorner(n, n) = 0.5 * (beta + beta.transpose());
  return out;
}

}  // namespace

Eigen::MatrixXd project_augmented(const SparseSymMatrix& a, const EigenCsr& interp, const Eigen::MatrixXd& extra) {
  if (a.dim() != interp.rows() || extra.rows() != interp.rows()) {
    throw SolverError(fmt::format("project_augmented: operator of size {}, interpolation {}x{}, block of {} rows",
                                  a.dim(), interp.rows(), interp.cols(), extra.rows()));
  }
  return assemble_blocks(coarse_block(a, interp), interp, extra, a * extra);
}

int BvpResult::total_iterations() const {
  int total = 0;
  for (const CgResult& r : cg) total += r.iterations;
  return total;
}

BvpResult solve_shifted_bvps(const SparseSymMatrix& h, const SparseSymMatrix& mass, double mu,
                             const Eigen::VectorXd& lambda, const Eigen::MatrixXd& psi, const CgOptions& cg) {
  const int n = static_cast<int>(psi.cols());
  if (lambda.size() != n) throw SolverError("solve_shifted_bvps: eigenvalue count differs from column count");
  const SparseSymMatrix shifted = h.combined(1.0, mu, mass);
  BvpResult out;
  out.waves = psi;
  out.cg.resize(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd rhs = (lambda[i] + mu) * (mass * Eigen::VectorXd(psi.col(i)));
    Eigen::VectorXd x = psi.col(i);
    out.cg[i] = solve_cg(shifted, rhs, x, cg);
    out.waves.col(i) = x;
  }
  for (int i = 0; i < n; ++i) {
    if (!out.cg[i].converged) {
      throw SolverError(fmt::format("shifted solve for orbital {} stopped at relative residual {:.3e} after {} CG "
                                    "iterations (shift {})",
                                    i + 1, out.cg[i].rel_residual, out.cg[i].iterations, mu));
    }
  }
  return out;
}

DenseEigenResult solve_augmented_eigenproblem(const Eigen::MatrixXd& fa, const Eigen::MatrixXd& fb, int count) {
  const Eigen::LLT<Eigen::MatrixXd> llt(fb);
  const double scale = fb.diagonal().maxCoeff();
  const double pivot = llt.info() == Eigen::Success ? llt.matrixLLT().diagonal().minCoeff() : 0.0;
  if (!(pivot * pivot > 1e-12 * scale)) {
    throw SolverError(fmt::format("augmented basis is linearly dependent (smallest Cholesky pivot {:.3e} of mass scale "
                                  "{:.3e})",
                                  pivot * pivot, scale));
  }
  return dense_generalized_lowest(fa, fb, count);
}

AugmentedSpace::AugmentedSpace(const KohnShamProblem& fine, MeshPtr coarse)
    : fine_(fine), coarse_(std::move(coarse)) {
  interp_ = free_interpolation(coarse_, fine.space());
  linear_ = fine.stiffness().combined(0.5, 1.0, fine.external());
  coarse_linear_ = coarse_block(linear_, interp_);
  coarse_mass_ = coarse_block(fine.mass(), interp_);
}

void AugmentedSpace::set_extra(const Eigen::MatrixXd& extra) {
  const SparseSymMatrix& m = fine_.mass();
  if (extra.rows() != m.dim()) throw SolverError("augmented block has the wrong number of rows");
  std::mt19937_64 rng(perturb_seed_);
  std::normal_distribution<double> noise;
  Eigen::MatrixXd q = extra;
  for (int j = 0; j < q.cols(); ++j) {
    const double original = std::sqrt(std::max(0.0, q.col(j).dot(m * Eigen::VectorXd(q.col(j)))));
    for (int attempt = 0;; ++attempt) {
      Eigen::VectorXd v = q.col(j);
      for (int pass = 0; pass < 2; ++pass) {
        for (int k = 0; k < j; ++k) v -= q.col(k).dot(m * v) * q.col(k);
      }
      const double norm = std::sqrt(std::max(0.0, v.dot(m * v)));
      if (norm > 1e-12 * original && original > 0.0) {
        q.col(j) = v / norm;
        break;
      }
      if (attempt == 3) throw SolverError(fmt::format("augmented column {} stays dependent after perturbation", j + 1));
      spdlog::info("augmented column {} is dependent on earlier columns, perturbing it", j + 1);
      const double size = original > 0.0 ? original : 1.0;
      for (int r = 0; r < q.rows(); ++r) q(r, j) += 1e-8 * size * noise(rng);
    }
  }
  extra_ = std::move(q);
  fa_linear_ = assemble_blocks(coarse_linear_, interp_, extra_, linear_ * extra_);
  fb_ = assemble_blocks(coarse_mass_, interp_, extra_, m * extra_);
}

Eigen::MatrixXd AugmentedSpace::project(const SparseSymMatrix& a) const {
  return assemble_blocks(coarse_block(a, interp_), interp_, extra_, a * extra_);
}

Eigen::MatrixXd AugmentedSpace::lift(const Eigen::MatrixXd& u) const {
  const int nh = coarse_size();
  return interp_ * u.topRows(nh) + extra_ * u.bottomRows(u.rows() - nh);
}

AugmentedResult augmented_solve(AugmentedSpace& space, const Eigen::MatrixXd& waves0, const AugmentedConfig& config) {
  if (config.max_outer < 1 || config.max_inner < 1 || !(config.tol > 0.0) || !(config.inner_tol > 0.0)) {
    throw ConfigError("augmented iteration limits and tolerances must be positive");
  }
  using Clock = std::chrono::steady_clock;
  const KohnShamProblem& fine = space.fine();
  const SparseSymMatrix& mass = fine.mass();
  const int n_orb = fine.num_orbitals();
  if (waves0.rows() != mass.dim() || waves0.cols() != n_orb) {
    throw SolverError(fmt::format("augmented_solve: initial waves are {}x{}, expected {}x{}", waves0.rows(),
                                  waves0.cols(), mass.dim(), n_orb));
  }

  AugmentedResult result;
  ScfResult& best = result.state;

  // Rayleigh-Ritz in the span of the starting waves.
  Eigen::MatrixXd waves = b_orthonormalize(waves0, mass);
  Eigen::VectorXd rho = fine.density(waves);
  const MeanField field = fine.mean_field(rho, nullptr, false);
  Eigen::VectorXd hartree_guess = field.hartree;
  SparseSymMatrix h = fine.hamiltonian(field);
  Eigen::VectorXd lambda;
  {
    const Eigen::MatrixXd hw = h * waves;
    const Eigen::MatrixXd a = waves.transpose() * hw;
    const Eigen::MatrixXd b = waves.transpose() * (mass * waves);
    const DenseEigenResult rr = dense_generalized_lowest(0.5 * (a + a.transpose()), 0.5 * (b + b.transpose()), n_orb);
    waves = waves * rr.vectors;
    lambda = rr.values;
  }
  if (config.mu > 0.0) {
    result.mu = config.mu;
  } else if (config.shift_rule == ShiftRule::kSpectral) {
    result.mu = std::max(1.0, -2.0 * lambda[0]);
  } else {
    result.mu = default_shift(fine.system());
  }
  spdlog::debug("augmented: shift {:.6g}", result.mu);

  double best_change = std::numeric_limits<double>::infinity();
  int inner_total = 0;
  for (int outer = 1; outer <= config.max_outer; ++outer) {
    const auto t0 = Clock::now();
    const BvpResult bvp = solve_shifted_bvps(h, mass, result.mu, lambda, waves, config.cg);
    space.set_extra(bvp.waves);

    AndersonMixer mixer(config.depth, config.beta, config.mass_inner_product ? &fine.mass_full() : nullptr);
    Eigen::VectorXd rho_in = rho;
    Eigen::MatrixXd new_waves;
    Eigen::VectorXd new_lambda, rho_out;
    MeanField field_in;
    int inner = 0;
    for (inner = 1; inner <= config.max_inner; ++inner) {
      const auto ti = Clock::now();
      field_in = fine.mean_field(rho_in, &hartree_guess, false);
      hartree_guess = field_in.hartree;
      Eigen::MatrixXd fa = space.linear_blocks();
      if (fine.terms().hartree || fine.terms().xc) {
        fa += space.project(
            assemble_weighted_mass(fine.space(), fine.mean_field_weight(field_in), Dofs::kFree, 3));
      }
      const DenseEigenResult eig = solve_augmented_eigenproblem(fa, space.mass_blocks(), n_orb);
      new_waves = space.lift(eig.vectors);
      new_lambda = eig.values;
      rho_out = fine.density(new_waves);
      const double residual = fine.norm(rho_out - rho_in);

      ScfLogRow row;
      row.iter = ++inner_total;
      row.energy = std::numeric_limits<double>::quiet_NaN();
      row.residual = residual;
      row.eigenvalues = new_lambda;
      row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - ti).count();
      best.log.push_back(row);
      if (residual < config.inner_tol || (!fine.terms().hartree && !fine.terms().xc)) break;
      if (inner == config.max_inner) {
        spdlog::debug("augmented: inner iteration {} stopped at density residual {:.3e}", outer, residual);
        break;
      }
      rho_in = mixer.mix(rho_in, rho_out).cwiseMax(0.0);
    }
    inner = std::min(inner, config.max_inner);

    if (fine.terms().xc) field_in.xc_energy = xc_energy(fine.space(), rho_in);
    const EnergyTerms energy = fine.energy(new_lambda, rho_in, field_in);
    const double change = fine.norm(rho_out - rho);
    waves = new_waves;
    lambda = new_lambda;
    rho = rho_out;
    // The next linear solves use the potentials of the last inner input
    // density, which agrees with rho to the inner tolerance.
    h = fine.hamiltonian(field_in);
    const double max_residual = eigen_residuals(h, mass, lambda, waves).maxCoeff();

    AugmentedLogRow row;
    row.outer = outer;
    row.energy = energy.total;
    row.density_change = change;
    row.max_eigen_residual = max_residual;
    row.bvp_cg_iterations = bvp.total_iterations();
    row.inner_iterations = inner;
    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    result.log.push_back(row);
    spdlog::debug("augmented {:2d}: E = {:.10f}, |drho| = {:.3e}, max residual {:.3e}, CG {}, inner {}", outer,
                  energy.total, change, max_residual, row.bvp_cg_iterations, inner);

    const bool done = change < config.tol;
    if (change < best_change || done) {
      best_change = change;
      best.waves = waves;
      best.eigenvalues = lambda;
      best.rho = rho_out;
      best.rho_in = rho_in;
      best.field = field_in;
      best.energy = energy;
      best.converged = done;
    }
    best.iterations = outer;
    best.eigen_iterations = inner_total;
    if (done) break;
  }
  if (!best.converged) {
    spdlog::warn("augmented: not converged after {} outer iterations, best density change {:.3e}", best.iterations,
                 best_change);
  }
  return result;
}

AugmentedResult augmented_solve(const KohnShamProblem& fine, MeshPtr coarse, const Eigen::MatrixXd& waves0,
                                const AugmentedConfig& config) {
  AugmentedSpace space(fine, std::move(coarse));
  return augmented_solve(space, waves0, config);
}

void write_augmented_log(const std::string& path, const std::vector<AugmentedLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write {}", path));
  out << "outer,energy,density_change,max_eigen_residual,bvp_cg_iterations,inner_iterations,wall_ms\n";
  for (const AugmentedLogRow& r : log) {
    out << fmt::format("{},{:.12e},{:.6e},{:.6e},{},{},{:.3f}\n", r.outer, r.energy, r.density_change,
                       r.max_eigen_residual, r.bvp_cg_iterations, r.inner_iterations, r.wall_ms);
  }
  if (!out) throw IoError(fmt::format("error while writing {}", path));
}

}  // namespace ksfem
