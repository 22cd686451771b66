#include "ksfem/scf.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/QR>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ksfem/error.hpp"

namespace ksfem {

KohnShamProblem::KohnShamProblem(MeshPtr mesh, MolecularSystem system, HamiltonianTerms terms, CgOptions poisson)
    : space_(std::make_unique<FemSpace>(std::move(mesh))), system_(std::move(system)), terms_(terms) {
  system_.validate();
  stiffness_ = assemble_stiffness(*space_);
  mass_ = assemble_mass(*space_);
  const MolecularSystem& sys = system_;
  std::vector<Point> nuclei;
  for (const Atom& a : system_.atoms) nuclei.push_back(a.position);
  external_ = assemble_weighted_mass(*space_, [&sys](const Point& x) { return v_ext(sys, x); }, nuclei);
  poisson_ = std::make_unique<PoissonSolver>(*space_, poisson);
  e_nn_ = ksfem::nuclear_repulsion(system_);
  if (system_.num_orbitals >= space_->num_free()) {
    throw ConfigError(fmt::format("{} orbitals requested on a mesh with {} free nodes", system_.num_orbitals,
                                  space_->num_free()));
  }
}

MeanField KohnShamProblem::mean_field(const Eigen::VectorXd& rho, const Eigen::VectorXd* hartree_guess,
                                      bool with_energy) const {
  MeanField f;
  const int n = space_->num_nodes();
  if (terms_.hartree) {
    const HartreeResult h = poisson_->solve(rho, HartreeBoundary::kMultipole, hartree_guess);
    f.hartree = h.values;
    f.cg_iterations = h.cg.iterations;
  } else {
    f.hartree = Eigen::VectorXd::Zero(n);
  }
  if (terms_.xc) {
    f.xc = xc_potential(rho);
    if (with_energy) f.xc_energy = xc_energy(*space_, rho);
  } else {
    f.xc = Eigen::VectorXd::Zero(n);
  }
  return f;
}

Eigen::VectorXd KohnShamProblem::mean_field_weight(const MeanField& field) const { return field.hartree + field.xc; }

SparseSymMatrix KohnShamProblem::hamiltonian(const MeanField& field) const {
  SparseSymMatrix h = stiffness_.combined(0.5, 1.0, external_);
  if (terms_.hartree || terms_.xc) h += assemble_weighted_mass(*space_, mean_field_weight(field), Dofs::kFree, 3);
  return h;
}

Eigen::VectorXd KohnShamProblem::density(const Eigen::MatrixXd& waves) const {
  Eigen::VectorXd free = waves.rowwise().squaredNorm();
  return system_.f_occ * space_->lift(free);
}

double KohnShamProblem::inner(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const {
  return f.dot(mass_full() * g);
}

double KohnShamProblem::norm(const Eigen::VectorXd& f) const { return std::sqrt(std::max(0.0, inner(f, f))); }

double KohnShamProblem::charge(const Eigen::VectorXd& rho) const {
  return (mass_full() * rho).sum();
}

EnergyTerms KohnShamProblem::energy(const Eigen::VectorXd& eigenvalues, const Eigen::VectorXd& rho,
                                    const MeanField& field) const {
  return total_energy(system_.f_occ, eigenvalues, rho, field.hartree, field.xc, field.xc_energy.total(), e_nn_,
                      mass_full());
}

Eigen::MatrixXd KohnShamProblem::initial_waves() const {
  const int n_orb = system_.num_orbitals;
  const Mesh& mesh = space_->mesh();
  std::vector<std::pair<int, int>> order;  // (atom, 0 for s or 1 + axis for p)
  for (int kind = 0; kind < 4; ++kind) {
    for (int a = 0; a < static_cast<int>(system_.atoms.size()); ++a) order.emplace_back(a, kind);
  }
  if (system_.atoms.empty()) order.emplace_back(-1, 0);

  Eigen::MatrixXd basis(space_->num_free(), n_orb);
  int found = 0;
  for (const auto& [atom, kind] : order) {
    if (found == n_orb) break;
    const Point center = atom >= 0 ? system_.atoms[atom].position : mesh.box().center();
    Eigen::VectorXd v(space_->num_free());
    for (int f = 0; f < space_->num_free(); ++f) {
      const Eigen::Vector3d d = mesh.node(space_->free_nodes()[f]) - center;
      const double g = std::exp(-0.5 * d.squaredNorm());
      v[f] = kind == 0 ? g : d[kind - 1] * g;
    }
    const double original = v.dot(mass_ * v);
    if (!(original > 0.0)) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < found; ++j) v -= basis.col(j).dot(mass_ * v) * basis.col(j);
    }
    const double norm2 = v.dot(mass_ * v);
    if (norm2 <= 1e-6 * original) continue;
    basis.col(found++) = v / std::sqrt(norm2);
  }
  if (found < n_orb) {
    throw ConfigError(fmt::format("initial guess: only {} independent Gaussians for {} orbitals", found, n_orb));
  }
  return basis;
}

AndersonMixer::AndersonMixer(int depth, double beta, const SparseSymMatrix* mass)
    : depth_(depth), beta_(beta), mass_(mass) {
  if (depth < 1) throw ConfigError("mixing depth must be at least 1");
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError(fmt::format("mixing weight must lie in (0, 1], got {}", beta));
}

void AndersonMixer::reset() {
  in_.clear();
  out_.clear();
}

double AndersonMixer::inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  return mass_ ? a.dot(*mass_ * b) : a.dot(b);
}

Eigen::VectorXd AndersonMixer::mix(const Eigen::VectorXd& rho_in, const Eigen::VectorXd& rho_out) {
  in_.push_back(rho_in);
  out_.push_back(rho_out);
  while (static_cast<int>(in_.size()) > depth_) {
    in_.pop_front();
    out_.pop_front();
  }
  const int m = static_cast<int>(in_.size());
  fell_back_ = false;
  alpha_ = Eigen::VectorXd::Zero(m);
  alpha_[m - 1] = 1.0;
  if (m > 1) {
    std::vector<Eigen::VectorXd> d(m - 1);  // F_m - F_j
    const Eigen::VectorXd fm = out_[m - 1] - in_[m - 1];
    for (int j = 0; j < m - 1; ++j) d[j] = fm - (out_[j] - in_[j]);
    Eigen::MatrixXd a(m - 1, m - 1);
    Eigen::VectorXd b(m - 1);
    for (int j = 0; j < m - 1; ++j) {
      b[j] = inner(d[j], fm);
      for (int k = 0; k <= j; ++k) a(j, k) = a(k, j) = inner(d[j], d[k]);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-12);
    const Eigen::VectorXd x = qr.solve(b);
    if (qr.rank() < m - 1 || !x.allFinite()) {
      fell_back_ = true;
      spdlog::debug("anderson: singular coefficient system of size {}, simple mixing this step", m - 1);
    } else {
      alpha_.head(m - 1) = x;
      alpha_[m - 1] = 1.0 - x.sum();
    }
  }
  if (m == 1 || fell_back_) return beta_ * rho_out + (1.0 - beta_) * rho_in;
  Eigen::VectorXd mixed_in = Eigen::VectorXd::Zero(rho_in.size());
  Eigen::VectorXd mixed_out = Eigen::VectorXd::Zero(rho_in.size());
  for (int j = 0; j < m; ++j) {
    mixed_in += alpha_[j] * in_[j];
    mixed_out += alpha_[j] * out_[j];
  }
  return beta_ * mixed_out + (1.0 - beta_) * mixed_in;
}

ScfResult scf_solve(const KohnShamProblem& problem, const ScfConfig& config,
                    const std::optional<Eigen::MatrixXd>& waves0, const std::optional<Eigen::VectorXd>& rho0) {
  if (config.max_iter < 1 || !(config.tol > 0.0) || !(config.eig_tol > 0.0)) {
    throw ConfigError("SCF iteration limit and tolerances must be positive");
  }
  using Clock = std::chrono::steady_clock;
  const int n_orb = problem.num_orbitals();
  Eigen::MatrixXd waves = waves0 ? b_orthonormalize(*waves0, problem.mass()) : problem.initial_waves();
  Eigen::VectorXd rho_in = rho0 ? *rho0 : problem.density(waves);
  rho_in = rho_in.cwiseMax(0.0);

  AndersonMixer mixer(config.depth, config.beta, config.mass_inner_product ? &problem.mass_full() : nullptr);
  EigenOptions eig_opts;
  eig_opts.tol = config.eig_tol;

  ScfResult best;
  double best_residual = std::numeric_limits<double>::infinity();
  Eigen::VectorXd hartree_guess;
  for (int it = 1; it <= config.max_iter; ++it) {
    const auto t0 = Clock::now();
    MeanField field = problem.mean_field(rho_in, hartree_guess.size() ? &hartree_guess : nullptr);
    hartree_guess = field.hartree;
    const SparseSymMatrix h = problem.hamiltonian(field);
    const EigenResult eig = solve_lowest(h, problem.mass(), n_orb, eig_opts, waves);
    waves = eig.vectors;
    const Eigen::VectorXd rho_out = problem.density(waves);
    const double residual = problem.norm(rho_out - rho_in);
    const EnergyTerms energy = problem.energy(eig.values, rho_in, field);

    ScfLogRow row;
    row.iter = it;
    row.energy = energy.total;
    row.residual = residual;
    row.eigenvalues = eig.values;
    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    best.log.push_back(row);
    best.eigen_iterations += eig.iterations;
    spdlog::debug("scf {:3d}: E = {:.10f}, |rho_out - rho_in| = {:.3e}, eig its {}, charge {:.6f}", it, energy.total,
                  residual, eig.iterations, problem.charge(rho_out));

    // Without mean-field terms the Hamiltonian ignores rho, so one eigensolve is exact.
    const bool linear = !problem.terms().hartree && !problem.terms().xc;
    const bool done = linear || residual < config.tol;
    if (residual < best_residual || done) {
      best_residual = residual;
      best.waves = waves;
      best.eigenvalues = eig.values;
      best.rho = rho_out;
      best.rho_in = rho_in;
      best.field = std::move(field);
      best.energy = energy;
      best.converged = done;
    }
    best.iterations = it;
    if (done) break;
    rho_in = mixer.mix(rho_in, rho_out).cwiseMax(0.0);
  }
  if (!best.converged) {
    spdlog::warn("scf: not converged after {} iterations, best density residual {:.3e}", best.iterations,
                 best_residual);
  }
  return best;
}

void write_scf_log(const std::string& path, const std::vector<ScfLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write {}", path));
  const int n = log.empty() ? 0 : static_cast<int>(log.front().eigenvalues.size());
  out << "iter,energy,residual";
  for (int i = 1; i <= n; ++i) out << ",lambda_" << i;
  out << ",wall_ms\n";
  for (const ScfLogRow& r : log) {
    out << fmt::format("{},{:.12e},{:.6e}", r.iter, r.energy, r.residual);
    for (int i = 0; i < r.eigenvalues.size(); ++i) out << fmt::format(",{:.12e}", r.eigenvalues[i]);
    out << fmt::format(",{:.3f}\n", r.wall_ms);
  }
  if (!out) throw IoError(fmt::format("error while writing {}", path));
}

}  // namespace ksfem
