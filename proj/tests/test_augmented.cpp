#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "ksfem/adapt.hpp"
#include "ksfem/augmented.hpp"
#include "ksfem/error.hpp"

using namespace ksfem;

namespace {

MeshPtr box_mesh(const Box& box, int n) { return std::make_shared<const Mesh>(build_box_mesh(box, n)); }

MolecularSystem atom(const char* symbol, double z, double f_occ = 2.0) {
  MolecularSystem s;
  s.atoms = {{symbol, Point(0, 0, 0), z}};
  s.f_occ = f_occ;
  return s;
}

MolecularSystem lithium_hydride() {
  MolecularSystem s;
  s.atoms = {{"Li", Point(-1.0075, 0, 0), 3.0}, {"H", Point(2.0075, 0, 0), 1.0}};
  s.num_orbitals = 2;
  return s;
}

MolecularSystem methane() {
  MolecularSystem s;
  const double a = 1.3092;
  s.atoms = {{"C", Point(0, 0, 0), 6.0},  {"H", Point(a, a, a), 1.0},   {"H", Point(-a, -a, a), 1.0},
             {"H", Point(a, -a, -a), 1.0}, {"H", Point(-a, a, -a), 1.0}};
  s.num_orbitals = 5;
  return s;
}

MolecularSystem benzene() {
  MolecularSystem s;
  const double c = 1.3970, h = 2.4810;
  for (int k = 0; k < 6; ++k) {
    const double t = M_PI / 2 + k * M_PI / 3;
    s.atoms.push_back({"C", Point(c * std::cos(t), c * std::sin(t), 0), 6.0});
    s.atoms.push_back({"H", Point(h * std::cos(t), h * std::sin(t), 0), 1.0});
  }
  s.num_orbitals = 21;
  return s;
}

/// Smoothly graded mesh that is not nested with any box mesh.
MeshPtr graded_mesh(int n) {
  const Mesh base = build_box_mesh(Box::cube(-10, 10), n);
  std::vector<Point> x = base.nodes();
  for (Point& p : x) p = p.array() * (0.55 + 0.45 * (p.array() / 10.0).square());
  return std::make_shared<const Mesh>(base.with_nodes(x));
}

double rayleigh(const SparseSymMatrix& h, const SparseSymMatrix& m, const Eigen::VectorXd& v) {
  return v.dot(h * v) / v.dot(m * v);
}

}  // namespace

TEST_CASE("default shift") {
  CHECK(default_shift(atom("He", 2.0)) == 32.0);
  CHECK(default_shift(lithium_hydride()) == 160.0);
  CHECK(default_shift(methane()) == 1600.0);
}

TEST_CASE("interpolation between nonnested meshes") {
  const MeshPtr coarse = graded_mesh(5);
  const MeshPtr fine = box_mesh(Box::cube(-10, 10), 9);
  const EigenCsr interp = interpolation_matrix(coarse, *fine);
  CHECK(interp.rows() == fine->num_nodes());
  CHECK(interp.cols() == coarse->num_nodes());
  auto linear = [](const Point& p) { return 0.3 - 1.2 * p[0] + 0.7 * p[1] + 2.5 * p[2]; };
  Eigen::VectorXd c(coarse->num_nodes());
  for (int i = 0; i < coarse->num_nodes(); ++i) c[i] = linear(coarse->node(i));
  const Eigen::VectorXd f = interp * c;
  double worst = 0.0, worst_sum = 0.0;
  for (int i = 0; i < fine->num_nodes(); ++i) {
    worst = std::max(worst, std::abs(f[i] - linear(fine->node(i))));
    worst_sum = std::max(worst_sum, std::abs(interp.row(i).sum() - 1.0));
  }
  CHECK(worst < 1e-12 * 40.0);
  CHECK(worst_sum < 1e-12);
}

TEST_CASE("projection onto a nested coarse space is the coarse operator") {
  const FemSpace coarse(box_mesh(Box::cube(0, 1), 3));
  const FemSpace fine(box_mesh(Box::cube(0, 1), 6));
  const EigenCsr interp = free_interpolation(coarse, fine);
  const Eigen::MatrixXd direct = assemble_stiffness(coarse).to_dense();
  const Eigen::MatrixXd extra = Eigen::MatrixXd::Random(fine.num_free(), 2);
  const Eigen::MatrixXd blocks = project_augmented(assemble_stiffness(fine), interp, extra);
  const int nh = coarse.num_free();
  CHECK((blocks.topLeftCorner(nh, nh) - direct).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((blocks - blocks.transpose()).cwiseAbs().maxCoeff() < 1e-12 * blocks.cwiseAbs().maxCoeff());
  CHECK_THROWS_AS(project_augmented(assemble_stiffness(coarse), interp, extra), SolverError);
}

TEST_CASE("dependent augmented basis is detected") {
  const FemSpace coarse(box_mesh(Box::cube(0, 1), 3));
  const FemSpace fine(box_mesh(Box::cube(0, 1), 6));
  const EigenCsr interp = free_interpolation(coarse, fine);
  const Eigen::MatrixXd inside = interp * Eigen::MatrixXd::Random(coarse.num_free(), 1);
  const SparseSymMatrix m = assemble_mass(fine);
  const SparseSymMatrix k = assemble_stiffness(fine);
  CHECK_THROWS_AS(solve_augmented_eigenproblem(project_augmented(k, interp, inside), project_augmented(m, interp, inside), 1),
                  SolverError);
  const Eigen::MatrixXd outside = Eigen::MatrixXd::Random(fine.num_free(), 1);
  CHECK_NOTHROW(
      solve_augmented_eigenproblem(project_augmented(k, interp, outside), project_augmented(m, interp, outside), 1));
}

TEST_CASE("shifted linear solves") {
  const KohnShamProblem p(box_mesh(Box::cube(-10, 10), 10), atom("H", 1.0, 1.0), HamiltonianTerms{false, false});
  const SparseSymMatrix h = p.hamiltonian(p.mean_field(Eigen::VectorXd::Zero(p.space().num_nodes())));
  EigenOptions eo;
  eo.tol = 1e-11;
  const EigenResult exact = solve_lowest(h, p.mass(), 2, eo);
  const CgOptions cg{1e-12, 20000, Preconditioner::kJacobi};

  SUBCASE("an exact eigenpair is reproduced") {
    const BvpResult r = solve_shifted_bvps(h, p.mass(), 1.0, exact.values, exact.vectors, cg);
    CHECK((r.waves - exact.vectors).norm() / exact.vectors.norm() < 1e-8);
  }
  SUBCASE("a dominant shift returns the input") {
    const Eigen::MatrixXd psi = p.initial_waves();
    const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(1, rayleigh(h, p.mass(), psi.col(0)));
    const BvpResult r = solve_shifted_bvps(h, p.mass(), 1e6, lambda, psi, cg);
    CHECK((r.waves - psi).norm() / psi.norm() < 1e-4);
  }
  SUBCASE("one solve lowers the Rayleigh quotient of a coarse eigenvector") {
    const FemSpace coarse(graded_mesh(4));
    const EigenCsr interp = free_interpolation(coarse, p.space());
    const SparseSymMatrix hc = assemble_stiffness(coarse).combined(
        0.5, 1.0,
        assemble_weighted_mass(coarse, [](const Point& x) { return -1.0 / x.norm(); }, {Point(0, 0, 0)}));
    const EigenResult ce = solve_lowest(hc, assemble_mass(coarse), 1);
    const Eigen::MatrixXd psi = interp * ce.vectors;
    const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(1, rayleigh(h, p.mass(), psi.col(0)));
    const BvpResult r = solve_shifted_bvps(h, p.mass(), 32.0, lambda, psi, cg);
    CHECK(rayleigh(h, p.mass(), r.waves.col(0)) < lambda[0]);
  }
  SUBCASE("nonconvergence is reported") {
    const CgOptions starved{1e-14, 1, Preconditioner::kJacobi};
    const Eigen::MatrixXd psi = p.initial_waves();
    CHECK_THROWS_AS(solve_shifted_bvps(h, p.mass(), 1.0, Eigen::VectorXd::Zero(1), psi, starved), SolverError);
  }
}

TEST_CASE("shifted operators are positive definite at the default shift") {
  for (const MolecularSystem& s : {atom("He", 2.0), lithium_hydride(), methane(), benzene()}) {
    const KohnShamProblem p(box_mesh(Box::cube(-10, 10), 12), s);
    const Eigen::MatrixXd psi = p.initial_waves();
    const SparseSymMatrix h = p.hamiltonian(p.mean_field(p.density(psi)));
    Eigen::VectorXd lambda(psi.cols());
    for (int i = 0; i < psi.cols(); ++i) lambda[i] = rayleigh(h, p.mass(), psi.col(i));
    const BvpResult r = solve_shifted_bvps(h, p.mass(), default_shift(s), lambda, psi);
    for (const CgResult& c : r.cg) CHECK(c.converged);
  }
}

TEST_CASE("Rayleigh-Ritz properties of the augmented space") {
  const KohnShamProblem p(box_mesh(Box::cube(-10, 10), 10), atom("H", 1.0, 1.0), HamiltonianTerms{false, false});
  const SparseSymMatrix h = p.stiffness().combined(0.5, 1.0, p.external());
  EigenOptions eo;
  eo.tol = 1e-11;
  const EigenResult fine = solve_lowest(h, p.mass(), 3, eo);
  AugmentedSpace space(p, graded_mesh(4));

  SUBCASE("upper bounds that decrease as columns are added") {
    std::mt19937 rng(5);
    std::normal_distribution<double> g;
    Eigen::MatrixXd extra(p.space().num_free(), 4);
    for (auto& v : extra.reshaped()) v = g(rng);
    Eigen::VectorXd previous = Eigen::VectorXd::Constant(3, std::numeric_limits<double>::infinity());
    for (int cols = 1; cols <= 4; ++cols) {
      space.set_extra(extra.leftCols(cols));
      const DenseEigenResult r = solve_augmented_eigenproblem(space.linear_blocks(), space.mass_blocks(), 3);
      for (int i = 0; i < 3; ++i) {
        CHECK(r.values[i] >= fine.values[i] - 1e-10);
        CHECK(r.values[i] <= previous[i] + 1e-12);
      }
      previous = r.values;
      const Eigen::MatrixXd lifted = space.lift(r.vectors);
      CHECK((lifted.transpose() * (p.mass() * lifted) - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SUBCASE("a captured eigenvector gives the fine eigenvalue") {
    space.set_extra(fine.vectors.leftCols(1));
    const DenseEigenResult r = solve_augmented_eigenproblem(space.linear_blocks(), space.mass_blocks(), 1);
    CHECK(std::abs(r.values[0] - fine.values[0]) < 1e-10);
  }
  SUBCASE("the shift only moves the spectrum") {
    space.set_extra(fine.vectors.leftCols(2));
    const double mu = 32.0;
    const DenseEigenResult plain = solve_augmented_eigenproblem(space.linear_blocks(), space.mass_blocks(), 2);
    const DenseEigenResult shifted = solve_augmented_eigenproblem(
        space.linear_blocks() + mu * space.mass_blocks(), space.mass_blocks(), 2);
    CHECK((shifted.values.array() - mu - plain.values.array()).abs().maxCoeff() < 1e-10);
  }
  SUBCASE("coarse space alone is a weaker bound") {
    space.set_extra(fine.vectors.leftCols(1) + 0.1 * Eigen::MatrixXd::Ones(p.space().num_free(), 1));
    const int nh = space.coarse_size();
    const DenseEigenResult coarse_only = dense_generalized_lowest(space.linear_blocks().topLeftCorner(nh, nh),
                                                                  space.mass_blocks().topLeftCorner(nh, nh), 1);
    const DenseEigenResult r = solve_augmented_eigenproblem(space.linear_blocks(), space.mass_blocks(), 1);
    CHECK(r.values[0] < coarse_only.values[0]);
  }
}

TEST_CASE("augmented solve reproduces the direct SCF state") {
  const MeshPtr mesh = graded_mesh(12);
  const KohnShamProblem p(mesh, atom("He", 2.0));
  ScfConfig sc;
  sc.tol = 1e-8;
  const ScfResult direct = scf_solve(p, sc);
  REQUIRE(direct.converged);

  AugmentedConfig ac;
  ac.tol = 3e-5;
  ac.inner_tol = 1e-8;
  ac.max_outer = 60;
  AugmentedSpace space(p, graded_mesh(6));
  const AugmentedResult aug = augmented_solve(space, p.initial_waves(), ac);
  MESSAGE("direct " << direct.energy.total << ", augmented " << aug.state.energy.total << " after "
                    << aug.state.iterations << " outer iterations");
  CHECK(aug.state.converged);
  CHECK(std::abs(aug.state.energy.total - direct.energy.total) < 1e-3);
  CHECK(p.norm(aug.state.rho - direct.rho) < 5e-4);
  CHECK(aug.mu == 32.0);
  const Eigen::MatrixXd& w = aug.state.waves;
  CHECK((w.transpose() * (p.mass() * w) - Eigen::MatrixXd::Identity(1, 1)).norm() < 1e-8);

  // Eigen-residuals fall until they reach the discretization plateau.
  const auto& log = aug.log;
  REQUIRE(log.size() >= 3);
  for (size_t i = 1; i < std::min<size_t>(log.size(), 5); ++i) {
    CHECK(log[i].max_eigen_residual < log[i - 1].max_eigen_residual);
  }

  SUBCASE("restart from a converged state") {
    AugmentedConfig once = ac;
    once.tol = 2e-4;
    const AugmentedResult again = augmented_solve(space, direct.waves, once);
    CHECK(again.state.iterations == 1);
    CHECK(again.log.front().density_change < once.tol);
  }
  SUBCASE("log CSV") {
    const std::string path = "/tmp/ksfem_test_augmented_log.csv";
    write_augmented_log(path, log);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "outer,energy,density_change,max_eigen_residual,bvp_cg_iterations,inner_iterations,wall_ms");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == static_cast<int>(log.size()));
  }
}
