#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ksfem/eigensolve.hpp"
#include "ksfem/error.hpp"
#include "ksfem/fem.hpp"

using namespace ksfem;

namespace {

SparseSymMatrix diagonal_matrix(const Eigen::VectorXd& d) {
  std::vector<std::vector<int>> rows(d.size());
  for (int i = 0; i < d.size(); ++i) rows[i] = {i};
  return SparseSymMatrix(SparsityPattern::from_rows(rows), d);
}

double laplace_lowest(int n) {
  FemSpace space(std::make_shared<const Mesh>(build_box_mesh(Box::cube(0, 1), n)));
  const EigenResult r = solve_lowest(assemble_stiffness(space), assemble_mass(space), 1);
  REQUIRE(r.converged);
  return r.values[0];
}

}  // namespace

TEST_CASE("diagonal problem") {
  const auto a = diagonal_matrix(Eigen::Vector3d(1, 2, 3));
  const auto b = diagonal_matrix(Eigen::Vector3d::Ones());
  const EigenResult r = solve_lowest(a, b, 2);
  REQUIRE(r.converged);
  CHECK(r.values[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(r.values[1] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(std::abs(std::abs(r.vectors(0, 0)) - 1.0) < 1e-8);
  CHECK(std::abs(std::abs(r.vectors(1, 1)) - 1.0) < 1e-8);
}

TEST_CASE("Dirichlet Laplacian on the unit cube converges at second order") {
  const double exact = 3.0 * std::numbers::pi * std::numbers::pi;
  const double l8 = laplace_lowest(8);
  const double l16 = laplace_lowest(16);
  MESSAGE("lambda_1: n=8 " << l8 << ", n=16 " << l16 << ", exact " << exact);
  CHECK(std::abs(l8 - exact) / exact < 0.07);
  // Independent dense assembly and solve of the same discretization.
  CHECK(l8 == doctest::Approx(31.527169288).epsilon(1e-8));
  const double ratio = (l8 - exact) / (l16 - exact);
  CHECK(ratio > 3.0);
  CHECK(ratio < 5.0);
}

TEST_CASE("matches a dense generalized eigensolver") {
  FemSpace space(std::make_shared<const Mesh>(build_box_mesh(Box(Point(0, 0, 0), Point(1, 1.3, 0.8)), 7)));
  REQUIRE(space.num_free() <= 500);
  // Indefinite A: Laplacian plus a negative well.
  const auto a = assemble_stiffness(space).combined(0.5, 1.0, assemble_weighted_mass(space, [](const Point& x) {
                   return -20.0 * std::exp(-10.0 * (x - Point(0.4, 0.6, 0.4)).squaredNorm());
                 }));
  const auto b = assemble_mass(space);
  const int count = 5;
  const EigenResult r = solve_lowest(a, b, count);
  REQUIRE(r.converged);

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> oracle(a.to_dense(), b.to_dense());
  for (int i = 0; i < count; ++i) {
    CHECK(std::abs(r.values[i] - oracle.eigenvalues()[i]) <= 1e-8 * std::abs(oracle.eigenvalues()[i]));
  }
  const Eigen::MatrixXd gram = r.vectors.transpose() * (b * r.vectors);
  CHECK((gram - Eigen::MatrixXd::Identity(count, count)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(r.residuals.maxCoeff() <= 1e-8);

}

TEST_CASE("dense generalized solver against residuals and inertia") {
  FemSpace space(std::make_shared<const Mesh>(build_box_mesh(Box(Point(0, 0, 0), Point(1, 1.3, 0.8)), 6)));
  const Eigen::MatrixXd a = assemble_stiffness(space).combined(0.5, 1.0, assemble_weighted_mass(space, [](const Point& x) {
                              return -30.0 / (0.05 + (x - Point(0.5, 0.6, 0.4)).norm());
                            })).to_dense();
  const Eigen::MatrixXd b = assemble_mass(space).to_dense();
  const int count = 4;
  const DenseEigenResult d = dense_generalized_lowest(a, b, count);
  const Eigen::MatrixXd res = a * d.vectors - b * d.vectors * d.values.asDiagonal();
  CHECK(res.cwiseAbs().maxCoeff() < 1e-9 * a.cwiseAbs().maxCoeff());
  const Eigen::MatrixXd gram = d.vectors.transpose() * b * d.vectors;
  CHECK((gram - Eigen::MatrixXd::Identity(count, count)).cwiseAbs().maxCoeff() < 1e-10);
  // Sylvester: the number of negative pivots of A - sigma B counts eigenvalues below sigma.
  auto below = [&](double sigma) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a - sigma * b);
    return static_cast<int>((ldlt.vectorD().array() < 0.0).count());
  };
  for (int i = 0; i < count; ++i) {
    const double gap = 1e-6 * (1.0 + std::abs(d.values[i]));
    CHECK(below(d.values[i] - gap) == i);
    CHECK(below(d.values[i] + gap) == i + 1);
  }
}

TEST_CASE("warm start needs fewer iterations") {
  FemSpace space(std::make_shared<const Mesh>(build_box_mesh(Box::cube(0, 1), 10)));
  const auto a = assemble_stiffness(space);
  const auto b = assemble_mass(space);
  const EigenResult cold = solve_lowest(a, b, 3);
  const EigenResult warm = solve_lowest(a, b, 3, {}, cold.vectors);
  CHECK(warm.iterations <= cold.iterations);
  CHECK(warm.iterations <= 2);
}

TEST_CASE("b_orthonormalize") {
  FemSpace space(std::make_shared<const Mesh>(build_box_mesh(Box::cube(0, 1), 5)));
  const auto b = assemble_mass(space);
  std::mt19937 rng(2);
  std::normal_distribution<double> g;
  Eigen::MatrixXd u(space.num_free(), 4);
  for (auto& x : u.reshaped()) x = g(rng);

  const Eigen::MatrixXd q = b_orthonormalize(u, b);
  const Eigen::MatrixXd gram = q.transpose() * (b * q);
  CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);

  const Eigen::MatrixXd again = b_orthonormalize(q, b);
  CHECK((again.cwiseAbs() - q.cwiseAbs()).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd dep(space.num_free(), 2);
  dep.col(0) = u.col(0);
  dep.col(1) = 2.0 * u.col(0);
  CHECK_THROWS_WITH_AS(b_orthonormalize(dep, b), doctest::Contains("column 1"), SolverError);
}

TEST_CASE("indefinite B is reported") {
  const auto a = diagonal_matrix(Eigen::Vector3d(1, 2, 3));
  const auto b = diagonal_matrix(Eigen::Vector3d(1, -1, 1));
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(3, 1);
  u(1, 0) = 1.0;
  CHECK_THROWS_AS(b_orthonormalize(u, b), SolverError);
  Eigen::Matrix3d bd = Eigen::Vector3d(1, -1, 1).asDiagonal();
  CHECK_THROWS_AS(dense_generalized_lowest(Eigen::Matrix3d::Identity(), bd, 1), SolverError);
}
