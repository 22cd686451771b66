#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Core>

#include "ksfem/sparse.hpp"

namespace ksfem {

struct EigenOptions {
  /// Bound on ||A u - lambda B u|| / ||B u|| for every returned pair.
  double tol = 1e-8;
  int max_iter = 2000;
  std::uint64_t seed = 1;
};

/// Lowest eigenpairs of A u = lambda B u. Eigenvalues ascending, eigenvectors
/// B-orthonormal columns.
struct EigenResult {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  Eigen::VectorXd residuals;
  int iterations = 0;
  bool converged = false;
};

/// Block preconditioned iteration (current block, preconditioned residuals
/// and previous directions, Rayleigh-Ritz on the union) with a diagonal
/// preconditioner. `initial` warm-starts the block.
EigenResult solve_lowest(const SparseSymMatrix& a, const SparseSymMatrix& b, int count, const EigenOptions& opts = {},
                         const std::optional<Eigen::MatrixXd>& initial = std::nullopt);

/// Modified Gram-Schmidt in the B inner product (two passes). Throws
/// SolverError naming the first column whose B-norm after projection falls
/// below 1e-12 of its original B-norm, or if B is not positive definite.
Eigen::MatrixXd b_orthonormalize(const Eigen::MatrixXd& u, const SparseSymMatrix& b);
Eigen::MatrixXd b_orthonormalize(const Eigen::MatrixXd& u, const Eigen::MatrixXd& b);

/// Lowest `count` eigenpairs of the dense pair (A, B), B positive definite:
/// Cholesky reduction then a dense symmetric eigensolve.
struct DenseEigenResult {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};
DenseEigenResult dense_generalized_lowest(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int count);

/// Residual norms ||A x_i - lambda_i B x_i|| / ||B x_i||.
Eigen::VectorXd eigen_residuals(const SparseSymMatrix& a, const SparseSymMatrix& b, const Eigen::VectorXd& values,
                                const Eigen::MatrixXd& vectors);

}  // namespace ksfem
