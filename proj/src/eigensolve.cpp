#include "ksfem/eigensolve.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ksfem/error.hpp"

namespace ksfem {

namespace {

template <class ApplyB>
Eigen::MatrixXd mgs_b(const Eigen::MatrixXd& u, ApplyB&& apply_b) {
  Eigen::MatrixXd q = u;
  for (int j = 0; j < q.cols(); ++j) {
    Eigen::VectorXd bv = apply_b(q.col(j));
    const double original = q.col(j).dot(bv);
    if (!(original > 0.0)) {
      if (q.col(j).squaredNorm() > 0.0) {
        throw SolverError(fmt::format("b_orthonormalize: B is not positive definite (column {})", j));
      }
      throw SolverError(fmt::format("b_orthonormalize: column {} is zero", j));
    }
    double norm2 = original;
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(bv) * q.col(i);
      bv = apply_b(q.col(j));
      norm2 = q.col(j).dot(bv);
    }
    if (!(norm2 > 1e-24 * original)) {
      throw SolverError(fmt::format("b_orthonormalize: column {} is linearly dependent on the previous columns", j));
    }
    q.col(j) /= std::sqrt(norm2);
  }
  return q;
}

/// B-orthonormal basis of span(S) by eigendecomposition of the scaled Gram
/// matrix, dropping directions with relative weight below `drop`.
Eigen::MatrixXd svqb(const Eigen::MatrixXd& s, const SparseSymMatrix& b, double drop) {
  Eigen::MatrixXd q = s;
  for (int pass = 0; pass < 2; ++pass) {
    const Eigen::MatrixXd bq = b * q;
    Eigen::MatrixXd g = q.transpose() * bq;
    g = 0.5 * (g + g.transpose());
    Eigen::VectorXd d = g.diagonal();
    std::vector<int> keep;
    for (int i = 0; i < d.size(); ++i) {
      if (d[i] > 0.0) keep.push_back(i);
    }
    if (keep.size() != static_cast<size_t>(d.size())) {
      Eigen::MatrixXd qk(q.rows(), keep.size());
      for (size_t i = 0; i < keep.size(); ++i) qk.col(i) = q.col(keep[i]);
      q = qk;
      continue;  // recompute the Gram matrix of the pruned block
    }
    const Eigen::VectorXd dinv = d.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd gs = dinv.asDiagonal() * g * dinv.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gs);
    const Eigen::VectorXd& theta = es.eigenvalues();
    const double tmax = theta.maxCoeff();
    int first = 0;
    while (first < theta.size() && theta[first] <= drop * tmax) ++first;
    const int k = static_cast<int>(theta.size()) - first;
    Eigen::MatrixXd v = es.eigenvectors().rightCols(k);
    for (int c = 0; c < k; ++c) v.col(c) /= std::sqrt(theta[first + c]);
    q = q * (dinv.asDiagonal() * v);
  }
  return q;
}

Eigen::MatrixXd random_block(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Eigen::MatrixXd x(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) x(i, j) = dist(rng);
  }
  return x;
}

}  // namespace

Eigen::MatrixXd b_orthonormalize(const Eigen::MatrixXd& u, const SparseSymMatrix& b) {
  return mgs_b(u, [&](const Eigen::VectorXd& v) { return Eigen::VectorXd(b * v); });
}

Eigen::MatrixXd b_orthonormalize(const Eigen::MatrixXd& u, const Eigen::MatrixXd& b) {
  return mgs_b(u, [&](const Eigen::VectorXd& v) { return Eigen::VectorXd(b * v); });
}

Eigen::VectorXd eigen_residuals(const SparseSymMatrix& a, const SparseSymMatrix& b, const Eigen::VectorXd& values,
                                const Eigen::MatrixXd& vectors) {
  const Eigen::MatrixXd ax = a * vectors;
  const Eigen::MatrixXd bx = b * vectors;
  Eigen::VectorXd r(values.size());
  for (int i = 0; i < values.size(); ++i) r[i] = (ax.col(i) - values[i] * bx.col(i)).norm() / bx.col(i).norm();
  return r;
}

EigenResult solve_lowest(const SparseSymMatrix& a, const SparseSymMatrix& b, int count, const EigenOptions& opts,
                         const std::optional<Eigen::MatrixXd>& initial) {
  const int n = a.dim();
  if (b.dim() != n) throw SolverError("solve_lowest: A and B have different dimensions");
  if (count < 1 || count >= n) throw SolverError(fmt::format("solve_lowest: cannot compute {} of {} eigenpairs", count, n));

  Eigen::MatrixXd x;
  if (initial && initial->rows() == n && initial->cols() >= count) {
    x = initial->leftCols(count);
  } else {
    x = random_block(n, count, opts.seed);
  }
  try {
    x = b_orthonormalize(x, b);
  } catch (const SolverError&) {
    // Degenerate warm start: fill it up with random directions.
    Eigen::MatrixXd mixed(n, 2 * count);
    mixed << x, random_block(n, count, opts.seed + 1);
    x = svqb(mixed, b, 1e-12).rightCols(count);
  }

  const Eigen::VectorXd adiag = a.diagonal();
  const Eigen::VectorXd bdiag = b.diagonal();
  if ((bdiag.array() <= 0.0).any()) throw SolverError("solve_lowest: B has a non-positive diagonal entry");

  // Rayleigh-Ritz on the starting block.
  Eigen::MatrixXd ax = a * x;
  {
    Eigen::MatrixXd h = x.transpose() * ax;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
    x = x * es.eigenvectors();
    ax = ax * es.eigenvectors();
  }
  Eigen::MatrixXd bx = b * x;
  Eigen::VectorXd lambda = (x.transpose() * ax).diagonal();
  Eigen::MatrixXd p;  // previous directions

  EigenResult res;
  for (int it = 0;; ++it) {
    Eigen::MatrixXd r = ax - bx * lambda.asDiagonal();
    Eigen::VectorXd rn(count);
    std::vector<int> active;
    for (int i = 0; i < count; ++i) {
      rn[i] = r.col(i).norm() / bx.col(i).norm();
      if (rn[i] > opts.tol) active.push_back(i);
    }
    res.iterations = it;
    if (active.empty() || it >= opts.max_iter) {
      res.values = lambda;
      res.vectors = x;
      res.residuals = rn;
      res.converged = active.empty();
      break;
    }

    // Diagonal of A - sigma B with sigma the lowest Ritz value; nonnegative
    // up to the Ritz error since sigma bounds the spectrum from above.
    const double sigma = lambda[0];
    Eigen::VectorXd dinv(n);
    for (int i = 0; i < n; ++i) {
      const double d = adiag[i] - sigma * bdiag[i];
      dinv[i] = 1.0 / std::max(d, 1e-10 * std::abs(adiag[i]) + 1e-300);
    }
    Eigen::MatrixXd w(n, active.size());
    for (size_t k = 0; k < active.size(); ++k) w.col(k) = dinv.cwiseProduct(r.col(active[k]));

    // Project W off X before joint orthonormalization for accuracy.
    w -= x * (bx.transpose() * w);

    Eigen::MatrixXd s(n, count + w.cols() + p.cols());
    s.leftCols(count) = x;
    s.middleCols(count, w.cols()) = w;
    if (p.cols() > 0) s.rightCols(p.cols()) = p;
    const Eigen::MatrixXd q = svqb(s, b, 1e-14);
    if (q.cols() < count) throw SolverError("solve_lowest: search space collapsed below the block size");

    const Eigen::MatrixXd aq = a * q;
    Eigen::MatrixXd h = q.transpose() * aq;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
    const Eigen::MatrixXd y = es.eigenvectors().leftCols(count);
    const Eigen::MatrixXd xnew = q * y;
    p = xnew - x * (bx.transpose() * xnew);
    x = xnew;
    ax = aq * y;
    bx = b * x;
    lambda = es.eigenvalues().head(count);
  }
  if (!res.converged) {
    spdlog::warn("solve_lowest: not converged after {} iterations, worst residual {:.3e}", res.iterations,
                 res.residuals.maxCoeff());
  }
  return res;
}

DenseEigenResult dense_generalized_lowest(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int count) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.rows() != n || b.cols() != n) throw SolverError("dense_generalized_lowest: shape mismatch");
  if (count < 1 || count > n) throw SolverError("dense_generalized_lowest: bad eigenpair count");
  const Eigen::MatrixXd bw = 0.5 * (b + b.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(bw);
  if (llt.info() != Eigen::Success) throw SolverError("dense_generalized_lowest: B is not positive definite");
  // Reduce to L^-1 A L^-T and solve the standard problem.
  Eigen::MatrixXd c = llt.matrixL().solve(0.5 * (a + a.transpose()));
  c = llt.matrixL().solve(c.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (c + c.transpose()));
  if (es.info() != Eigen::Success) throw SolverError("dense_generalized_lowest: eigenvalue iteration failed");
  DenseEigenResult out;
  out.values = es.eigenvalues().head(count);
  out.vectors = llt.matrixU().solve(es.eigenvectors().leftCols(count));
  return out;
}

}  // namespace ksfem
