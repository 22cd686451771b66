#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace ksfem {

/// CSR structure shared by every operator assembled on the same set of
/// degrees of freedom, so operators can be combined entrywise.
struct SparsityPattern {
  int n = 0;
  std::vector<int> row_ptr;  // size n+1
  std::vector<int> cols;     // sorted within each row

  int nnz() const { return static_cast<int>(cols.size()); }
  /// Position of (i, j) in the value array, or -1.
  int find(int i, int j) const;
  /// Builds the pattern from per-row neighbor lists (diagonal included).
  static std::shared_ptr<const SparsityPattern> from_rows(std::vector<std::vector<int>> rows);
};

using PatternPtr = std::shared_ptr<const SparsityPattern>;
using EigenCsr = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

/// Symmetric sparse operator in CSR form (both triangles stored).
class SparseSymMatrix {
 public:
  SparseSymMatrix() = default;
  SparseSymMatrix(PatternPtr pattern, Eigen::VectorXd values);
  static SparseSymMatrix zeros(PatternPtr pattern);

  int dim() const { return pattern_ ? pattern_->n : 0; }
  int nnz() const { return pattern_ ? pattern_->nnz() : 0; }
  const PatternPtr& pattern() const { return pattern_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }

  double coeff(int i, int j) const;
  Eigen::VectorXd diagonal() const;

  Eigen::VectorXd operator*(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd operator*(const Eigen::MatrixXd& x) const;
  void multiply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const;

  /// Zero-copy Eigen view, for sparse-sparse products.
  Eigen::Map<const EigenCsr> eigen() const;
  Eigen::MatrixXd to_dense() const;

  /// max |a_ij - a_ji| / max |a_ij|.
  double symmetry_defect() const;

  /// a*this + b*other; both operands must share one pattern.
  SparseSymMatrix combined(double a, double b, const SparseSymMatrix& other) const;
  SparseSymMatrix& operator+=(const SparseSymMatrix& other);
  SparseSymMatrix operator+(const SparseSymMatrix& other) const { return combined(1.0, 1.0, other); }
  SparseSymMatrix scaled(double a) const;

 private:
  PatternPtr pattern_;
  Eigen::VectorXd values_;
};

enum class Preconditioner { kNone, kJacobi, kSymmetricGaussSeidel };

struct CgOptions {
  double rel_tol = 1e-8;
  int max_iter = 10000;
  Preconditioner precond = Preconditioner::kJacobi;
};

struct CgResult {
  int iterations = 0;
  double rel_residual = 0.0;
  bool converged = false;
};

/// Preconditioned conjugate gradients for a symmetric positive definite A.
/// x holds the initial guess on entry and the solution on exit.
CgResult solve_cg(const SparseSymMatrix& a, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                  const CgOptions& opts = {});

}  // namespace ksfem
