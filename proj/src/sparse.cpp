#include "ksfem/sparse.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ksfem/error.hpp"

namespace ksfem {

int SparsityPattern::find(int i, int j) const {
  const auto first = cols.begin() + row_ptr[i];
  const auto last = cols.begin() + row_ptr[i + 1];
  const auto it = std::lower_bound(first, last, j);
  return (it != last && *it == j) ? static_cast<int>(it - cols.begin()) : -1;
}

PatternPtr SparsityPattern::from_rows(std::vector<std::vector<int>> rows) {
  auto p = std::make_shared<SparsityPattern>();
  p->n = static_cast<int>(rows.size());
  p->row_ptr.assign(p->n + 1, 0);
  for (int i = 0; i < p->n; ++i) {
    auto& r = rows[i];
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    p->row_ptr[i + 1] = p->row_ptr[i] + static_cast<int>(r.size());
  }
  p->cols.reserve(p->row_ptr.back());
  for (auto& r : rows) p->cols.insert(p->cols.end(), r.begin(), r.end());
  return p;
}

SparseSymMatrix::SparseSymMatrix(PatternPtr pattern, Eigen::VectorXd values)
    : pattern_(std::move(pattern)), values_(std::move(values)) {
  if (values_.size() != pattern_->nnz()) throw SolverError("SparseSymMatrix: value count does not match pattern");
}

SparseSymMatrix SparseSymMatrix::zeros(PatternPtr pattern) {
  const int nnz = pattern->nnz();
  return SparseSymMatrix(std::move(pattern), Eigen::VectorXd::Zero(nnz));
}

double SparseSymMatrix::coeff(int i, int j) const {
  const int k = pattern_->find(i, j);
  return k < 0 ? 0.0 : values_[k];
}

Eigen::VectorXd SparseSymMatrix::diagonal() const {
  Eigen::VectorXd d(dim());
  for (int i = 0; i < dim(); ++i) d[i] = coeff(i, i);
  return d;
}

void SparseSymMatrix::multiply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
  const auto& rp = pattern_->row_ptr;
  const auto& cj = pattern_->cols;
  const double* v = values_.data();
  y.resize(dim());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < dim(); ++i) {
    double s = 0.0;
    for (int k = rp[i]; k < rp[i + 1]; ++k) s += v[k] * x[cj[k]];
    y[i] = s;
  }
}

Eigen::VectorXd SparseSymMatrix::operator*(const Eigen::VectorXd& x) const {
  Eigen::VectorXd y;
  multiply(x, y);
  return y;
}

Eigen::MatrixXd SparseSymMatrix::operator*(const Eigen::MatrixXd& x) const {
  const auto& rp = pattern_->row_ptr;
  const auto& cj = pattern_->cols;
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(dim(), x.cols());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < dim(); ++i) {
    for (int k = rp[i]; k < rp[i + 1]; ++k) y.row(i) += values_[k] * x.row(cj[k]);
  }
  return y;
}

Eigen::Map<const EigenCsr> SparseSymMatrix::eigen() const {
  return Eigen::Map<const EigenCsr>(dim(), dim(), nnz(), pattern_->row_ptr.data(), pattern_->cols.data(),
                                    values_.data());
}

Eigen::MatrixXd SparseSymMatrix::to_dense() const {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(dim(), dim());
  for (int i = 0; i < dim(); ++i) {
    for (int k = pattern_->row_ptr[i]; k < pattern_->row_ptr[i + 1]; ++k) d(i, pattern_->cols[k]) = values_[k];
  }
  return d;
}

double SparseSymMatrix::symmetry_defect() const {
  double worst = 0.0;
  const double scale = values_.size() ? values_.cwiseAbs().maxCoeff() : 0.0;
  for (int i = 0; i < dim(); ++i) {
    for (int k = pattern_->row_ptr[i]; k < pattern_->row_ptr[i + 1]; ++k) {
      worst = std::max(worst, std::abs(values_[k] - coeff(pattern_->cols[k], i)));
    }
  }
  return scale > 0.0 ? worst / scale : 0.0;
}

SparseSymMatrix SparseSymMatrix::combined(double a, double b, const SparseSymMatrix& other) const {
  if (other.pattern_ != pattern_) throw SolverError("SparseSymMatrix: operands have different patterns");
  return SparseSymMatrix(pattern_, a * values_ + b * other.values_);
}

SparseSymMatrix& SparseSymMatrix::operator+=(const SparseSymMatrix& other) {
  if (other.pattern_ != pattern_) throw SolverError("SparseSymMatrix: operands have different patterns");
  values_ += other.values_;
  return *this;
}

SparseSymMatrix SparseSymMatrix::scaled(double a) const { return SparseSymMatrix(pattern_, a * values_); }

// ---------------------------------------------------------------------------

namespace {

class PreconditionerApply {
 public:
  PreconditionerApply(const SparseSymMatrix& a, Preconditioner kind) : a_(a), kind_(kind), diag_(a.diagonal()) {
    for (int i = 0; i < diag_.size(); ++i) {
      if (!(diag_[i] > 0.0)) {
        throw SolverError(fmt::format("CG: non-positive diagonal {:.3e} at row {}", diag_[i], i));
      }
    }
  }

  void operator()(const Eigen::VectorXd& r, Eigen::VectorXd& z) const {
    switch (kind_) {
      case Preconditioner::kNone:
        z = r;
        return;
      case Preconditioner::kJacobi:
        z = r.cwiseQuotient(diag_);
        return;
      case Preconditioner::kSymmetricGaussSeidel:
        sgs(r, z);
        return;
    }
  }

 private:
  // z = (D+U)^{-1} D (D+L)^{-1} r
  void sgs(const Eigen::VectorXd& r, Eigen::VectorXd& z) const {
    const auto& rp = a_.pattern()->row_ptr;
    const auto& cj = a_.pattern()->cols;
    const auto& v = a_.values();
    const int n = a_.dim();
    z.resize(n);
    for (int i = 0; i < n; ++i) {
      double s = r[i];
      for (int k = rp[i]; k < rp[i + 1] && cj[k] < i; ++k) s -= v[k] * z[cj[k]];
      z[i] = s / diag_[i];
    }
    for (int i = n - 1; i >= 0; --i) {
      double s = diag_[i] * z[i];
      for (int k = rp[i + 1] - 1; k >= rp[i] && cj[k] > i; --k) s -= v[k] * z[cj[k]];
      z[i] = s / diag_[i];
    }
  }

  const SparseSymMatrix& a_;
  Preconditioner kind_;
  Eigen::VectorXd diag_;
};

}  // namespace

CgResult solve_cg(const SparseSymMatrix& a, const Eigen::VectorXd& b, Eigen::VectorXd& x, const CgOptions& opts) {
  const int n = a.dim();
  if (b.size() != n) throw SolverError("CG: right-hand side size mismatch");
  if (x.size() != n) x = Eigen::VectorXd::Zero(n);
  CgResult res;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    x.setZero();
    res.converged = true;
    return res;
  }
  PreconditionerApply precond(a, opts.precond);
  Eigen::VectorXd r, z, p, q;
  // The recurred residual drifts from the true one; restart from the true
  // residual until both agree with the tolerance.
  for (int restart = 0; restart < 4; ++restart) {
    r = b - a * x;
    res.rel_residual = r.norm() / bnorm;
    if (res.rel_residual <= opts.rel_tol || res.iterations >= opts.max_iter) break;
    precond(r, z);
    p = z;
    double rz = r.dot(z);
    while (res.iterations < opts.max_iter) {
      a.multiply(p, q);
      const double pq = p.dot(q);
      if (!(pq > 0.0)) throw SolverError(fmt::format("CG: operator not positive definite (p'Ap = {:.3e})", pq));
      const double alpha = rz / pq;
      x += alpha * p;
      r -= alpha * q;
      ++res.iterations;
      if (r.norm() / bnorm <= opts.rel_tol) break;
      precond(r, z);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
  }
  res.rel_residual = (b - a * x).norm() / bnorm;
  res.converged = res.rel_residual <= opts.rel_tol;
  return res;
}

}  // namespace ksfem
