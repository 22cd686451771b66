#pragma once

#include <array>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "ksfem/mesh.hpp"
#include "ksfem/sparse.hpp"

namespace ksfem {

/// Quadrature on the reference tetrahedron in barycentric form. Weights are
/// normalized to the element volume (they sum to 1).
struct QuadratureRule {
  int degree = 0;
  std::vector<std::array<double, 4>> points;
  std::vector<double> weights;

  int size() const { return static_cast<int>(weights.size()); }
  /// Rules of degree 1 (1 point), 2 (4 points), 3 (5 points), 4 (11 points).
  static const QuadratureRule& of_degree(int degree);
};

/// Which nodes an operator acts on.
enum class Dofs { kAll, kFree };

/// P1 finite element space on a mesh: element geometry, the free/boundary
/// split for homogeneous Dirichlet conditions, and the sparsity patterns.
class FemSpace {
 public:
  explicit FemSpace(MeshPtr mesh);

  const Mesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  int num_nodes() const { return mesh_->num_nodes(); }
  int num_free() const { return static_cast<int>(free_nodes_.size()); }
  int size(Dofs dofs) const { return dofs == Dofs::kAll ? num_nodes() : num_free(); }

  double volume(int t) const { return volumes_[t]; }
  /// Rows are the constant gradients of the four barycentric functions.
  const Eigen::Matrix<double, 4, 3>& gradients(int t) const { return gradients_[t]; }

  /// Node -> free index, -1 on the boundary.
  int free_index(int node) const { return free_index_[node]; }
  const std::vector<int>& free_index_map() const { return free_index_; }
  const std::vector<int>& free_nodes() const { return free_nodes_; }

  const PatternPtr& pattern(Dofs dofs) const { return dofs == Dofs::kAll ? full_ : free_; }
  /// Value-array slot of local entry (a, b) of tet t; -1 if the row or
  /// column is eliminated.
  int slot(Dofs dofs, int t, int a, int b) const {
    return (dofs == Dofs::kAll ? full_slots_ : free_slots_)[16 * static_cast<size_t>(t) + 4 * a + b];
  }

  /// Free-node values of a nodal vector.
  Eigen::VectorXd restrict(const Eigen::VectorXd& full) const;
  Eigen::MatrixXd restrict(const Eigen::MatrixXd& full) const;
  /// Nodal vector with zeros on the boundary.
  Eigen::VectorXd lift(const Eigen::VectorXd& free) const;
  Eigen::MatrixXd lift(const Eigen::MatrixXd& free) const;

  /// Physical coordinates of a barycentric point in tet t.
  Point map(int t, const std::array<double, 4>& bary) const;

 private:
  MeshPtr mesh_;
  std::vector<double> volumes_;
  std::vector<Eigen::Matrix<double, 4, 3>> gradients_;
  std::vector<int> free_index_;
  std::vector<int> free_nodes_;
  PatternPtr full_, free_;
  std::vector<int> full_slots_, free_slots_;
};

using PointFunction = std::function<double(const Point&)>;

/// (grad phi_i, grad phi_j), exact for P1.
SparseSymMatrix assemble_stiffness(const FemSpace& space, Dofs dofs = Dofs::kFree);
/// (phi_i, phi_j), exact element formula V/20 (1 + delta_ij).
SparseSymMatrix assemble_mass(const FemSpace& space, Dofs dofs = Dofs::kFree);
/// (w phi_i, phi_j) by quadrature; w evaluated pointwise.
SparseSymMatrix assemble_weighted_mass(const FemSpace& space, const PointFunction& w, Dofs dofs = Dofs::kFree,
                                       int degree = 4);
/// As above with degree-4 quadrature on elements recursively split (up to
/// `levels` times) near the points where w is singular.
SparseSymMatrix assemble_weighted_mass(const FemSpace& space, const PointFunction& w,
                                       const std::vector<Point>& singular_points, Dofs dofs = Dofs::kFree,
                                       int levels = 6);
/// (w phi_i, phi_j) with w a P1 nodal field interpolated at quadrature points.
SparseSymMatrix assemble_weighted_mass(const FemSpace& space, const Eigen::VectorXd& w_nodal,
                                       Dofs dofs = Dofs::kFree, int degree = 4);

/// Eliminates boundary rows and columns of an all-node operator.
SparseSymMatrix apply_dirichlet(const SparseSymMatrix& full, const FemSpace& space);

/// Integral of g(u(x), x) by quadrature, u a P1 nodal field.
double integrate(const FemSpace& space, const Eigen::VectorXd& u_nodal,
                 const std::function<double(double, const Point&)>& g, int degree = 4);

/// Row sums of the all-node mass matrix (lumped mass).
Eigen::VectorXd lumped_mass(const FemSpace& space);

}  // namespace ksfem
