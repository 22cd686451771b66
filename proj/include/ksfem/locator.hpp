#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "ksfem/mesh.hpp"

namespace ksfem {

/// Result of a point query: containing tet and barycentric coordinates.
struct Location {
  int tet = -1;
  std::array<double, 4> bary{};
  /// Point was not inside any tet; the nearest tet was used and the
  /// barycentric coordinates clamped onto it.
  bool outside = false;
  int walk_steps = 0;
  bool used_scan = false;
};

/// Octree over the nodes of a mesh plus the tet adjacency needed for the
/// barycentric walk. Immutable once built; queries are const and thread-safe.
class Locator {
 public:
  static constexpr int kLeafCapacity = 8;

  explicit Locator(MeshPtr mesh, std::uint64_t seed = 0x5eed);

  const Mesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }

  /// Points slightly outside the box are clamped onto it first.
  Location locate(const Point& q) const;

  /// Brute-force scan over every tet; used as the walk fallback and as a
  /// test oracle.
  Location locate_exhaustive(const Point& q) const;

  std::array<double, 4> barycentric(int tet, const Point& q) const;

  /// Node of the mesh closest to q among those in q's terminal octree cell.
  int nearest_node_in_cell(const Point& q) const;

  // Octree introspection (tests).
  int num_leaves() const;
  /// Node indices held by each terminal cell.
  std::vector<std::vector<int>> leaf_contents() const;

  const std::vector<int>& incident_tets(int node) const { return node_tets_[node]; }
  /// Tet sharing the face opposite local vertex `local` of `tet`, or -1.
  int neighbor(int tet, int local) const { return neighbors_[tet][local]; }

 private:
  struct Cell {
    Point lo, hi;
    std::array<int, 8> child;  // -1 if absent
    std::vector<int> nodes;    // only for leaves
    bool leaf = true;
  };

  int build(Point lo, Point hi, std::vector<int> ids, int depth);
  int descend(const Point& q) const;

  MeshPtr mesh_;
  std::uint64_t seed_;
  std::vector<Cell> cells_;
  std::vector<std::vector<int>> node_tets_;
  std::vector<std::array<int, 4>> neighbors_;
  // Per tet: inverse of [p1-p0, p2-p0, p3-p0] and p0.
  std::vector<Eigen::Matrix3d> inv_jac_;
};

/// Transfer of P1 fields from a source mesh onto the nodes of a target mesh.
/// Locations are computed once so several fields can share them.
class Interpolator {
 public:
  Interpolator(const Locator& source, const Mesh& target);

  ScalarField apply(const ScalarField& f, MeshPtr target) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& source_values) const;

  const std::vector<Location>& locations() const { return locations_; }
  int num_outside() const { return outside_; }

  /// Sparse operator (target nodes x source nodes). Optional index maps
  /// restrict rows/columns, e.g. to free nodes; -1 entries are dropped.
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix(const std::vector<int>& target_rows,
                                                      const std::vector<int>& source_cols) const;

 private:
  const Mesh* source_;
  std::vector<Location> locations_;
  int outside_ = 0;
};

/// g(q) = sum_j lambda_j f(q_j) for every node q of the target mesh.
ScalarField interpolate_field(const ScalarField& f, const Locator& source, MeshPtr target);
ScalarField interpolate_field(const ScalarField& f, MeshPtr target);

}  // namespace ksfem
