#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ksfem {

using Point = Eigen::Vector3d;
using Tet = std::array<int, 4>;

/// Axis-aligned computational domain.
struct Box {
  Point lo = Point::Zero();
  Point hi = Point::Ones();

  static Box cube(double lo, double hi) {
    return {Point::Constant(lo), Point::Constant(hi)};
  }
  Point extent() const { return hi - lo; }
  Point center() const { return 0.5 * (lo + hi); }
  double volume() const { return extent().prod(); }
  bool contains(const Point& p, double tol = 0.0) const;
  Point clamp(const Point& p) const;
  /// True if p lies on one of the six faces within tol.
  bool on_surface(const Point& p, double tol) const;
};

double signed_volume(const Point& a, const Point& b, const Point& c, const Point& d);

/// Conforming tetrahedral mesh of a box. Immutable after construction; node
/// relocation produces a new Mesh with the same connectivity.
class Mesh {
 public:
  /// Validates the invariants: indices in range, every tet positively oriented,
  /// all nodes inside the box. Boundary nodes are tagged from the box surface.
  Mesh(std::vector<Point> nodes, std::vector<Tet> tets, Box box);

  const std::vector<Point>& nodes() const { return nodes_; }
  const Point& node(int i) const { return nodes_[i]; }
  const std::vector<Tet>& tets() const { return tets_; }
  const Tet& tet(int t) const { return tets_[t]; }
  const Box& box() const { return box_; }

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int num_tets() const { return static_cast<int>(tets_.size()); }

  bool is_boundary(int i) const { return boundary_[i] != 0; }
  const std::vector<int>& boundary_nodes() const { return boundary_list_; }
  int num_boundary() const { return static_cast<int>(boundary_list_.size()); }

  double tet_volume(int t) const;
  double total_volume() const;
  /// Longest edge over the whole mesh.
  double max_edge() const;

  /// Boundary triangles (faces with a single incident tet), outward oriented.
  std::vector<std::array<int, 3>> boundary_faces() const;

  /// Same connectivity, new coordinates. Throws MeshError if any tet inverts.
  Mesh with_nodes(std::vector<Point> nodes) const;

 private:
  std::vector<Point> nodes_;
  std::vector<Tet> tets_;
  Box box_;
  std::vector<char> boundary_;
  std::vector<int> boundary_list_;
};

using MeshPtr = std::shared_ptr<const Mesh>;

/// Structured mesh: every cube cell is split into six tets sharing its main
/// diagonal (Kuhn subdivision). (n+1)^3 nodes and 6 n^3 tets.
Mesh build_box_mesh(const Box& box, int n);

/// One coefficient per node of a mesh.
struct ScalarField {
  MeshPtr mesh;
  Eigen::VectorXd values;

  ScalarField() = default;
  ScalarField(MeshPtr m, Eigen::VectorXd v);
  static ScalarField zeros(MeshPtr m);
  /// Nodal samples of f.
  template <class F>
  static ScalarField sample(MeshPtr m, F&& f) {
    Eigen::VectorXd v(m->num_nodes());
    for (int i = 0; i < m->num_nodes(); ++i) v[i] = f(m->node(i));
    return ScalarField(std::move(m), std::move(v));
  }
};

// Medit ASCII (.mesh) interchange.
void write_mesh(const Mesh& mesh, const std::string& path);
Mesh read_mesh(const std::string& path);
/// Medit .sol with one scalar per vertex (SolAtVertices, type 1).
void write_scalar_sol(const Mesh& mesh, const Eigen::VectorXd& values, const std::string& path);

struct NamedField {
  std::string name;
  Eigen::VectorXd values;
};
/// Legacy ASCII VTK unstructured grid with the fields as point data.
void write_vtk(const Mesh& mesh, const std::vector<NamedField>& fields, const std::string& path);

}  // namespace ksfem
