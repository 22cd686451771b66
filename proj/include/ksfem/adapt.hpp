#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "ksfem/mesh.hpp"

namespace ksfem {

using Tensor = Eigen::Matrix3d;

/// Symmetric positive definite tensor per node of a mesh (bohr^-2).
struct MetricField {
  MeshPtr mesh;
  std::vector<Tensor> tensors;
};

/// Nodal Hessians by two rounds of volume-weighted averaging of element
/// gradients: first of u, then of each recovered gradient component.
/// Symmetrized.
std::vector<Tensor> recover_hessian(const Mesh& mesh, const Eigen::VectorXd& u);

struct MetricOptions {
  /// Target L-infinity interpolation error.
  double epsilon = 1e-3;
  double h_min = 0.05;
  double h_max = 5.0;
};

/// Interpolation constant of the L-infinity estimate in 3D, (1/2)(3/4)^2.
inline constexpr double kMetricConstant = 9.0 / 32.0;

/// R diag(clamp(C |lambda_i| / epsilon, 1/h_max^2, 1/h_min^2)) R^T per node.
Tensor metric_from_hessian(const Tensor& hessian, const MetricOptions& opts);
MetricField metric_from_hessian(MeshPtr mesh, const std::vector<Tensor>& hessians, const MetricOptions& opts);

/// Medit .sol, SolAtVertices with one symmetric tensor per vertex written
/// as m11 m12 m22 m13 m23 m33.
void write_metric_sol(const MetricField& metric, const std::string& path);
/// Throws IoError on malformed input or a vertex count different from the
/// mesh's.
MetricField read_metric_sol(MeshPtr mesh, const std::string& path);

struct MoveOptions {
  int sweeps = 40;
  /// Stop once no node moves farther than this fraction of its shortest
  /// incident edge in a sweep.
  double stop_fraction = 1e-4;
  int max_backtracks = 10;
  /// Each point is given the nearest interior node, which then stays put.
  std::vector<Point> pinned_points;
};

struct MoveStats {
  int sweeps = 0;
  int rejected_moves = 0;
  /// Edge length variance (see metric_edge_length_variance) before the
  /// first sweep and after each sweep.
  std::vector<double> edge_length_variance;
};

/// Metric length sqrt(e^T M e) of edge e under the tensor M.
double metric_length(const Eigen::Vector3d& e, const Tensor& m);

/// Relocates interior nodes by Gauss-Seidel sweeps towards the average of
/// their neighbors weighted by metric length per unit Euclidean length, so
/// that edges shorten where the metric is large. The metric lives on its own
/// background mesh and is interpolated at the moving positions. Moves that
/// would invert a tet are halved until valid or dropped. Connectivity and
/// boundary nodes are unchanged.
Mesh move_mesh(const Mesh& mesh, const MetricField& metric, const MoveOptions& opts = {},
               MoveStats* stats = nullptr);

/// Variance of the metric edge lengths over all edges of `mesh`, relative
/// to the squared mean length, so that it does not depend on the scale of
/// the metric.
double metric_edge_length_variance(const Mesh& mesh, const MetricField& metric);

/// Carries a mesh deformation over to a new logical grid: `reference` is
/// the undeformed grid of `deformed` (same connectivity), and every node of
/// `logical` is mapped through the piecewise linear map reference ->
/// deformed. Returns `logical` itself when the mapped mesh would contain an
/// inverted tet.
Mesh transfer_deformation(const Mesh& logical, const Mesh& reference, const Mesh& deformed);

}  // namespace ksfem
