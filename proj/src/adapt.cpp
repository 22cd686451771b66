#include "ksfem/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ksfem/error.hpp"
#include "ksfem/locator.hpp"

namespace ksfem {

namespace {

/// Volume-weighted nodal average of the element gradients of a P1 field.
Eigen::MatrixX3d recover_gradient(const Mesh& mesh, const std::vector<Eigen::Matrix3d>& inv_jt,
                                  const std::vector<double>& vol, const Eigen::VectorXd& u) {
  Eigen::MatrixX3d g = Eigen::MatrixX3d::Zero(mesh.num_nodes(), 3);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(mesh.num_nodes());
  for (int t = 0; t < mesh.num_tets(); ++t) {
    const Tet& k = mesh.tet(t);
    const Eigen::Vector3d du(u[k[1]] - u[k[0]], u[k[2]] - u[k[0]], u[k[3]] - u[k[0]]);
    const Eigen::RowVector3d grad = (inv_jt[t] * du).transpose();
    for (int a : k) {
      g.row(a) += vol[t] * grad;
      w[a] += vol[t];
    }
  }
  for (int i = 0; i < mesh.num_nodes(); ++i) g.row(i) /= w[i];
  return g;
}

std::vector<std::vector<int>> node_neighbors(const Mesh& mesh) {
  std::vector<std::vector<int>> nb(mesh.num_nodes());
  for (const Tet& k : mesh.tets()) {
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        if (a != b) nb[k[a]].push_back(k[b]);
      }
    }
  }
  for (auto& v : nb) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return nb;
}

std::vector<std::vector<int>> node_tets(const Mesh& mesh) {
  std::vector<std::vector<int>> nt(mesh.num_nodes());
  for (int t = 0; t < mesh.num_tets(); ++t) {
    for (int a : mesh.tet(t)) nt[a].push_back(t);
  }
  return nt;
}

/// Piecewise linear interpolation of nodal tensors of a background mesh.
class MetricSampler {
 public:
  explicit MetricSampler(const MetricField& metric) : metric_(metric), locator_(metric.mesh) {}
  Tensor operator()(const Point& x) const {
    const Location l = locator_.locate(x);
    const Tet& k = metric_.mesh->tet(l.tet);
    Tensor m = Tensor::Zero();
    for (int a = 0; a < 4; ++a) m += std::max(0.0, l.bary[a]) * metric_.tensors[k[a]];
    return m;
  }

 private:
  const MetricField& metric_;
  Locator locator_;
};

double volume_of(const std::vector<Point>& x, const Tet& k) { return signed_volume(x[k[0]], x[k[1]], x[k[2]], x[k[3]]); }

/// Every tet around `node` keeps at least a tiny fraction of its old volume.
bool incident_valid(const std::vector<Point>& x, const std::vector<int>& tets, const std::vector<Tet>& all,
                    const std::vector<double>& old_volume) {
  for (int t : tets) {
    if (!(volume_of(x, all[t]) > 1e-6 * old_volume[t])) return false;
  }
  return true;
}

}  // namespace

std::vector<Tensor> recover_hessian(const Mesh& mesh, const Eigen::VectorXd& u) {
  if (u.size() != mesh.num_nodes()) throw SolverError("recover_hessian: field size does not match the mesh");
  std::vector<Eigen::Matrix3d> inv_jt(mesh.num_tets());
  std::vector<double> vol(mesh.num_tets());
  for (int t = 0; t < mesh.num_tets(); ++t) {
    const Tet& k = mesh.tet(t);
    Eigen::Matrix3d j;
    for (int c = 0; c < 3; ++c) j.col(c) = mesh.node(k[c + 1]) - mesh.node(k[0]);
    inv_jt[t] = j.inverse().transpose();
    vol[t] = mesh.tet_volume(t);
  }
  const Eigen::MatrixX3d g = recover_gradient(mesh, inv_jt, vol, u);
  std::array<Eigen::MatrixX3d, 3> gg;
  for (int d = 0; d < 3; ++d) gg[d] = recover_gradient(mesh, inv_jt, vol, g.col(d));
  std::vector<Tensor> h(mesh.num_nodes());
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    Tensor m;
    for (int d = 0; d < 3; ++d) m.row(d) = gg[d].row(i);
    h[i] = 0.5 * (m + m.transpose());
  }
  return h;
}

Tensor metric_from_hessian(const Tensor& hessian, const MetricOptions& opts) {
  if (!(opts.epsilon > 0.0) || !(opts.h_min > 0.0) || !(opts.h_max > opts.h_min)) {
    throw ConfigError("metric: need epsilon > 0 and 0 < h_min < h_max");
  }
  const double lo = 1.0 / (opts.h_max * opts.h_max);
  const double hi = 1.0 / (opts.h_min * opts.h_min);
  if (!hessian.allFinite()) return hi * Tensor::Identity();
  Eigen::SelfAdjointEigenSolver<Tensor> es(0.5 * (hessian + hessian.transpose()));
  Eigen::Vector3d lam;
  for (int i = 0; i < 3; ++i) lam[i] = std::min(std::max(kMetricConstant * std::abs(es.eigenvalues()[i]) / opts.epsilon, lo), hi);
  const Eigen::Matrix3d& r = es.eigenvectors();
  return r * lam.asDiagonal() * r.transpose();
}

MetricField metric_from_hessian(MeshPtr mesh, const std::vector<Tensor>& hessians, const MetricOptions& opts) {
  if (static_cast<int>(hessians.size()) != mesh->num_nodes()) throw SolverError("metric: one Hessian per node expected");
  MetricField m{std::move(mesh), std::vector<Tensor>(hessians.size())};
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < hessians.size(); ++i) m.tensors[i] = metric_from_hessian(hessians[i], opts);
  return m;
}

void write_metric_sol(const MetricField& metric, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write {}", path));
  out << "MeshVersionFormatted 2\n\nDimension 3\n\nSolAtVertices\n" << metric.tensors.size() << "\n1 3\n";
  for (const Tensor& m : metric.tensors) {
    out << fmt::format("{:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g}\n", m(0, 0), m(0, 1), m(1, 1), m(0, 2),
                       m(1, 2), m(2, 2));
  }
  out << "\nEnd\n";
  if (!out) throw IoError(fmt::format("error while writing {}", path));
}

MetricField read_metric_sol(MeshPtr mesh, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path));
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    for (std::string tok; ls >> tok;) tokens.push_back(tok);
  }
  size_t pos = 0;
  auto next = [&](const char* what) -> const std::string& {
    if (pos >= tokens.size()) throw IoError(fmt::format("{}: unexpected end of file reading {}", path, what));
    return tokens[pos++];
  };
  auto number = [&](const char* what) {
    const std::string& tok = next(what);
    try {
      size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw IoError(fmt::format("{}: expected a number for {}, got '{}'", path, what, tok));
    }
  };
  MetricField metric{mesh, {}};
  bool have = false;
  while (pos < tokens.size()) {
    const std::string key = next("keyword");
    if (key == "MeshVersionFormatted") {
      number("format version");
    } else if (key == "Dimension") {
      if (number("dimension") != 3.0) throw IoError(fmt::format("{}: only 3D solutions are supported", path));
    } else if (key == "SolAtVertices") {
      const double count = number("vertex count");
      if (count != mesh->num_nodes()) {
        throw IoError(fmt::format("{}: {} vertex values for a mesh with {} nodes", path, count, mesh->num_nodes()));
      }
      if (number("solution count") != 1.0 || number("solution type") != 3.0) {
        throw IoError(fmt::format("{}: expected a single symmetric tensor per vertex (type 3)", path));
      }
      metric.tensors.resize(mesh->num_nodes());
      for (Tensor& m : metric.tensors) {
        double c[6];
        for (double& v : c) v = number("tensor component");
        m << c[0], c[1], c[3], c[1], c[2], c[4], c[3], c[4], c[5];
      }
      have = true;
    } else if (key == "End") {
      break;
    } else {
      throw IoError(fmt::format("{}: unknown section '{}'", path, key));
    }
  }
  if (!have) throw IoError(fmt::format("{}: no SolAtVertices section", path));
  return metric;
}

double metric_length(const Eigen::Vector3d& e, const Tensor& m) { return std::sqrt(std::max(0.0, e.dot(m * e))); }

double metric_edge_length_variance(const Mesh& mesh, const MetricField& metric) {
  const MetricSampler sample(metric);
  std::vector<Tensor> at(mesh.num_nodes());
  for (int i = 0; i < mesh.num_nodes(); ++i) at[i] = sample(mesh.node(i));
  const auto nb = node_neighbors(mesh);
  double sum = 0.0, sum2 = 0.0;
  long count = 0;
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    for (int j : nb[i]) {
      if (j <= i) continue;
      const double l = metric_length(mesh.node(j) - mesh.node(i), 0.5 * (at[i] + at[j]));
      sum += l;
      sum2 += l * l;
      ++count;
    }
  }
  const double mean = sum / count;
  return (sum2 / count - mean * mean) / (mean * mean);
}

Mesh move_mesh(const Mesh& mesh, const MetricField& metric, const MoveOptions& opts, MoveStats* stats) {
  const MetricSampler sample(metric);
  const auto nb = node_neighbors(mesh);
  const auto nt = node_tets(mesh);
  std::vector<Point> x = mesh.nodes();
  std::vector<char> fixed(mesh.num_nodes(), 0);
  for (int i = 0; i < mesh.num_nodes(); ++i) fixed[i] = mesh.is_boundary(i);
  std::vector<double> old_volume(mesh.num_tets());
  for (int t = 0; t < mesh.num_tets(); ++t) old_volume[t] = mesh.tet_volume(t);

  int rejected = 0;
  auto try_move = [&](int i, const Point& target) {
    const Point start = x[i];
    Eigen::Vector3d step = target - start;
    for (int bt = 0; bt <= opts.max_backtracks; ++bt) {
      x[i] = start + step;
      if (incident_valid(x, nt[i], mesh.tets(), old_volume)) {
        for (int t : nt[i]) old_volume[t] = volume_of(x, mesh.tet(t));
        return true;
      }
      step *= 0.5;
    }
    x[i] = start;
    ++rejected;
    return false;
  };

  for (const Point& p : opts.pinned_points) {
    int best = -1;
    double best_d = 1e300;
    for (int i = 0; i < mesh.num_nodes(); ++i) {
      if (mesh.is_boundary(i)) continue;
      const double d = (x[i] - p).squaredNorm();
      if (d < best_d) best_d = d, best = i;
    }
    if (best < 0) continue;
    if (try_move(best, p) && x[best] == p) fixed[best] = 1;
  }

  std::vector<Tensor> at(mesh.num_nodes());
  for (int i = 0; i < mesh.num_nodes(); ++i) at[i] = sample(x[i]);
  auto variance = [&] {
    double sum = 0.0, sum2 = 0.0;
    long count = 0;
    for (int i = 0; i < mesh.num_nodes(); ++i) {
      for (int j : nb[i]) {
        if (j <= i) continue;
        const double l = metric_length(x[j] - x[i], 0.5 * (at[i] + at[j]));
        sum += l;
        sum2 += l * l;
        ++count;
      }
    }
    const double mean = sum / count;
    return (sum2 / count - mean * mean) / (mean * mean);
  };
  if (stats) stats->edge_length_variance.push_back(variance());

  int sweep = 0;
  for (; sweep < opts.sweeps; ++sweep) {
    double worst = 0.0;
    for (int i = 0; i < mesh.num_nodes(); ++i) {
      if (fixed[i]) continue;
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      double wsum = 0.0, shortest = 1e300;
      for (int j : nb[i]) {
        const Eigen::Vector3d e = x[j] - x[i];
        const double len = e.norm();
        const double w = metric_length(e, 0.5 * (at[i] + at[j])) / len;
        acc += w * x[j];
        wsum += w;
        shortest = std::min(shortest, len);
      }
      const Point before = x[i];
      if (try_move(i, acc / wsum)) {
        at[i] = sample(x[i]);
        worst = std::max(worst, (x[i] - before).norm() / shortest);
      }
    }
    if (stats) stats->edge_length_variance.push_back(variance());
    if (worst < opts.stop_fraction) {
      ++sweep;
      break;
    }
  }
  if (stats) {
    stats->sweeps = sweep;
    stats->rejected_moves = rejected;
  }
  spdlog::debug("move_mesh: {} sweeps, {} rejected moves", sweep, rejected);
  return mesh.with_nodes(std::move(x));
}

Mesh transfer_deformation(const Mesh& logical, const Mesh& reference, const Mesh& deformed) {
  if (reference.num_nodes() != deformed.num_nodes() || reference.num_tets() != deformed.num_tets()) {
    throw MeshError("transfer_deformation: reference and deformed meshes differ in size");
  }
  const Locator loc(std::make_shared<const Mesh>(reference));
  std::vector<Point> x(logical.num_nodes());
  for (int i = 0; i < logical.num_nodes(); ++i) {
    const Location l = loc.locate(logical.node(i));
    const Tet& k = reference.tet(l.tet);
    Point p = Point::Zero();
    for (int a = 0; a < 4; ++a) p += l.bary[a] * deformed.node(k[a]);
    x[i] = logical.is_boundary(i) ? logical.node(i) : p;
  }
  for (const Tet& k : logical.tets()) {
    if (!(volume_of(x, k) > 0.0)) {
      spdlog::debug("transfer_deformation: mapped mesh would invert, keeping the logical grid");
      return logical;
    }
  }
  return logical.with_nodes(std::move(x));
}

}  // namespace ksfem
