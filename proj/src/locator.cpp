#include "ksfem/locator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <tuple>

#include <Eigen/LU>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ksfem/error.hpp"

namespace ksfem {

namespace {

constexpr double kInsideTol = 1e-12;
constexpr int kMaxDepth = 40;

double box_distance2(const Point& q, const Point& lo, const Point& hi) {
  const Point d = (lo - q).cwiseMax(q - hi).cwiseMax(Point::Zero());
  return d.squaredNorm();
}

}  // namespace

Locator::Locator(MeshPtr mesh, std::uint64_t seed) : mesh_(std::move(mesh)), seed_(seed) {
  const Mesh& m = *mesh_;
  const int nt = m.num_tets();

  node_tets_.assign(m.num_nodes(), {});
  for (int t = 0; t < nt; ++t) {
    for (int v : m.tet(t)) node_tets_[v].push_back(t);
  }

  // Face adjacency by sorting (sorted face, tet, local vertex) records.
  std::vector<std::tuple<int, int, int, int, int>> faces;
  faces.reserve(4 * static_cast<size_t>(nt));
  for (int t = 0; t < nt; ++t) {
    const Tet& k = m.tet(t);
    for (int a = 0; a < 4; ++a) {
      std::array<int, 3> f{};
      for (int b = 0, c = 0; b < 4; ++b) {
        if (b != a) f[c++] = k[b];
      }
      std::sort(f.begin(), f.end());
      faces.emplace_back(f[0], f[1], f[2], t, a);
    }
  }
  std::sort(faces.begin(), faces.end());
  neighbors_.assign(nt, {-1, -1, -1, -1});
  for (size_t i = 0; i + 1 < faces.size(); ++i) {
    const auto& [a0, a1, a2, ta, la] = faces[i];
    const auto& [b0, b1, b2, tb, lb] = faces[i + 1];
    if (a0 == b0 && a1 == b1 && a2 == b2) {
      neighbors_[ta][la] = tb;
      neighbors_[tb][lb] = ta;
      ++i;
    }
  }

  inv_jac_.resize(nt);
  for (int t = 0; t < nt; ++t) {
    const Tet& k = m.tet(t);
    Eigen::Matrix3d jac;
    for (int c = 0; c < 3; ++c) jac.col(c) = m.node(k[c + 1]) - m.node(k[0]);
    inv_jac_[t] = jac.inverse();
  }

  std::vector<int> ids(m.num_nodes());
  for (int i = 0; i < m.num_nodes(); ++i) ids[i] = i;
  cells_.reserve(2 * m.num_nodes() / kLeafCapacity + 16);
  build(m.box().lo, m.box().hi, std::move(ids), 0);
}

int Locator::build(Point lo, Point hi, std::vector<int> ids, int depth) {
  const int index = static_cast<int>(cells_.size());
  cells_.push_back(Cell{lo, hi, {-1, -1, -1, -1, -1, -1, -1, -1}, {}, true});
  if (static_cast<int>(ids.size()) <= kLeafCapacity || depth >= kMaxDepth) {
    cells_[index].nodes = std::move(ids);
    return index;
  }
  const Point mid = 0.5 * (lo + hi);
  std::array<std::vector<int>, 8> parts;
  for (int id : ids) {
    const Point& p = mesh_->node(id);
    const int oct = (p[0] >= mid[0] ? 1 : 0) | (p[1] >= mid[1] ? 2 : 0) | (p[2] >= mid[2] ? 4 : 0);
    parts[oct].push_back(id);
  }
  ids.clear();
  ids.shrink_to_fit();
  cells_[index].leaf = false;
  for (int oct = 0; oct < 8; ++oct) {
    if (parts[oct].empty()) continue;
    Point clo = lo, chi = mid;
    for (int d = 0; d < 3; ++d) {
      if (oct & (1 << d)) {
        clo[d] = mid[d];
        chi[d] = hi[d];
      }
    }
    const int child = build(clo, chi, std::move(parts[oct]), depth + 1);
    cells_[index].child[oct] = child;
  }
  return index;
}

int Locator::descend(const Point& q) const {
  int c = 0;
  while (!cells_[c].leaf) {
    const Cell& cell = cells_[c];
    const Point mid = 0.5 * (cell.lo + cell.hi);
    const int oct = (q[0] >= mid[0] ? 1 : 0) | (q[1] >= mid[1] ? 2 : 0) | (q[2] >= mid[2] ? 4 : 0);
    int next = cell.child[oct];
    if (next < 0) {
      // Empty octant: continue in the populated sibling closest to q.
      double best = std::numeric_limits<double>::infinity();
      for (int ch : cell.child) {
        if (ch < 0) continue;
        const double d = box_distance2(q, cells_[ch].lo, cells_[ch].hi);
        if (d < best) {
          best = d;
          next = ch;
        }
      }
    }
    c = next;
  }
  return c;
}

int Locator::nearest_node_in_cell(const Point& q) const {
  const Cell& leaf = cells_[descend(q)];
  int best = leaf.nodes.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (int id : leaf.nodes) {
    const double d = (mesh_->node(id) - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

std::array<double, 4> Locator::barycentric(int tet, const Point& q) const {
  const Eigen::Vector3d mu = inv_jac_[tet] * (q - mesh_->node(mesh_->tet(tet)[0]));
  return {1.0 - mu.sum(), mu[0], mu[1], mu[2]};
}

Location Locator::locate_exhaustive(const Point& q) const {
  Location best;
  double best_min = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < mesh_->num_tets(); ++t) {
    const auto lam = barycentric(t, q);
    const double mn = *std::min_element(lam.begin(), lam.end());
    if (mn > best_min) {
      best_min = mn;
      best.tet = t;
      best.bary = lam;
      if (mn >= 0.0) break;
    }
  }
  best.used_scan = true;
  if (best_min < -1e-10) {
    best.outside = true;
    double s = 0.0;
    for (double& l : best.bary) s += (l = std::max(l, 0.0));
    for (double& l : best.bary) l /= s;
  }
  return best;
}

Location Locator::locate(const Point& q_in) const {
  const Point q = mesh_->box().clamp(q_in);
  const int start = nearest_node_in_cell(q);
  int tet = node_tets_[start].front();
  const int max_steps = 2 * mesh_->num_tets();

  // Seeded per query so that concurrent callers see identical walks.
  std::mt19937_64 rng(seed_);
  Location loc;
  for (int step = 0; step < max_steps; ++step) {
    const auto lam = barycentric(tet, q);
    std::array<int, 4> negative{};
    int n_neg = 0;
    for (int a = 0; a < 4; ++a) {
      if (lam[a] < -kInsideTol) negative[n_neg++] = a;
    }
    if (n_neg == 0) {
      loc.tet = tet;
      loc.bary = lam;
      loc.walk_steps = step;
      return loc;
    }
    int face = negative[0];
    if (n_neg == 1) {
      face = negative[0];
    } else {
      std::uniform_int_distribution<int> pick(0, n_neg - 1);
      face = negative[pick(rng)];
    }
    int next = neighbors_[tet][face];
    if (next < 0) {
      // The chosen face is on the domain boundary; try the other candidates.
      for (int i = 0; i < n_neg && next < 0; ++i) next = neighbors_[tet][negative[i]];
      if (next < 0) break;
    }
    tet = next;
  }
  Location scan = locate_exhaustive(q);
  scan.walk_steps = max_steps;
  return scan;
}

int Locator::num_leaves() const {
  return static_cast<int>(std::count_if(cells_.begin(), cells_.end(), [](const Cell& c) { return c.leaf; }));
}

std::vector<std::vector<int>> Locator::leaf_contents() const {
  std::vector<std::vector<int>> out;
  for (const Cell& c : cells_) {
    if (c.leaf) out.push_back(c.nodes);
  }
  return out;
}

// ---------------------------------------------------------------------------

Interpolator::Interpolator(const Locator& source, const Mesh& target) : source_(&source.mesh()) {
  locations_.resize(target.num_nodes());
  for (int i = 0; i < target.num_nodes(); ++i) {
    locations_[i] = source.locate(target.node(i));
    if (locations_[i].outside) ++outside_;
  }
  if (outside_ > 0) {
    spdlog::warn("interpolation: {} of {} target nodes fell outside the source mesh and were clamped", outside_,
                 target.num_nodes());
  }
}

Eigen::VectorXd Interpolator::apply(const Eigen::VectorXd& src) const {
  if (src.size() != source_->num_nodes()) throw MeshError("Interpolator: source field size mismatch");
  Eigen::VectorXd out(static_cast<Eigen::Index>(locations_.size()));
  for (size_t i = 0; i < locations_.size(); ++i) {
    const Location& loc = locations_[i];
    const Tet& k = source_->tet(loc.tet);
    double v = 0.0;
    for (int a = 0; a < 4; ++a) v += loc.bary[a] * src[k[a]];
    out[static_cast<Eigen::Index>(i)] = v;
  }
  return out;
}

ScalarField Interpolator::apply(const ScalarField& f, MeshPtr target) const {
  if (f.mesh.get() != source_) throw MeshError("Interpolator: field lives on a different mesh");
  return ScalarField(std::move(target), apply(f.values));
}

Eigen::SparseMatrix<double, Eigen::RowMajor> Interpolator::matrix(const std::vector<int>& target_rows,
                                                                  const std::vector<int>& source_cols) const {
  if (target_rows.size() != locations_.size() || static_cast<int>(source_cols.size()) != source_->num_nodes()) {
    throw MeshError("Interpolator::matrix: index map sizes do not match the meshes");
  }
  const int rows = 1 + *std::max_element(target_rows.begin(), target_rows.end());
  const int cols = 1 + *std::max_element(source_cols.begin(), source_cols.end());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(4 * locations_.size());
  for (size_t i = 0; i < locations_.size(); ++i) {
    const int r = target_rows[i];
    if (r < 0) continue;
    const Location& loc = locations_[i];
    const Tet& k = source_->tet(loc.tet);
    for (int a = 0; a < 4; ++a) {
      const int c = source_cols[k[a]];
      if (c >= 0 && loc.bary[a] != 0.0) trips.emplace_back(r, c, loc.bary[a]);
    }
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> m(rows, cols);
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

ScalarField interpolate_field(const ScalarField& f, const Locator& source, MeshPtr target) {
  Interpolator interp(source, *target);
  return interp.apply(f, std::move(target));
}

ScalarField interpolate_field(const ScalarField& f, MeshPtr target) {
  Locator loc(f.mesh);
  return interpolate_field(f, loc, std::move(target));
}

}  // namespace ksfem
