#include "ksfem/fem.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/LU>

#include <fmt/format.h>

#include "ksfem/error.hpp"

namespace ksfem {

namespace {

constexpr double kDegenerateVolume = 1e-14;

QuadratureRule make_rule(int degree) {
  QuadratureRule r;
  r.degree = degree;
  auto add = [&r](double w, std::array<double, 4> p) {
    r.points.push_back(p);
    r.weights.push_back(w);
  };
  auto add_perm_1_3 = [&](double w, double a, double b) {  // (a,a,a,b) and permutations
    for (int i = 0; i < 4; ++i) {
      std::array<double, 4> p{a, a, a, a};
      p[i] = b;
      add(w, p);
    }
  };
  switch (degree) {
    case 1:
      add(1.0, {0.25, 0.25, 0.25, 0.25});
      break;
    case 2: {
      const double a = (5.0 - std::sqrt(5.0)) / 20.0;
      add_perm_1_3(0.25, a, 1.0 - 3.0 * a);
      break;
    }
    case 3:
      add(-0.8, {0.25, 0.25, 0.25, 0.25});
      add_perm_1_3(0.45, 1.0 / 6.0, 0.5);
      break;
    case 4: {
      // Keast, 11 points; the centroid weight is negative.
      add(-74.0 / 5625.0 * 6.0, {0.25, 0.25, 0.25, 0.25});
      add_perm_1_3(343.0 / 45000.0 * 6.0, 1.0 / 14.0, 11.0 / 14.0);
      const double a = (1.0 + std::sqrt(5.0 / 14.0)) / 4.0;
      const double b = (1.0 - std::sqrt(5.0 / 14.0)) / 4.0;
      const double w = 56.0 / 2250.0 * 6.0;
      add(w, {a, a, b, b});
      add(w, {a, b, a, b});
      add(w, {a, b, b, a});
      add(w, {b, a, a, b});
      add(w, {b, a, b, a});
      add(w, {b, b, a, a});
      break;
    }
    default:
      throw SolverError(fmt::format("no quadrature rule of degree {}", degree));
  }
  return r;
}

}  // namespace

const QuadratureRule& QuadratureRule::of_degree(int degree) {
  static const QuadratureRule rules[] = {make_rule(1), make_rule(2), make_rule(3), make_rule(4)};
  if (degree < 1 || degree > 4) throw SolverError(fmt::format("no quadrature rule of degree {}", degree));
  return rules[degree - 1];
}

FemSpace::FemSpace(MeshPtr mesh) : mesh_(std::move(mesh)) {
  const Mesh& m = *mesh_;
  const int nt = m.num_tets();
  const int nn = m.num_nodes();
  volumes_.resize(nt);
  gradients_.resize(nt);
  for (int t = 0; t < nt; ++t) {
    const Tet& k = m.tet(t);
    const double vol = m.tet_volume(t);
    if (vol < kDegenerateVolume) {
      throw MeshError(fmt::format("element {} is degenerate (volume {:.3e})", t, vol));
    }
    volumes_[t] = vol;
    Eigen::Matrix3d jac;
    for (int c = 0; c < 3; ++c) jac.col(c) = m.node(k[c + 1]) - m.node(k[0]);
    const Eigen::Matrix3d inv = jac.inverse();
    gradients_[t].block<3, 3>(1, 0) = inv;
    gradients_[t].row(0) = -inv.colwise().sum();
  }

  free_index_.assign(nn, -1);
  for (int i = 0; i < nn; ++i) {
    if (!m.is_boundary(i)) {
      free_index_[i] = static_cast<int>(free_nodes_.size());
      free_nodes_.push_back(i);
    }
  }

  std::vector<std::vector<int>> full_rows(nn), free_rows(free_nodes_.size());
  for (const Tet& k : m.tets()) {
    for (int a : k) {
      for (int b : k) {
        full_rows[a].push_back(b);
        if (free_index_[a] >= 0 && free_index_[b] >= 0) free_rows[free_index_[a]].push_back(free_index_[b]);
      }
    }
  }
  full_ = SparsityPattern::from_rows(std::move(full_rows));
  free_ = SparsityPattern::from_rows(std::move(free_rows));

  full_slots_.resize(16 * static_cast<size_t>(nt));
  free_slots_.resize(16 * static_cast<size_t>(nt));
  for (int t = 0; t < nt; ++t) {
    const Tet& k = m.tet(t);
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        const size_t s = 16 * static_cast<size_t>(t) + 4 * a + b;
        full_slots_[s] = full_->find(k[a], k[b]);
        const int fa = free_index_[k[a]], fb = free_index_[k[b]];
        free_slots_[s] = (fa >= 0 && fb >= 0) ? free_->find(fa, fb) : -1;
      }
    }
  }
}

Eigen::VectorXd FemSpace::restrict(const Eigen::VectorXd& full) const {
  Eigen::VectorXd out(num_free());
  for (int i = 0; i < num_free(); ++i) out[i] = full[free_nodes_[i]];
  return out;
}

Eigen::MatrixXd FemSpace::restrict(const Eigen::MatrixXd& full) const {
  Eigen::MatrixXd out(num_free(), full.cols());
  for (int i = 0; i < num_free(); ++i) out.row(i) = full.row(free_nodes_[i]);
  return out;
}

Eigen::VectorXd FemSpace::lift(const Eigen::VectorXd& free) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(num_nodes());
  for (int i = 0; i < num_free(); ++i) out[free_nodes_[i]] = free[i];
  return out;
}

Eigen::MatrixXd FemSpace::lift(const Eigen::MatrixXd& free) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(num_nodes(), free.cols());
  for (int i = 0; i < num_free(); ++i) out.row(free_nodes_[i]) = free.row(i);
  return out;
}

Point FemSpace::map(int t, const std::array<double, 4>& bary) const {
  const Tet& k = mesh_->tet(t);
  Point x = Point::Zero();
  for (int a = 0; a < 4; ++a) x += bary[a] * mesh_->node(k[a]);
  return x;
}

namespace {

template <class LocalMatrix>
SparseSymMatrix assemble(const FemSpace& space, Dofs dofs, LocalMatrix&& local) {
  SparseSymMatrix out = SparseSymMatrix::zeros(space.pattern(dofs));
  Eigen::VectorXd& vals = out.values();
  Eigen::Matrix4d ke;
  for (int t = 0; t < space.mesh().num_tets(); ++t) {
    local(t, ke);
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        const int s = space.slot(dofs, t, a, b);
        if (s >= 0) vals[s] += ke(a, b);
      }
    }
  }
  return out;
}

[[noreturn]] void non_finite_weight(const FemSpace& space, int t, const Point& x, double w) {
  (void)space;
  throw SolverError(fmt::format("non-finite weight {} at quadrature point ({}, {}, {}) of element {}", w, x[0],
                                x[1], x[2], t));
}

using BaryTet = std::array<Eigen::Vector4d, 4>;

/// Element matrix of w lam lam^T over a barycentric sub-tetrahedron,
/// recursively split into eight children while it lies close to one of
/// `points`.
void singular_element(const FemSpace& space, int t, const PointFunction& w, const QuadratureRule& rule,
                      const std::vector<Point>& points, const BaryTet& v, double fraction, int depth,
                      Eigen::Matrix4d& ke) {
  bool near = false;
  if (depth > 0) {
    const Eigen::Vector4d c = 0.25 * (v[0] + v[1] + v[2] + v[3]);
    const Point pc = space.map(t, {c[0], c[1], c[2], c[3]});
    double diam = 0.0;
    for (int a = 0; a < 4; ++a) {
      const Point pa = space.map(t, {v[a][0], v[a][1], v[a][2], v[a][3]});
      diam = std::max(diam, (pa - pc).norm());
    }
    for (const Point& p : points) near = near || (p - pc).norm() <= 2.0 * diam;
  }
  if (!near) {
    for (int q = 0; q < rule.size(); ++q) {
      const auto& r = rule.points[q];
      const Eigen::Vector4d lam = r[0] * v[0] + r[1] * v[1] + r[2] * v[2] + r[3] * v[3];
      const Point x = space.map(t, {lam[0], lam[1], lam[2], lam[3]});
      const double wq = w(x);
      if (!std::isfinite(wq)) non_finite_weight(space, t, x, wq);
      ke.noalias() += (fraction * rule.weights[q] * wq) * (lam * lam.transpose());
    }
    return;
  }
  auto mid = [&](int a, int b) -> Eigen::Vector4d { return 0.5 * (v[a] + v[b]); };
  const Eigen::Vector4d m01 = mid(0, 1), m02 = mid(0, 2), m03 = mid(0, 3), m12 = mid(1, 2), m13 = mid(1, 3),
                        m23 = mid(2, 3);
  const std::array<BaryTet, 8> children{{{v[0], m01, m02, m03},
                                         {m01, v[1], m12, m13},
                                         {m02, m12, v[2], m23},
                                         {m03, m13, m23, v[3]},
                                         {m01, m02, m03, m13},
                                         {m01, m02, m12, m13},
                                         {m02, m03, m13, m23},
                                         {m02, m12, m13, m23}}};
  for (const BaryTet& c : children) singular_element(space, t, w, rule, points, c, fraction / 8.0, depth - 1, ke);
}

}  // namespace

SparseSymMatrix assemble_stiffness(const FemSpace& space, Dofs dofs) {
  return assemble(space, dofs, [&](int t, Eigen::Matrix4d& ke) {
    const auto& g = space.gradients(t);
    ke.noalias() = space.volume(t) * (g * g.transpose());
  });
}

SparseSymMatrix assemble_mass(const FemSpace& space, Dofs dofs) {
  return assemble(space, dofs, [&](int t, Eigen::Matrix4d& ke) {
    const double v = space.volume(t) / 20.0;
    ke.setConstant(v);
    ke.diagonal().array() += v;
  });
}

SparseSymMatrix assemble_weighted_mass(const FemSpace& space, const PointFunction& w, Dofs dofs, int degree) {
  const QuadratureRule& rule = QuadratureRule::of_degree(degree);
  return assemble(space, dofs, [&](int t, Eigen::Matrix4d& ke) {
    ke.setZero();
    for (int q = 0; q < rule.size(); ++q) {
      const Point x = space.map(t, rule.points[q]);
      const double wq = w(x);
      if (!std::isfinite(wq)) non_finite_weight(space, t, x, wq);
      const Eigen::Vector4d lam(rule.points[q].data());
      ke.noalias() += (rule.weights[q] * wq) * (lam * lam.transpose());
    }
    ke *= space.volume(t);
  });
}

SparseSymMatrix assemble_weighted_mass(const FemSpace& space, const PointFunction& w,
                                       const std::vector<Point>& singular_points, Dofs dofs, int levels) {
  const QuadratureRule& rule = QuadratureRule::of_degree(4);
  const BaryTet ref{Eigen::Vector4d::Unit(0), Eigen::Vector4d::Unit(1), Eigen::Vector4d::Unit(2),
                    Eigen::Vector4d::Unit(3)};
  return assemble(space, dofs, [&](int t, Eigen::Matrix4d& ke) {
    ke.setZero();
    singular_element(space, t, w, rule, singular_points, ref, 1.0, levels, ke);
    ke *= space.volume(t);
  });
}

SparseSymMatrix assemble_weighted_mass(const FemSpace& space, const Eigen::VectorXd& w_nodal, Dofs dofs,
                                       int degree) {
  if (w_nodal.size() != space.num_nodes()) throw SolverError("assemble_weighted_mass: nodal weight size mismatch");
  const QuadratureRule& rule = QuadratureRule::of_degree(degree);
  return assemble(space, dofs, [&](int t, Eigen::Matrix4d& ke) {
    const Tet& k = space.mesh().tet(t);
    const Eigen::Vector4d wn(w_nodal[k[0]], w_nodal[k[1]], w_nodal[k[2]], w_nodal[k[3]]);
    ke.setZero();
    for (int q = 0; q < rule.size(); ++q) {
      const Eigen::Vector4d lam(rule.points[q].data());
      const double wq = lam.dot(wn);
      if (!std::isfinite(wq)) non_finite_weight(space, t, space.map(t, rule.points[q]), wq);
      ke.noalias() += (rule.weights[q] * wq) * (lam * lam.transpose());
    }
    ke *= space.volume(t);
  });
}

SparseSymMatrix apply_dirichlet(const SparseSymMatrix& full, const FemSpace& space) {
  if (full.pattern() != space.pattern(Dofs::kAll)) throw SolverError("apply_dirichlet: operator is not all-node");
  const auto& fp = *space.pattern(Dofs::kAll);
  SparseSymMatrix out = SparseSymMatrix::zeros(space.pattern(Dofs::kFree));
  const auto& rp = out.pattern()->row_ptr;
  for (int fi = 0; fi < space.num_free(); ++fi) {
    const int i = space.free_nodes()[fi];
    int dst = rp[fi];
    for (int k = fp.row_ptr[i]; k < fp.row_ptr[i + 1]; ++k) {
      if (space.free_index(fp.cols[k]) >= 0) out.values()[dst++] = full.values()[k];
    }
  }
  return out;
}

double integrate(const FemSpace& space, const Eigen::VectorXd& u, const std::function<double(double, const Point&)>& g,
                 int degree) {
  const QuadratureRule& rule = QuadratureRule::of_degree(degree);
  double total = 0.0;
  for (int t = 0; t < space.mesh().num_tets(); ++t) {
    const Tet& k = space.mesh().tet(t);
    double s = 0.0;
    for (int q = 0; q < rule.size(); ++q) {
      const auto& lam = rule.points[q];
      double uq = 0.0;
      for (int a = 0; a < 4; ++a) uq += lam[a] * u[k[a]];
      s += rule.weights[q] * g(uq, space.map(t, lam));
    }
    total += s * space.volume(t);
  }
  return total;
}

Eigen::VectorXd lumped_mass(const FemSpace& space) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(space.num_nodes());
  for (int t = 0; t < space.mesh().num_tets(); ++t) {
    for (int v : space.mesh().tet(t)) m[v] += space.volume(t) / 4.0;
  }
  return m;
}

}  // namespace ksfem
