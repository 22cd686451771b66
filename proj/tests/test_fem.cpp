#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "ksfem/error.hpp"
#include "ksfem/fem.hpp"
#include "ksfem/locator.hpp"

using namespace ksfem;

namespace {

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

MeshPtr box_mesh(double lo, double hi, int n) { return std::make_shared<const Mesh>(build_box_mesh(Box::cube(lo, hi), n)); }

MeshPtr reference_tet() {
  std::vector<Point> nodes{Point(0, 0, 0), Point(1, 0, 0), Point(0, 1, 0), Point(0, 0, 1)};
  return std::make_shared<const Mesh>(Mesh(nodes, {Tet{0, 1, 2, 3}}, Box::cube(0, 1)));
}

/// Composite Simpson on [0, r_max].
template <class F>
double simpson(F&& f, double r_max, int intervals) {
  const double h = r_max / intervals;
  double s = f(0.0) + f(r_max);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("quadrature rules integrate monomials up to their degree") {
  for (int degree = 1; degree <= 4; ++degree) {
    const QuadratureRule& rule = QuadratureRule::of_degree(degree);
    double wsum = 0.0;
    for (double w : rule.weights) wsum += w;
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-14));
    for (int a = 0; a <= degree; ++a) {
      for (int b = 0; a + b <= degree; ++b) {
        for (int c = 0; a + b + c <= degree; ++c) {
          for (int d = 0; a + b + c + d <= degree; ++d) {
            // Mean of l1^a l2^b l3^c l4^d over a tet: 3! a! b! c! d! / (a+b+c+d+3)!
            const double exact = 6.0 * factorial(a) * factorial(b) * factorial(c) * factorial(d) /
                                 factorial(a + b + c + d + 3);
            double q = 0.0;
            for (int k = 0; k < rule.size(); ++k) {
              const auto& p = rule.points[k];
              q += rule.weights[k] * std::pow(p[0], a) * std::pow(p[1], b) * std::pow(p[2], c) * std::pow(p[3], d);
            }
            CHECK(std::abs(q - exact) < 1e-14);
          }
        }
      }
    }
  }
}

TEST_CASE("stiffness of the unit reference tet") {
  FemSpace space(reference_tet());
  const Eigen::MatrixXd k = assemble_stiffness(space, Dofs::kAll).to_dense();
  // grad phi = (-1,-1,-1), e1, e2, e3; volume 1/6.
  Eigen::Matrix4d expected;
  expected << 0.5, -1.0 / 6, -1.0 / 6, -1.0 / 6, -1.0 / 6, 1.0 / 6, 0, 0, -1.0 / 6, 0, 1.0 / 6, 0, -1.0 / 6, 0, 0,
      1.0 / 6;
  CHECK((k - expected).cwiseAbs().maxCoeff() < 1e-15);

  const Eigen::MatrixXd m = assemble_mass(space, Dofs::kAll).to_dense();
  Eigen::Matrix4d mexp = Eigen::Matrix4d::Constant(1.0 / 6 / 20);
  mexp.diagonal().array() *= 2.0;
  CHECK((m - mexp).cwiseAbs().maxCoeff() < 1e-16);
}

TEST_CASE("stiffness row sums vanish and mass sums to the volume") {
  auto mesh = box_mesh(-1, 2, 5);
  FemSpace space(mesh);
  const auto k = assemble_stiffness(space, Dofs::kAll);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(space.num_nodes());
  CHECK((k * ones).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(k.symmetry_defect() < 1e-12);

  const auto m = assemble_mass(space, Dofs::kAll);
  CHECK(m.values().sum() == doctest::Approx(27.0).epsilon(1e-12));
}

TEST_CASE("weighted mass reduces to the mass matrix") {
  auto mesh = box_mesh(0, 1, 4);
  FemSpace space(mesh);
  const auto m = assemble_mass(space);
  const auto w1 = assemble_weighted_mass(space, [](const Point&) { return 1.0; });
  CHECK((w1.values() - m.values()).cwiseAbs().maxCoeff() < 1e-15);
  for (int degree : {2, 3}) {
    const auto wd = assemble_weighted_mass(space, [](const Point&) { return 1.0; }, Dofs::kFree, degree);
    CHECK((wd.values() - m.values()).cwiseAbs().maxCoeff() < 1e-15);
  }
  const auto wc = assemble_weighted_mass(space, [](const Point&) { return -3.5; });
  CHECK((wc.values() + 3.5 * m.values()).cwiseAbs().maxCoeff() < 1e-12 * m.values().cwiseAbs().maxCoeff());

  const Eigen::VectorXd nodal = Eigen::VectorXd::Constant(space.num_nodes(), 2.0);
  const auto wn = assemble_weighted_mass(space, nodal);
  CHECK((wn.values() - 2.0 * m.values()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("non-finite weights abort assembly") {
  FemSpace space(box_mesh(0, 1, 2));
  CHECK_THROWS_AS(assemble_weighted_mass(space, [](const Point& x) { return x[0] > 0.5 ? std::numeric_limits<double>::infinity() : 1.0; }),
                  SolverError);
}

TEST_CASE("Coulomb-weighted mass against a radial integral") {
  // u = exp(-r^2) sampled at the nodes; <u, -2/r u> = -8 pi int r exp(-2 r^2) dr.
  const double radial = -8.0 * std::numbers::pi * simpson([](double r) { return r * std::exp(-2.0 * r * r); }, 4.0, 4000);
  auto relative_error = [&](int n) {
    auto mesh = box_mesh(-4, 4, n);
    FemSpace space(mesh);
    const auto vm = assemble_weighted_mass(space, [](const Point& x) { return -2.0 / x.norm(); }, Dofs::kAll);
    Eigen::VectorXd u(space.num_nodes());
    for (int i = 0; i < space.num_nodes(); ++i) u[i] = std::exp(-mesh->node(i).squaredNorm());
    const double fem = u.dot(vm * u);
    REQUIRE(std::isfinite(fem));
    return std::abs(fem - radial) / std::abs(radial);
  };
  const double e16 = relative_error(16), e32 = relative_error(32);
  MESSAGE("relative error n=16: " << e16 << ", n=32: " << e32);
  CHECK(e32 < 0.05);
  CHECK(e16 / e32 > 3.0);

  FemSpace space(box_mesh(-4, 4, 8));
  const auto vm = assemble_weighted_mass(space, [](const Point& x) { return -2.0 / x.norm(); }, Dofs::kAll);
  std::mt19937 rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd v(space.num_nodes());
    for (auto& x : v) x = g(rng);
    CHECK(v.dot(vm * v) < 0.0);
  }
}

TEST_CASE("Dirichlet elimination") {
  auto mesh = box_mesh(0, 1, 2);
  FemSpace space(mesh);
  CHECK(space.num_free() == 1);
  CHECK(assemble_stiffness(space).dim() == 1);
  const auto reduced = apply_dirichlet(assemble_stiffness(space, Dofs::kAll), space);
  CHECK(reduced.dim() == 1);
  CHECK(reduced.values()[0] == doctest::Approx(assemble_stiffness(space).values()[0]));

  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(space.num_nodes(), 1.0, 27.0);
  const Eigen::VectorXd round = space.lift(space.restrict(v));
  for (int i = 0; i < space.num_nodes(); ++i) CHECK(round[i] == (mesh->is_boundary(i) ? 0.0 : v[i]));
}

TEST_CASE("reduced Poisson solve matches the penalty formulation") {
  auto mesh = box_mesh(0, 1, 6);
  FemSpace space(mesh);
  auto f = [](const Point& x) { return 1.0 + x[0] * x[1] - x[2]; };
  const auto m_full = assemble_mass(space, Dofs::kAll);
  const Eigen::VectorXd load = m_full * ScalarField::sample(mesh, f).values;

  const auto k = assemble_stiffness(space);
  Eigen::VectorXd u;
  CgOptions opts;
  opts.rel_tol = 1e-13;
  const CgResult res = solve_cg(k, space.restrict(load), u, opts);
  CHECK(res.converged);

  Eigen::MatrixXd kp = assemble_stiffness(space, Dofs::kAll).to_dense();
  Eigen::VectorXd rhs = load;
  for (int i : mesh->boundary_nodes()) {
    kp(i, i) += 1e12;
    rhs[i] = 0.0;
  }
  const Eigen::VectorXd up = kp.ldlt().solve(rhs);
  CHECK((space.lift(u) - up).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("reduced stiffness and mass are positive definite") {
  FemSpace space(box_mesh(0, 2, 4));
  CHECK(Eigen::LLT<Eigen::MatrixXd>(assemble_stiffness(space).to_dense()).info() == Eigen::Success);
  CHECK(Eigen::LLT<Eigen::MatrixXd>(assemble_mass(space).to_dense()).info() == Eigen::Success);
}

TEST_CASE("Galerkin projection onto a nested coarse space") {
  auto coarse = box_mesh(0, 1, 3);
  auto fine = box_mesh(0, 1, 6);
  FemSpace cs(coarse), fs(fine);
  Locator loc(coarse);
  Interpolator interp(loc, *fine);
  const EigenCsr p = interp.matrix(fs.free_index_map(), cs.free_index_map());
  const Eigen::MatrixXd projected = Eigen::MatrixXd(p.transpose() * assemble_stiffness(fs).eigen() * p);
  const Eigen::MatrixXd direct = assemble_stiffness(cs).to_dense();
  CHECK((projected - direct).cwiseAbs().maxCoeff() < 1e-10);
}
