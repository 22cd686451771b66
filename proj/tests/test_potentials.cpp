#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ksfem/error.hpp"
#include "ksfem/potentials.hpp"

using namespace ksfem;

namespace {

constexpr double kPi = std::numbers::pi;

MolecularSystem hli() {
  MolecularSystem s;
  s.atoms = {{"Li", Point(-1.0075, 0, 0), 3.0}, {"H", Point(2.0075, 0, 0), 1.0}};
  s.num_orbitals = 2;
  return s;
}

double rho_of_rs(double rs) { return 3.0 / (4.0 * kPi * rs * rs * rs); }

/// Central difference of f at x with relative step.
template <class F>
double derivative(F&& f, double x) {
  const double h = 1e-5 * x;
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Quadrature points and charges of the P1 interpolant of rho; oracle for
/// Coulomb integrals evaluated by direct summation.
struct ChargeCloud {
  std::vector<Point> x;
  std::vector<double> q;
  ChargeCloud(const FemSpace& space, const Eigen::VectorXd& rho) {
    const QuadratureRule& rule = QuadratureRule::of_degree(4);
    for (int t = 0; t < space.mesh().num_tets(); ++t) {
      const Tet& k = space.mesh().tet(t);
      if (rho[k[0]] == 0 && rho[k[1]] == 0 && rho[k[2]] == 0 && rho[k[3]] == 0) continue;
      for (int p = 0; p < rule.size(); ++p) {
        const auto& b = rule.points[p];
        x.push_back(space.map(t, b));
        q.push_back(rule.weights[p] * space.volume(t) * (b[0] * rho[k[0]] + b[1] * rho[k[1]] + b[2] * rho[k[2]] + b[3] * rho[k[3]]));
      }
    }
  }
  double potential(const Point& at) const {
    double v = 0.0;
    for (size_t i = 0; i < x.size(); ++i) v += q[i] / (at - x[i]).norm();
    return v;
  }
};

std::shared_ptr<const Mesh> box_mesh(const Box& box, int n) { return std::make_shared<const Mesh>(build_box_mesh(box, n)); }

double bump(double r, double radius) {
  const double s = r / radius;
  return s < 1.0 ? (1.0 - s * s) * (1.0 - s * s) : 0.0;
}

}  // namespace

TEST_CASE("external potential") {
  MolecularSystem he;
  he.atoms = {{"He", Point::Zero(), 2.0}};
  CHECK(v_ext(he, Point(1, 0, 0)) == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(v_ext(hli(), Point::Zero()) == doctest::Approx(-3.0 / 1.0075 - 1.0 / 2.0075).epsilon(1e-14));
  CHECK(v_ext(hli(), Point::Zero()) == doctest::Approx(-3.475799).epsilon(1e-6));
  CHECK(v_ext(MolecularSystem{}, Point(0.3, 1, 2)) == 0.0);
  CHECK(std::isinf(v_ext(he, Point::Zero())));
}

TEST_CASE("nuclear repulsion") {
  MolecularSystem one;
  one.atoms = {{"He", Point::Zero(), 2.0}};
  CHECK(nuclear_repulsion(one) == 0.0);
  MolecularSystem h2;
  h2.atoms = {{"H", Point::Zero(), 1.0}, {"H", Point(0, 1, 0), 1.0}};
  CHECK(nuclear_repulsion(h2) == doctest::Approx(1.0));
  CHECK(nuclear_repulsion(hli()) == doctest::Approx(3.0 / 3.015).epsilon(1e-14));
  CHECK(nuclear_repulsion(hli()) == doctest::Approx(0.995025).epsilon(1e-6));

  MolecularSystem doubled = hli();
  for (auto& a : doubled.atoms) a.z *= 2.0;
  CHECK(nuclear_repulsion(doubled) == doctest::Approx(4.0 * nuclear_repulsion(hli())).epsilon(1e-14));

  MolecularSystem bad = h2;
  bad.atoms[1].position = bad.atoms[0].position;
  CHECK_THROWS_AS(nuclear_repulsion(bad), ConfigError);
}

TEST_CASE("system validation") {
  MolecularSystem s = hli();
  CHECK_NOTHROW(s.validate());
  CHECK(s.num_electrons() == 4.0);
  s.atoms[0].position = Point(10.0, 0, 0);
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = hli();
  s.atoms[1].z = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("exchange") {
  CHECK(exchange_potential(kPi / 3.0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(exchange_potential(0.0) == 0.0);
  CHECK(exchange_potential(8.0 * kPi / 3.0) == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK_THROWS_AS(exchange_potential(-1e-3), SolverError);
  for (double rho : {0.1, 1.0, 10.0}) {
    const double fd = derivative([](double r) { return r * exchange_energy_density(r); }, rho);
    CHECK(std::abs(fd - exchange_potential(rho)) <= 1e-6 * std::abs(fd));
  }
}

TEST_CASE("Perdew-Zunger correlation") {
  // r_s = 1, rational branch, by hand.
  const double den = 1.0 + 1.0529 + 0.3334;
  const double eps1 = -0.1423 / den;
  const double v1 = eps1 * (1.0 + 7.0 / 6.0 * 1.0529 + 4.0 / 3.0 * 0.3334) / den;
  CHECK(correlation_energy_density(3.0 / (4.0 * kPi)) == doctest::Approx(eps1).epsilon(1e-12));
  CHECK(correlation_potential(3.0 / (4.0 * kPi)) == doctest::Approx(v1).epsilon(1e-12));
  CHECK(correlation_potential(3.0 / (4.0 * kPi)) == doctest::Approx(-0.066795).epsilon(1e-5));

  // r_s = 1/2, log branch.
  const double l = std::log(0.5);
  const double v05 = 0.0311 * l + (-0.048 - 0.0311 / 3.0) + 2.0 / 3.0 * 0.0020 * 0.5 * l + (2.0 * -0.0116 - 0.0020) * 0.5 / 3.0;
  CHECK(correlation_potential(rho_of_rs(0.5)) == doctest::Approx(v05).epsilon(1e-12));
  CHECK(correlation_potential(rho_of_rs(0.5)) == doctest::Approx(-0.084586).epsilon(1e-5));

  CHECK(correlation_potential(0.0) == 0.0);
  CHECK(correlation_energy_density(0.0) == 0.0);
  CHECK_THROWS_AS(correlation_potential(-1.0), SolverError);

  double prev = -1e300;
  for (double rs = 1e-4; rs <= 0.99; rs += 1e-3) {
    const double v = correlation_potential(rho_of_rs(rs));
    CHECK(v > prev);
    prev = v;
  }
  CHECK(correlation_potential(rho_of_rs(1e-12)) < -0.8);

  for (double rs : {0.3, 0.7, 2.0, 5.0}) {
    const double rho = rho_of_rs(rs);
    const double fd = derivative([](double r) { return r * correlation_energy_density(r); }, rho);
    CHECK(std::abs(fd - correlation_potential(rho)) <= 1e-5 * std::abs(fd));
  }
}

TEST_CASE("exchange-correlation energy") {
  FemSpace space(box_mesh(Box::cube(0, 2), 3));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(space.num_nodes());
  CHECK(xc_energy(space, zero).total() == 0.0);
  const double c = 0.37;
  const XcEnergy e = xc_energy(space, Eigen::VectorXd::Constant(space.num_nodes(), c));
  CHECK(e.exchange == doctest::Approx(-0.75 * std::cbrt(3.0 / kPi) * std::pow(c, 4.0 / 3.0) * 8.0).epsilon(1e-12));
  CHECK(e.correlation == doctest::Approx(c * correlation_energy_density(c) * 8.0).epsilon(1e-12));
  CHECK(e.exchange <= 0.0);
}

TEST_CASE("Hartree potential of a Laplace eigenfunction") {
  auto max_error = [](int n) {
    auto mesh = box_mesh(Box::cube(0, 1), n);
    FemSpace space(mesh);
    PoissonSolver poisson(space, CgOptions{.rel_tol = 1e-12});
    auto s = [](const Point& x) { return std::sin(kPi * x[0]) * std::sin(kPi * x[1]) * std::sin(kPi * x[2]); };
    const HartreeResult h = poisson.solve(ScalarField::sample(mesh, s).values, HartreeBoundary::kZero);
    double worst = 0.0;
    for (int i = 0; i < mesh->num_nodes(); ++i) worst = std::max(worst, std::abs(h.values[i] - 4.0 / (3.0 * kPi) * s(mesh->node(i))));
    return worst;
  };
  const double e8 = max_error(8), e16 = max_error(16);
  MESSAGE("max nodal error n=8: " << e8 << ", n=16: " << e16);
  CHECK(e8 < 0.05);
  CHECK(e8 / e16 > 3.0);
}

TEST_CASE("multipole boundary data") {
  const Box box = Box::cube(-10, 10);
  auto mesh = box_mesh(box, 24);
  FemSpace space(mesh);

  SUBCASE("spherical density: shell theorem") {
    const Eigen::VectorXd rho = ScalarField::sample(mesh, [](const Point& x) { return bump(x.norm(), 3.0); }).values;
    const Multipole m = compute_multipole(space, rho);
    CHECK((m.center - box.center()).norm() < 1e-12);
    CHECK(m.dipole.norm() < 1e-10 * m.charge);
    for (int i : mesh->boundary_nodes()) {
      const double exact = m.charge / mesh->node(i).norm();
      CHECK(std::abs(m(mesh->node(i)) - exact) <= 1e-3 * exact);
    }
  }

  SUBCASE("two blobs: dipole vanishes, quadrupole matches direct integration") {
    const Eigen::VectorXd rho = ScalarField::sample(mesh, [](const Point& x) {
                                  return bump((x - Point(1, 0, 0)).norm(), 1.5) + bump((x - Point(-1, 0, 0)).norm(), 1.5);
                                }).values;
    Eigen::VectorXd scaled = rho;
    const Multipole raw = compute_multipole(space, rho);
    scaled *= 2.0 / raw.charge;
    const Multipole m = compute_multipole(space, scaled);
    CHECK(m.charge == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m.dipole.norm() < 1e-10);
    CHECK(std::abs(m.second(0, 0) - m.second(1, 1)) > 0.5);
    const ChargeCloud cloud(space, scaled);
    for (const Point& x : {Point(10, 0, 0), Point(0, 10, 0), Point(6, 8, 0), Point(10, 3, -2)}) {
      const double direct = cloud.potential(x);
      CHECK(std::abs(m(x) - direct) <= 1e-3 * direct);
      CHECK(std::abs(m.charge / (x - m.center).norm() - direct) > 1e-4 * direct);
    }
  }

  SUBCASE("translation consistency") {
    auto f = [](const Point& x) { return bump((x - Point(0.7, -0.4, 0.2)).norm(), 2.5) * (1.0 + 0.3 * x[0]); };
    const Point shift(1.25, -2.5, 0.625);
    auto moved = box_mesh(Box{box.lo + shift, box.hi + shift}, 24);
    FemSpace moved_space(moved);
    const Multipole a = compute_multipole(space, ScalarField::sample(mesh, f).values);
    const Multipole b = compute_multipole(moved_space, ScalarField::sample(moved, [&](const Point& x) { return f(x - shift); }).values);
    for (const Point& x : {Point(10, 1, 2), Point(-3, 10, 4), Point(-10, -10, -10)}) {
      CHECK(std::abs(a(x) - b(x + shift)) <= 1e-12 * std::abs(a(x)));
    }
  }

  SUBCASE("zero charge") {
    const Multipole m = compute_multipole(space, Eigen::VectorXd::Zero(space.num_nodes()));
    CHECK((m.center - box.center()).norm() == 0.0);
    CHECK(m(Point(10, 0, 0)) == 0.0);
  }
}

TEST_CASE("multipole error shrinks with the support") {
  const Box box = Box::cube(-10, 10);
  auto mesh = box_mesh(box, 32);
  FemSpace space(mesh);
  std::vector<Point> probes;
  for (int i = 0; i < mesh->num_boundary(); i += 97) probes.push_back(mesh->node(mesh->boundary_nodes()[i]));
  double prev = 1e300;
  for (double radius : {4.0, 2.0, 1.0}) {
    // Lopsided density so every multipole order contributes.
    const Eigen::VectorXd rho = ScalarField::sample(mesh, [&](const Point& x) {
                                  const Point d = x - Point(1.0, 0.5, -0.5);
                                  return bump(Point(d[0], 1.6 * d[1], 0.8 * d[2]).norm(), radius) * (1.0 + 0.8 * d[0] / radius);
                                }).values;
    const Multipole m = compute_multipole(space, rho);
    const ChargeCloud cloud(space, rho);
    double worst = 0.0;
    for (const Point& x : probes) {
      const double direct = cloud.potential(x);
      worst = std::max(worst, std::abs(m(x) - direct) / direct);
    }
    MESSAGE("support radius " << radius << ": max relative boundary error " << worst);
    CHECK(worst < prev);
    prev = worst;
  }
}

TEST_CASE("Hartree solve of a helium-like density") {
  const Box box = Box::cube(-10, 10);
  auto mesh = box_mesh(box, 20);
  FemSpace space(mesh);
  // Two electrons in a screened hydrogenic 1s orbital.
  const double zeta = 27.0 / 16.0;
  const Eigen::VectorXd rho = ScalarField::sample(mesh, [&](const Point& x) {
                                return 2.0 * zeta * zeta * zeta / kPi * std::exp(-2.0 * zeta * x.norm());
                              }).values;
  PoissonSolver poisson(space, CgOptions{.rel_tol = 1e-10});
  const HartreeResult h = poisson.solve(rho);
  CHECK(h.cg.converged);
  CHECK(h.values.minCoeff() > 0.0);
  CHECK(h.values.dot(poisson.mass_full() * rho) > 0.0);

  const Multipole m = compute_multipole(space, rho);
  for (int i : mesh->boundary_nodes()) CHECK(h.values[i] == m(mesh->node(i)));

  // Discrete weak form on the free rows.
  const Eigen::VectorXd rhs = 4.0 * kPi * (poisson.mass_full() * rho);
  const Eigen::VectorXd residual = space.restrict(Eigen::VectorXd(assemble_stiffness(space, Dofs::kAll) * h.values - rhs));
  CHECK(residual.norm() <= 1e-9 * space.restrict(rhs).norm());
}

TEST_CASE("total energy bookkeeping") {
  FemSpace space(box_mesh(Box::cube(0, 1), 2));
  const auto mass = assemble_mass(space, Dofs::kAll);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(space.num_nodes());
  const EnergyTerms e = total_energy(1.0, Eigen::VectorXd::Constant(1, -0.7), z, z, z, 0.0, 0.0, mass);
  CHECK(e.total == doctest::Approx(-0.7));

  const Eigen::VectorXd rho = Eigen::VectorXd::Constant(space.num_nodes(), 2.0);
  const Eigen::VectorXd vh = Eigen::VectorXd::Constant(space.num_nodes(), 3.0);
  const Eigen::VectorXd vxc = Eigen::VectorXd::Constant(space.num_nodes(), -1.0);
  const EnergyTerms f = total_energy(2.0, Eigen::Vector2d(-1.0, -0.5), rho, vh, vxc, -0.25, 0.5, mass);
  // Unit volume: int V_H rho / 2 = 3, int V_xc rho = -2.
  CHECK(f.hartree_dc == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(f.xc_dc == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(f.total == doctest::Approx(2.0 * -1.5 - 3.0 + 2.0 - 0.25 + 0.5).epsilon(1e-12));
}
