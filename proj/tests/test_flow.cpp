#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "scatwave/flow.hpp"

using namespace scatwave;
using namespace scatwave::geom;
using namespace scatwave::flow;

namespace {

// ---- flat-space oracle helpers (n = 4) -------------------------------------
// chart: t = cos(theta)/rho, x = sin(theta)/rho * unit(y), v = cos(2 theta)

Eigen::Vector3d unit_vec(const Eigen::VectorXd& y) {
  return {std::cos(y(0)), std::sin(y(0)) * std::cos(y(1)), std::sin(y(0)) * std::sin(y(1))};
}

void collar_from_tx(double t, const Eigen::Vector3d& x, double& rho, double& v,
                    Eigen::VectorXd& y) {
  const double r = x.norm();
  rho = 1.0 / std::sqrt(t * t + r * r);
  v = (t * t - r * r) * rho * rho;
  y.resize(2);
  y(0) = std::acos(x(0) / r);
  y(1) = std::atan2(x(2), x(1));
}

// pull a covector (zt, zx) back to collar frame components (xi, gamma, eta)
void frame_covector_from_tx(double t, const Eigen::Vector3d& x, double zt,
                            const Eigen::Vector3d& zx, double& xi, double& gamma,
                            Eigen::VectorXd& eta) {
  double rho, v;
  Eigen::VectorXd y;
  collar_from_tx(t, x, rho, v, y);
  // coordinate map (rho, v, y) -> (t, x) differentiated numerically
  auto tx_of = [&](const Eigen::Vector4d& c) {
    const double rr = c(0), vv = c(1);
    const double th = 0.5 * std::acos(vv);
    Eigen::Vector4d out;
    out(0) = std::cos(th) / rr;
    Eigen::VectorXd yy(2);
    yy << c(2), c(3);
    out.segment<3>(1) = (std::sin(th) / rr) * unit_vec(yy);
    return out;
  };
  Eigen::Vector4d c0(rho, v, y(0), y(1));
  Eigen::Matrix4d J;
  const double h = 1e-7;
  for (int j = 0; j < 4; ++j) {
    Eigen::Vector4d cp = c0, cm = c0;
    cp(j) += h;
    cm(j) -= h;
    J.col(j) = (tx_of(cp) - tx_of(cm)) / (2.0 * h);
  }
  Eigen::Vector4d z_tx(zt, zx(0), zx(1), zx(2));
  const Eigen::Vector4d z_collar = J.transpose() * z_tx;  // (d rho, d v, d y) components
  xi = rho * z_collar(0);
  gamma = z_collar(1);
  eta.resize(2);
  eta << z_collar(2), z_collar(3);
}

}  // namespace

TEST_CASE("b-symbol values") {
  MetricSpec mink = MetricSpec::minkowski(4);
  BCotangentPoint pt;
  pt.base = {0.0, 0.0, reference_angle(2)};
  pt.eta = Eigen::VectorXd::Zero(2);

  pt.xi = 0.7;
  pt.gamma = -1.3;
  CHECK(b_symbol(mink, pt) == doctest::Approx(-4.0 * 0.7 * (-1.3)).epsilon(1e-12));

  pt.xi = 0;
  pt.gamma = 0;
  CHECK(b_symbol(mink, pt) == doctest::Approx(0.0));

  pt.gamma = 2.0;  // radial-set point: v=0, eta=0, xi=0
  CHECK(b_symbol(mink, pt) == doctest::Approx(0.0));
}

TEST_CASE("b-symbol matches the flat metric through the chart") {
  MetricSpec mink = MetricSpec::minkowski(4);
  const double t = 2.2;
  const Eigen::Vector3d x(1.0, 0.7, -0.4);
  const double zt = 0.9;
  const Eigen::Vector3d zx(0.3, -0.5, 0.8);
  double rho, v, xi, gamma;
  Eigen::VectorXd y, eta;
  collar_from_tx(t, x, rho, v, y);
  frame_covector_from_tx(t, x, zt, zx, xi, gamma, eta);
  BCotangentPoint pt{{rho, v, y}, xi, gamma, eta};
  const double flat = zt * zt - zx.squaredNorm();
  CHECK(b_symbol(mink, pt) == doctest::Approx(flat).epsilon(1e-6));
}

TEST_CASE("hamilton field at the radial set and boundary tangency") {
  MetricSpec mink = MetricSpec::minkowski(4);
  BCotangentPoint pt;
  pt.base = {0.0, 0.0, reference_angle(2)};
  pt.xi = 0;
  pt.gamma = 1.5;
  pt.eta = Eigen::VectorXd::Zero(2);
  const Eigen::VectorXd f = hamilton_field(mink, pt);
  CHECK(f.head(4).norm() < 1e-10);      // base components vanish
  CHECK(std::abs(f(5)) > 1e-2);         // fiber-radial (gamma dot) nonzero

  BCotangentPoint q;
  q.base = {0.0, -0.4, reference_angle(2)};
  q.xi = 0.8;
  q.gamma = 0.7;
  q.eta = Eigen::VectorXd::Zero(2);
  q.eta(0) = 0.2;
  CHECK(hamilton_field(mink, q)(0) == doctest::Approx(0.0));  // rho stays 0
}

TEST_CASE("hamilton field homogeneity in the fiber") {
  MetricSpec mink = MetricSpec::minkowski(4);
  BCotangentPoint pt;
  pt.base = {0.12, -0.3, reference_angle(2)};
  pt.xi = 0.4;
  pt.gamma = -0.9;
  pt.eta = Eigen::VectorXd::Zero(2);
  pt.eta << 0.25, -0.15;
  const Eigen::VectorXd f1 = hamilton_field(mink, pt);
  for (double c : {2.0, 10.0}) {
    BCotangentPoint sc = pt;
    sc.xi *= c;
    sc.gamma *= c;
    sc.eta *= c;
    const Eigen::VectorXd fc = hamilton_field(mink, sc);
    CHECK((fc.head(4) - c * f1.head(4)).norm() < 1e-7 * c * f1.head(4).norm());
    CHECK((fc.tail(4) - c * c * f1.tail(4)).norm() < 1e-6 * c * c * f1.tail(4).norm());
  }
}

TEST_CASE("interior pushforward matches the straight-line null flow") {
  MetricSpec mink = MetricSpec::minkowski(4);
  const double t = 2.0;
  const Eigen::Vector3d x(1.2, 0.5, -0.3);
  Eigen::Vector3d zx(0.4, -0.2, 0.7);
  const double zt = zx.norm();  // null covector

  double rho, v, xi, gamma;
  Eigen::VectorXd y, eta;
  collar_from_tx(t, x, rho, v, y);
  frame_covector_from_tx(t, x, zt, zx, xi, gamma, eta);
  BCotangentPoint pt{{rho, v, y}, xi, gamma, eta};

  // flat flow of zt^2 - |zx|^2: (t, x) advances by 2(zt, -zx) tau, covector fixed
  const double tau = 5e-3;
  const double t1 = t + 2.0 * zt * tau;
  const Eigen::Vector3d x1 = x - 2.0 * zx * tau;
  double rho1, v1;
  Eigen::VectorXd y1;
  collar_from_tx(t1, x1, rho1, v1, y1);

  // one RK4 step of the collar-chart field
  auto step = [&](const BCotangentPoint& p0, double h) {
    auto state = [](const BCotangentPoint& p) {
      Eigen::VectorXd z(8);
      z << p.base.rho, p.base.v, p.base.y(0), p.base.y(1), p.xi, p.gamma, p.eta(0), p.eta(1);
      return z;
    };
    auto from_state = [](const Eigen::VectorXd& z) {
      BCotangentPoint p;
      p.base.rho = z(0);
      p.base.v = z(1);
      p.base.y = z.segment(2, 2);
      p.xi = z(4);
      p.gamma = z(5);
      p.eta = z.segment(6, 2);
      return p;
    };
    auto rhs = [&](const Eigen::VectorXd& z) {
      return hamilton_field(mink, from_state(z));
    };
    Eigen::VectorXd z = state(p0);
    const Eigen::VectorXd k1 = rhs(z);
    const Eigen::VectorXd k2 = rhs(z + 0.5 * h * k1);
    const Eigen::VectorXd k3 = rhs(z + 0.5 * h * k2);
    const Eigen::VectorXd k4 = rhs(z + h * k3);
    return from_state(z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };
  const BCotangentPoint p1 = step(pt, tau);
  CHECK(p1.base.rho == doctest::Approx(rho1).epsilon(1e-8));
  CHECK(p1.base.v == doctest::Approx(v1).epsilon(1e-8));
  CHECK(p1.base.y(0) == doctest::Approx(y1(0)).epsilon(1e-8));
  CHECK(p1.base.y(1) == doctest::Approx(y1(1)).epsilon(1e-8));
}

TEST_CASE("bicharacteristics reach both light cones at infinity") {
  MetricSpec mink = MetricSpec::minkowski(4);
  Rng rng(2024);
  FlowBudget budget;
  budget.rho_max = 1e3;
  int tried = 0;
  for (int k = 0; k < 6; ++k) {
    MuState s;
    while (!sample_characteristic_start(mink, rng, s)) {
    }
    const FlowTrajectory fwd = integrate_bicharacteristic(mink, s, budget, true);
    const FlowTrajectory bwd = integrate_bicharacteristic(mink, s, budget, false);
    const bool fwd_plus = fwd.terminal_class == TerminalClass::ReachedSPlus;
    if (fwd_plus) {
      CHECK(bwd.terminal_class == TerminalClass::ReachedSMinus);
    } else {
      CHECK(fwd.terminal_class == TerminalClass::ReachedSMinus);
      CHECK(bwd.terminal_class == TerminalClass::ReachedSPlus);
    }
    CHECK(fwd.lambda_drift < 1e-6);
    // conservation along samples
    for (const auto& sm : fwd.samples) {
      const double fib2 = sm.xi * sm.xi + sm.gamma_mu * sm.gamma_mu + sm.eta.squaredNorm();
      CHECK(std::abs(sm.lambda) / fib2 < 1e-6);
    }
    ++tried;
  }
  CHECK(tried == 6);
}

TEST_CASE("start on the radial set is stationary") {
  MetricSpec mink = MetricSpec::minkowski(4);
  MuState s;
  s.rho = 0.0;
  s.mu = 0.5 * M_PI;
  s.y = reference_angle(2);
  s.xi = 0.0;
  s.gamma_mu = 1.0;
  s.eta = Eigen::VectorXd::Zero(2);
  FlowBudget budget;
  budget.param_max = 5.0;
  const FlowTrajectory t = integrate_bicharacteristic(mink, s, budget, true);
  CHECK(t.terminal_class == TerminalClass::BudgetExhausted);
  CHECK(t.end_displacement < 1e-8);
}

TEST_CASE("non-characteristic start is rejected") {
  MetricSpec mink = MetricSpec::minkowski(4);
  MuState s;
  s.rho = 0.0;
  s.mu = 2.0;
  s.y = reference_angle(2);
  s.xi = 1.0;
  s.gamma_mu = 1.0;
  s.eta = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(integrate_bicharacteristic(mink, s, FlowBudget{}, true), Error);
}

TEST_CASE("radial linearization spectrum") {
  SUBCASE("exact flat space, multiplicities {1, n+1, n-2} and ratios 2:1:0") {
    for (int n : {3, 4, 5}) {
      MetricSpec mink = MetricSpec::minkowski(n);
      const RadialLinearization lin =
          radial_linearization(mink, reference_angle(n - 2), true);
      const Eigen::VectorXd& e = lin.eigenvalues;
      REQUIRE(e.size() == 2 * n);
      const double s = -e(0) / 8.0;  // proportionality factor
      CHECK(s > 0);
      CHECK(e(0) / s == doctest::Approx(-8.0).epsilon(1e-5));
      for (int i = 1; i <= n + 1; ++i) CHECK(e(i) / s == doctest::Approx(-4.0).epsilon(1e-5));
      for (int i = n + 2; i < 2 * n; ++i) CHECK(std::abs(e(i)) / s < 1e-5);
    }
  }

  SUBCASE("small perturbation keeps multiplicities, ratios within 5e-2") {
    MetricSpec mink = MetricSpec::minkowski(4);
    ProfileTerm t{"dv2_bump", 0.01, 0.35, 0.3, 0.5};
    MetricSpec pert = perturbed_metric(mink, {t}, PerturbClass::ShortRange);
    const RadialLinearization lin = radial_linearization(pert, reference_angle(2), true);
    const Eigen::VectorXd& e = lin.eigenvalues;
    const double s = -e(0) / 8.0;
    CHECK(e(0) / s == doctest::Approx(-8.0).epsilon(5e-2));
    for (int i = 1; i <= 5; ++i) CHECK(e(i) / s == doctest::Approx(-4.0).epsilon(5e-2));
    for (int i = 6; i < 8; ++i) CHECK(std::abs(e(i)) / s < 5e-2);
  }

  SUBCASE("spectrum negates with the gamma sign") {
    MetricSpec mink = MetricSpec::minkowski(4);
    const RadialLinearization a = radial_linearization(mink, reference_angle(2), true);
    const RadialLinearization b = radial_linearization(mink, reference_angle(2), false);
    Eigen::VectorXd neg = -b.eigenvalues;
    std::sort(neg.data(), neg.data() + neg.size());
    CHECK((a.eigenvalues - neg).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("radial-set completeness on the boundary") {
  MetricSpec mink = MetricSpec::minkowski(4);
  const Eigen::VectorXd y = reference_angle(2);
  // rescaled base flow is stationary only near v=0, xi_hat=0, eta_hat=0
  auto base_speed = [&](double mu, double xi_hat, double eta1) {
    MuState s;
    s.rho = 0.0;
    s.mu = mu;
    s.y = y;
    s.xi = xi_hat;
    s.gamma_mu = 1.0;
    s.eta = Eigen::VectorXd::Zero(2);
    s.eta(0) = eta1;
    BCotangentPoint pt;
    pt.base = {0.0, std::cos(mu), y};
    pt.xi = xi_hat;
    pt.gamma = -1.0 / std::sin(mu);
    pt.eta = s.eta;
    const Eigen::VectorXd f = hamilton_field(mink, pt);
    return f.head(4).norm() / (std::abs(pt.gamma) + 1.0);
  };
  for (double mu = 0.4; mu < M_PI - 0.2; mu += 0.17)
    for (double xh : {-0.8, -0.2, 0.0, 0.5})
      for (double eh : {-0.6, 0.0, 0.4}) {
        const double speed = base_speed(mu, xh, eh);
        const double dist = std::max(
            {std::abs(std::cos(mu)), std::abs(xh), std::abs(eh)});
        if (dist < 1e-3) CHECK(speed < 1e-2);
        if (speed < 1e-3) CHECK(dist < 1e-2);
      }
}

TEST_CASE("semiclassical boundary flow consistency") {
  // flow at rho=0 with xi frozen vs an independent v-chart integration of the
  // boundary symbol flow
  MetricSpec mink = MetricSpec::minkowski(4);
  const double xi_frozen = 1.0;
  MuState s;
  s.rho = 0.0;
  s.mu = 2.3;
  s.y = reference_angle(2);
  s.xi = xi_frozen;
  s.eta = Eigen::VectorXd::Zero(2);
  s.eta << 0.3, -0.1;
  const std::vector<double> roots =
      characteristic_gamma_mu(mink, 0.0, s.mu, s.y, s.xi, s.eta);
  REQUIRE(!roots.empty());
  s.gamma_mu = roots[0];

  // independent: RK4 of the v-chart symbol field (6d state), unrescaled
  auto rhs = [&](const Eigen::VectorXd& z) {
    BCotangentPoint pt;
    pt.base = {0.0, z(0), z.segment(1, 2)};
    pt.xi = xi_frozen;
    pt.gamma = z(3);
    pt.eta = z.segment(4, 2);
    const Eigen::VectorXd f = hamilton_field(mink, pt);
    Eigen::VectorXd dz(6);
    dz << f(1), f(2), f(3), f(5), f(6), f(7);
    return dz;
  };
  Eigen::VectorXd z(6);
  z << std::cos(s.mu), s.y(0), s.y(1), -s.gamma_mu / std::sin(s.mu), s.eta(0), s.eta(1);
  const double T = 0.4, h = 1e-4;
  for (int i = 0; i < int(T / h); ++i) {
    const Eigen::VectorXd k1 = rhs(z);
    const Eigen::VectorXd k2 = rhs(z + 0.5 * h * k1);
    const Eigen::VectorXd k3 = rhs(z + 0.5 * h * k2);
    const Eigen::VectorXd k4 = rhs(z + h * k3);
    z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  // main integrator: un-rescaled parameter comparison needs matching the
  // rescale factor; integrate the mu-chart flow with observer-free small steps
  // by reusing integrate (rescaled) and comparing against the rescaled
  // parameter of the v-chart run is overkill; instead compare lambda-level
  // invariants: both flows stay on the same characteristic leaf and pass
  // through the same (v, y) curve. Check the v-chart endpoint lies on the
  // mu-chart trajectory to 1e-8 in (v, y, eta/gamma).
  FlowBudget budget;
  budget.param_max = 3.0;
  budget.terminal_radius = 1e-9;  // do not stop early
  const FlowTrajectory traj = integrate_bicharacteristic(mink, s, budget, true);
  double best = 1e9;
  for (const auto& sm : traj.samples) {
    double d = std::abs(sm.v - z(0));
    d += (sm.y - z.segment(1, 2)).norm();
    const double g_traj = -sm.gamma_mu / std::sin(sm.mu);
    d += std::abs(sm.eta(0) / g_traj - z(4) / z(3));
    d += std::abs(sm.eta(1) / g_traj - z(5) / z(3));
    best = std::min(best, d);
  }
  CHECK(best < 1e-6);
}

TEST_CASE("non-trapping certification") {
  SUBCASE("exact flat space passes") {
    MetricSpec mink = MetricSpec::minkowski(4);
    FlowBudget budget;
    budget.rho_max = 1e3;
    const NontrappingReport rep = check_nontrapping(mink, 40, 7, budget);
    CHECK(rep.pass);
    CHECK(rep.failed == 0);
    CHECK(rep.worst_drift < 1e-6);
  }
  SUBCASE("zero samples is a vacuous pass with a warning") {
    MetricSpec mink = MetricSpec::minkowski(4);
    const NontrappingReport rep = check_nontrapping(mink, 0, 7);
    CHECK(rep.pass);
    CHECK(rep.vacuous);
  }
  SUBCASE("an artificial equatorial wall traps an orbit") {
    MetricSpec mink = MetricSpec::minkowski(4);
    MetricSpec trap = mink;
    trap.perturbation_class = PerturbClass::ShortRange;
    trap.radial_profile.push_back(ProfileTerm{"angular_bump", 6.0, -0.5, 0.35, 0.5});
    FlowBudget budget;
    budget.rho_max = 1e3;
    budget.param_max = 40.0;
    const NontrappingReport rep = check_nontrapping(trap, 60, 11, budget);
    CHECK(!rep.pass);
    CHECK(rep.failed > 0);
    CHECK(!rep.failing_starts.empty());
  }
}
