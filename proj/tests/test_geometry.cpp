#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "scatwave/geometry.hpp"

using namespace scatwave;
using namespace scatwave::geom;

namespace {

// independent 2x2 inversion of the (rho,v) block of the flat-space frame matrix
void flat_block_dual(double v, double& grr, double& grv, double& gvv) {
  const double a = v, b = -0.5, c = -v / (4.0 * (1.0 - v * v));
  const double det = a * c - b * b;
  grr = c / det;
  grv = -b / det;
  gvv = a / det;
}

}  // namespace

TEST_CASE("flat frame components") {
  MetricSpec mink = MetricSpec::minkowski(4);
  const Eigen::VectorXd y = reference_angle(2);
  const Eigen::MatrixXd G = mink.components(0.1, 0.5, y);
  CHECK(G(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  const Eigen::MatrixXd G0 = mink.components(0.2, 0.0, y);
  CHECK(G0(0, 1) == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(mink.angular_coefficient(0.1, 1.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(MetricSpec::minkowski(1), Error);
}

TEST_CASE("perturbed metric families and class validation") {
  MetricSpec mink = MetricSpec::minkowski(4);
  const Eigen::VectorXd y = reference_angle(2);

  SUBCASE("zero profile is identical to the base") {
    ProfileTerm t{"normal_bump", 0.0, 0.0, 0.4, 0.5};
    MetricSpec s = perturbed_metric(mink, {t}, PerturbClass::VeryShortRange);
    for (double rho : {0.0, 0.05, 0.2})
      for (double v : {-0.5, 0.0, 0.7})
        CHECK((s.components(rho, v, y) - mink.components(rho, v, y)).norm() == 0.0);
  }

  SUBCASE("O(1) normal block violates the very-short-range class") {
    ProfileTerm t{"o1_normal", 0.1, 0.0, 0.4, 0.5};
    CHECK_THROWS_WITH_AS(perturbed_metric(mink, {t}, PerturbClass::VeryShortRange),
                         doctest::Contains("normal"), Error);
  }

  SUBCASE("admissible normal profile, deviation equals the family value") {
    ProfileTerm t{"normal_gauss", 0.01, 0.0, 1.0, 0.5};
    MetricSpec s = perturbed_metric(mink, {t}, PerturbClass::VeryShortRange);
    for (double v : {0.0, 0.3, -0.4}) {
      const double dev = s.components(0.1, v, y)(0, 0) - mink.components(0.1, v, y)(0, 0);
      CHECK(dev == doctest::Approx(1e-4 * std::exp(-v * v)).epsilon(1e-12));
    }
  }
}

TEST_CASE("dual metric against the symbolic block inverse") {
  MetricSpec mink = MetricSpec::minkowski(4);
  CollarPoint p;
  p.y = reference_angle(2);

  p.rho = 0.0;
  p.v = 0.3;
  const DualMetricEval d = dual_metric_at(mink, p);
  double grr, grv, gvv;
  flat_block_dual(0.3, grr, grv, gvv);
  CHECK(d.ginv(1, 1) == doctest::Approx(gvv).epsilon(1e-12));
  CHECK(d.ginv(1, 1) == doctest::Approx(-4.0 * 0.3 * (1.0 - 0.09)).epsilon(1e-12));

  p.v = 0.0;
  const DualMetricEval d0 = dual_metric_at(mink, p);
  CHECK(d0.ginv(0, 1) == doctest::Approx(-2.0).epsilon(1e-13));
  CHECK(d0.ginv(0, 0) == doctest::Approx(0.0).epsilon(1e-13));  // -q with q = 0
}

TEST_CASE("signature and inverse consistency at sampled points") {
  for (int n : {3, 4, 5}) {
    MetricSpec mink = MetricSpec::minkowski(n);
    ProfileTerm t{"normal_gauss", 0.01, 0.0, 1.0, 0.5};
    MetricSpec pert = perturbed_metric(mink, {t}, PerturbClass::VeryShortRange);
    const Eigen::VectorXd y = reference_angle(n - 2);
    Rng rng(11);
    for (int k = 0; k < 40; ++k) {
      const double rho = rng.uniform(0.0, 0.3);
      const double v = rng.uniform(-0.9, 0.9);
      const Eigen::MatrixXd G = pert.components(rho, v, y);
      CHECK(positive_eigenvalue_count(G) == 1);
      CollarPoint p{rho, v, y};
      const DualMetricEval d = dual_metric_at(pert, p);
      CHECK((G * d.ginv - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("boundary block laws via Richardson slopes") {
  MetricSpec mink = MetricSpec::minkowski(4);
  CollarPoint p;
  p.y = reference_angle(2);
  p.rho = 0.0;
  auto gvv_over_v = [&](double v) {
    CollarPoint q = p;
    q.v = v;
    return dual_metric_at(mink, q).ginv(1, 1) / v;
  };
  auto grv = [&](double v) {
    CollarPoint q = p;
    q.v = v;
    return dual_metric_at(mink, q).ginv(0, 1);
  };
  const double h = 1e-3;
  const double lim_gvv = (4.0 * gvv_over_v(h) - gvv_over_v(2.0 * h)) / 3.0;
  const double lim_grv = (4.0 * grv(h) - grv(2.0 * h)) / 3.0;
  CHECK(lim_gvv == doctest::Approx(-4.0).epsilon(1e-6));
  CHECK(lim_grv == doctest::Approx(-2.0).epsilon(1e-6));
}

TEST_CASE("half log-volume gradient law") {
  MetricSpec mink = MetricSpec::minkowski(4);
  CollarPoint p;
  p.y = reference_angle(2);
  p.v = 0.2;
  for (double rho : {1e-3, 1e-4}) {
    p.rho = rho;
    const DualMetricEval d = dual_metric_at(mink, p);
    CHECK(rho * d.logvol_grad(0) == doctest::Approx(-5.0).epsilon(1e-8));  // -(n+1)
  }
}

TEST_CASE("cap metric") {
  MetricSpec mink = MetricSpec::minkowski(4);
  const Eigen::VectorXd y = reference_angle(2);

  const CapMetricEval c = cap_metric(mink, CapSide::PlusCap, 0.5, y);
  CHECK(c.Kinv(0, 0) == doctest::Approx(4.0 * 0.5 * (1.0 - 0.25)).epsilon(1e-12));

  // K_vv ~ 1/(4v) as v -> 0
  for (double v : {1e-3, 1e-4}) {
    const CapMetricEval cs = cap_metric(mink, CapSide::PlusCap, v, y);
    const Eigen::MatrixXd K = cs.Kinv.inverse();
    CHECK(4.0 * v * K(0, 0) == doctest::Approx(1.0).epsilon(5e-3));
  }

  CHECK_THROWS_AS(cap_metric(mink, CapSide::PlusCap, -0.1, y), Error);
  CHECK_THROWS_AS(cap_metric(mink, CapSide::Equatorial, 0.1, y), Error);
}

TEST_CASE("cap sectional curvature is -1 (numerical oracle)") {
  // warped-product curvature of k = A dv^2 + B domega^2 from sampled kinv
  MetricSpec mink = MetricSpec::minkowski(4);
  const Eigen::VectorXd y = reference_angle(2);
  auto AB = [&](double v, double& A, double& B) {
    const CapMetricEval c = cap_metric(mink, CapSide::PlusCap, v, y);
    A = 1.0 / c.kinv(0, 0);
    B = 1.0 / c.kinv(1, 1);
  };
  const double h = 1e-4;
  for (double v : {0.3, 0.5, 0.7}) {
    double A0, B0, Ap, Bp, Am, Bm;
    AB(v, A0, B0);
    AB(v + h, Ap, Bp);
    AB(v - h, Am, Bm);
    const double f0 = std::sqrt(B0), fp = std::sqrt(Bp), fm = std::sqrt(Bm);
    // d/dr = -(1/sqrt A) d/dv toward the boundary; f(r) = sqrt B
    const double dfdv = (fp - fm) / (2.0 * h);
    const double d2fdv2 = (fp - 2.0 * f0 + fm) / (h * h);
    const double dAdv = (Ap - Am) / (2.0 * h);
    const double fr = -dfdv / std::sqrt(A0);
    // f_rr = (1/A) f_vv - (A'/(2A^2)) f_v
    const double frr = d2fdv2 / A0 - 0.5 * dAdv * dfdv / (A0 * A0);
    const double k_rad = -frr / f0;
    const double k_sph = (1.0 - fr * fr) / (f0 * f0);
    CHECK(k_rad == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(k_sph == doctest::Approx(-1.0).epsilon(1e-5));
  }
}

TEST_CASE("box coefficients") {
  const Eigen::VectorXd y2 = reference_angle(2);

  SUBCASE("d_v^2 coefficient is g^vv at the boundary") {
    MetricSpec mink = MetricSpec::minkowski(4);
    for (double v : {0.1, 0.4}) {
      CollarPoint p{0.0, v, y2};
      const BoxCoefficients c = box_coefficients(mink, p);
      CHECK(c.c_vv == doctest::Approx(-4.0 * v * (1.0 - v * v)).epsilon(1e-12));
    }
  }

  SUBCASE("wave-operator oracle: box applied to t^2-|x|^2 gives 2n") {
    for (int n : {3, 4, 5}) {
      MetricSpec mink = MetricSpec::minkowski(n);
      const Eigen::VectorXd y = reference_angle(n - 2);
      for (double rho : {0.05, 0.3, 0.7})
        for (double v : {-0.8, -0.2, 0.4, 0.9}) {
          CollarPoint p{rho, v, y};
          const BoxCoefficients c = box_coefficients(mink, p);
          // u = v / rho^2: exact collar derivatives
          const double r2 = 1.0 / (rho * rho);
          const double box_u =
              apply_box_radial(c, -2.0 * v * r2, r2, 4.0 * v * r2, -2.0 * r2, 0.0) *
              rho * rho;
          CHECK(box_u == doctest::Approx(2.0 * n).epsilon(1e-8));
        }
    }
  }

  SUBCASE("flat interior check on monomials at rho=0.5, v=0.99") {
    // t^2 = (1+v)/(2 rho^2) has Box t^2 = 2; r^2 = (1-v)/(2 rho^2) has Box r^2 = -2(n-1)
    for (int n : {3, 4}) {
      MetricSpec mink = MetricSpec::minkowski(n);
      CollarPoint p{0.5, 0.99, reference_angle(n - 2)};
      const BoxCoefficients c = box_coefficients(mink, p);
      const double r2 = 1.0 / (p.rho * p.rho);
      const double t2 = 0.5 * (1.0 + p.v) * r2;
      const double box_t2 =
          apply_box_radial(c, -2.0 * t2, 0.5 * r2, 4.0 * t2, -r2, 0.0) * p.rho * p.rho;
      CHECK(box_t2 == doctest::Approx(2.0).epsilon(1e-8));
      const double x2 = 0.5 * (1.0 - p.v) * r2;
      const double box_x2 =
          apply_box_radial(c, -2.0 * x2, -0.5 * r2, 4.0 * x2, r2, 0.0) * p.rho * p.rho;
      CHECK(box_x2 == doctest::Approx(-2.0 * (n - 1)).epsilon(1e-8));
    }
  }

  SUBCASE("zero perturbation reproduces the flat table") {
    MetricSpec mink = MetricSpec::minkowski(4);
    ProfileTerm t{"normal_bump", 0.0, 0.0, 0.4, 0.5};
    MetricSpec s = perturbed_metric(mink, {t}, PerturbClass::VeryShortRange);
    CollarPoint p{0.2, 0.3, y2};
    const BoxCoefficients a = box_coefficients(mink, p);
    const BoxCoefficients b = box_coefficients(s, p);
    CHECK(a.c_rr == b.c_rr);
    CHECK(a.c_rv == b.c_rv);
    CHECK(a.c_vv == b.c_vv);
    CHECK(a.c_r == b.c_r);
    CHECK(a.c_v == b.c_v);
    CHECK(a.c_ang == b.c_ang);
  }

  SUBCASE("degenerate metric propagates") {
    MetricSpec mink = MetricSpec::minkowski(4);
    ProfileTerm t{"dv2_bump", 0.69, 0.5, 0.3, 0.5};
    MetricSpec s = perturbed_metric(mink, {t}, PerturbClass::ShortRange);
    // det of the (rho,v) block crosses zero inside the bump support;
    // bisect onto the crossing and evaluate there
    auto det2 = [&](double v) {
      return s.components_radial(0.0, v).topLeftCorner<2, 2>().determinant();
    };
    double lo = 0.35, hi = 0.5;
    REQUIRE(det2(lo) * det2(hi) < 0.0);
    for (int i = 0; i < 80; ++i) {
      const double mid = 0.5 * (lo + hi);
      (det2(lo) * det2(mid) <= 0.0 ? hi : lo) = mid;
    }
    bool threw = false;
    try {
      CollarPoint p{0.0, 0.5 * (lo + hi), y2};
      box_coefficients(s, p);
    } catch (const Error& e) {
      threw = (e.code() == ErrorCode::DegenerateMetric);
    }
    CHECK(threw);
  }
}

TEST_CASE("metric spec json round trip") {
  MetricSpec mink = MetricSpec::minkowski(5);
  ProfileTerm t{"angular_bump", 0.02, 0.45, 0.25, 0.5};
  MetricSpec s = perturbed_metric(mink, {t}, PerturbClass::ShortRange);
  MetricSpec back = MetricSpec::from_json_string(s.to_json_string());
  CHECK(back.n == 5);
  CHECK(back.perturbation_class == PerturbClass::ShortRange);
  const Eigen::VectorXd y = reference_angle(3);
  for (double v : {-0.3, 0.45, 0.6})
    CHECK((back.components(0.1, v, y) - s.components(0.1, v, y)).norm() == 0.0);
}
