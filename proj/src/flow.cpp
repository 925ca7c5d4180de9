#include "scatwave/flow.hpp"

#include <algorithm>
#include <cmath>

#include "scatwave/ode45.hpp"

namespace scatwave::flow {

namespace {

constexpr double kTwoPi = 6.283185307179586;

// angular kinetic term sum eta_i^2 / omega_ii in the polar-chain chart
double angular_quadratic(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  double acc = 0;
  double prod = 1.0;
  for (int i = 0; i < y.size(); ++i) {
    acc += eta(i) * eta(i) / prod;
    if (i + 1 < y.size()) {
      const double s = std::sin(y(i));
      prod *= s * s;
    }
  }
  return acc;
}

Eigen::VectorXd angular_quadratic_dy(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  const int d = int(y.size());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
  // d/dy_i of sum_j eta_j^2/omega_jj = -2 cot(y_i) sum_{j>i} eta_j^2/omega_jj
  for (int i = 0; i < d; ++i) {
    double tail = 0;
    double prod = 1.0;
    for (int j = 0; j < d; ++j) {
      if (j > i) tail += eta(j) * eta(j) / prod;
      if (j + 1 < d) {
        const double s = std::sin(y(j));
        prod *= s * s;
      }
    }
    g(i) = -2.0 * (std::cos(y(i)) / std::sin(y(i))) * tail;
  }
  return g;
}

struct DualDeltas {
  double grr = 0, grv = 0, gvv = 0, c_ang = 0;
  bool zero = true;
};

DualDeltas dual_deltas(const geom::MetricSpec& spec, double rho, double v) {
  DualDeltas d;
  if (spec.is_exact_minkowski()) return d;
  const geom::BlockDeltas bd = spec.deltas(rho, v);
  if (bd.normal == 0 && bd.mixed == 0 && bd.dv2 == 0 && bd.ang == 0) return d;
  Eigen::Matrix2d S;
  const double bM = -v / (4.0 * (1.0 - v * v));
  S << v + bd.normal, -0.5 + bd.mixed, -0.5 + bd.mixed, bM + bd.dv2;
  const double det = S.determinant();
  d.grr = S(1, 1) / det - v;
  d.grv = -S(0, 1) / det + 2.0 * (1.0 - v * v);
  d.gvv = S(0, 0) / det + 4.0 * v * (1.0 - v * v);
  d.c_ang = -2.0 / ((1.0 - v) * (1.0 + bd.ang)) + 2.0 / (1.0 - v);
  d.zero = false;
  return d;
}

struct SymbolEval {
  double lambda = 0;
  double d_rho = 0, d_mu = 0;
  double d_xi = 0, d_gmu = 0;
  Eigen::VectorXd d_eta, d_y;
};

double delta_lambda(const geom::MetricSpec& spec, double rho, double mu, double xi,
                    double gmu, double W2) {
  const double v = std::cos(mu);
  const double s = std::sin(mu);
  if (std::abs(s) < 0.05) return 0.0;  // admissible profiles vanish near the folds
  const DualDeltas d = dual_deltas(spec, rho, v);
  if (d.zero) return 0.0;
  const double gamma = -gmu / s;
  return d.grr * xi * xi + d.gvv * gamma * gamma + 2.0 * d.grv * xi * gamma + d.c_ang * W2;
}

SymbolEval eval_symbol(const geom::MetricSpec& spec, double rho, double mu,
                       const Eigen::VectorXd& y, double xi, double gmu,
                       const Eigen::VectorXd& eta) {
  SymbolEval e;
  const double v = std::cos(mu), s = std::sin(mu);
  const double W2 = angular_quadratic(y, eta);
  const double ang = -2.0 / (1.0 - v);

  e.lambda = v * xi * xi - 4.0 * v * gmu * gmu + 4.0 * s * xi * gmu + ang * W2;
  e.d_xi = 2.0 * v * xi + 4.0 * s * gmu;
  e.d_gmu = -8.0 * v * gmu + 4.0 * s * xi;
  e.d_mu = -s * xi * xi + 4.0 * s * gmu * gmu + 4.0 * v * xi * gmu +
           2.0 * W2 * s / ((1.0 - v) * (1.0 - v));
  e.d_eta = Eigen::VectorXd::Zero(y.size());
  {
    double prod = 1.0;
    for (int i = 0; i < y.size(); ++i) {
      e.d_eta(i) = 2.0 * ang * eta(i) / prod;
      if (i + 1 < y.size()) {
        const double si = std::sin(y(i));
        prod *= si * si;
      }
    }
  }
  e.d_y = ang * angular_quadratic_dy(y, eta);

  if (!spec.is_exact_minkowski() && std::abs(s) >= 0.05) {
    const DualDeltas d = dual_deltas(spec, rho, v);
    if (!d.zero) {
      e.lambda += delta_lambda(spec, rho, mu, xi, gmu, W2);
      const double hr = 1e-6 * (1.0 + rho), hm = 1e-6;
      e.d_rho += (delta_lambda(spec, rho + hr, mu, xi, gmu, W2) -
                  delta_lambda(spec, rho - hr, mu, xi, gmu, W2)) /
                 (2.0 * hr);
      e.d_mu += (delta_lambda(spec, rho, mu + hm, xi, gmu, W2) -
                 delta_lambda(spec, rho, mu - hm, xi, gmu, W2)) /
                (2.0 * hm);
      const double gamma = -gmu / s;
      e.d_xi += 2.0 * d.grr * xi + 2.0 * d.grv * gamma;
      e.d_gmu += (2.0 * d.gvv * gamma + 2.0 * d.grv * xi) * (-1.0 / s);
      double prod = 1.0;
      for (int i = 0; i < y.size(); ++i) {
        e.d_eta(i) += 2.0 * d.c_ang * eta(i) / prod;
        if (i + 1 < y.size()) {
          const double si = std::sin(y(i));
          prod *= si * si;
        }
      }
    }
  }
  return e;
}

}  // namespace

double b_symbol(const geom::MetricSpec& spec, const BCotangentPoint& pt) {
  const geom::DualMetricEval d = geom::dual_metric_at(spec, pt.base);
  const int dy = spec.n - 2;
  double lam = d.ginv(0, 0) * pt.xi * pt.xi + d.ginv(1, 1) * pt.gamma * pt.gamma +
               2.0 * d.ginv(0, 1) * pt.xi * pt.gamma;
  for (int i = 0; i < dy; ++i) {
    lam += 2.0 * d.ginv(0, 2 + i) * pt.xi * pt.eta(i) +
           2.0 * d.ginv(1, 2 + i) * pt.gamma * pt.eta(i);
    for (int j = 0; j < dy; ++j) lam += d.ginv(2 + i, 2 + j) * pt.eta(i) * pt.eta(j);
  }
  return lam;
}

Eigen::VectorXd hamilton_field(const geom::MetricSpec& spec, const BCotangentPoint& pt) {
  // field in (rho, v, y, xi, gamma, eta); fiber derivatives analytic, base
  // derivatives of the symbol by central differences
  const int n = spec.n, dy = n - 2;
  auto lambda_at = [&](double rho, double v, const Eigen::VectorXd& y) {
    BCotangentPoint q = pt;
    q.base.rho = rho;
    q.base.v = v;
    q.base.y = y;
    return b_symbol(spec, q);
  };
  const double rho = pt.base.rho, v = pt.base.v;
  const geom::DualMetricEval d = geom::dual_metric_at(spec, pt.base);

  double dxi = 2.0 * d.ginv(0, 0) * pt.xi + 2.0 * d.ginv(0, 1) * pt.gamma;
  double dga = 2.0 * d.ginv(1, 1) * pt.gamma + 2.0 * d.ginv(0, 1) * pt.xi;
  Eigen::VectorXd deta = Eigen::VectorXd::Zero(dy);
  for (int i = 0; i < dy; ++i) {
    dxi += 2.0 * d.ginv(0, 2 + i) * pt.eta(i);
    dga += 2.0 * d.ginv(1, 2 + i) * pt.eta(i);
    deta(i) = 2.0 * d.ginv(2 + i, 0) * pt.xi + 2.0 * d.ginv(2 + i, 1) * pt.gamma;
    for (int j = 0; j < dy; ++j) deta(i) += 2.0 * d.ginv(2 + i, 2 + j) * pt.eta(j);
  }
  const double hr = 1e-7 * (1.0 + rho), hv = 1e-7;
  const double dl_rho =
      rho > hr
          ? (lambda_at(rho + hr, v, pt.base.y) - lambda_at(rho - hr, v, pt.base.y)) / (2.0 * hr)
          : (lambda_at(rho + hr, v, pt.base.y) - lambda_at(rho, v, pt.base.y)) / hr;
  const double dl_v =
      (lambda_at(rho, v + hv, pt.base.y) - lambda_at(rho, v - hv, pt.base.y)) / (2.0 * hv);
  Eigen::VectorXd dl_y(dy);
  for (int i = 0; i < dy; ++i) {
    Eigen::VectorXd yp = pt.base.y, ym = pt.base.y;
    yp(i) += hv;
    ym(i) -= hv;
    dl_y(i) = (lambda_at(rho, v, yp) - lambda_at(rho, v, ym)) / (2.0 * hv);
  }
  Eigen::VectorXd f(2 * n);
  f(0) = rho * dxi;
  f(1) = dga;
  f.segment(2, dy) = deta;
  f(2 + dy) = -rho * dl_rho;
  f(3 + dy) = -dl_v;
  f.segment(4 + dy, dy) = -dl_y;
  return f;
}

const char* terminal_class_name(TerminalClass c) {
  switch (c) {
    case TerminalClass::ReachedSPlus: return "reached_S_plus";
    case TerminalClass::ReachedSMinus: return "reached_S_minus";
    case TerminalClass::EscapedCollar: return "escaped_collar";
    case TerminalClass::BudgetExhausted: return "budget_exhausted";
  }
  return "unknown";
}

MuState to_mu_state(const BCotangentPoint& pt, bool south_sheet) {
  MuState s;
  s.rho = pt.base.rho;
  const double mu = std::acos(std::clamp(pt.base.v, -1.0, 1.0));
  s.mu = south_sheet ? kTwoPi - mu : mu;
  s.y = pt.base.y;
  s.xi = pt.xi;
  const double sn = std::sin(s.mu);
  if (std::abs(sn) < 1e-12)
    throw Error(ErrorCode::ChartError, "cannot seed exactly at a fold of v");
  s.gamma_mu = -pt.gamma * sn;
  s.eta = pt.eta;
  return s;
}

std::vector<double> characteristic_gamma_mu(const geom::MetricSpec& spec, double rho,
                                            double mu, const Eigen::VectorXd& y, double xi,
                                            const Eigen::VectorXd& eta) {
  auto lam = [&](double g) { return eval_symbol(spec, rho, mu, y, xi, g, eta).lambda; };
  const double c = lam(0.0);
  const double a = 0.5 * (lam(1.0) + lam(-1.0)) - c;
  const double b = 0.5 * (lam(1.0) - lam(-1.0));
  std::vector<double> roots;
  if (std::abs(a) < 1e-14) {
    if (std::abs(b) > 1e-14) roots.push_back(-c / b);
    return roots;
  }
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0) return roots;
  const double q = -0.5 * (b + (b >= 0 ? 1.0 : -1.0) * std::sqrt(disc));
  roots.push_back(q / a);
  if (std::abs(q) > 1e-300) roots.push_back(c / q);
  return roots;
}

FlowTrajectory integrate_bicharacteristic(const geom::MetricSpec& spec, const MuState& start,
                                          const FlowBudget& budget, bool forward,
                                          bool record_samples) {
  const int n = spec.n, dy = n - 2;
  using Vec = Eigen::VectorXd;

  Vec z0(2 * n);
  z0(0) = start.rho;
  z0(1) = start.mu;
  z0.segment(2, dy) = start.y;
  z0(2 + dy) = start.xi;
  z0(3 + dy) = start.gamma_mu;
  z0.segment(4 + dy, dy) = start.eta;

  auto field = [&](double, const Vec& z) -> Vec {
    const double rho = z(0), mu = z(1);
    const Eigen::VectorXd y = z.segment(2, dy);
    const double xi = z(2 + dy), gmu = z(3 + dy);
    const Eigen::VectorXd eta = z.segment(4 + dy, dy);
    const SymbolEval e = eval_symbol(spec, rho, mu, y, xi, gmu, eta);
    const double fiber = std::sqrt(xi * xi + gmu * gmu + eta.squaredNorm());
    const double resc = (forward ? 1.0 : -1.0) / std::max(fiber, 1e-300);
    Vec f(2 * n);
    f(0) = rho * e.d_xi;
    f(1) = e.d_gmu;
    f.segment(2, dy) = e.d_eta;
    f(2 + dy) = -rho * e.d_rho;
    f(3 + dy) = -e.d_mu;
    f.segment(4 + dy, dy) = -e.d_y;
    return resc * f;
  };

  const double lam0 = eval_symbol(spec, start.rho, start.mu, start.y, start.xi,
                                  start.gamma_mu, start.eta)
                          .lambda;
  const double fib0 =
      start.xi * start.xi + start.gamma_mu * start.gamma_mu + start.eta.squaredNorm();
  if (std::abs(lam0) > 1e-8 * std::max(fib0, 1e-30))
    throw Error(ErrorCode::PreconditionViolation,
                "start is not on the characteristic set (|lambda| too large)");

  FlowTrajectory out;
  auto projective_dist = [&](const Vec& z) {
    const double g = std::max(std::abs(z(3 + dy)), 1e-300);
    double m = std::max(std::abs(std::cos(z(1))), std::abs(z(2 + dy)) / g);
    for (int i = 0; i < dy; ++i) m = std::max(m, std::abs(z(4 + dy + i)) / g);
    return m;
  };
  const bool started_inside =
      projective_dist(z0) < budget.terminal_radius && start.rho < budget.terminal_radius;

  double max_drift = 0;
  auto record = [&](double t, const Vec& z) {
    TrajectorySample s;
    s.param = t;
    s.rho = z(0);
    s.mu = z(1);
    s.v = std::cos(z(1));
    s.y = z.segment(2, dy);
    s.xi = z(2 + dy);
    s.gamma_mu = z(3 + dy);
    s.eta = z.segment(4 + dy, dy);
    s.lambda = eval_symbol(spec, s.rho, s.mu, s.y, s.xi, s.gamma_mu, s.eta).lambda;
    out.samples.push_back(s);
  };
  if (record_samples) record(0.0, z0);

  bool terminal_set = false;
  auto observer = [&](double t, const Vec& z) -> bool {
    if (record_samples) record(t, z);
    const double xi = z(2 + dy), gmu = z(3 + dy);
    const double fib2 = xi * xi + gmu * gmu + z.segment(4 + dy, dy).squaredNorm();
    const double lam =
        eval_symbol(spec, z(0), z(1), z.segment(2, dy), xi, gmu, z.segment(4 + dy, dy)).lambda;
    max_drift = std::max(max_drift, std::abs(lam - lam0) / std::max(fib2, 1e-30));
    if (max_drift > budget.drift_tol)
      throw Error(ErrorCode::IntegratorFailure, "characteristic drift exceeded tolerance");
    if (z(0) > budget.rho_max) {
      out.terminal_class = TerminalClass::EscapedCollar;
      terminal_set = true;
      return false;
    }
    if (!started_inside && z(0) < 10.0 * budget.terminal_radius &&
        projective_dist(z) < budget.terminal_radius) {
      double m = std::fmod(z(1), kTwoPi);
      if (m < 0) m += kTwoPi;
      out.terminal_class =
          (m < M_PI) ? TerminalClass::ReachedSPlus : TerminalClass::ReachedSMinus;
      terminal_set = true;
      return false;
    }
    return true;
  };

  OdeOptions<Vec> opt;
  opt.rtol = 1e-10;
  opt.atol = 1e-12;
  opt.h_init = 1e-4;
  opt.h_max = 0.5;
  opt.max_steps = budget.max_steps;
  opt.observer = observer;
  auto err_norm = [](const Vec& e, const Vec& y0, const Vec& y1, double rtol, double atol) {
    double m = 0;
    for (int i = 0; i < e.size(); ++i) {
      const double sc = atol + rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
      m = std::max(m, std::abs(e(i)) / sc);
    }
    return m;
  };

  auto res = ode45<Vec>(field, 0.0, budget.param_max, z0, opt, err_norm);
  if (res.step_failed)
    throw Error(ErrorCode::IntegratorFailure, "step-size underflow in bicharacteristic flow");
  if (!terminal_set) out.terminal_class = TerminalClass::BudgetExhausted;
  out.lambda_drift = max_drift;

  const Vec& zE = res.y;
  double disp = std::abs(zE(0) - z0(0)) + std::abs(std::cos(zE(1)) - std::cos(z0(1))) +
                (zE.segment(2, dy) - z0.segment(2, dy)).norm();
  const double gE = std::max(std::abs(zE(3 + dy)), 1e-300);
  const double g0 = std::max(std::abs(z0(3 + dy)), 1e-300);
  disp += std::abs(zE(2 + dy) / gE - z0(2 + dy) / g0);
  for (int i = 0; i < dy; ++i) disp += std::abs(zE(4 + dy + i) / gE - z0(4 + dy + i) / g0);
  out.end_displacement = disp;
  return out;
}

RadialLinearization radial_linearization(const geom::MetricSpec& spec,
                                         const Eigen::VectorXd& y0, bool gamma_positive,
                                         double fd_step) {
  const int n = spec.n, dy = n - 2;
  using Vec = Eigen::VectorXd;

  // state u = (rho, mu, y, nu = 1/gamma_mu, xi_hat, eta_hat); the nu-rescaled
  // field written with the fiber evaluated at (xi_hat, 1, eta_hat)
  auto field = [&](const Vec& u) -> Vec {
    const double rho = u(0), mu = u(1);
    const Eigen::VectorXd y = u.segment(2, dy);
    const double nu = u(2 + dy), xi_hat = u(3 + dy);
    const Eigen::VectorXd eta_hat = u.segment(4 + dy, dy);
    const SymbolEval e = eval_symbol(spec, rho, mu, y, xi_hat, 1.0, eta_hat);
    Vec f(2 * n);
    f(0) = rho * e.d_xi;
    f(1) = e.d_gmu;
    f.segment(2, dy) = e.d_eta;
    f(2 + dy) = nu * e.d_mu;
    f(3 + dy) = -rho * e.d_rho + xi_hat * e.d_mu;
    f.segment(4 + dy, dy) = -e.d_y + eta_hat * e.d_mu;
    return f;
  };

  Vec u0 = Vec::Zero(2 * n);
  u0(1) = 0.5 * M_PI;  // radial set over S+
  u0.segment(2, dy) = y0;

  const Vec f0 = field(u0);
  if (f0.norm() > 1e-8)
    throw Error(ErrorCode::ChartError, "radial-point preconditions violated");

  Eigen::MatrixXd J(2 * n, 2 * n);
  for (int j = 0; j < 2 * n; ++j) {
    Vec up = u0, um = u0;
    up(j) += fd_step;
    um(j) -= fd_step;
    const Vec fp = field(up), fm = field(um);
    if (!fp.allFinite() || !fm.allFinite())
      throw Error(ErrorCode::ChartError, "Jacobian finite-difference failure");
    J.col(j) = (fp - fm) / (2.0 * fd_step);
  }
  // gamma = -gamma_mu at S+: the gamma > 0 component rescales by 1/gamma = -nu
  if (gamma_positive) J = -J;

  Eigen::EigenSolver<Eigen::MatrixXd> es(J);
  RadialLinearization out;
  out.eigenvalues.resize(2 * n);
  for (int i = 0; i < 2 * n; ++i) out.eigenvalues(i) = es.eigenvalues()(i).real();
  std::sort(out.eigenvalues.data(), out.eigenvalues.data() + 2 * n);
  out.eigenvectors = es.eigenvectors().real();
  out.scale = std::abs(out.eigenvalues(0)) / 8.0;
  return out;
}

bool sample_characteristic_start(const geom::MetricSpec& spec, Rng& rng, MuState& out,
                                 bool boundary_only) {
  const int dy = spec.n - 2;
  out.rho = (boundary_only || rng.uniform() < 0.5) ? 0.0 : rng.uniform(0.02, 0.25);
  out.mu = rng.uniform(0.5 * M_PI + 0.2, 1.5 * M_PI - 0.2);
  out.y = Eigen::VectorXd(dy);
  for (int i = 0; i < dy; ++i) out.y(i) = rng.uniform(0.6, M_PI - 0.6);
  out.xi = rng.uniform(-1.0, 1.0);
  out.eta = Eigen::VectorXd(dy);
  for (int i = 0; i < dy; ++i) out.eta(i) = rng.uniform(-0.6, 0.6);
  const std::vector<double> roots =
      characteristic_gamma_mu(spec, out.rho, out.mu, out.y, out.xi, out.eta);
  if (roots.empty()) return false;
  const double g = roots[rng.next_u64() % roots.size()];
  if (!std::isfinite(g) || std::abs(g) < 1e-6 || std::abs(g) > 1e4) return false;
  out.gamma_mu = g;
  return true;
}

NontrappingReport check_nontrapping(const geom::MetricSpec& spec, int sample_count,
                                    std::uint64_t seed, const FlowBudget& budget) {
  NontrappingReport rep;
  rep.samples = sample_count;
  if (sample_count == 0) {
    rep.pass = true;
    rep.vacuous = true;
    return rep;
  }
  Rng rng(seed);
  int produced = 0;
  long guard = 0;
  while (produced < sample_count && guard++ < 100L * sample_count) {
    MuState start;
    if (!sample_characteristic_start(spec, rng, start)) continue;
    ++produced;
    bool ok = true;
    try {
      const FlowTrajectory fwd = integrate_bicharacteristic(spec, start, budget, true, false);
      const FlowTrajectory bwd = integrate_bicharacteristic(spec, start, budget, false, false);
      rep.worst_drift = std::max({rep.worst_drift, fwd.lambda_drift, bwd.lambda_drift});
      const bool plus_once = (fwd.terminal_class == TerminalClass::ReachedSPlus) !=
                             (bwd.terminal_class == TerminalClass::ReachedSPlus);
      const bool minus_once = (fwd.terminal_class == TerminalClass::ReachedSMinus) !=
                              (bwd.terminal_class == TerminalClass::ReachedSMinus);
      ok = plus_once && minus_once;
    } catch (const Error&) {
      ok = false;
    }
    if (!ok) {
      ++rep.failed;
      if (rep.failing_starts.size() < 8) rep.failing_starts.push_back(start);
    }
  }
  rep.pass = rep.failed == 0 && produced == sample_count;
  return rep;
}

}  // namespace scatwave::flow
