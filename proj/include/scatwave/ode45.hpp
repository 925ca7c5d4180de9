#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "scatwave/common.hpp"

namespace scatwave {

// Dormand-Prince 5(4) with step control. Vec needs +, -, double*, norm-like
// maxAbs supplied by the caller through a functor.
template <class Vec>
struct OdeOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h_init = 1e-3;
  double h_min = 1e-14;
  double h_max = 1.0;
  long max_steps = 200000;
  // called after each accepted step; return false to stop integration
  std::function<bool(double, const Vec&)> observer;
};

template <class Vec>
struct OdeResult {
  double t = 0;
  Vec y;
  long steps = 0;
  bool completed = false;   // reached t1
  bool stopped = false;     // observer stop
  bool step_failed = false; // h underflow / non-finite
};

template <class Vec, class Rhs, class Norm>
OdeResult<Vec> ode45(Rhs&& f, double t0, double t1, Vec y0, const OdeOptions<Vec>& opt,
                     Norm&& err_norm) {
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                      a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                      a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  OdeResult<Vec> res;
  res.y = y0;
  double t = t0;
  const double dir = (t1 >= t0) ? 1.0 : -1.0;
  double h = std::min(std::abs(opt.h_init), std::abs(t1 - t0)) * dir;
  if (h == 0.0) {
    res.t = t;
    res.completed = true;
    return res;
  }
  Vec k1 = f(t, res.y);
  while (res.steps < opt.max_steps) {
    if (std::abs(h) < opt.h_min) {
      res.step_failed = true;
      break;
    }
    if ((t + h - t1) * dir > 0) h = t1 - t;
    Vec y2 = res.y + k1 * (a21 * h);
    Vec k2 = f(t + c2 * h, y2);
    Vec y3 = res.y + k1 * (a31 * h) + k2 * (a32 * h);
    Vec k3 = f(t + c3 * h, y3);
    Vec y4 = res.y + k1 * (a41 * h) + k2 * (a42 * h) + k3 * (a43 * h);
    Vec k4 = f(t + c4 * h, y4);
    Vec y5 = res.y + k1 * (a51 * h) + k2 * (a52 * h) + k3 * (a53 * h) + k4 * (a54 * h);
    Vec k5 = f(t + c5 * h, y5);
    Vec y6 = res.y + k1 * (a61 * h) + k2 * (a62 * h) + k3 * (a63 * h) + k4 * (a64 * h) +
             k5 * (a65 * h);
    Vec k6 = f(t + h, y6);
    Vec ynew = res.y + k1 * (b1 * h) + k3 * (b3 * h) + k4 * (b4 * h) + k5 * (b5 * h) +
               k6 * (b6 * h);
    Vec k7 = f(t + h, ynew);
    Vec errv = k1 * (e1 * h) + k3 * (e3 * h) + k4 * (e4 * h) + k5 * (e5 * h) +
               k6 * (e6 * h) + k7 * (e7 * h);
    const double err = err_norm(errv, res.y, ynew, opt.rtol, opt.atol);
    if (!std::isfinite(err)) {
      res.step_failed = true;
      break;
    }
    if (err <= 1.0) {
      t += h;
      res.y = ynew;
      k1 = k7;
      ++res.steps;
      if (opt.observer && !opt.observer(t, res.y)) {
        res.stopped = true;
        break;
      }
      if ((t - t1) * dir >= 0) {
        res.completed = true;
        break;
      }
    }
    double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
    fac = std::clamp(fac, 0.2, 5.0);
    h *= fac;
    if (std::abs(h) > opt.h_max) h = opt.h_max * dir;
  }
  res.t = t;
  return res;
}

}  // namespace scatwave
