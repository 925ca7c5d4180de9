#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <optional>
#include <vector>

#include "scatwave/common.hpp"
#include "scatwave/geometry.hpp"

namespace scatwave::res {

struct Strip {
  double im_min = -4.0;
  double im_max = 0.0;
  double re_max = 2.0;
  bool contains(Complex s) const {
    return s.imag() > im_min && s.imag() < im_max && std::abs(s.real()) < re_max;
  }
};

// Conjugated sigma-quadratic cap operator per spherical-harmonic mode,
//   Q(sigma) = A d2 + (B0 + sigma B1) d + (C0 + sigma C1 + sigma^2 C2),
// acting on psi with the full mode function phi = (1-v)^{ell/2} psi and the
// outgoing substitution u = v^{-i sigma} phi already performed. Coefficients
// are finite on [0,1]; the 1/v and 1/(1-v) singular parts cancel by the
// indicial structure, which is asserted at build time.
class CapModeOperator {
public:
  CapModeOperator(const geom::MetricSpec& spec, int ell);

  int n() const { return n_; }
  int ell() const { return ell_; }

  double A(double v) const;
  double B0(double v) const;
  Complex B1(double v) const;
  Complex C0(double v) const;
  Complex C1(double v) const;
  Complex C2(double v) const;

  // Taylor coefficients of the exact-Minkowski coefficient polynomials at the
  // two regular-singular endpoints (used by the shooting refinement). Valid
  // because admissible boundary profiles vanish near v = 0 and v = 1.
  struct EndpointSeries {
    std::vector<Complex> A, B0, B1, C0, C1, C2;  // Taylor in the local variable
  };
  const EndpointSeries& series_at_zero() const { return s0_; }
  const EndpointSeries& series_at_one() const { return s1_; }  // local variable t = 1-v

  // Pre-cancellation singular pieces of the conjugation at small v (test hook):
  // returns the two individually singular terms whose sum is regular.
  std::pair<Complex, Complex> conjugation_singular_parts(double v, Complex sigma) const;

private:
  int n_ = 4, ell_ = 0;
  double T_ = 0;  // round-sphere eigenvalue l(l+n-3)
  geom::MetricSpec spec_;
  bool minkowski_ = true;
  EndpointSeries s0_, s1_;
  double a_prime0_ = 4.0;

  struct Raw {  // unconjugated per-mode coefficients at v
    double a, b0;
    Complex b1;
    double d1;
    Complex c0, c1, c2;
    double c_ang_t;  // (1-v) * c_ang, smooth
  };
  Raw raw(double v) const;
  void build_series();
};

// Outgoing conjugation of the boundary-normal model operator
// 4 v d^2 + 4(1 + i sigma) d; the result is 4 v d^2 + 4(1 - i sigma) d with the
// 1/v terms cancelling identically.
double conjugated_model_second_order(double v);
Complex conjugated_model_first_order(Complex sigma);

struct QuadraticPencil {
  Eigen::MatrixXcd A0, A1, A2;
  Eigen::VectorXd nodes;  // v grid, descending from 1 to 0
  int n = 0, ell = 0, N = 0;
  int row_boundary = 0, row_center = 0;  // regularity rows (v=0 and v=1)
};

QuadraticPencil build_cap_pencil(const geom::MetricSpec& spec, int ell, int N);
QuadraticPencil build_cap_pencil(const CapModeOperator& op, int N);

// Evaluate Q(sigma) applied to nodal values (for manufactured-solution tests).
Eigen::VectorXcd apply_pencil(const QuadraticPencil& p, Complex sigma,
                              const Eigen::VectorXcd& values);

struct Resonance {
  Complex sigma;
  double residual = 0;       // validation-grid pencil smallest singular value (relative)
  int multiplicity = 1;
  int ell = 0;
  double threshold_exponent = 0;  // 1/2 + Im sigma
  bool near_integer = false;      // within flag radius of -i k, k positive integer
};

struct ResonanceSet {
  std::vector<Resonance> resonances;
  // integer-point states excluded from the resonance list (boundary-supported
  // family; they do not move the radiation-field tail)
  std::vector<Complex> integer_states;
  Strip strip;
  int N = 0;
};

struct SolveOptions {
  double residual_tol = 1e-8;
  double drift_tol = 1e-6;
  double coeff_decay_tol = 1e-3;
  double integer_state_radius = 1e-5;
  double near_integer_flag_radius = 0.15;
  int validation_extra = 32;
  bool polish = true;
};

// Full solve for one mode: companion QZ, filters, shooting polish.
ResonanceSet solve_pencil(const geom::MetricSpec& spec, int ell, int N, const Strip& strip,
                          const SolveOptions& opt = {});
// Union over a mode range, duplicates merged.
ResonanceSet solve_modes(const geom::MetricSpec& spec, int ell_min, int ell_max, int N,
                         const Strip& strip, const SolveOptions& opt = {});

ResonanceSet exact_hyperbolic_resonances(int n, const Strip& strip);

// Raw companion eigenvalues of the linearized 2N problem (diagnostic).
std::vector<Complex> pencil_eigenvalues(const QuadraticPencil& p);

// Smallest singular value of A0 + s A1 + s^2 A2, relative to the pencil scale.
double pencil_smallest_singular(const QuadraticPencil& p, Complex s);

// Wronskian-matching refinement of a candidate near s0; returns refined root
// or nullopt if Newton fails to converge.
std::optional<Complex> shooting_refine(const CapModeOperator& op, Complex s0,
                                       double tol = 1e-12);

// Normalized matching Wronskian whose zeros are the resonances (diagnostic).
Complex shooting_wronskian(const CapModeOperator& op, Complex sigma);

struct BeynResult {
  int count = 0;
  std::vector<Complex> locations;
  std::vector<double> residuals;
  bool inconclusive = false;
};

BeynResult beyn_contour(const QuadraticPencil& p, Complex center, double radius,
                        int quad_nodes = 48, int probe_cols = 16, std::uint64_t seed = 7);

struct ScanBranch {
  std::vector<double> eps;
  std::vector<Complex> sigma;
  bool near_integer = false;
  double drift_bound = 0;  // fitted C in |sigma(eps)-sigma(0)| <= C eps
};

struct ScanTable {
  std::vector<double> eps_grid;
  std::vector<ResonanceSet> sets;
  std::vector<ScanBranch> branches;
};

ScanTable perturbation_scan(const std::function<geom::MetricSpec(double)>& family,
                            const std::vector<double>& eps_grid, int ell_min, int ell_max,
                            int N, const Strip& strip, const SolveOptions& opt = {});

}  // namespace scatwave::res
