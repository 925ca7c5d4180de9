#pragma once

#include <Eigen/Dense>
#include <vector>

#include "scatwave/common.hpp"
#include "scatwave/geometry.hpp"

namespace scatwave::flow {

// Point of the b-cotangent bundle in collar coordinates; fiber frame
// xi drho/rho + gamma dv + eta dy.
struct BCotangentPoint {
  geom::CollarPoint base;
  double xi = 0;
  double gamma = 0;
  Eigen::VectorXd eta;
};

// b-principal symbol at a point (quadratic form of the frame dual metric).
double b_symbol(const geom::MetricSpec& spec, const BCotangentPoint& pt);

// b-Hamilton field in (rho, v, y, xi, gamma, eta) order, 2n components.
Eigen::VectorXd hamilton_field(const geom::MetricSpec& spec, const BCotangentPoint& pt);

enum class TerminalClass { ReachedSPlus, ReachedSMinus, EscapedCollar, BudgetExhausted };

const char* terminal_class_name(TerminalClass c);

struct TrajectorySample {
  double param = 0;
  double rho = 0, v = 0, mu = 0;
  Eigen::VectorXd y;
  double xi = 0, gamma_mu = 0;
  Eigen::VectorXd eta;
  double lambda = 0;
};

struct FlowTrajectory {
  std::vector<TrajectorySample> samples;
  TerminalClass terminal_class = TerminalClass::BudgetExhausted;
  double lambda_drift = 0;   // max |lambda - lambda0| / fiber scale
  double end_displacement = 0;
};

struct FlowBudget {
  double param_max = 60.0;
  long max_steps = 200000;
  double terminal_radius = 1e-3;  // delta for dist((v, xi/g, eta/g), 0)
  double rho_max = 0.9;
  double drift_tol = 1e-4;  // integrator-failure threshold on lambda drift
};

// Unfolded boundary-sphere angle: v = cos(mu); S+ at mu = pi/2, S- at 3 pi/2.
// A start with |v|<1 on the north sheet has mu = acos(v); the south sheet is
// mu = 2 pi - acos(v).
struct MuState {
  double rho = 0, mu = 0;
  Eigen::VectorXd y;
  double xi = 0, gamma_mu = 0;
  Eigen::VectorXd eta;
};

MuState to_mu_state(const BCotangentPoint& pt, bool south_sheet = false);

FlowTrajectory integrate_bicharacteristic(const geom::MetricSpec& spec, const MuState& start,
                                          const FlowBudget& budget, bool forward,
                                          bool record_samples = true);

// Solve the characteristic-set condition for gamma_mu given the remaining
// state; returns the real roots (0, 1 or 2 of them).
std::vector<double> characteristic_gamma_mu(const geom::MetricSpec& spec, double rho,
                                            double mu, const Eigen::VectorXd& y, double xi,
                                            const Eigen::VectorXd& eta);

struct RadialLinearization {
  Eigen::VectorXd eigenvalues;  // sorted ascending
  Eigen::MatrixXd eigenvectors;
  double scale = 0;  // |most negative eigenvalue| / 8 (proportionality factor)
};

// Linearization of the 1/gamma-rescaled field at the radial set over the
// given boundary angle; gamma_positive selects the Lambda component.
RadialLinearization radial_linearization(const geom::MetricSpec& spec,
                                         const Eigen::VectorXd& y0, bool gamma_positive,
                                         double fd_step = 1e-5);

struct NontrappingReport {
  bool pass = false;
  int samples = 0;
  int failed = 0;
  double worst_drift = 0;
  bool vacuous = false;
  std::vector<MuState> failing_starts;
};

NontrappingReport check_nontrapping(const geom::MetricSpec& spec, int sample_count,
                                    std::uint64_t seed, const FlowBudget& budget = {});

// Sample a characteristic start over the equatorial region (and the collar
// interior for part of the strata); used by check_nontrapping and the CLI.
bool sample_characteristic_start(const geom::MetricSpec& spec, Rng& rng, MuState& out,
                                 bool boundary_only = false);

}  // namespace scatwave::flow
