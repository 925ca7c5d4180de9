#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "scatwave/common.hpp"

namespace scatwave::geom {

enum class PerturbClass { ExactMinkowski, VeryShortRange, ShortRange };
enum class CapSide { PlusCap, MinusCap, Equatorial };

const char* perturb_class_name(PerturbClass c);
PerturbClass perturb_class_from_name(const std::string& s);

// One named analytic perturbation family. All families are radial (no angular
// dependence) and supported in the collar rho < rho_max via a smooth cutoff.
struct ProfileTerm {
  std::string family;
  double epsilon = 0.0;
  double center = 0.0;
  double width = 1.0;
  double rho_max = 0.5;
};

struct CollarPoint {
  double rho = 0.0;
  double v = 0.0;
  Eigen::VectorXd y;
};

// Additive deltas to the frame blocks at (rho, v):
//   normal: (drho/rho^2)^2 entry, mixed: drho/rho^2 . dv/rho entry,
//   dv2: (dv/rho)^2 entry, ang: multiplicative factor on the angular block,
//   which reads -((1-v)/2)(1+ang) * omega_ij(y).
struct BlockDeltas {
  double normal = 0, mixed = 0, dv2 = 0, ang = 0;
};

class MetricSpec {
public:
  int n = 4;
  PerturbClass perturbation_class = PerturbClass::ExactMinkowski;
  std::vector<ProfileTerm> radial_profile;

  // Frame matrix of the metric at (rho, v, y); frame drho/rho^2, dv/rho, dy_i/rho.
  Eigen::MatrixXd components(double rho, double v, const Eigen::VectorXd& y) const;
  // Same at the reference angle, where the round metric is the identity.
  Eigen::MatrixXd components_radial(double rho, double v) const;
  Eigen::MatrixXd components_radial_drho(double rho, double v) const;
  Eigen::MatrixXd components_radial_dv(double rho, double v) const;

  BlockDeltas deltas(double rho, double v) const;
  BlockDeltas deltas_drho(double rho, double v) const;
  BlockDeltas deltas_dv(double rho, double v) const;

  bool is_exact_minkowski() const { return radial_profile.empty(); }

  // Scalar multiplying the round metric in the angular block; finite at v = 1.
  double angular_coefficient(double rho, double v) const;

  static MetricSpec minkowski(int n);

  std::string to_json_string() const;
  static MetricSpec from_json_string(const std::string& text);
};

// Validates profile decay orders against the requested class by rho-sampling;
// throws Error(ClassViolation) naming the offending block.
MetricSpec perturbed_metric(const MetricSpec& base, std::vector<ProfileTerm> profile,
                            PerturbClass cls);

struct DualMetricEval {
  Eigen::MatrixXd ginv;         // frame dual components g^{..}
  Eigen::VectorXd logvol_grad;  // (1/2) d log|g| in (rho, v, y); rho entry valid for rho>0
  CollarPoint point;
  double det_frame = 0.0;
};

DualMetricEval dual_metric_at(const MetricSpec& spec, const CollarPoint& p);

struct CapMetricEval {
  Eigen::MatrixXd Kinv;  // dual boundary metric on (dv, dy)
  Eigen::MatrixXd kinv;  // dual of k = K/v
  CapSide side = CapSide::PlusCap;
  double v = 0.0;
};

CapMetricEval cap_metric(const MetricSpec& spec, CapSide side, double v,
                         const Eigen::VectorXd& y);

// Coefficients of rho^{-2} Box_g in the basis
//   (rho d_rho)^2, (rho d_rho) d_v, d_v^2, d_y d_y, rho d_rho, d_v
// evaluated at the reference angle of a radial spec.
struct BoxCoefficients {
  double c_rr = 0, c_rv = 0, c_vv = 0;
  double c_ang = 0;  // scalar on the round d_y-block (acts as c_ang * round Laplacian)
  double c_r = 0, c_v = 0;
};

BoxCoefficients box_coefficients(const MetricSpec& spec, const CollarPoint& p);

// Apply the box coefficient table to a radial test function given collar
// derivatives: u, (rho d_rho)u, d_v u, (rho d_rho)^2 u, (rho d_rho)d_v u, d_v^2 u.
double apply_box_radial(const BoxCoefficients& c, double du_r, double du_v, double d2u_rr,
                        double d2u_rv, double d2u_vv);

// Boundary data at rho = 0 used by the cap pencil; closed forms plus deltas.
struct BoundaryData {
  double gvv = 0, grv = 0, grr = 0;  // frame dual components at rho=0
  double c_ang = 0;                  // scalar of the dual angular block
  double dlogW = 0;                  // d/dv of log sqrt|det G0|
  double dgvv = 0, dgrv = 0;         // d/dv of gvv, grv
};

BoundaryData boundary_data(const MetricSpec& spec, double v);

// Round metric on S^dim in polar-chain coordinates and the angle where it is I.
Eigen::MatrixXd round_sphere_metric(int dim, const Eigen::VectorXd& y);
Eigen::VectorXd reference_angle(int dim);

int positive_eigenvalue_count(const Eigen::MatrixXd& G);

}  // namespace scatwave::geom
