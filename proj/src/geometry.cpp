#include "scatwave/geometry.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>

namespace scatwave::geom {

const char* perturb_class_name(PerturbClass c) {
  switch (c) {
    case PerturbClass::ExactMinkowski: return "exact_minkowski";
    case PerturbClass::VeryShortRange: return "normally_very_short_range";
    case PerturbClass::ShortRange: return "normally_short_range";
  }
  return "exact_minkowski";
}

PerturbClass perturb_class_from_name(const std::string& s) {
  if (s == "exact_minkowski") return PerturbClass::ExactMinkowski;
  if (s == "normally_very_short_range") return PerturbClass::VeryShortRange;
  if (s == "normally_short_range") return PerturbClass::ShortRange;
  throw Error(ErrorCode::ConfigError, "unknown perturbation class: " + s);
}

namespace {

struct TermEval {
  double val = 0, drho = 0, dv = 0;
};

// Evaluate one profile family with its collar cutoff and analytic partials.
TermEval eval_term(const ProfileTerm& t, double rho, double v) {
  TermEval e;
  const double cut = smooth_cut(2.0 * rho / t.rho_max - 1.0);
  const double dcut = smooth_cut_dx(2.0 * rho / t.rho_max - 1.0) * 2.0 / t.rho_max;
  const double u = (v - t.center) / t.width;
  double shape, dshape;
  if (t.family == "normal_gauss") {
    shape = std::exp(-u * u);
    dshape = -2.0 * u * shape / t.width;
  } else {
    shape = poly_bump(u);
    dshape = poly_bump_du(u) / t.width;
  }
  double radial, dradial;  // rho-power of the family
  if (t.family == "normal_gauss" || t.family == "normal_bump") {
    radial = rho * rho;
    dradial = 2.0 * rho;
  } else if (t.family == "mixed_bump" || t.family == "dv2_rho_bump" ||
             t.family == "angular_rho_bump") {
    radial = rho;
    dradial = 1.0;
  } else if (t.family == "dv2_bump" || t.family == "angular_bump" || t.family == "o1_normal") {
    radial = 1.0;
    dradial = 0.0;
  } else {
    throw Error(ErrorCode::ConfigError, "unknown profile family: " + t.family);
  }
  e.val = t.epsilon * radial * shape * cut;
  e.drho = t.epsilon * (dradial * cut + radial * dcut) * shape;
  e.dv = t.epsilon * radial * dshape * cut;
  return e;
}

void add_term(BlockDeltas& d, const ProfileTerm& t, const TermEval& e) {
  if (t.family == "normal_gauss" || t.family == "normal_bump" || t.family == "o1_normal")
    d.normal += e.val;
  else if (t.family == "mixed_bump")
    d.mixed += e.val;
  else if (t.family == "dv2_bump" || t.family == "dv2_rho_bump")
    d.dv2 += e.val;
  else
    d.ang += e.val;
}

const char* block_of(const ProfileTerm& t) {
  if (t.family == "normal_gauss" || t.family == "normal_bump" || t.family == "o1_normal")
    return "normal";
  if (t.family == "mixed_bump") return "mixed(rho,v)";
  if (t.family == "dv2_bump" || t.family == "dv2_rho_bump") return "tangential(v,v)";
  return "angular";
}

}  // namespace

BlockDeltas MetricSpec::deltas(double rho, double v) const {
  BlockDeltas d;
  for (const auto& t : radial_profile) add_term(d, t, eval_term(t, rho, v));
  return d;
}

BlockDeltas MetricSpec::deltas_drho(double rho, double v) const {
  BlockDeltas d;
  for (const auto& t : radial_profile) {
    TermEval e = eval_term(t, rho, v);
    e.val = e.drho;
    add_term(d, t, e);
  }
  return d;
}

BlockDeltas MetricSpec::deltas_dv(double rho, double v) const {
  BlockDeltas d;
  for (const auto& t : radial_profile) {
    TermEval e = eval_term(t, rho, v);
    e.val = e.dv;
    add_term(d, t, e);
  }
  return d;
}

Eigen::MatrixXd round_sphere_metric(int dim, const Eigen::VectorXd& y) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(dim, dim);
  double prod = 1.0;
  for (int i = 0; i < dim; ++i) {
    w(i, i) = prod;
    if (i + 1 < dim) {
      const double s = std::sin(y(i));
      prod *= s * s;
    }
  }
  return w;
}

Eigen::VectorXd reference_angle(int dim) {
  return Eigen::VectorXd::Constant(dim, 1.5707963267948966);
}

Eigen::MatrixXd MetricSpec::components(double rho, double v, const Eigen::VectorXd& y) const {
  if (std::abs(v) >= 1.0)
    throw Error(ErrorCode::OutOfRegion, "components: |v| must be < 1 (chart degeneracy)");
  const int dy = n - 2;
  if (y.size() != dy) throw Error(ErrorCode::PreconditionViolation, "components: bad y size");
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, n);
  const BlockDeltas d = deltas(rho, v);
  G(0, 0) = v + d.normal;
  G(0, 1) = G(1, 0) = -0.5 + d.mixed;
  G(1, 1) = -v / (4.0 * (1.0 - v * v)) + d.dv2;
  const Eigen::MatrixXd w = round_sphere_metric(dy, y);
  G.block(2, 2, dy, dy) = -0.5 * (1.0 - v) * (1.0 + d.ang) * w;
  return G;
}

Eigen::MatrixXd MetricSpec::components_radial(double rho, double v) const {
  return components(rho, v, reference_angle(n - 2));
}

Eigen::MatrixXd MetricSpec::components_radial_drho(double rho, double v) const {
  const int dy = n - 2;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, n);
  const BlockDeltas d = deltas_drho(rho, v);
  G(0, 0) = d.normal;
  G(0, 1) = G(1, 0) = d.mixed;
  G(1, 1) = d.dv2;
  for (int i = 0; i < dy; ++i) G(2 + i, 2 + i) = -0.5 * (1.0 - v) * d.ang;
  return G;
}

Eigen::MatrixXd MetricSpec::components_radial_dv(double rho, double v) const {
  const int dy = n - 2;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, n);
  const BlockDeltas d = deltas(rho, v);
  const BlockDeltas dd = deltas_dv(rho, v);
  const double s = 1.0 - v * v;
  G(0, 0) = 1.0 + dd.normal;
  G(0, 1) = G(1, 0) = dd.mixed;
  // d/dv of -v/(4(1-v^2)) = -(1+v^2)/(4(1-v^2)^2)
  G(1, 1) = -(1.0 + v * v) / (4.0 * s * s) + dd.dv2;
  for (int i = 0; i < dy; ++i)
    G(2 + i, 2 + i) = 0.5 * (1.0 + d.ang) - 0.5 * (1.0 - v) * dd.ang;
  return G;
}

double MetricSpec::angular_coefficient(double rho, double v) const {
  return -0.5 * (1.0 - v) * (1.0 + deltas(rho, v).ang);
}

MetricSpec MetricSpec::minkowski(int n) {
  if (n < 2) throw Error(ErrorCode::InvalidDimension, "spacetime dimension must be >= 2");
  MetricSpec s;
  s.n = n;
  s.perturbation_class = PerturbClass::ExactMinkowski;
  return s;
}

MetricSpec perturbed_metric(const MetricSpec& base, std::vector<ProfileTerm> profile,
                            PerturbClass cls) {
  MetricSpec s = base;
  s.perturbation_class = cls;
  for (auto& t : profile) s.radial_profile.push_back(t);

  // Sampled decay-order check per block. Orders are measured on rho-halving
  // in the pure-cutoff region rho <= rho_max/2.
  const double required_normal = 2.0;
  const double required_mixed = 1.0;
  const double required_tangential = (cls == PerturbClass::VeryShortRange) ? 1.0 : 0.0;
  for (const auto& t : profile) {
    if (t.epsilon == 0.0) continue;
    double worst = 1e9;
    for (double v : {t.center - 0.4 * t.width, t.center, t.center + 0.4 * t.width}) {
      if (std::abs(v) >= 0.95) continue;
      const double r1 = 0.25 * t.rho_max, r2 = 0.125 * t.rho_max;
      MetricSpec probe = base;
      probe.radial_profile = {t};
      const BlockDeltas d1 = probe.deltas(r1, v);
      const BlockDeltas d2 = probe.deltas(r2, v);
      const double a1 = std::abs(d1.normal) + std::abs(d1.mixed) + std::abs(d1.dv2) +
                        std::abs(d1.ang);
      const double a2 = std::abs(d2.normal) + std::abs(d2.mixed) + std::abs(d2.dv2) +
                        std::abs(d2.ang);
      if (a1 < 1e-300 || a2 < 1e-300) continue;
      worst = std::min(worst, std::log2(a1 / a2));
    }
    if (worst > 1e8) continue;  // profile vanished on all samples
    const std::string block = block_of(t);
    double required = required_tangential;
    if (block == "normal") required = required_normal;
    if (block == "mixed(rho,v)") required = required_mixed;
    if (cls == PerturbClass::ExactMinkowski)
      throw Error(ErrorCode::ClassViolation,
                  "nonzero profile with class exact_minkowski in block " + block);
    if (worst < required - 0.1)
      throw Error(ErrorCode::ClassViolation,
                  "profile decay order " + std::to_string(worst) + " in block " + block +
                      " violates class " + perturb_class_name(cls));
  }
  return s;
}

int positive_eigenvalue_count(const Eigen::MatrixXd& G) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  int pos = 0;
  for (int i = 0; i < G.rows(); ++i)
    if (es.eigenvalues()(i) > 0) ++pos;
  return pos;
}

DualMetricEval dual_metric_at(const MetricSpec& spec, const CollarPoint& p) {
  DualMetricEval out;
  out.point = p;
  const Eigen::MatrixXd G = spec.components(p.rho, p.v, p.y);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(G);
  out.det_frame = lu.determinant();
  const double scale = G.cwiseAbs().maxCoeff();
  if (std::abs(out.det_frame) < 1e-12 * std::pow(std::max(scale, 1e-30), spec.n))
    throw Error(ErrorCode::DegenerateMetric, "frame matrix numerically singular");
  out.ginv = lu.inverse();

  // 1/2 d log|g|, |g| = rho^{-2(n+1)} |G|; analytic in rho and v, finite
  // differences in y (radial specs are y-independent up to the round factor).
  out.logvol_grad = Eigen::VectorXd::Zero(spec.n);
  const Eigen::MatrixXd dGr = spec.components_radial_drho(p.rho, p.v);
  const Eigen::MatrixXd dGv = spec.components_radial_dv(p.rho, p.v);
  const double Lr = 0.5 * (out.ginv * dGr).trace();
  const double Lv = 0.5 * (out.ginv * dGv).trace();
  out.logvol_grad(0) = (p.rho > 0 ? -(spec.n + 1) / p.rho : 0.0) + Lr;
  out.logvol_grad(1) = Lv;
  for (int i = 0; i < spec.n - 2; ++i) {
    const double h = 1e-6;
    Eigen::VectorXd yp = p.y, ym = p.y;
    yp(i) += h;
    ym(i) -= h;
    const double lp = std::log(std::abs(spec.components(p.rho, p.v, yp).determinant()));
    const double lm = std::log(std::abs(spec.components(p.rho, p.v, ym).determinant()));
    out.logvol_grad(2 + i) = 0.25 * (lp - lm) / h;
  }
  return out;
}

CapMetricEval cap_metric(const MetricSpec& spec, CapSide side, double v,
                         const Eigen::VectorXd& y) {
  if ((side == CapSide::PlusCap || side == CapSide::MinusCap) && v <= 0.0)
    throw Error(ErrorCode::OutOfRegion, "cap evaluation requires v > 0");
  if (side == CapSide::Equatorial && v >= 0.0)
    throw Error(ErrorCode::OutOfRegion, "equatorial evaluation requires v < 0");
  CollarPoint p;
  p.rho = 0.0;
  p.v = v;
  p.y = y;
  const DualMetricEval d = dual_metric_at(spec, p);
  CapMetricEval out;
  out.side = side;
  out.v = v;
  const int m = spec.n - 1;
  out.Kinv = -d.ginv.block(1, 1, m, m);
  out.kinv = v * out.Kinv;
  return out;
}

BoxCoefficients box_coefficients(const MetricSpec& spec, const CollarPoint& p) {
  BoxCoefficients c;
  const int n = spec.n;
  const double rho = p.rho, v = p.v;

  Eigen::Matrix2d S, dSr, dSv;
  {
    const Eigen::MatrixXd G = spec.components_radial(rho, v);
    const Eigen::MatrixXd Gr = spec.components_radial_drho(rho, v);
    const Eigen::MatrixXd Gv = spec.components_radial_dv(rho, v);
    S = G.topLeftCorner<2, 2>();
    dSr = Gr.topLeftCorner<2, 2>();
    dSv = Gv.topLeftCorner<2, 2>();
  }
  const double det = S.determinant();
  if (std::abs(det) < 1e-14)
    throw Error(ErrorCode::DegenerateMetric, "degenerate (rho,v) block");
  Eigen::Matrix2d Sinv;
  Sinv << S(1, 1), -S(0, 1), -S(0, 1), S(0, 0);
  Sinv /= det;
  const Eigen::Matrix2d dSinv_r = -Sinv * dSr * Sinv;
  const Eigen::Matrix2d dSinv_v = -Sinv * dSv * Sinv;

  const double grr = Sinv(0, 0), grv = Sinv(0, 1), gvv = Sinv(1, 1);
  const double dgrr_r = dSinv_r(0, 0), dgrv_r = dSinv_r(0, 1);
  const double dgrv_v = dSinv_v(0, 1), dgvv_v = dSinv_v(1, 1);

  const double a_ang = spec.angular_coefficient(rho, v);
  const BlockDeltas d = spec.deltas(rho, v);
  const BlockDeltas ddr = spec.deltas_drho(rho, v);
  const BlockDeltas ddv = spec.deltas_dv(rho, v);
  const double da_r = -0.5 * (1.0 - v) * ddr.ang;
  const double da_v = 0.5 * (1.0 + d.ang) - 0.5 * (1.0 - v) * ddv.ang;

  const double Lr = 0.5 * ((Sinv * dSr).trace() + (n - 2) * da_r / a_ang);
  const double Lv = 0.5 * ((Sinv * dSv).trace() + (n - 2) * da_v / a_ang);

  c.c_rr = grr;
  c.c_rv = 2.0 * grv;
  c.c_vv = gvv;
  c.c_ang = 1.0 / a_ang;
  c.c_r = (2 - n) * grr + rho * dgrr_r + dgrv_v + rho * grr * Lr + grv * Lv;
  c.c_v = (2 - n) * grv + rho * dgrv_r + dgvv_v + rho * grv * Lr + gvv * Lv;
  return c;
}

double apply_box_radial(const BoxCoefficients& c, double du_r, double du_v, double d2u_rr,
                        double d2u_rv, double d2u_vv) {
  return c.c_rr * d2u_rr + c.c_rv * d2u_rv + c.c_vv * d2u_vv + c.c_r * du_r + c.c_v * du_v;
}

BoundaryData boundary_data(const MetricSpec& spec, double v) {
  BoundaryData b;
  const int n = spec.n;
  Eigen::Matrix2d S, dSv;
  {
    const Eigen::MatrixXd G = spec.components_radial(0.0, v);
    const Eigen::MatrixXd Gv = spec.components_radial_dv(0.0, v);
    S = G.topLeftCorner<2, 2>();
    dSv = Gv.topLeftCorner<2, 2>();
  }
  const double det = S.determinant();
  Eigen::Matrix2d Sinv;
  Sinv << S(1, 1), -S(0, 1), -S(0, 1), S(0, 0);
  Sinv /= det;
  const Eigen::Matrix2d dSinv = -Sinv * dSv * Sinv;
  b.grr = Sinv(0, 0);
  b.grv = Sinv(0, 1);
  b.gvv = Sinv(1, 1);
  b.dgrv = dSinv(0, 1);
  b.dgvv = dSinv(1, 1);
  const double a_ang = spec.angular_coefficient(0.0, v);
  b.c_ang = 1.0 / a_ang;
  const BlockDeltas d = spec.deltas(0.0, v);
  const BlockDeltas ddv = spec.deltas_dv(0.0, v);
  const double da_v = 0.5 * (1.0 + d.ang) - 0.5 * (1.0 - v) * ddv.ang;
  b.dlogW = 0.5 * ((Sinv * dSv).trace() + (n - 2) * da_v / a_ang);
  return b;
}

std::string MetricSpec::to_json_string() const {
  nlohmann::json j;
  j["n"] = n;
  j["class"] = perturb_class_name(perturbation_class);
  j["profile"] = nlohmann::json::array();
  for (const auto& t : radial_profile) {
    j["profile"].push_back({{"family", t.family},
                            {"epsilon", t.epsilon},
                            {"center", t.center},
                            {"width", t.width},
                            {"rho_max", t.rho_max}});
  }
  return j.dump(2);
}

MetricSpec MetricSpec::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MetricSpec base = MetricSpec::minkowski(j.at("n").get<int>());
  std::vector<ProfileTerm> profile;
  if (j.contains("profile")) {
    for (const auto& e : j["profile"]) {
      ProfileTerm t;
      t.family = e.at("family").get<std::string>();
      t.epsilon = e.value("epsilon", 0.0);
      t.center = e.value("center", 0.0);
      t.width = e.value("width", 1.0);
      t.rho_max = e.value("rho_max", 0.5);
      profile.push_back(t);
    }
  }
  const PerturbClass cls = perturb_class_from_name(j.value("class", "exact_minkowski"));
  if (profile.empty()) {
    base.perturbation_class = cls;
    return base;
  }
  return perturbed_metric(base, profile, cls);
}

}  // namespace scatwave::geom
