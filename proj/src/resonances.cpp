#include "scatwave/resonances.hpp"

#include <algorithm>
#include <cmath>

#include "scatwave/ode45.hpp"

using Complexd = std::complex<double>;

extern "C" void zggev_(const char* jobvl, const char* jobvr, const int* n, Complexd* a,
                       const int* lda, Complexd* b, const int* ldb, Complexd* alpha,
                       Complexd* beta, Complexd* vl, const int* ldvl, Complexd* vr,
                       const int* ldvr, Complexd* work, const int* lwork, double* rwork,
                       int* info);

namespace scatwave::res {

namespace {

using CPoly = std::vector<Complex>;

CPoly padd(const CPoly& a, const CPoly& b) {
  CPoly r(std::max(a.size(), b.size()), 0.0);
  for (size_t i = 0; i < a.size(); ++i) r[i] += a[i];
  for (size_t i = 0; i < b.size(); ++i) r[i] += b[i];
  return r;
}

CPoly pscale(const CPoly& a, Complex s) {
  CPoly r = a;
  for (auto& c : r) c *= s;
  return r;
}

// exact division by (1 - v); remainder (= p(1)) must vanish
CPoly pdiv_one_minus_v(const CPoly& p, double tol = 1e-9) {
  CPoly q(p.size(), 0.0);
  Complex carry = 0.0;
  for (size_t k = 0; k < p.size(); ++k) {
    carry = p[k] + carry;
    q[k] = carry;
  }
  if (std::abs(q.back()) > tol)
    throw Error(ErrorCode::ConjugationError, "cap-center cancellation failed in series");
  q.pop_back();
  return q;
}

CPoly pcompose_one_minus_t(const CPoly& p) {
  // q(t) = p(1 - t)
  CPoly q(p.size(), 0.0);
  for (size_t k = 0; k < p.size(); ++k) {
    // (1-t)^k expansion
    double binom = 1.0;
    for (size_t j = 0; j <= k; ++j) {
      q[j] += p[k] * binom * ((j % 2) ? -1.0 : 1.0);
      binom = binom * double(k - j) / double(j + 1);
    }
  }
  return q;
}

CPoly from_real(std::initializer_list<double> c) {
  CPoly r;
  for (double x : c) r.push_back(x);
  return r;
}

Eigen::MatrixXd cheb_diff_matrix(int N, Eigen::VectorXd& x) {
  // Lobatto nodes on [-1,1], x(0)=1 descending; Trefethen's construction
  x.resize(N);
  for (int i = 0; i < N; ++i) x(i) = std::cos(M_PI * i / (N - 1));
  Eigen::VectorXd c = Eigen::VectorXd::Ones(N);
  c(0) = 2;
  c(N - 1) = 2;
  for (int i = 0; i < N; ++i)
    if (i % 2) c(i) = -c(i);
  Eigen::MatrixXd D(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      if (i != j)
        D(i, j) = (c(i) / c(j)) / (x(i) - x(j));
      else
        D(i, j) = 0;
    }
  for (int i = 0; i < N; ++i) D(i, i) = -D.row(i).sum();
  return D;
}

constexpr int kSeriesOrder = 14;

}  // namespace

CapModeOperator::CapModeOperator(const geom::MetricSpec& spec, int ell)
    : n_(spec.n), ell_(ell), spec_(spec) {
  if (spec.n < 3)
    throw Error(ErrorCode::InvalidDimension, "cap operator needs spacetime dimension >= 3");
  if (ell < 0) throw Error(ErrorCode::PreconditionViolation, "ell must be >= 0");
  T_ = double(ell) * (ell + spec.n - 3);
  minkowski_ = spec.is_exact_minkowski();

  // Boundary-active profiles must vanish near the endpoints: the endpoint
  // Frobenius series and the center/boundary regularity rows use the exact
  // closed forms there.
  for (const auto& t : spec.radial_profile) {
    geom::MetricSpec probe = geom::MetricSpec::minkowski(spec.n);
    probe.radial_profile = {t};
    for (double v : {0.0, 0.02, 0.95, 0.99}) {
      const geom::BlockDeltas d = probe.deltas(0.0, v);
      if (std::abs(d.normal) + std::abs(d.mixed) + std::abs(d.dv2) + std::abs(d.ang) > 1e-14)
        throw Error(ErrorCode::ConjugationError,
                    "boundary profile must vanish near v=0 and v=1 (offending v=" +
                        std::to_string(v) + ")");
    }
  }

  const geom::BoundaryData b0 = geom::boundary_data(spec_, 0.0);
  a_prime0_ = -b0.dgvv;
  // indicial structure: b(0,sigma) = (1 + i sigma) a'(0) needs grv(0) = dgvv(0)/2
  if (std::abs(-2.0 * b0.grv - a_prime0_) > 1e-10 * (1.0 + std::abs(a_prime0_)))
    throw Error(ErrorCode::ConjugationError, "boundary indicial condition violated at v=0");
  build_series();
}

CapModeOperator::Raw CapModeOperator::raw(double v) const {
  Raw r;
  if (v > 1.0 - 1e-12) {
    // closed-form limits at the cap center (metric is exactly Minkowski there)
    const double m = n_ - 2;
    r.a = 0.0;
    r.b0 = -4.0 - 4.0 * m;
    r.b1 = Complex(0, 0);
    r.d1 = 2.0 + 2.0 * m;
    r.c0 = Complex(0.25 * m * m - 0.5 * m * r.d1, 0);
    r.c1 = Complex(0, -r.d1);
    r.c2 = 1.0;
    r.c_ang_t = -2.0;
    return r;
  }
  const geom::BoundaryData b = geom::boundary_data(spec_, v);
  const double m = n_ - 2;
  r.a = -b.gvv;
  r.b0 = -(b.dgvv + b.gvv * b.dlogW);
  r.b1 = Complex(0, -2.0) * b.grv;
  r.d1 = b.dgrv + b.grv * b.dlogW;
  r.c_ang_t = (1.0 - v) * b.c_ang;
  r.c0 = Complex(0.25 * m * m * b.grr - 0.5 * m * r.d1 + T_ * b.c_ang, 0);
  r.c1 = Complex(0, -r.d1);
  r.c2 = b.grr;
  return r;
}

double CapModeOperator::A(double v) const { return raw(v).a; }

namespace {
template <class F, class V>
V quotient_at(F&& f, double v, V f_at_0) {
  if (v > 1e-7) return (f(v) - f_at_0) / v;
  // Richardson from v = 1e-3, 2e-3
  const double h = 1e-3;
  auto q1 = (f(h) - f_at_0) / h;
  auto q2 = (f(2 * h) - f_at_0) / (2 * h);
  return 2.0 * q1 - q2;
}
}  // namespace

double CapModeOperator::B0(double v) const {
  const Raw r = raw(v);
  if (ell_ == 0) return r.b0;
  // subtract ell * A/(1-v)
  double aOt;
  if (v < 1.0 - 1e-7)
    aOt = r.a / (1.0 - v);
  else
    aOt = 8.0;  // -A'(1), exact Minkowski near the center
  return r.b0 - ell_ * aOt;
}

Complex CapModeOperator::B1(double v) const {
  const Raw r = raw(v);
  double aOv;
  if (v > 1e-12)
    aOv = r.a / v;
  else
    aOv = a_prime0_;
  return r.b1 - Complex(0, 2.0) * aOv;
}

Complex CapModeOperator::C0(double v) const {
  const Raw r = raw(v);
  const double t = 1.0 - v;
  // C0_reg excludes the angular 1/(1-v) part; the closed-form limit at the
  // cap center is already regular (it has no angular term).
  const Complex c0_reg = (v > 1.0 - 1e-12) ? r.c0 : r.c0 - T_ * r.c_ang_t / t;
  if (ell_ == 0) return r.c0;
  auto S0 = [this](double vv) {
    const Raw rr = raw(vv);
    const double aOt = (vv < 1.0 - 1e-7) ? rr.a / (1.0 - vv) : 8.0;
    return T_ * rr.c_ang_t - 0.5 * ell_ * rr.b0 +
           0.5 * ell_ * (0.5 * ell_ - 1.0) * aOt;
  };
  const double S0_1 = S0(1.0);
  if (std::abs(S0_1) > 1e-6 * (1.0 + T_))
    throw Error(ErrorCode::ConjugationError,
                "cap-center cancellation failure at v=1 (S0 residue)");
  double SOt;
  if (v < 1.0 - 1e-7)
    SOt = (S0(v) - S0_1) / t;
  else {
    const double h = 1e-3;
    const double q1 = (S0(1.0 - h) - S0_1) / h;
    const double q2 = (S0(1.0 - 2 * h) - S0_1) / (2 * h);
    SOt = 2.0 * q1 - q2;
  }
  return c0_reg + SOt;
}

Complex CapModeOperator::C1(double v) const {
  auto b0f = [this](double vv) { return raw(vv).b0; };
  auto aOvf = [this](double vv) {
    const double a = raw(vv).a;
    return vv > 1e-12 ? a / vv : a_prime0_;
  };
  const Raw r = raw(v);
  const double Db0 = quotient_at(b0f, v, raw(0.0).b0);
  const double Da = quotient_at(aOvf, v, a_prime0_);
  Complex c1 = r.c1 - Complex(0, 1) * Db0 + Complex(0, 1) * Da;
  if (ell_ == 0) return c1;
  // + S1/(1-v) with S1 = -(ell/2) B1psi
  auto S1 = [this](double vv) { return -0.5 * double(ell_) * B1(vv); };
  const Complex S1_1 = S1(1.0);
  if (std::abs(S1_1) > 1e-8 * (1.0 + double(ell_)))
    throw Error(ErrorCode::ConjugationError, "sigma-linear center cancellation failure");
  const double t = 1.0 - v;
  Complex SOt;
  if (v < 1.0 - 1e-7)
    SOt = (S1(v) - S1_1) / t;
  else {
    const double h = 1e-3;
    const Complex q1 = (S1(1.0 - h) - S1_1) / h;
    const Complex q2 = (S1(1.0 - 2 * h) - S1_1) / (2 * h);
    SOt = 2.0 * q1 - q2;
  }
  return c1 + SOt;
}

Complex CapModeOperator::C2(double v) const {
  auto b1f = [this](double vv) { return raw(vv).b1; };
  auto aOvf = [this](double vv) {
    const double a = raw(vv).a;
    return Complex(vv > 1e-12 ? a / vv : a_prime0_, 0);
  };
  const Raw r = raw(v);
  const Complex Db1 = quotient_at(b1f, v, raw(0.0).b1);
  const Complex Da = quotient_at(aOvf, v, Complex(a_prime0_, 0));
  return r.c2 - Complex(0, 1) * Db1 - Da;
}

std::pair<Complex, Complex> CapModeOperator::conjugation_singular_parts(double v,
                                                                        Complex sigma) const {
  // The two individually 1/v-singular pieces of the zeroth-order conjugated
  // coefficient; their sum is finite by the indicial structure.
  const Raw r0 = raw(0.0);
  const Complex b_at0 = r0.b0 + sigma * r0.b1;
  const Complex term1 = -Complex(0, 1) * sigma * b_at0 / v;
  const Complex term2 = (-sigma * sigma + Complex(0, 1) * sigma) * a_prime0_ / v;
  return {term1, term2};
}

void CapModeOperator::build_series() {
  const double m = n_ - 2, l = ell_;
  // conjugated, ell-factored coefficient polynomials (exact Minkowski)
  CPoly A = from_real({0, 4, 0, -4});
  CPoly B0 = from_real({4, -2 * m - 4 * l, -(8 + 2 * m) - 4 * l});
  CPoly B1 = pscale(from_real({-1, 0, 1}), Complex(0, 4));
  CPoly C0 = from_real({-m * m / 2, m * m / 4 - m - m * m / 2});
  if (ell_ > 0) {
    CPoly S0 = padd(from_real({-2 * T_}),
                    padd(pscale(from_real({4, -2 * m, -(8 + 2 * m)}), -0.5 * l),
                         pscale(from_real({0, 4, 4}), 0.5 * l * (0.5 * l - 1))));
    C0 = padd(C0, pdiv_one_minus_v(S0));
  }
  CPoly C1 = pscale(from_real({m, 2 + m}), Complex(0, 1));
  if (ell_ > 0) C1 = padd(C1, pscale(from_real({1, 1}), Complex(0, 2.0 * l)));
  CPoly C2 = from_real({0, 1});

  auto pad = [](CPoly p) {
    p.resize(kSeriesOrder + 3, 0.0);
    return p;
  };
  s0_.A = pad(A);
  s0_.B0 = pad(B0);
  s0_.B1 = pad(B1);
  s0_.C0 = pad(C0);
  s0_.C1 = pad(C1);
  s0_.C2 = pad(C2);
  s1_.A = pad(pcompose_one_minus_t(A));
  s1_.B0 = pad(pcompose_one_minus_t(B0));
  s1_.B1 = pad(pcompose_one_minus_t(B1));
  s1_.C0 = pad(pcompose_one_minus_t(C0));
  s1_.C1 = pad(pcompose_one_minus_t(C1));
  s1_.C2 = pad(pcompose_one_minus_t(C2));
}

double conjugated_model_second_order(double v) {
  // conjugation by v^{-i sigma} leaves the second-order coefficient alone
  return 4.0 * v;
}

Complex conjugated_model_first_order(Complex sigma) {
  // b - 2 i sigma a/v with a = 4v, b = 4(1 + i sigma)
  const Complex b = 4.0 * (1.0 + Complex(0, 1) * sigma);
  return b - Complex(0, 2) * sigma * 4.0;
}

QuadraticPencil build_cap_pencil(const CapModeOperator& op, int N) {
  if (N < 8) throw Error(ErrorCode::PreconditionViolation, "collocation size must be >= 8");
  QuadraticPencil p;
  p.n = op.n();
  p.ell = op.ell();
  p.N = N;
  Eigen::VectorXd x;
  const Eigen::MatrixXd D = cheb_diff_matrix(N, x);
  const Eigen::MatrixXd Dv = 2.0 * D;  // v = (x+1)/2
  const Eigen::MatrixXd D2 = Dv * Dv;
  p.nodes = (x.array() + 1.0) / 2.0;
  p.row_center = 0;
  p.row_boundary = N - 1;
  p.A0 = Eigen::MatrixXcd::Zero(N, N);
  p.A1 = Eigen::MatrixXcd::Zero(N, N);
  p.A2 = Eigen::MatrixXcd::Zero(N, N);
  for (int k = 0; k < N; ++k) {
    const double v = p.nodes(k);
    const double A = op.A(v);
    const double B0 = op.B0(v);
    const Complex B1 = op.B1(v);
    const Complex C0 = op.C0(v);
    const Complex C1 = op.C1(v);
    const Complex C2 = op.C2(v);
    p.A0.row(k) = (A * D2.row(k) + B0 * Dv.row(k)).cast<Complex>();
    p.A0(k, k) += C0;
    p.A1.row(k) = B1 * Dv.row(k).cast<Complex>();
    p.A1(k, k) += C1;
    p.A2(k, k) = C2;
  }
  return p;
}

QuadraticPencil build_cap_pencil(const geom::MetricSpec& spec, int ell, int N) {
  return build_cap_pencil(CapModeOperator(spec, ell), N);
}

Eigen::VectorXcd apply_pencil(const QuadraticPencil& p, Complex sigma,
                              const Eigen::VectorXcd& values) {
  return p.A0 * values + sigma * (p.A1 * values) + sigma * sigma * (p.A2 * values);
}

namespace {

void equilibrate(Eigen::MatrixXcd& A0, Eigen::MatrixXcd& A1, Eigen::MatrixXcd& A2,
                 double sbar = 3.0) {
  const int N = A0.rows();
  Eigen::MatrixXd M = A0.cwiseAbs() + sbar * A1.cwiseAbs() + sbar * sbar * A2.cwiseAbs();
  Eigen::VectorXd dr(N), dc(N);
  for (int i = 0; i < N; ++i) dr(i) = 1.0 / std::max(M.row(i).maxCoeff(), 1e-300);
  for (int i = 0; i < N; ++i) M.row(i) *= dr(i);
  for (int j = 0; j < N; ++j) dc(j) = 1.0 / std::max(M.col(j).maxCoeff(), 1e-300);
  auto scale = [&](Eigen::MatrixXcd& A) {
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) A(i, j) *= dr(i) * dc(j);
  };
  scale(A0);
  scale(A1);
  scale(A2);
}

}  // namespace

std::vector<Complex> pencil_eigenvalues(const QuadraticPencil& p) {
  Eigen::MatrixXcd A0 = p.A0, A1 = p.A1, A2 = p.A2;
  equilibrate(A0, A1, A2);
  const int N = p.N;
  const int M = 2 * N;
  Eigen::MatrixXcd L = Eigen::MatrixXcd::Zero(M, M), R = Eigen::MatrixXcd::Zero(M, M);
  L.topRightCorner(N, N) = Eigen::MatrixXcd::Identity(N, N);
  L.bottomLeftCorner(N, N) = -A0;
  L.bottomRightCorner(N, N) = -A1;
  R.topLeftCorner(N, N) = Eigen::MatrixXcd::Identity(N, N);
  R.bottomRightCorner(N, N) = A2;

  Eigen::VectorXcd alpha(M), beta(M);
  int info = 0, lwork = -1;
  std::vector<Complex> work(1);
  std::vector<double> rwork(8 * M);
  Complex dummy;
  const char jn = 'N';
  zggev_(&jn, &jn, &M, L.data(), &M, R.data(), &M, alpha.data(), beta.data(), &dummy, &M,
         &dummy, &M, work.data(), &lwork, rwork.data(), &info);
  lwork = int(work[0].real()) + 16;
  work.resize(lwork);
  zggev_(&jn, &jn, &M, L.data(), &M, R.data(), &M, alpha.data(), beta.data(), &dummy, &M,
         &dummy, &M, work.data(), &lwork, rwork.data(), &info);
  if (info < 0 || info > M) throw Error(ErrorCode::NumericFailure, "zggev failed");
  // info in 1..M: QZ stagnated on the leading eigenvalues; the tail entries
  // info..M-1 are still valid.
  std::vector<Complex> out;
  for (int i = std::max(info, 0); i < M; ++i) {
    if (std::abs(beta(i)) < 1e-12 * std::abs(alpha(i)) || std::abs(beta(i)) == 0.0) continue;
    const Complex s = alpha(i) / beta(i);
    if (std::isfinite(s.real()) && std::isfinite(s.imag())) out.push_back(s);
  }
  return out;
}

double pencil_smallest_singular(const QuadraticPencil& p, Complex s) {
  Eigen::MatrixXcd T = p.A0 + s * p.A1 + s * s * p.A2;
  const double scale = p.A0.cwiseAbs().maxCoeff() + std::abs(s) * p.A1.cwiseAbs().maxCoeff() +
                       std::norm(s) * p.A2.cwiseAbs().maxCoeff();
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(T);
  return svd.singularValues()(p.N - 1) / std::max(scale, 1e-300);
}

namespace {

struct FrobeniusStart {
  Complex phi, dphi;  // value and d/d(local variable)
};

FrobeniusStart frobenius(const CapModeOperator::EndpointSeries& s, Complex sigma, double x0,
                         bool flip_first_order) {
  const int K = kSeriesOrder;
  CPoly A(K + 3), B(K + 3), C(K + 3);
  for (int j = 0; j < K + 3; ++j) {
    A[j] = s.A[j];
    B[j] = s.B0[j] + sigma * s.B1[j];
    if (flip_first_order) B[j] = -B[j];
    C[j] = s.C0[j] + sigma * s.C1[j] + sigma * sigma * s.C2[j];
  }
  std::vector<Complex> c(K + 1, 0.0);
  c[0] = 1.0;
  for (int M = 1; M <= K; ++M) {
    Complex acc = 0.0;
    for (int k = 0; k < M; ++k) {
      const int ia = M - k + 1, ib = M - k, ic = M - k - 1;
      Complex t = 0.0;
      if (ia >= 0 && ia < int(A.size())) t += double(k) * double(k - 1) * A[ia];
      if (ib >= 0 && ib < int(B.size())) t += double(k) * B[ib];
      if (ic >= 0 && ic < int(C.size())) t += C[ic];
      acc += c[k] * t;
    }
    const Complex denom = double(M) * double(M - 1) * A[1] + double(M) * B[0];
    if (std::abs(denom) < 1e-12)
      throw Error(ErrorCode::NumericFailure, "Frobenius recursion degenerate");
    c[M] = -acc / denom;
  }
  FrobeniusStart out{0.0, 0.0};
  for (int k = K; k >= 0; --k) out.phi = out.phi * x0 + c[k];
  for (int k = K; k >= 1; --k) out.dphi = out.dphi * x0 + double(k) * c[k];
  return out;
}

Complex wronskian(const CapModeOperator& op, Complex sigma, double x0 = 0.06) {
  using Vec = Eigen::Vector2cd;
  auto rhs = [&](double v, const Vec& y) -> Vec {
    const double A = op.A(v);
    const Complex B = Complex(op.B0(v), 0) + sigma * op.B1(v);
    const Complex C = op.C0(v) + sigma * op.C1(v) + sigma * sigma * op.C2(v);
    Vec dy;
    dy(0) = y(1);
    dy(1) = -(B * y(1) + C * y(0)) / A;
    return dy;
  };
  auto nrm = [](const Vec& e, const Vec& y0, const Vec& y1, double rtol, double atol) {
    double m = 0;
    for (int i = 0; i < 2; ++i) {
      const double sc = atol + rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
      m = std::max(m, std::abs(e(i)) / sc);
    }
    return m;
  };
  OdeOptions<Vec> opt;
  opt.rtol = 1e-12;
  opt.atol = 1e-14;
  opt.h_init = 1e-3;
  opt.max_steps = 40000;

  const FrobeniusStart l = frobenius(op.series_at_zero(), sigma, x0, false);
  Vec yl;
  yl << l.phi, l.dphi;
  auto rl = ode45<Vec>(rhs, x0, 0.5, yl, opt, nrm);
  if (!rl.completed) throw Error(ErrorCode::IntegratorFailure, "left shooting failed");

  const FrobeniusStart r = frobenius(op.series_at_one(), sigma, x0, true);
  Vec yr;
  yr << r.phi, -r.dphi;  // d/dv = -d/dt
  auto rr = ode45<Vec>(rhs, 1.0 - x0, 0.5, yr, opt, nrm);
  if (!rr.completed) throw Error(ErrorCode::IntegratorFailure, "right shooting failed");

  const Complex W = rl.y(0) * rr.y(1) - rl.y(1) * rr.y(0);
  const double scale =
      (std::abs(rl.y(0)) + std::abs(rl.y(1))) * (std::abs(rr.y(0)) + std::abs(rr.y(1))) +
      1e-300;
  return W / scale;
}

}  // namespace

Complex shooting_wronskian(const CapModeOperator& op, Complex sigma) {
  return wronskian(op, sigma);
}

std::optional<Complex> shooting_refine(const CapModeOperator& op, Complex s0, double tol) {
  Complex s = s0;
  try {
    Complex W = wronskian(op, s);
    for (int it = 0; it < 60; ++it) {
      const double h = 1e-7 * (1.0 + std::abs(s));
      const Complex dW = (wronskian(op, s + h) - wronskian(op, s - h)) / (2.0 * h);
      if (std::abs(dW) < 1e-300) return std::nullopt;
      Complex ds = -W / dW;
      while (std::abs(ds) > 0.25) ds *= 0.5;
      Complex s_new = s + ds;
      Complex W_new = wronskian(op, s_new);
      int halves = 0;
      while (std::abs(W_new) > std::abs(W) && halves < 8) {
        ds *= 0.5;
        s_new = s + ds;
        W_new = wronskian(op, s_new);
        ++halves;
      }
      s = s_new;
      W = W_new;
      if (std::abs(ds) < tol * (1.0 + std::abs(s))) return s;
      if (std::abs(s - s0) > 1.0) return std::nullopt;
    }
  } catch (const Error&) {
    return std::nullopt;
  }
  return std::nullopt;
}

namespace {

double integer_distance(Complex s) {
  double best = 1e9;
  for (int k = 1; k <= 12; ++k) best = std::min(best, std::abs(s - Complex(0, -double(k))));
  return best;
}

std::vector<Complex> raw_candidates(const QuadraticPencil& p, const Strip& strip) {
  Strip padded = strip;
  padded.im_min -= 0.5;
  padded.im_max += 0.05;
  padded.re_max += 0.5;
  std::vector<Complex> out;
  for (const Complex& s : pencil_eigenvalues(p))
    if (padded.contains(s)) out.push_back(s);
  return out;
}

double coeff_decay(const QuadraticPencil& p, Complex s) {
  // smallest-singular-vector Chebyshev coefficient tail fraction
  Eigen::MatrixXcd T = p.A0 + s * p.A1 + s * s * p.A2;
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(T, Eigen::ComputeThinV);
  const Eigen::VectorXcd x = svd.matrixV().col(p.N - 1);
  const int N = p.N;
  Eigen::VectorXcd coeff = Eigen::VectorXcd::Zero(N);
  for (int j = 0; j < N; ++j) {
    Complex acc = 0.0;
    for (int k = 0; k < N; ++k) {
      const double w = (k == 0 || k == N - 1) ? 0.5 : 1.0;
      acc += w * x(k) * std::cos(M_PI * j * k / (N - 1));
    }
    coeff(j) = acc * (2.0 / (N - 1));
  }
  const int tail = N / 4;
  double tail_norm = 0, full_norm = 0;
  for (int j = 0; j < N; ++j) {
    const double a = std::abs(coeff(j));
    full_norm = std::max(full_norm, a);
    if (j >= N - tail) tail_norm = std::max(tail_norm, a);
  }
  return tail_norm / std::max(full_norm, 1e-300);
}

}  // namespace

ResonanceSet solve_pencil(const geom::MetricSpec& spec, int ell, int N, const Strip& strip,
                          const SolveOptions& opt) {
  const CapModeOperator op(spec, ell);
  const QuadraticPencil p = build_cap_pencil(op, N);
  const QuadraticPencil p_drift = build_cap_pencil(op, N + 8);
  const QuadraticPencil p_val = build_cap_pencil(op, N + opt.validation_extra);

  ResonanceSet out;
  out.strip = strip;
  out.N = N;

  auto refine_all = [&](const QuadraticPencil& pp, std::vector<Complex>* integer_hits) {
    std::vector<Complex> refined;
    for (const Complex& s : raw_candidates(pp, strip)) {
      if (!opt.polish) {
        refined.push_back(s);
        continue;
      }
      if (auto r = shooting_refine(op, s)) {
        refined.push_back(*r);
      } else if (integer_hits && integer_distance(s) < 1e-4) {
        // the shooting problem degenerates at sigma = -i k exactly; the raw
        // companion value localizes the integer-point state well enough
        integer_hits->push_back(s);
      }
    }
    return refined;
  };

  std::vector<Complex> integer_hits;
  const std::vector<Complex> main_roots = refine_all(p, &integer_hits);
  const std::vector<Complex> drift_roots = refine_all(p_drift, nullptr);
  for (const Complex& s : integer_hits) out.integer_states.push_back(s);

  // cluster
  std::vector<std::pair<Complex, int>> clusters;
  for (const Complex& s : main_roots) {
    bool merged = false;
    for (auto& c : clusters)
      if (std::abs(c.first - s) < 1e-7 * (1.0 + std::abs(s))) {
        c.first = (c.first * double(c.second) + s) / double(c.second + 1);
        c.second += 1;
        merged = true;
        break;
      }
    if (!merged) clusters.push_back({s, 1});
  }

  for (const auto& [s, mult] : clusters) {
    if (integer_distance(s) < opt.integer_state_radius) {
      out.integer_states.push_back(s);
      continue;
    }
    if (!strip.contains(s)) continue;
    double drift = 1e9;
    for (const Complex& d : drift_roots) drift = std::min(drift, std::abs(d - s));
    if (drift > opt.drift_tol) continue;
    const double res_val = pencil_smallest_singular(p_val, s);
    if (res_val > opt.residual_tol) continue;
    if (coeff_decay(p, s) > opt.coeff_decay_tol) continue;
    Resonance r;
    r.sigma = s;
    r.residual = res_val;
    r.multiplicity = mult;
    r.ell = ell;
    r.threshold_exponent = 0.5 + s.imag();
    r.near_integer = integer_distance(s) < opt.near_integer_flag_radius;
    out.resonances.push_back(r);
  }
  std::sort(out.resonances.begin(), out.resonances.end(),
            [](const Resonance& a, const Resonance& b) { return a.sigma.imag() > b.sigma.imag(); });
  return out;
}

ResonanceSet solve_modes(const geom::MetricSpec& spec, int ell_min, int ell_max, int N,
                         const Strip& strip, const SolveOptions& opt) {
  ResonanceSet out;
  out.strip = strip;
  out.N = N;
  for (int ell = ell_min; ell <= ell_max; ++ell) {
    const ResonanceSet one = solve_pencil(spec, ell, N, strip, opt);
    for (const auto& r : one.resonances) {
      bool dup = false;
      for (auto& existing : out.resonances)
        if (std::abs(existing.sigma - r.sigma) < 1e-6 * (1.0 + std::abs(r.sigma))) {
          existing.multiplicity = std::max(existing.multiplicity, r.multiplicity);
          dup = true;
          break;
        }
      if (!dup) out.resonances.push_back(r);
    }
    for (const Complex& s : one.integer_states) {
      bool dup = false;
      for (const Complex& e : out.integer_states)
        if (std::abs(e - s) < 1e-6) dup = true;
      if (!dup) out.integer_states.push_back(s);
    }
  }
  std::sort(out.resonances.begin(), out.resonances.end(),
            [](const Resonance& a, const Resonance& b) { return a.sigma.imag() > b.sigma.imag(); });
  return out;
}

ResonanceSet exact_hyperbolic_resonances(int n, const Strip& strip) {
  ResonanceSet out;
  out.strip = strip;
  if (n % 2 == 0) return out;  // even spacetime dimension: no poles
  for (int j = 0;; ++j) {
    const Complex s(0.0, -(0.5 * (n - 2) + j));
    if (s.imag() <= strip.im_min) break;
    if (strip.contains(s)) {
      Resonance r;
      r.sigma = s;
      r.residual = 0.0;
      r.multiplicity = 1;
      r.ell = -1;
      r.threshold_exponent = 0.5 + s.imag();
      r.near_integer = integer_distance(s) < 0.15;
      out.resonances.push_back(r);
    }
  }
  return out;
}

BeynResult beyn_contour(const QuadraticPencil& p, Complex center, double radius,
                        int quad_nodes, int probe_cols, std::uint64_t seed) {
  BeynResult out;
  const int N = p.N;
  const int L = std::min(probe_cols, N);
  Rng rng(seed);
  Eigen::MatrixXcd V(N, L);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < L; ++j) V(i, j) = Complex(rng.normal(), rng.normal());

  Eigen::MatrixXcd M0 = Eigen::MatrixXcd::Zero(N, L), M1 = Eigen::MatrixXcd::Zero(N, L);
  for (int k = 0; k < quad_nodes; ++k) {
    const double th = 2.0 * M_PI * (k + 0.5) / quad_nodes;
    const Complex z = center + radius * Complex(std::cos(th), std::sin(th));
    const Complex dz = radius * Complex(-std::sin(th), std::cos(th)) *
                       (2.0 * M_PI / quad_nodes) / Complex(0, 2.0 * M_PI);
    Eigen::MatrixXcd T = p.A0 + z * p.A1 + z * z * p.A2;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(T);
    const Eigen::MatrixXcd S = lu.solve(V);
    M0 += S * dz;
    M1 += S * (z * dz);
  }

  Eigen::BDCSVD<Eigen::MatrixXcd> svd(M0, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double s0 = sv(0);
  if (s0 < 1e-12) return out;  // empty region
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > 1e-8 * s0) ++rank;
  // ambiguous rank boundary
  if (rank < sv.size() && sv(rank) > 1e-11 * s0) out.inconclusive = true;
  if (rank == 0) return out;
  if (rank == L) out.inconclusive = true;  // probe space may be too small

  const Eigen::MatrixXcd U = svd.matrixU().leftCols(rank);
  const Eigen::MatrixXcd W = svd.matrixV().leftCols(rank);
  const Eigen::VectorXd s_inv = sv.head(rank).cwiseInverse();
  Eigen::MatrixXcd B = U.adjoint() * M1 * W * s_inv.asDiagonal();
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(B);
  for (int i = 0; i < rank; ++i) {
    const Complex z = es.eigenvalues()(i);
    if (std::abs(z - center) <= radius) {
      out.locations.push_back(z);
      out.residuals.push_back(pencil_smallest_singular(p, z));
    }
  }
  out.count = int(out.locations.size());
  std::sort(out.locations.begin(), out.locations.end(),
            [](Complex a, Complex b) { return a.imag() > b.imag(); });
  return out;
}

ScanTable perturbation_scan(const std::function<geom::MetricSpec(double)>& family,
                            const std::vector<double>& eps_grid, int ell_min, int ell_max,
                            int N, const Strip& strip, const SolveOptions& opt) {
  ScanTable table;
  table.eps_grid = eps_grid;
  for (double e : eps_grid) table.sets.push_back(solve_modes(family(e), ell_min, ell_max, N, strip, opt));

  // branch tracking by nearest-neighbor continuation
  if (!table.sets.empty()) {
    std::vector<ScanBranch> branches;
    for (const auto& r : table.sets.front().resonances) {
      ScanBranch b;
      b.eps = {eps_grid.front()};
      b.sigma = {r.sigma};
      branches.push_back(b);
    }
    for (size_t col = 1; col < table.sets.size(); ++col) {
      std::vector<bool> used(table.sets[col].resonances.size(), false);
      for (auto& b : branches) {
        double best = 1e9;
        int arg = -1;
        for (size_t i = 0; i < table.sets[col].resonances.size(); ++i) {
          if (used[i]) continue;
          const double d = std::abs(table.sets[col].resonances[i].sigma - b.sigma.back());
          if (d < best) {
            best = d;
            arg = int(i);
          }
        }
        if (arg >= 0 && best < 0.5) {
          used[arg] = true;
          b.eps.push_back(eps_grid[col]);
          b.sigma.push_back(table.sets[col].resonances[arg].sigma);
        }
      }
      // new branches appearing at this eps
      for (size_t i = 0; i < table.sets[col].resonances.size(); ++i) {
        if (used[i]) continue;
        ScanBranch b;
        b.eps = {eps_grid[col]};
        b.sigma = {table.sets[col].resonances[i].sigma};
        branches.push_back(b);
      }
    }
    for (auto& b : branches) {
      b.near_integer = integer_distance(b.sigma.front()) < 0.15;
      double c = 0;
      for (size_t i = 0; i < b.eps.size(); ++i)
        if (b.eps[i] > 0) c = std::max(c, std::abs(b.sigma[i] - b.sigma.front()) / b.eps[i]);
      b.drift_bound = c;
    }
    table.branches = branches;
  }
  return table;
}

}  // namespace scatwave::res
