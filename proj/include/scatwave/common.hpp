#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace scatwave {

using Complex = std::complex<double>;

enum class ErrorCode {
  InvalidDimension,
  ClassViolation,
  DegenerateMetric,
  OutOfRegion,
  ReductionUnavailable,
  Instability,
  ExtractionFailure,
  IntegratorFailure,
  ChartError,
  ConjugationError,
  WeightViolation,
  InvalidOrder,
  FitFailure,
  NumericFailure,
  ConfigError,
  PreconditionViolation,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidDimension: return "invalid-dimension";
    case ErrorCode::ClassViolation: return "class-violation";
    case ErrorCode::DegenerateMetric: return "degenerate-metric";
    case ErrorCode::OutOfRegion: return "out-of-region";
    case ErrorCode::ReductionUnavailable: return "reduction-unavailable";
    case ErrorCode::Instability: return "instability";
    case ErrorCode::ExtractionFailure: return "extraction-failure";
    case ErrorCode::IntegratorFailure: return "integrator-failure";
    case ErrorCode::ChartError: return "chart-error";
    case ErrorCode::ConjugationError: return "conjugation-error";
    case ErrorCode::WeightViolation: return "weight-violation";
    case ErrorCode::InvalidOrder: return "invalid-order";
    case ErrorCode::FitFailure: return "fit-failure";
    case ErrorCode::NumericFailure: return "numeric-failure";
    case ErrorCode::ConfigError: return "config-error";
    case ErrorCode::PreconditionViolation: return "precondition-violation";
  }
  return "unknown";
}

// Smooth compactly supported polynomial bump, support [-1,1], max 1 at 0.
inline double poly_bump(double u) {
  if (u <= -1.0 || u >= 1.0) return 0.0;
  double w = 1.0 - u * u;
  return w * w * w * w;
}

inline double poly_bump_du(double u) {
  if (u <= -1.0 || u >= 1.0) return 0.0;
  double w = 1.0 - u * u;
  return -8.0 * u * w * w * w;
}

// C^3 step: 1 for x<=0, 0 for x>=1.
inline double smooth_cut(double x) {
  if (x <= 0.0) return 1.0;
  if (x >= 1.0) return 0.0;
  double x2 = x * x, x3 = x2 * x;
  return 1.0 - (35.0 * x2 * x2 - 84.0 * x2 * x3 + 70.0 * x3 * x3 - 20.0 * x3 * x3 * x);
}

inline double smooth_cut_dx(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  double x2 = x * x, x3 = x2 * x;
  return -(140.0 * x3 - 420.0 * x2 * x2 + 420.0 * x2 * x3 - 140.0 * x3 * x3);
}

// Deterministic RNG (xoshiro-style), independent of libstdc++ distributions
// so identical seeds give identical output streams everywhere.
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    s_ = seed ? seed : 0x9e3779b97f4a7c15ull;
    for (int i = 0; i < 8; ++i) next_u64();
  }
  std::uint64_t next_u64() {
    s_ ^= s_ << 13;
    s_ ^= s_ >> 7;
    s_ ^= s_ << 17;
    return s_ * 0x2545f4914f6cdd1dull;
  }
  double uniform() {  // [0,1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

private:
  std::uint64_t s_;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string format_g17(double x);
std::string hex64(std::uint64_t v);

}  // namespace scatwave
