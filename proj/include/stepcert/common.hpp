#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stepcert {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class ErrorCode {
  ok = 0,
  invalid_argument,
  invalid_instance,
  invalid_class,
  sampler_exhausted,
  parse_error,
  divergence,
  reference_inconsistency,
  gradient_unavailable,
  check_inconclusive,
  solver_failure,
  training_aborted,
  cv_failed,
  certification_unavailable,
  io_error,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ok: return "ok";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::invalid_instance: return "invalid-instance";
    case ErrorCode::invalid_class: return "invalid-class";
    case ErrorCode::sampler_exhausted: return "sampler-exhausted";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::reference_inconsistency: return "reference-inconsistency";
    case ErrorCode::gradient_unavailable: return "gradient-unavailable";
    case ErrorCode::check_inconclusive: return "check-inconclusive";
    case ErrorCode::solver_failure: return "solver-failure";
    case ErrorCode::training_aborted: return "training-aborted";
    case ErrorCode::cv_failed: return "cv-failed";
    case ErrorCode::certification_unavailable: return "certification-unavailable";
    case ErrorCode::io_error: return "io-error";
  }
  return "unknown";
}

// ---- scaled symmetric vectorization -----------------------------------------
// svec packs the upper triangle column-major with off-diagonal entries scaled
// by sqrt(2), so that <svec(S), svec(T)> = Tr(S T) for symmetric S, T.

inline long tri_size(long side) { return side * (side + 1) / 2; }

inline long svec_index(long i, long j) {
  // requires i <= j
  return j * (j + 1) / 2 + i;
}

inline Vec svec(const Mat& s) {
  const long n = s.rows();
  Vec out(tri_size(n));
  const double rt2 = std::sqrt(2.0);
  for (long j = 0; j < n; ++j) {
    for (long i = 0; i <= j; ++i) {
      out(svec_index(i, j)) = (i == j) ? s(i, j) : rt2 * s(i, j);
    }
  }
  return out;
}

inline Mat smat(const Vec& v, long side) {
  Mat out(side, side);
  const double inv_rt2 = 1.0 / std::sqrt(2.0);
  for (long j = 0; j < side; ++j) {
    for (long i = 0; i <= j; ++i) {
      const double val = v(svec_index(i, j));
      if (i == j) {
        out(i, j) = val;
      } else {
        out(i, j) = val * inv_rt2;
        out(j, i) = val * inv_rt2;
      }
    }
  }
  return out;
}

// ---- deterministic random streams -------------------------------------------
// Samplers are written out explicitly so regeneration is bit-identical and
// independent of standard-library distribution internals.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm the mixer so nearby seeds decorrelate.
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    // splitmix64 step.
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1).
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

// Derives an independent stream from (seed, stream, index) so each instance
// regenerates identically regardless of sampling order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t index) {
  Rng mixer(seed ^ (0x517cc1b727220a95ULL * (stream + 1)) ^
            (0x2545f4914f6cdd1dULL * (index + 1)));
  return mixer.next_u64();
}

inline const char* stepcert_version() { return "0.1.0"; }

}  // namespace stepcert
