#pragma once

#include <stdexcept>
#include <string>

namespace mscos {

// An overlap table row disagrees with the coarse support (bad id, bad area,
// or a coarse unit whose overlaps do not add up to its area).
class InconsistentOverlapError : public std::invalid_argument {
 public:
  explicit InconsistentOverlapError(const std::string& msg)
      : std::invalid_argument(msg) {}
};

// P*P' has non-negligible off-diagonal mass: the coarse units are not
// disjoint, so the scalar-variance data models do not apply.
class DisjointnessError : public std::invalid_argument {
 public:
  explicit DisjointnessError(const std::string& msg)
      : std::invalid_argument(msg) {}
};

// A factorization or sampling step failed beyond the configured recovery
// (jitter escalation, proposal rejection).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg)
      : std::runtime_error(msg) {}
};

namespace tol {
inline constexpr double kRowSum = 1e-9;         // partition row sums
inline constexpr double kOffDiagonal = 1e-12;   // P*P' off-diagonal mass
inline constexpr double kOrthonormal = 1e-8;    // basis column orthonormality
inline constexpr double kJitterStart = 1e-8;    // relative Cholesky jitter
inline constexpr double kJitterMax = 1e-4;
}  // namespace tol

}  // namespace mscos
