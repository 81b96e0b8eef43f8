#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpdd/common.hpp"

namespace dpdd {

// Deliberate fault injections for negative-control runs: the suite must
// fail, and fail in the right place, when fed a miscalibrated sigma or a
// non-orthonormal basis.
enum class Injection { kNone, kSigmaHalf, kBadProjection };
Injection injection_from_string(const std::string& s);

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;  // measured quantity, pass iff value <= limit
  double limit = 0.0;
  std::string detail;
};

struct VerifySuite {
  std::vector<CheckResult> checks;

  bool all_passed() const;
  const CheckResult& check(const std::string& name) const;
  std::string report() const;  // one PASS/FAIL line per check
};

// Numerical hygiene battery: clipping, projection geometry, gradient checks
// against finite differences, eigendecomposition residuals, accountant
// closed forms and dual routes, calibration round trip, sensitivity-ratio
// rescaling, and an error-decomposition spot check.
VerifySuite run_verification(std::uint64_t seed, Injection inject = Injection::kNone);

}  // namespace dpdd
