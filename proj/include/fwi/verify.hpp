#pragma once

#include "fwi/driver.hpp"

#include <string>
#include <vector>

namespace fwi {

enum class Check { gradient, hessian, identity, equivalence, limits };

const char* to_string(Check check);
Check parse_check(const std::string& tag);

struct Measurement {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed() const { return value < tolerance; }
};

struct VerificationReport {
  Check check = Check::gradient;
  std::vector<Measurement> measurements;
  bool passed() const;
  /// JSON object with the check name, the verdict and every measurement.
  std::string to_json() const;
};

/// Runs one oracle suite on built-in fixtures: a 10×10 Dirichlet grid with 3
/// sources and 5 receivers, and a 51×51 inclusion model at 5 Hz.
VerificationReport verify(Check check);

}  // namespace fwi
