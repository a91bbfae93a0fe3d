#pragma once

// Named validation suites over stock fixtures, as run by `validate`.

#include <cstdint>
#include <limits>
#include <string>

#include "json.hpp"

namespace specens {

struct SuiteOptions {
  std::size_t sessions = 0;  // 0 = suite default
  double tolerance = std::numeric_limits<double>::quiet_NaN();  // NaN = suite default
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

// suite: distribution | acceptance | never-slower | formulas | all.
// Returns {"suite", "passed", "checks": [...]}, each check carrying its
// numbers. Throws ConfigError for an unknown suite.
nlohmann::json run_validation_suite(const std::string& suite, const SuiteOptions& options);

}  // namespace specens
