#pragma once

// Release gate: nine checks covering parameter arithmetic, the dilation-gap
// rule, loss oracles, gradient fidelity, the one-to-one assignment
// properties, desk-scale end-to-end quality, suppression overhead scaling,
// metric identities and bit-level determinism. Each check prints one
// PASS/FAIL line; the suite fails if any check fails.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ffpdet {

struct AcceptanceOptions {
  /// Scratch directory; created if missing. Holds generated datasets,
  /// training runs and spawned-process logs.
  std::string workdir = "acceptance_work";
  /// Path of the command-line binary, spawned for the determinism check.
  /// Empty = resolve the running executable (/proc/self/exe).
  std::string cli_path;
  /// Progress + result stream; null = std::cout.
  std::ostream* log = nullptr;
};

struct CriterionResult {
  int number = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct AcceptanceReport {
  std::vector<CriterionResult> criteria;
  bool all_passed = false;
  double seconds = 0;
};

AcceptanceReport run_acceptance(const AcceptanceOptions& opt);

}  // namespace ffpdet
