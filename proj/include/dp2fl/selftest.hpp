#pragma once

// Invariant suite behind `dp2fl selftest`. Each check is self-contained and
// seeded, so the acceptance binary can run them one at a time.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace dp2fl {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

CheckResult check_task_weight_laws(std::uint64_t seed = 1, int instances = 1000);
CheckResult check_partition_laws(std::uint64_t seed = 2, int instances = 1000);
CheckResult check_normalization_laws(std::uint64_t seed = 3, int instances = 1000);
CheckResult check_data_prompt_forms(std::uint64_t seed = 4, int instances = 1000);
CheckResult check_gradients(std::uint64_t seed = 5, int instances = 100);
CheckResult check_metric_sanity(std::uint64_t seed = 6, int instances = 200);
CheckResult check_round_replay(std::uint64_t seed = 7);
CheckResult check_determinism(std::uint64_t seed = 8);

std::vector<CheckResult> run_selftest();

/// Prints one line per check; returns true iff every check passed.
bool print_checks(std::ostream& os, const std::vector<CheckResult>& results);

}  // namespace dp2fl
