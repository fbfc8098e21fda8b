#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace foginv {

enum class CheckScale { Micro, Small };

CheckScale parse_check_scale(const std::string& name);  // "micro" | "small"

struct CheckCase {
  std::string name;
  double max_rel_error = 0.0;
  int attempts = 1;  // evaluation points resampled until clear of kinks
};

// Named finite-difference checks covering every differentiable primitive,
// the style machinery, each loss, and the full training objectives composed
// through a throwaway network. Case list and seeds are fixed per scale, so
// reported errors are identical across reruns.
struct CheckReport {
  std::vector<CheckCase> cases;
  double tolerance = 1e-5;

  bool all_passed() const;
  double worst() const;
};

CheckReport run_grad_checks(CheckScale scale, std::uint64_t master_seed);

// One line per case plus a summary verdict.
void print_report(std::ostream& os, const CheckReport& report);

}  // namespace foginv
