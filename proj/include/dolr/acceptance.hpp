#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dolr {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

// Runs the acceptance criteria (all when `only` is empty), printing one
// PASS/FAIL line per criterion to `out` as it completes.
std::vector<CriterionResult> run_acceptance(std::ostream& out, const std::vector<int>& only = {});

}  // namespace dolr
