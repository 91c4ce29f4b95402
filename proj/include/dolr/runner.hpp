#pragma once

#include "dolr/config.hpp"

#include <iosfwd>
#include <string>

namespace dolr {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitSelfTest = 4,
};

// Subcommands: simulate, compare, picard-demo, lipschitz-harness,
// explosion-study. Artifacts go to cfg.output_dir. Errors are reported as
// one `error kind=... message="..."` line on `err`.
int run_command(const std::string& command, const RunConfig& cfg, std::ostream& err);

const char* build_id();

}  // namespace dolr
