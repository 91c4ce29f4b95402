#pragma once

// Line-oriented run configuration: `section.key = value`, `#` comments.

#include "dolr/models.hpp"

#include <cstdint>
#include <string>

namespace dolr {

struct RunConfig {
  std::string model = "ou";
  ModelParams params;

  int N = 256;
  int R = 2;
  int d = 4;
  double dt = 1e-3;
  double t_end = 1.0;
  std::uint64_t seed = 1;
  std::string scheme = "do";  // do | ambient | reference | picard
  int record_stride = 10;
  int level = 0;

  int n_max = 64;
  double gamma_max_factor = 1e8;
  double sv_tolerance = 1e-8;
  bool restart = true;

  std::string output_dir = "out";

  std::string compare_a = "do";
  std::string compare_b = "ambient";
  int compare_levels = 3;

  int picard_iters = 8;
  int picard_substeps = 64;

  int harness_trials = 1000;
  int harness_N = 32;
  int harness_d = 8;
  int harness_R = 3;

  bool operator==(const RunConfig&) const = default;
};

// ParseError (with line) or ValidationError (with field name).
class ConfigError : public Error {
 public:
  ConfigError(ErrorKind kind, int line, std::string field, const std::string& what)
      : Error(kind, what), line_(line), field_(std::move(field)) {}
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

RunConfig parse_config(const std::string& text);
std::string serialize_config(const RunConfig& cfg);
// Throws ConfigError(ValidationError) naming the first offending field.
void validate_config(const RunConfig& cfg);
// FNV-1a 64 of the canonical serialization (output.dir excluded), as 16 hex
// digits.
std::string config_hash(const RunConfig& cfg);

// 17 significant digits.
std::string format_real(double v);

}  // namespace dolr
