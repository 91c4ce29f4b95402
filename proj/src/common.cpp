#include "dolr/common.hpp"
#include "dolr/integrators.hpp"

#include <atomic>
#include <cstring>
#include <cstdlib>
#include <fstream>

namespace dolr {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidEnsemble: return "InvalidEnsemble";
    case ErrorKind::InvalidBoundInput: return "InvalidBoundInput";
    case ErrorKind::SingularRowGram: return "SingularRowGram";
    case ErrorKind::SingularGram: return "SingularGram";
    case ErrorKind::UnknownModel: return "UnknownModel";
    case ErrorKind::BadParams: return "BadParams";
    case ErrorKind::AssumptionViolated: return "AssumptionViolated";
    case ErrorKind::OverflowingDims: return "OverflowingDims";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::ZeroState: return "ZeroState";
    case ErrorKind::NoFloorDeclared: return "NoFloorDeclared";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

namespace {

int threads_from_env() {
  const char* env = std::getenv("DOLR_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) return 1;
  return static_cast<int>(std::min<long>(n, 1024));
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> value{threads_from_env()};
  return value;
}

}  // namespace

int num_threads() { return thread_setting().load(std::memory_order_relaxed); }

void set_num_threads(int n) { thread_setting().store(std::max(n, 1), std::memory_order_relaxed); }

void write_path_binary(const std::string& filename, const std::vector<double>& increments) {
  std::ofstream out(filename, std::ios::binary);
  if (!out) throw Error(ErrorKind::OverflowingDims, "cannot open '" + filename + "' for writing");
  for (double v : increments) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw Error(ErrorKind::OverflowingDims, "write to '" + filename + "' failed");
}

const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::Do: return "do";
    case Scheme::Ambient: return "ambient";
    case Scheme::Reference: return "reference";
  }
  return "unknown";
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "do") return Scheme::Do;
  if (s == "ambient") return Scheme::Ambient;
  if (s == "reference") return Scheme::Reference;
  throw Error(ErrorKind::BadParams, "unknown scheme '" + s + "'");
}

const std::vector<std::string>& builtin_model_names() {
  static const std::vector<std::string> names = {"ou", "linear_lowrank", "gbm_clipped", "mode_crossing",
                                                 "additive_floor"};
  return names;
}

const std::vector<std::string>& builtin_param_names(const std::string& model) {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"ou", {"kappa", "sigma"}},
      {"linear_lowrank", {"lambda", "sigma", "omega", "basis_seed"}},
      {"gbm_clipped", {"mu", "sigma", "clip"}},
      {"mode_crossing", {"t_star"}},
      {"additive_floor", {"kappa", "beta", "sigma"}},
  };
  auto it = table.find(model);
  if (it == table.end()) throw Error(ErrorKind::UnknownModel, "unknown model '" + model + "'");
  return it->second;
}

}  // namespace dolr
