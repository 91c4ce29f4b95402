#include "dolr/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

namespace dolr {

namespace {

using Value = std::variant<double, std::vector<double>, std::string>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

Value parse_value(const std::string& raw, int line) {
  if (raw.empty()) throw ConfigError(ErrorKind::ParseError, line, "", "line " + std::to_string(line) + ": missing value");
  if (raw.front() == '[') {
    if (raw.back() != ']')
      throw ConfigError(ErrorKind::ParseError, line, "", "line " + std::to_string(line) + ": unterminated list");
    std::vector<double> list;
    const std::string body = trim(raw.substr(1, raw.size() - 2));
    if (body.empty()) return list;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      double v;
      if (!parse_number(trim(item), v))
        throw ConfigError(ErrorKind::ParseError, line, "",
                          "line " + std::to_string(line) + ": bad list element '" + trim(item) + "'");
      list.push_back(v);
    }
    return list;
  }
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"')
      throw ConfigError(ErrorKind::ParseError, line, "", "line " + std::to_string(line) + ": unterminated string");
    return raw.substr(1, raw.size() - 2);
  }
  double v;
  if (parse_number(raw, v)) return v;
  return raw;
}

ConfigError invalid(const std::string& field, const std::string& why, int line = 0) {
  std::string msg = field + ": " + why;
  if (line > 0) msg = "line " + std::to_string(line) + ": " + msg;
  return ConfigError(ErrorKind::ValidationError, line, field, msg);
}

double as_real(const Value& v, const std::string& field, int line) {
  if (const double* d = std::get_if<double>(&v)) return *d;
  throw invalid(field, "expected a number", line);
}

long long as_int(const Value& v, const std::string& field, int line) {
  const double d = as_real(v, field, line);
  if (d != std::floor(d) || std::abs(d) > 9.0e15) throw invalid(field, "expected an integer", line);
  return static_cast<long long>(d);
}

std::string as_string(const Value& v, const std::string& field, int line) {
  if (const std::string* s = std::get_if<std::string>(&v)) return *s;
  throw invalid(field, "expected a word", line);
}

bool as_bool(const Value& v, const std::string& field, int line) {
  if (const std::string* s = std::get_if<std::string>(&v)) {
    if (*s == "true") return true;
    if (*s == "false") return false;
  }
  if (const double* d = std::get_if<double>(&v)) {
    if (*d == 0.0) return false;
    if (*d == 1.0) return true;
  }
  throw invalid(field, "expected true or false", line);
}

int as_small_int(const Value& v, const std::string& field, int line) {
  const long long n = as_int(v, field, line);
  if (n < -2147483647LL || n > 2147483647LL) throw invalid(field, "out of range", line);
  return static_cast<int>(n);
}

struct Field {
  std::function<void(RunConfig&, const Value&, int)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto int_field = [&t](const std::string& key, int RunConfig::*member) {
      t.push_back({key,
                   {[key, member](RunConfig& c, const Value& v, int line) { c.*member = as_small_int(v, key, line); },
                    [member](const RunConfig& c) { return std::to_string(c.*member); }}});
    };
    auto real_field = [&t](const std::string& key, double RunConfig::*member) {
      t.push_back({key,
                   {[key, member](RunConfig& c, const Value& v, int line) { c.*member = as_real(v, key, line); },
                    [member](const RunConfig& c) { return format_real(c.*member); }}});
    };
    auto word_field = [&t](const std::string& key, std::string RunConfig::*member) {
      t.push_back({key,
                   {[key, member](RunConfig& c, const Value& v, int line) { c.*member = as_string(v, key, line); },
                    [member](const RunConfig& c) { return c.*member; }}});
    };
    word_field("model.name", &RunConfig::model);
    int_field("run.N", &RunConfig::N);
    int_field("run.R", &RunConfig::R);
    int_field("run.d", &RunConfig::d);
    real_field("run.dt", &RunConfig::dt);
    real_field("run.t_end", &RunConfig::t_end);
    t.push_back({"run.seed",
                 {[](RunConfig& c, const Value& v, int line) {
                    const long long s = as_int(v, "run.seed", line);
                    if (s < 0) throw invalid("run.seed", "must be non-negative", line);
                    c.seed = static_cast<std::uint64_t>(s);
                  },
                  [](const RunConfig& c) { return std::to_string(c.seed); }}});
    word_field("run.scheme", &RunConfig::scheme);
    int_field("run.record_stride", &RunConfig::record_stride);
    int_field("run.level", &RunConfig::level);
    int_field("monitor.n_max", &RunConfig::n_max);
    real_field("monitor.gamma_max_factor", &RunConfig::gamma_max_factor);
    real_field("monitor.sv_tolerance", &RunConfig::sv_tolerance);
    t.push_back({"monitor.restart",
                 {[](RunConfig& c, const Value& v, int line) { c.restart = as_bool(v, "monitor.restart", line); },
                  [](const RunConfig& c) { return std::string(c.restart ? "true" : "false"); }}});
    t.push_back({"output.dir",
                 {[](RunConfig& c, const Value& v, int line) { c.output_dir = as_string(v, "output.dir", line); },
                  [](const RunConfig& c) { return "\"" + c.output_dir + "\""; }}});
    word_field("compare.a", &RunConfig::compare_a);
    word_field("compare.b", &RunConfig::compare_b);
    int_field("compare.levels", &RunConfig::compare_levels);
    int_field("picard.n_iters", &RunConfig::picard_iters);
    int_field("picard.substeps", &RunConfig::picard_substeps);
    int_field("harness.trials", &RunConfig::harness_trials);
    int_field("harness.N", &RunConfig::harness_N);
    int_field("harness.d", &RunConfig::harness_d);
    int_field("harness.R", &RunConfig::harness_R);
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return &f;
  return nullptr;
}

bool is_scheme(const std::string& s) {
  return s == "do" || s == "ambient" || s == "reference" || s == "picard";
}

}  // namespace

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::stringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    // Comments start at '#' outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) {
        s.resize(i);
        break;
      }
    }
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(ErrorKind::ParseError, line, "", "line " + std::to_string(line) + ": expected 'section.key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() || key.find_first_of(" \t") != std::string::npos)
      throw ConfigError(ErrorKind::ParseError, line, key,
                        "line " + std::to_string(line) + ": key must look like 'section.key'");
    if (!seen.insert(key).second)
      throw ConfigError(ErrorKind::ParseError, line, key, "line " + std::to_string(line) + ": duplicate key '" + key + "'");
    const Value v = parse_value(value, line);
    if (const Field* f = find_field(key)) {
      f->set(cfg, v, line);
      continue;
    }
    if (key.compare(0, 6, "model.") == 0) {
      const std::string pname = key.substr(6);
      if (const double* d = std::get_if<double>(&v))
        cfg.params[pname] = *d;
      else if (const auto* l = std::get_if<std::vector<double>>(&v))
        cfg.params[pname] = *l;
      else
        throw invalid(key, "model parameters must be numbers or lists", line);
      continue;
    }
    throw invalid(key, "unknown key", line);
  }
  validate_config(cfg);
  return cfg;
}

void validate_config(const RunConfig& c) {
  const auto& names = builtin_model_names();
  if (std::find(names.begin(), names.end(), c.model) == names.end()) throw invalid("model.name", "unknown model '" + c.model + "'");
  for (const auto& [key, value] : c.params) {
    (void)value;
    const auto& allowed = builtin_param_names(c.model);
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw invalid("model." + key, "unknown parameter for model '" + c.model + "'");
  }
  if (c.N < 1) throw invalid("run.N", "must be >= 1");
  if (c.d < 1) throw invalid("run.d", "must be >= 1");
  if (c.R < 1 || c.R > c.d) throw invalid("run.R", "must satisfy 1 <= R <= d");
  if (!(c.dt > 0.0) || !std::isfinite(c.dt)) throw invalid("run.dt", "must be positive");
  if (!(c.t_end > 0.0) || !std::isfinite(c.t_end)) throw invalid("run.t_end", "must be positive");
  if (c.dt > c.t_end) throw invalid("run.dt", "must not exceed t_end");
  if (!is_scheme(c.scheme)) throw invalid("run.scheme", "must be do, ambient, reference or picard");
  if (c.record_stride < 1) throw invalid("run.record_stride", "must be >= 1");
  if (c.level < 0 || c.level > 20) throw invalid("run.level", "must be in [0, 20]");
  if (c.n_max < 1) throw invalid("monitor.n_max", "must be >= 1");
  if (!(c.gamma_max_factor > 1.0)) throw invalid("monitor.gamma_max_factor", "must exceed 1");
  if (!(c.sv_tolerance > 0.0 && c.sv_tolerance < 1.0)) throw invalid("monitor.sv_tolerance", "must be in (0, 1)");
  if (c.output_dir.empty() || c.output_dir.find_first_of("\"\n#") != std::string::npos)
    throw invalid("output.dir", "must be a non-empty path without quotes or '#'");
  if (!is_scheme(c.compare_a) || c.compare_a == "picard") throw invalid("compare.a", "must be do, ambient or reference");
  if (!is_scheme(c.compare_b) || c.compare_b == "picard") throw invalid("compare.b", "must be do, ambient or reference");
  if (c.compare_levels < 1 || c.compare_levels > 12) throw invalid("compare.levels", "must be in [1, 12]");
  if (c.picard_iters < 1) throw invalid("picard.n_iters", "must be >= 1");
  if (c.picard_substeps < 1) throw invalid("picard.substeps", "must be >= 1");
  if (c.harness_trials < 0) throw invalid("harness.trials", "must be >= 0");
  if (c.harness_R < 1) throw invalid("harness.R", "must be >= 1");
  if (c.harness_N < c.harness_R) throw invalid("harness.N", "must be >= harness.R");
  if (c.harness_d < c.harness_R) throw invalid("harness.d", "must be >= harness.R");
  try {
    (void)builtin<double>(c.model, c.d, c.params);
  } catch (const Error& e) {
    std::string field = "model.name";
    for (const auto& [key, value] : c.params) {
      (void)value;
      if (std::string(e.what()).find(key) != std::string::npos) field = "model." + key;
    }
    throw invalid(field, e.what());
  }
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  for (const auto& [name, f] : fields()) {
    out << name << " = " << f.get(c) << "\n";
    if (name == "model.name") {
      for (const auto& [key, value] : c.params) {
        out << "model." << key << " = ";
        if (const double* d = std::get_if<double>(&value)) {
          out << format_real(*d);
        } else {
          const auto& list = std::get<std::vector<double>>(value);
          out << "[";
          for (std::size_t i = 0; i < list.size(); ++i) out << (i ? ", " : "") << format_real(list[i]);
          out << "]";
        }
        out << "\n";
      }
    }
  }
  return out.str();
}

std::string config_hash(const RunConfig& cfg) {
  RunConfig identity = cfg;
  identity.output_dir = RunConfig{}.output_dir;
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : serialize_config(identity)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dolr
