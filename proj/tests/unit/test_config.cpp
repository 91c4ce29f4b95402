#include "dolr/config.hpp"
#include "dolr/random.hpp"
#include "dolr/runner.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dolr;
namespace fs = std::filesystem;

namespace {

ConfigError parse_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e;
  }
  FAIL("expected a ConfigError for:\n" << text);
  return ConfigError(ErrorKind::ParseError, 0, "", "");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dolr_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

// Random valid configuration drawn from a counter-based stream.
RunConfig random_config(std::uint64_t k) {
  const CounterRng rng(k);
  auto u = [&](std::uint64_t slot) { return rng.uniform(k, slot, 0); };
  auto pick = [&](std::uint64_t slot, int n) { return static_cast<int>(u(slot) * n); };
  RunConfig c;
  const auto& names = builtin_model_names();
  c.model = names[static_cast<std::size_t>(pick(1, static_cast<int>(names.size())))];
  c.d = 2 + pick(2, 10);
  c.R = 1 + pick(3, c.d);
  if (c.model == "mode_crossing") c.R = std::max(c.R, 2);
  if (c.model == "ou") c.params["kappa"] = 0.1 + u(4) * 3.0;
  if (c.model == "additive_floor") c.params["sigma"] = 0.01 + u(5);
  if (c.model == "gbm_clipped") c.params["clip"] = 1.0 + u(6) * 1e3;
  if (c.model == "linear_lowrank") {
    std::vector<double> lam;
    const int R = 1 + pick(7, c.d);
    for (int j = 0; j < R; ++j) lam.push_back(-u(8 + static_cast<std::uint64_t>(j)) * 5.0);
    c.params["lambda"] = lam;
  }
  c.N = 1 + pick(20, 5000);
  c.t_end = 0.1 + u(21) * 10;
  c.dt = c.t_end * (1e-6 + u(22) * 0.1);
  c.seed = static_cast<std::uint64_t>(pick(23, 1 << 30));
  const char* schemes[] = {"do", "ambient", "reference", "picard"};
  c.scheme = schemes[pick(24, 4)];
  c.record_stride = 1 + pick(25, 100);
  c.level = pick(26, 5);
  c.gamma_max_factor = 1.5 + u(27) * 1e12;
  c.sv_tolerance = 1e-14 + u(28) * 0.5;
  c.restart = u(29) < 0.5;
  c.output_dir = "runs/case_" + std::to_string(k);
  c.compare_levels = 1 + pick(30, 6);
  c.picard_iters = 1 + pick(31, 20);
  c.harness_R = 1 + pick(32, 4);
  c.harness_N = c.harness_R + pick(33, 40);
  c.harness_d = c.harness_R + pick(34, 10);
  return c;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("minimal config fills defaults") {
    const auto c = parse_config("model.name = ou\n");
    RunConfig expect;
    CHECK(c == expect);
    const auto d = parse_config("# comment\n\nmodel.name = additive_floor   # trailing\nrun.N = 64\nmodel.kappa = 2\n");
    CHECK(d.model == "additive_floor");
    CHECK(d.N == 64);
    CHECK(std::get<double>(d.params.at("kappa")) == 2.0);
    CHECK(d.dt == 1e-3);
  }

  TEST_CASE("validation errors name the field") {
    auto e = parse_error("model.name = ou\nrun.dt = -0.1\n");
    CHECK(e.kind() == ErrorKind::ValidationError);
    CHECK(e.field() == "run.dt");
    CHECK(e.line() == 0);
    e = parse_error("run.R = 9\nrun.d = 4\n");
    CHECK(e.field() == "run.R");
    e = parse_error("run.dt = 2\nrun.t_end = 1\n");
    CHECK(e.field() == "run.dt");
    e = parse_error("model.name = heston\n");
    CHECK(e.field() == "model.name");
    e = parse_error("model.name = ou\nmodel.lambda = [1, 2]\n");
    CHECK(e.field() == "model.lambda");
    e = parse_error("model.name = linear_lowrank\nmodel.lambda = [1, -2]\n");
    CHECK(e.field() == "model.lambda");
    e = parse_error("run.scheme = implicit\n");
    CHECK(e.field() == "run.scheme");
    e = parse_error("run.N = 2.5\n");
    CHECK(e.field() == "run.N");
    CHECK(e.line() == 1);
    e = parse_error("monitor.restart = maybe\n");
    CHECK(e.field() == "monitor.restart");
  }

  TEST_CASE("unknown keys are rejected") {
    auto e = parse_error("model.name = ou\nrun.steps = 10\n");
    CHECK(e.kind() == ErrorKind::ValidationError);
    CHECK(e.field() == "run.steps");
    CHECK(e.line() == 2);
    e = parse_error("solver.dt = 1\n");
    CHECK(e.field() == "solver.dt");
  }

  TEST_CASE("parse errors carry the line number") {
    auto e = parse_error("model.name = ou\n\nrun.N 12\n");
    CHECK(e.kind() == ErrorKind::ParseError);
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    e = parse_error("run.N = 1\nrun.N = 2\n");
    CHECK(e.kind() == ErrorKind::ParseError);
    CHECK(e.line() == 2);
    e = parse_error("model.name = ou\nmodel.lambda = [1, 2\n");
    CHECK(e.line() == 2);
    e = parse_error("output.dir = \"abc\n");
    CHECK(e.kind() == ErrorKind::ParseError);
    e = parse_error("model.name = ou\nrun.dt =\n");
    CHECK(e.line() == 2);
    e = parse_error("name = ou\n");
    CHECK(e.kind() == ErrorKind::ParseError);
    e = parse_error("model.lambda = [1, x]\n");
    CHECK(e.kind() == ErrorKind::ParseError);
  }

  TEST_CASE("serialize then parse round-trips") {
    for (std::uint64_t k = 0; k < 300; ++k) {
      const RunConfig c = random_config(k);
      REQUIRE_NOTHROW(validate_config(c));
      const std::string text = serialize_config(c);
      const RunConfig back = parse_config(text);
      CHECK(back == c);
      CHECK(serialize_config(back) == text);
      CHECK(config_hash(back) == config_hash(c));
    }
    CHECK(config_hash(random_config(1)) != config_hash(random_config(2)));
    CHECK(format_real(0.1) == "0.10000000000000001");
  }

  TEST_CASE("simulate writes every artifact and is byte-reproducible") {
    RunConfig c = parse_config("model.name = additive_floor\nrun.N = 64\nrun.d = 4\nrun.R = 2\nrun.t_end = 0.2\n");
    const auto dir = scratch("sim");
    std::ostringstream err;
    c.output_dir = (dir / "a").string();
    REQUIRE(run_command("simulate", c, err) == kExitOk);
    c.output_dir = (dir / "b").string();
    set_num_threads(3);
    REQUIRE(run_command("simulate", c, err) == kExitOk);
    set_num_threads(1);
    CHECK(err.str().empty());
    for (const char* f : {"trajectory.csv", "diagnostics.csv", "events.csv"}) {
      const auto a = slurp(dir / "a" / f);
      CHECK(!a.empty());
      CHECK(a == slurp(dir / "b" / f));
    }
    const std::string traj = slurp(dir / "a" / "trajectory.csv");
    CHECK(traj.find("# config_hash=") == 0);
    CHECK(traj.find("\nt,kind,index,value\n") != std::string::npos);
    CHECK(slurp(dir / "a" / "diagnostics.csv").find("t,gauge_defect,ortho_defect,gram_inv_frobenius,lambda_min") !=
          std::string::npos);
    CHECK(slurp(dir / "a" / "events.csv").find("t,old_rank,new_rank,discarded_mass,inv_norm_at_event") !=
          std::string::npos);
    const std::string manifest = slurp(dir / "a" / "manifest.txt");
    for (const char* key : {"config_hash=", "seed=", "build_id=", "wall_time_seconds="})
      CHECK(manifest.find(key) != std::string::npos);
    // The manifest is itself a config for the same run, up to the output directory.
    RunConfig again = parse_config(manifest);
    again.output_dir = c.output_dir;
    CHECK(again == c);
    fs::remove_all(dir);
  }

  TEST_CASE("simulate with every scheme") {
    const auto dir = scratch("schemes");
    for (const char* scheme : {"do", "ambient", "reference", "picard"}) {
      RunConfig c = parse_config("model.name = ou\nrun.N = 32\nrun.t_end = 0.05\n");
      c.scheme = scheme;
      c.output_dir = (dir / scheme).string();
      std::ostringstream err;
      CHECK(run_command("simulate", c, err) == kExitOk);
      CHECK(fs::exists(dir / scheme / "manifest.txt"));
    }
    CHECK(fs::exists(dir / "picard" / "picard.csv"));
    fs::remove_all(dir);
  }

  TEST_CASE("explosion study on mode_crossing") {
    RunConfig c = parse_config(
        "model.name = mode_crossing\nmodel.t_star = 1\nrun.N = 128\nrun.d = 3\nrun.R = 2\nrun.t_end = 1.3\n");
    const auto dir = scratch("explosion");
    c.output_dir = dir.string();
    std::ostringstream err;
    REQUIRE(run_command("explosion-study", c, err) == kExitOk);
    std::istringstream events(slurp(dir / "events.csv"));
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(events, line))
      if (!line.empty() && line[0] != '#' && line[0] != 't') rows.push_back(line);
    REQUIRE(rows.size() == 1);
    const double t_event = std::stod(rows[0].substr(0, rows[0].find(',')));
    CHECK(std::abs(t_event - 1.0) <= 0.05);
    CHECK(rows[0].find(",2,1,") != std::string::npos);
    CHECK(slurp(dir / "explosion.csv").find("exploded,1") != std::string::npos);
    CHECK(fs::exists(dir / "crossings.csv"));

    c.restart = false;
    CHECK(run_command("explosion-study", c, err) == kExitNumerical);
    CHECK(err.str().find("error kind=SingularGram") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("compare do and ambient on linear_lowrank") {
    RunConfig c = parse_config(
        "model.name = linear_lowrank\nrun.N = 128\nrun.d = 6\nrun.R = 2\nrun.t_end = 0.5\nrun.dt = 0.01\n"
        "run.record_stride = 5\ncompare.levels = 3\n");
    const auto dir = scratch("compare");
    c.output_dir = dir.string();
    std::ostringstream err;
    REQUIRE(run_command("compare", c, err) == kExitOk);
    const std::string summary = slurp(dir / "compare_summary.csv");
    const auto pos = summary.find("convergence_rate");
    REQUIRE(pos != std::string::npos);
    const std::string row = summary.substr(pos, summary.find('\n', pos) - pos);
    const double rate = std::stod(row.substr(row.rfind(',') + 1));
    CHECK(rate > 0.8);
    CHECK(rate < 1.3);
    fs::remove_all(dir);
  }

  TEST_CASE("harness and picard artifacts") {
    RunConfig c = parse_config("model.name = ou\nharness.trials = 20\n");
    const auto dir = scratch("harness");
    c.output_dir = dir.string();
    std::ostringstream err;
    REQUIRE(run_command("lipschitz-harness", c, err) == kExitOk);
    CHECK(slurp(dir / "harness.csv").find("max_ratio_combined") != std::string::npos);
    REQUIRE(run_command("picard-demo", c, err) == kExitOk);
    CHECK(slurp(dir / "picard.csv").find("n,Delta,ratio") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("bad configs and unknown commands exit with the config code") {
    RunConfig c;
    c.dt = -1;
    std::ostringstream err;
    CHECK(run_command("simulate", c, err) == kExitConfig);
    CHECK(err.str().find("error kind=ValidationError") == 0);
    RunConfig ok;
    ok.output_dir = scratch("unknown").string();
    CHECK(run_command("bogus", ok, err) == kExitConfig);
    fs::remove_all(ok.output_dir);
  }
}
