#include "dolr/runner.hpp"

#include "dolr/diagnostics.hpp"
#include "dolr/rank_control.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>

#ifndef DOLR_BUILD_ID
#define DOLR_BUILD_ID "dev"
#endif

namespace dolr {

const char* build_id() { return DOLR_BUILD_ID; }

namespace {

namespace fs = std::filesystem;

class Csv {
 public:
  Csv(const fs::path& path, const RunConfig& cfg, const std::string& header) : out_(path) {
    if (!out_) throw Error(ErrorKind::ValidationError, "output.dir: cannot write " + path.string());
    out_ << "# config_hash=" << config_hash(cfg) << " seed=" << cfg.seed << "\n" << header << "\n";
  }

  template <typename... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << "\n";
  }

 private:
  static std::string cell(double v) { return format_real(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(long long v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }

  std::ofstream out_;
};

struct Context {
  const RunConfig& cfg;
  std::string command;
  fs::path dir;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

Index steps_for(const RunConfig& cfg) {
  return static_cast<Index>(std::llround(cfg.t_end / cfg.dt));
}

void write_manifest(const Context& ctx) {
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
  std::ofstream out(ctx.dir / "manifest.txt");
  out << "# config_hash=" << config_hash(ctx.cfg) << "\n";
  out << "# seed=" << ctx.cfg.seed << "\n";
  out << "# build_id=" << build_id() << "\n";
  out << "# command=" << ctx.command << "\n";
  out << "# threads=" << num_threads() << "\n";
  out << "# wall_time_seconds=" << format_real(wall) << "\n";
  out << serialize_config(ctx.cfg);
}

void write_trajectory(const Context& ctx, const Trajectory<double>& traj) {
  Csv csv(ctx.dir / "trajectory.csv", ctx.cfg, "t,kind,index,value");
  for (std::size_t j = 0; j < traj.X.size(); ++j) {
    const double t = traj.times[j];
    const auto& X = traj.X[j];
    for (Index c = 0; c < X.cols(); ++c) csv.row(t, "mean", static_cast<long>(c), ensemble_mean(X.col(c)));
    const auto f = second_moment_svd(X);
    for (Index c = 0; c < f.spectrum.size(); ++c) csv.row(t, "spectrum", static_cast<long>(c), f.spectrum(c));
    csv.row(t, "rank", 0L, static_cast<double>(f.rank()));
    if (j < traj.U.size()) {
      const auto& U = traj.U[j];
      for (Index r = 0; r < U.rows(); ++r)
        for (Index c = 0; c < U.cols(); ++c) csv.row(t, "U", static_cast<long>(r * U.cols() + c), U(r, c));
    }
  }
}

void write_diagnostics(const Context& ctx, const Trajectory<double>& traj) {
  Csv csv(ctx.dir / "diagnostics.csv", ctx.cfg, "t,gauge_defect,ortho_defect,gram_inv_frobenius,lambda_min");
  for (const auto& r : traj.diagnostics) csv.row(r.t, r.gauge_defect, r.ortho_defect, r.gram_inv_frobenius, r.lambda_min);
}

void write_events(const Context& ctx, const Trajectory<double>& traj) {
  Csv csv(ctx.dir / "events.csv", ctx.cfg, "t,old_rank,new_rank,discarded_mass,inv_norm_at_event");
  for (const auto& e : traj.events) csv.row(e.t_event, e.old_rank, e.new_rank, e.discarded_mass, e.inv_norm_at_event);
}

void write_crossings(const Context& ctx, const ExplosionMonitor<double>& mon) {
  Csv csv(ctx.dir / "crossings.csv", ctx.cfg, "segment,n,t,which,delta_n");
  for (const auto& c : mon.crossed)
    csv.row(c.segment, c.n, c.t, c.which == CrossingKind::InvNorm ? "inv_norm" : "y_norm", c.delta_n);
}

struct Setup {
  SdeModel<double> model;
  InitialDatum<double> init;
};

Setup setup(const RunConfig& cfg) {
  Setup s{builtin<double>(cfg.model, cfg.d, cfg.params), {}};
  s.init = make_initial_datum(s.model, cfg.N, cfg.R, cfg.seed);
  return s;
}

RestartPolicy<double> policy_of(const RunConfig& cfg) {
  RestartPolicy<double> p;
  p.enabled = cfg.restart;
  p.gamma_max_factor = cfg.gamma_max_factor;
  p.sv_tolerance = cfg.sv_tolerance;
  p.n_max = cfg.n_max;
  return p;
}

int run_do_with_monitor(Context& ctx, bool explosion_report) {
  const RunConfig& cfg = ctx.cfg;
  const auto s = setup(cfg);
  const Index n = steps_for(cfg);
  const auto path = generate_path<double>(cfg.seed, n, cfg.dt, cfg.N, s.model.m, cfg.level);
  IntegrateOptions<double> opts;
  opts.scheme = Scheme::Do;
  opts.t_end = cfg.t_end;
  opts.dt = cfg.dt;
  opts.R = cfg.R;
  opts.record_stride = cfg.record_stride;
  auto mon = make_monitor(s.init.Y0, cfg.d, s.model.C_lgb, cfg.n_max);
  const double base_inv_norm = mon.base_inv_norm;
  const auto traj = integrate(s.model, s.init, opts, path, explosion_hooks(mon, policy_of(cfg)));
  write_trajectory(ctx, traj);
  write_diagnostics(ctx, traj);
  write_events(ctx, traj);
  write_crossings(ctx, mon);
  if (explosion_report) {
    const auto verdict = detect_explosion(traj.diagnostics, cfg.gamma_max_factor * base_inv_norm);
    Csv csv(ctx.dir / "explosion.csv", cfg, "key,value");
    csv.row("exploded", verdict.exploded ? 1.0 : 0.0);
    csv.row("T_e_estimate", verdict.T_e_estimate ? *verdict.T_e_estimate : std::numeric_limits<double>::quiet_NaN());
    csv.row("events", static_cast<double>(traj.events.size()));
    for (const auto& e : traj.events)
      csv.row("jump_at_event", l2_distance(e.X_restart, e.X_previous));
  }
  write_manifest(ctx);
  if (traj.halted) throw Error(ErrorKind::SingularGram, traj.halt_reason);
  return kExitOk;
}

IntegrateOptions<double> options_for(const RunConfig& cfg, Scheme scheme) {
  IntegrateOptions<double> opts;
  opts.scheme = scheme;
  opts.t_end = cfg.t_end;
  opts.dt = cfg.dt;
  opts.R = cfg.R;
  opts.record_stride = cfg.record_stride;
  return opts;
}

int run_simulate(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (cfg.scheme == "picard") return -1;
  if (cfg.scheme == "do") return run_do_with_monitor(ctx, false);
  const auto s = setup(cfg);
  const auto path = generate_path<double>(cfg.seed, steps_for(cfg), cfg.dt, cfg.N, s.model.m, cfg.level);
  const auto traj = integrate(s.model, s.init, options_for(cfg, scheme_from_string(cfg.scheme)), path);
  write_trajectory(ctx, traj);
  write_diagnostics(ctx, traj);
  write_events(ctx, traj);
  write_manifest(ctx);
  return kExitOk;
}

int run_compare(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const auto s = setup(cfg);
  const Index n0 = steps_for(cfg);
  const int L = cfg.compare_levels;
  Csv errors(ctx.dir / "compare.csv", cfg, "level,dt,t,l2_error");
  std::vector<double> dts, sups;
  for (int k = 0; k < L; ++k) {
    const double dt = cfg.dt / static_cast<double>(Index(1) << k);
    const Index n = n0 << k;
    // All levels aggregate the same finest-grid noise.
    const auto path = generate_path<double>(cfg.seed, n, dt, cfg.N, s.model.m, cfg.level + (L - 1 - k));
    auto oa = options_for(cfg, scheme_from_string(cfg.compare_a));
    auto ob = options_for(cfg, scheme_from_string(cfg.compare_b));
    oa.dt = ob.dt = dt;
    oa.record_stride = ob.record_stride = cfg.record_stride << k;
    const auto ta = integrate(s.model, s.init, oa, path);
    const auto tb = integrate(s.model, s.init, ob, path);
    const auto rep = compare_trajectories(ta, tb);
    for (std::size_t j = 0; j < rep.times.size(); ++j) errors.row(k, dt, rep.times[j], rep.l2_errors[j]);
    dts.push_back(dt);
    sups.push_back(rep.sup_error);
  }
  Csv summary(ctx.dir / "compare_summary.csv", cfg, "key,level,dt,value");
  for (int k = 0; k < L; ++k) summary.row("sup_error", k, dts[static_cast<std::size_t>(k)], sups[static_cast<std::size_t>(k)]);
  std::optional<double> rate;
  try {
    rate = convergence_rate(dts, sups);
  } catch (const Error&) {
    rate.reset();
  }
  summary.row("convergence_rate", -1, std::numeric_limits<double>::quiet_NaN(),
              rate ? *rate : std::numeric_limits<double>::quiet_NaN());
  write_manifest(ctx);
  return kExitOk;
}

int run_picard(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const auto s = setup(cfg);
  const auto bounds = well_posedness_bounds(s.init.Y0, cfg.d, s.model.C_lgb, cfg.t_end);
  const double delta = bounds.delta;
  const auto path = generate_path<double>(cfg.seed, cfg.picard_substeps, delta / cfg.picard_substeps, cfg.N, s.model.m,
                                          cfg.level);
  const auto res = picard_local_solve(s.model, s.init.U0, s.init.Y0, path, cfg.picard_iters);
  Csv csv(ctx.dir / "picard.csv", cfg, "n,Delta,ratio,sup_U_sq,sup_Y_sq,U_bound,Y_bound,delta");
  const double u_bound = 3.0 * cfg.R;
  const double y_bound = 3.0 * bounds.rho * bounds.rho + 1.0;
  for (std::size_t n = 0; n < res.delta.size(); ++n) {
    const double ratio = n >= 2 && res.delta[n - 1] > 0 ? res.delta[n] / res.delta[n - 1]
                                                        : std::numeric_limits<double>::quiet_NaN();
    csv.row(static_cast<int>(n), res.delta[n], ratio, res.sup_U_sq[n], res.sup_Y_sq[n], u_bound, y_bound, delta);
  }
  write_manifest(ctx);
  return kExitOk;
}

int run_harness(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const auto rep =
      projector_lipschitz_harness<double>(cfg.harness_trials, cfg.harness_N, cfg.harness_d, cfg.harness_R, cfg.seed);
  Csv csv(ctx.dir / "harness.csv", cfg, "key,value");
  csv.row("trials", static_cast<double>(rep.trials));
  csv.row("max_ratio_U", rep.max_ratio_U);
  csv.row("max_ratio_V", rep.max_ratio_V);
  csv.row("max_ratio_combined", rep.max_ratio_combined);
  csv.row("max_relative_distance", rep.max_relative_distance);
  write_manifest(ctx);
  return kExitOk;
}

}  // namespace

int run_command(const std::string& command, const RunConfig& cfg, std::ostream& err) {
  auto report = [&err](const std::string& kind, const std::string& msg) {
    std::string escaped;
    for (char c : msg) {
      if (c == '"' || c == '\\') escaped += '\\';
      escaped += (c == '\n' ? ' ' : c);
    }
    err << "error kind=" << kind << " message=\"" << escaped << "\"\n";
  };
  try {
    validate_config(cfg);
    Context ctx{cfg, command, fs::path(cfg.output_dir)};
    fs::create_directories(ctx.dir);
    if (command == "simulate") {
      const int rc = run_simulate(ctx);
      return rc >= 0 ? rc : run_picard(ctx);
    }
    if (command == "compare") return run_compare(ctx);
    if (command == "picard-demo") return run_picard(ctx);
    if (command == "lipschitz-harness") return run_harness(ctx);
    if (command == "explosion-study") return run_do_with_monitor(ctx, true);
    report("UnknownCommand", "unknown subcommand '" + command + "'");
    return kExitConfig;
  } catch (const ConfigError& e) {
    report(to_string(e.kind()), e.what());
    return kExitConfig;
  } catch (const Error& e) {
    const bool config = e.kind() == ErrorKind::BadParams || e.kind() == ErrorKind::UnknownModel ||
                        e.kind() == ErrorKind::ValidationError || e.kind() == ErrorKind::ParseError;
    report(to_string(e.kind()), e.what());
    return config ? kExitConfig : kExitNumerical;
  } catch (const std::exception& e) {
    report("Internal", e.what());
    return kExitNumerical;
  }
}

}  // namespace dolr
