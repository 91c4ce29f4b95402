#include "dolr/acceptance.hpp"

#include "dolr/config.hpp"
#include "dolr/diagnostics.hpp"
#include "dolr/rank_control.hpp"
#include "dolr/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

namespace dolr {

namespace {

namespace fs = std::filesystem;
using Mat = Matrix<double>;
using Ens = Ensemble<double>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string sci(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

std::string fix(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::fixed << v;
  return os.str();
}

BrownianPath<double> coarsen(BrownianPath<double> path, std::size_t times) {
  for (std::size_t i = 0; i < times; ++i) path = path.coarsened();
  return path;
}

double frob_ortho(const Mat& U) {
  return (U * U.transpose() - Mat::Identity(U.rows(), U.rows())).norm();
}

// 1. R = d: the factored scheme reproduces Euler-Maruyama on the full state.
// In the canonical frame the comparison is componentwise; in a rotated frame
// components near zero only carry cancellation, so the gate is normwise there.
Outcome r_equals_d() {
  const int d = 4;
  const Index N = 256;
  const double dt = 1e-3;
  const auto m = builtin<double>("ou", d);
  const auto init = make_initial_datum(m, N, d, 11);
  const auto path = generate_path<double>(12, 100, dt, N, m.m);
  auto deviation = [&](const Mat& U0, const Ens& Y0) {
    DoState<double> s{0, U0, Y0};
    FullState<double> x{0, s.full()};
    double comp = 0, norm = 0;
    for (Index k = 0; k < 100; ++k) {
      s = step_do(m, s, dt, path.increment(k));
      x = step_reference(m, x, dt, path.increment(k));
      const Ens P = s.full();
      for (Index i = 0; i < N; ++i)
        for (Index j = 0; j < d; ++j)
          if (P(i, j) != x.X(i, j)) comp = std::max(comp, std::abs(P(i, j) - x.X(i, j)) / std::abs(x.X(i, j)));
      norm = std::max(norm, (P - x.X).norm() / x.X.norm());
    }
    return std::pair{comp, norm};
  };
  const auto canonical = deviation(Mat::Identity(d, d), init.Y0 * init.U0);
  const auto rotated = deviation(init.U0, init.Y0);
  const bool pass = canonical.first <= 1e-10 && rotated.second <= 1e-10;
  return {pass, "canonical frame componentwise " + sci(canonical.first) + "; rotated frame normwise " +
                    sci(rotated.second) + " (componentwise " + sci(rotated.first) + "); tol 1e-10"};
}

// 2. Orthonormality at every step and second-order gauge defect.
Outcome ortho_and_gauge() {
  const int d = 6, R = 2;
  const Index N = 256;
  const std::vector<double> dts{1e-3, 5e-4, 2.5e-4};
  bool pass = true;
  std::ostringstream os;
  double worst_ortho = 0;
  for (const auto& name : builtin_model_names()) {
    const auto m = builtin<double>(name, d);
    const auto init = make_initial_datum(m, N, R, 21);
    const auto path = generate_path<double>(22, 4000, dts.back(), N, m.m);
    std::vector<double> gauge;
    for (std::size_t l = 0; l < dts.size(); ++l) {
      const auto p = coarsen(path, dts.size() - 1 - l);
      IntegrateOptions<double> opts;
      opts.t_end = 1;
      opts.dt = dts[l];
      opts.record_stride = 1;
      const auto traj = integrate(m, init, opts, p);
      if (l == 0)
        for (const auto& U : traj.U) worst_ortho = std::max(worst_ortho, frob_ortho(U));
      double g = 0;
      for (const auto& row : traj.diagnostics) g = std::max(g, row.gauge_defect);
      gauge.push_back(g);
    }
    os << name << ":";
    // Drifts that keep span(U) invariant leave only rounding in the gauge defect.
    if (gauge.front() <= 1e-13) {
      os << " gauge at rounding " << sci(gauge.front()) << "; ";
      continue;
    }
    const double slope = loglog_slope(dts, gauge);
    if (slope < 1.8) pass = false;
    os << " gauge slope " << fix(slope) << "; ";
  }
  if (worst_ortho > 1e-10) pass = false;
  os << "max ||UU^T-I||_F " << sci(worst_ortho) << " (tol 1e-10, slope >= 1.8)";
  return {pass, os.str()};
}

// 3. DO and ambient DLRA converge to each other at first order.
Outcome do_vs_ambient() {
  const int d = 16, R = 2;
  const Index N = 512;
  const std::vector<double> dts{1e-2, 5e-3, 2.5e-3};
  const auto m = builtin<double>("linear_lowrank", d);
  const auto init = make_initial_datum(m, N, R, 31);
  const auto fine = generate_path<double>(32, 400, dts.back(), N, m.m);
  std::vector<double> err;
  for (std::size_t l = 0; l < dts.size(); ++l) {
    const auto p = coarsen(fine, dts.size() - 1 - l);
    IntegrateOptions<double> opts;
    opts.t_end = 1;
    opts.dt = dts[l];
    opts.R = R;
    opts.record_stride = 1;
    const auto a = integrate(m, init, opts, p);
    opts.scheme = Scheme::Ambient;
    const auto b = integrate(m, init, opts, p);
    err.push_back(compare_trajectories(a, b).sup_error);
  }
  const double rate = *convergence_rate(dts, err);
  return {rate >= 0.9, "sup l2 errors " + sci(err[0]) + ", " + sci(err[1]) + ", " + sci(err[2]) + "; rate " +
                           fix(rate) + " (need >= 0.9)"};
}

// 4. Rotating the initial frame rotates the whole solution.
Outcome equivariance() {
  const int d = 8, R = 3;
  const Index N = 256;
  const auto m = builtin<double>("additive_floor", d);
  const auto init = make_initial_datum(m, N, R, 41);
  const auto path = generate_path<double>(42, 100, 1e-3, N, m.m);
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Mat theta = detail::random_orthogonal<double>(CounterRng(43), R, static_cast<std::uint64_t>(trial));
    const auto rep = rotation_equivariance_check(m, init.U0, init.Y0, theta, path, 0.1, 1e-3);
    worst = std::max(worst, rep.sup_product_defect);
  }
  return {worst <= 1e-8, "10 trials, max product defect " + sci(worst) + " (tol 1e-8)"};
}

// 5. Picard iterates stay in the ball and contract.
Outcome picard() {
  const int d = 4, R = 2;
  const Index N = 256;
  const auto m = builtin<double>("ou", d);
  const auto init = make_initial_datum(m, N, R, 51);
  const auto b = well_posedness_bounds(init.Y0, d, m.C_lgb, 1.0);
  const auto path = generate_path<double>(52, 64, b.delta / 64, N, m.m);
  const auto res = picard_local_solve(m, init.U0, init.Y0, path, 7);
  bool pass = true;
  double worst_U = 0, worst_Y = 0, worst_ratio = 0;
  for (std::size_t n = 0; n < res.sup_U_sq.size(); ++n) {
    worst_U = std::max(worst_U, res.sup_U_sq[n]);
    worst_Y = std::max(worst_Y, res.sup_Y_sq[n]);
  }
  const double y_bound = 3 * b.rho * b.rho + 1;
  if (worst_U > 3.0 * R || worst_Y > y_bound) pass = false;
  for (std::size_t n = 2; n <= 6; ++n) {
    if (!(res.delta[n + 1] <= 0.5 * res.delta[n])) pass = false;
    if (res.delta[n] > 0) worst_ratio = std::max(worst_ratio, res.delta[n + 1] / res.delta[n]);
  }
  return {pass, "delta " + sci(b.delta) + "; sup ||U||^2 " + fix(worst_U) + " <= " + fix(3.0 * R) + "; E sup|Y|^2 " +
                    fix(worst_Y) + " <= " + fix(y_bound) + "; max ratio n=2..6 " + sci(worst_ratio) + " (<= 0.5)"};
}

// 6. Second moments of Y and X stay below M(T).
Outcome stability() {
  const int d = 4, R = 2;
  const Index N = 1024;
  const double dt = 1e-3, T = 1;
  bool pass = true;
  std::ostringstream os;
  for (const auto& name : builtin_model_names()) {
    const auto m = builtin<double>(name, d);
    const auto init = make_initial_datum(m, N, R, 61);
    const auto path = generate_path<double>(62, 1000, dt, N, m.m);
    const double M = stability_bound_M(T, gram(init.Y0).gram.trace(), m.C_lgb);
    IntegrateOptions<double> opts;
    opts.t_end = T;
    opts.dt = dt;
    opts.record_stride = 10;
    const auto a = integrate(m, init, opts, path);
    opts.scheme = Scheme::Reference;
    const auto b = integrate(m, init, opts, path);
    double peak = 0;
    for (const auto& Y : a.Y) peak = std::max(peak, moment_estimator(std::vector<Ens>{Y}, 1)[0]);
    for (const auto& X : b.X) peak = std::max(peak, moment_estimator(std::vector<Ens>{X}, 1)[0]);
    if (!(peak <= M)) pass = false;
    os << name << " " << fix(peak) << "/" << sci(M) << "; ";
  }
  return {pass, "peak E|.|^2 / M(T): " + os.str()};
}

// 7. 2k-th moments stay below their closed-form curve.
Outcome moments() {
  const int d = 4, R = 2;
  const Index N = 1024;
  const double dt = 1e-3;
  const auto m = builtin<double>("additive_floor", d);
  const auto init = make_initial_datum(m, N, R, 71);
  const auto path = generate_path<double>(72, 1000, dt, N, m.m);
  IntegrateOptions<double> opts;
  opts.t_end = 1;
  opts.dt = dt;
  opts.record_stride = 10;
  const auto a = integrate(m, init, opts, path);
  opts.scheme = Scheme::Reference;
  const auto b = integrate(m, init, opts, path);
  bool pass = true;
  std::ostringstream os;
  for (int k = 1; k <= 2; ++k) {
    const double e0 = moment_estimator(std::vector<Ens>{init.Y0}, k)[0];
    const auto my = moment_estimator(a.Y, k);
    const auto mx = moment_estimator(b.X, k);
    double worst = 0, worst_later = 0;
    for (std::size_t j = 0; j < a.times.size(); ++j) {
      const double bound = moment_bound_2k(k, a.times[j], e0, m.C_lgb);
      const double r = std::max(my[j], mx[j]) / bound;
      worst = std::max(worst, r);
      if (j > 0) worst_later = std::max(worst_later, r);
    }
    if (!(worst <= 1)) pass = false;
    os << "k=" << k << " max moment/bound " << sci(worst) << " (t > 0: " << sci(worst_later) << "); ";
  }
  return {pass, os.str() + "(need <= 1)"};
}

// 8. Increment moments scale like h^k.
Outcome holder() {
  const int d = 4, R = 2;
  const Index N = 4096;
  const double dt = 1e-3;
  const auto m = builtin<double>("additive_floor", d);
  const auto init = make_initial_datum(m, N, R, 81);
  const auto path = generate_path<double>(82, 1000, dt, N, m.m);
  IntegrateOptions<double> opts;
  opts.t_end = 1;
  opts.dt = dt;
  opts.record_stride = 4;
  const auto traj = integrate(m, init, opts, path);
  const std::vector<int> gaps{1, 2, 4, 8, 16};
  const double s1 = holder_estimator(traj.X, 1, gaps, 4 * dt);
  const double s2 = holder_estimator(traj.X, 2, gaps, 4 * dt);
  return {s1 >= 0.9 && s1 <= 1.3 && s2 >= 1.8,
          "k=1 slope " + fix(s1) + " (in [0.9, 1.3]); k=2 slope " + fix(s2) + " (>= 1.8)"};
}

// 9. Planted mode crossing: detection, level crossings and restart.
Outcome explosion() {
  const int d = 3, R = 2;
  const Index N = 512;
  const double dt = 1e-3, t_star = 1.0;
  const auto m = builtin<double>("mode_crossing", d, {{"t_star", t_star}});
  const auto init = make_initial_datum(m, N, R, 91);
  const auto path = generate_path<double>(92, 1500, dt, N, m.m);
  auto mon = make_monitor(init.Y0, d, m.C_lgb);
  const double gamma_max = RestartPolicy<double>{}.gamma_max_factor * mon.base_inv_norm;
  IntegrateOptions<double> opts;
  opts.t_end = 1.5;
  opts.dt = dt;
  opts.record_stride = 10;
  const auto traj = integrate(m, init, opts, path, explosion_hooks(mon, RestartPolicy<double>{}));
  const auto verdict = detect_explosion(traj.diagnostics, gamma_max);
  if (!verdict.exploded || traj.events.empty()) return {false, "no explosion detected"};
  const auto& ev = traj.events.front();
  const double te = *verdict.T_e_estimate;
  // Longest run of consecutive inverse-norm levels with nondecreasing times before the event.
  int run = 0, best = 0, last_n = 0;
  double last_t = -1;
  for (const auto& c : mon.crossed) {
    if (c.segment != 0 || c.which != CrossingKind::InvNorm || !(c.t < ev.t_event)) continue;
    run = (run > 0 && c.n == last_n + 1 && c.t >= last_t) ? run + 1 : 1;
    best = std::max(best, run);
    last_n = c.n;
    last_t = c.t;
  }
  const double jump = l2_distance(ev.X_restart, ev.X_previous);
  const double jump_tol = std::sqrt(ev.discarded_mass) + 10 * dt;
  const bool pass = std::abs(te - t_star) <= 0.05 && best >= 5 && jump <= jump_tol && !traj.halted;
  return {pass, "T_e " + fix(te) + " (|T_e - 1| <= 0.05); " + std::to_string(best) + " consecutive levels (>= 5); rank " +
                    std::to_string(ev.old_rank) + "->" + std::to_string(ev.new_rank) + "; jump " + sci(jump) +
                    " <= " + sci(jump_tol)};
}

// 10. Nondegenerate additive noise keeps C_Y invertible.
Outcome noise_floor() {
  const int d = 4, R = 2;
  const Index N = 512;
  const double dt = 1e-3, T = 10;
  const auto m = builtin<double>("additive_floor", d);
  const auto init = make_initial_datum(m, N, R, 101);
  const auto path = generate_path<double>(102, 10000, dt, N, m.m);
  auto mon = make_monitor(init.Y0, d, m.C_lgb);
  RestartPolicy<double> policy;
  policy.enabled = false;
  IntegrateOptions<double> opts;
  opts.t_end = T;
  opts.dt = dt;
  opts.record_stride = 1000;
  const auto traj = integrate(m, init, opts, path, explosion_hooks(mon, policy));
  const auto verdict = detect_explosion(traj.diagnostics, policy.gamma_max_factor * mon.base_inv_norm);
  double lmin = gram(init.Y0).lambda_min;
  for (const auto& row : traj.diagnostics) lmin = std::min(lmin, row.lambda_min);
  const auto b = well_posedness_bounds(init.Y0, d, m.C_lgb, T);
  const double floor = noise_floor_bound(m, b, gram(init.Y0).lambda_min);
  const bool pass = !traj.halted && !verdict.exploded && traj.events.empty() && lmin >= 0.5 * floor;
  return {pass, std::string(traj.halted || verdict.exploded ? "exploded" : "no explosion") + "; min lambda_min " +
                    sci(lmin) + " >= 0.5 * " + sci(floor) + " (M(T) " + sci(b.M_T) +
                    (floor > 0 ? ")" : ", so the bound is vacuous at this horizon)")};
}

// 11. eta grid monotonicity and the projector Lipschitz bounds.
Outcome eta_and_projectors() {
  std::vector<double> grid;
  for (int i = -12; i <= 12; ++i) grid.push_back(std::pow(2.0, 0.5 * i));
  int violations = 0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const double e = eta_radius(grid[i], grid[j]);
      if (!(e > 0)) ++violations;
      if (i + 1 < grid.size() && !(eta_radius(grid[i + 1], grid[j]) < e)) ++violations;
      if (j + 1 < grid.size() && !(eta_radius(grid[i], grid[j + 1]) < e)) ++violations;
    }
  const auto rep = projector_lipschitz_harness<double>(1000, 32, 8, 3, 111);
  const double worst = std::max({rep.max_ratio_U, rep.max_ratio_V, rep.max_ratio_combined});
  const bool pass = violations == 0 && rep.trials == 1000 && worst <= 1 + 1e-12;
  return {pass, "eta grid " + std::to_string(grid.size() * grid.size()) + " points, " + std::to_string(violations) +
                    " violations; harness " + std::to_string(rep.trials) + " trials, max ratio U " +
                    fix(rep.max_ratio_U) + " V " + fix(rep.max_ratio_V) + " combined " +
                    fix(rep.max_ratio_combined) + " (<= 1 + 1e-12)"};
}

std::map<std::string, std::string> read_csvs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".csv") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    files[entry.path().filename().string()] = os.str();
  }
  return files;
}

// 12. Byte-identical CSVs across repeated runs and thread counts.
Outcome determinism() {
  const int saved = num_threads();
  const int max_threads = std::max(2, static_cast<int>(std::thread::hardware_concurrency()));
  struct Case {
    std::string command;
    std::string config;
  };
  const std::vector<Case> cases{
      {"simulate", "model.name = additive_floor\nrun.N = 300\nrun.d = 5\nrun.R = 2\nrun.t_end = 0.5\n"},
      {"simulate", "model.name = linear_lowrank\nrun.scheme = ambient\nrun.N = 200\nrun.d = 6\nrun.t_end = 0.3\n"},
      {"simulate", "model.name = gbm_clipped\nrun.scheme = reference\nrun.N = 200\nrun.t_end = 0.3\n"},
      {"compare", "model.name = ou\nrun.N = 200\nrun.dt = 0.01\nrun.t_end = 0.5\n"},
      {"picard-demo", "model.name = ou\nrun.N = 128\npicard.n_iters = 5\n"},
      {"lipschitz-harness", "harness.trials = 50\n"},
      {"explosion-study", "model.name = mode_crossing\nrun.N = 200\nrun.d = 3\nrun.t_end = 1.2\n"},
  };
  const fs::path root = fs::temp_directory_path() / ("dolr_determinism_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  bool pass = true;
  std::size_t compared = 0;
  std::string failure;
  for (std::size_t c = 0; c < cases.size() && pass; ++c) {
    std::map<std::string, std::string> first;
    int run = 0;
    for (int threads : {1, 1, max_threads, max_threads}) {
      set_num_threads(threads);
      RunConfig cfg = parse_config(cases[c].config);
      cfg.output_dir = (root / (std::to_string(c) + "_" + std::to_string(run))).string();
      std::ostringstream err;
      const int code = run_command(cases[c].command, cfg, err);
      const auto files = read_csvs(cfg.output_dir);
      if (code != kExitOk || files.empty()) {
        pass = false;
        failure = cases[c].command + " exited " + std::to_string(code) + ": " + err.str();
        break;
      }
      if (run == 0) {
        first = files;
      } else if (files != first) {
        pass = false;
        failure = cases[c].command + " differs at " + std::to_string(threads) + " threads";
        break;
      }
      compared += files.size();
      ++run;
    }
  }
  set_num_threads(saved);
  std::error_code ec;
  fs::remove_all(root, ec);
  if (!pass) return {false, failure};
  return {true, std::to_string(cases.size()) + " configs x 4 runs (1, 1, " + std::to_string(max_threads) + ", " +
                    std::to_string(max_threads) + " threads), " + std::to_string(compared) +
                    " CSVs byte-identical to the first run"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "R=d exactness", r_equals_d},
      {2, "orthonormality and gauge", ortho_and_gauge},
      {3, "DO vs ambient DLRA", do_vs_ambient},
      {4, "rotation equivariance", equivariance},
      {5, "Picard contraction", picard},
      {6, "stability bounds", stability},
      {7, "moment bounds", moments},
      {8, "Hoelder scaling", holder},
      {9, "explosion and restart", explosion},
      {10, "noise-floor global existence", noise_floor},
      {11, "eta monotonicity and projector Lipschitz", eta_and_projectors},
      {12, "determinism", determinism},
  };
  return all;
}

}  // namespace

std::vector<CriterionResult> run_acceptance(std::ostream& out, const std::vector<int>& only) {
  std::vector<CriterionResult> results;
  for (const auto& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    CriterionResult r;
    r.id = c.id;
    r.name = c.name;
    const auto start = std::chrono::steady_clock::now();
    try {
      const Outcome o = c.run();
      r.pass = o.pass;
      r.detail = o.detail;
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("error: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << (r.pass ? "PASS" : "FAIL") << " [" << r.id << "] " << r.name << ": " << r.detail << " ("
        << std::fixed << std::setprecision(2) << r.seconds << " s)" << std::defaultfloat << std::endl;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace dolr
