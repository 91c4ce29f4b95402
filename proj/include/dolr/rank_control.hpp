#pragma once

// Explosion-time monitoring (levels tau_n), blow-up detection, truncation of
// the second moment and restart of the DO solution with a lower rank.

#include "dolr/integrators.hpp"

namespace dolr {

enum class CrossingKind { InvNorm, YNorm };

template <typename Scalar>
struct Crossing {
  int n = 0;
  Scalar t = 0;
  CrossingKind which = CrossingKind::InvNorm;
  Scalar delta_n = 0;  // existence window certified at this level
  int segment = 0;     // restart count when the crossing happened
};

template <typename Scalar>
struct ExplosionMonitor {
  Scalar base_inv_norm = 0;  // ||C_{Y0}^{-1}||_F
  Scalar base_Y_norm = 0;    // ||Y0||
  int n_max = 64;
  int R = 1;
  int d = 1;
  Scalar C_lgb = 1;
  int next_level = 1;
  int segment = 0;
  std::vector<Crossing<Scalar>> crossed;
};

// delta(n): the Picard window with rho_n^2 = rho0^2 + n and
// gamma_n^2 = gamma0^2 + n.
template <typename Scalar>
Scalar picard_delta_n(int n, int R, Scalar rho0, Scalar gamma0, int d, Scalar C_lgb) {
  const Scalar nn = static_cast<Scalar>(n);
  return picard_delta(R, std::sqrt(rho0 * rho0 + nn), std::sqrt(gamma0 * gamma0 + nn), d, C_lgb);
}

template <typename Scalar>
Scalar ensemble_norm(const Ensemble<Scalar>& Y) {
  return std::sqrt(ensemble_mean(Vector<Scalar>(Y.rowwise().squaredNorm())));
}

template <typename Scalar>
ExplosionMonitor<Scalar> make_monitor(const Ensemble<Scalar>& Y0, int d, Scalar C_lgb, int n_max = 64) {
  const auto rep = gram(Y0);
  if (!rep.invertible()) throw Error(ErrorKind::SingularGram, "make_monitor: C_{Y0} not invertible");
  ExplosionMonitor<Scalar> mon;
  mon.base_inv_norm = rep.inv_frobenius;
  mon.base_Y_norm = ensemble_norm(Y0);
  mon.n_max = n_max;
  mon.R = static_cast<int>(Y0.cols());
  mon.d = d;
  mon.C_lgb = C_lgb;
  return mon;
}

// Records every level n <= n_max first reached at this time by
// ||C_Y^{-1}||_F >= base_inv_norm + n or ||Y|| >= base_Y_norm + n. A missing
// inverse counts as +inf and crosses every remaining level.
template <typename Scalar>
std::vector<Crossing<Scalar>> monitor_update(ExplosionMonitor<Scalar>& mon, Scalar t, const GramReport<Scalar>& g,
                                             Scalar y_norm) {
  std::vector<Crossing<Scalar>> fresh;
  const Scalar inv = g.invertible() ? g.inv_frobenius : std::numeric_limits<Scalar>::infinity();
  while (mon.next_level <= mon.n_max) {
    const Scalar n = static_cast<Scalar>(mon.next_level);
    const bool by_inv = inv >= mon.base_inv_norm + n;
    const bool by_y = y_norm >= mon.base_Y_norm + n;
    if (!by_inv && !by_y) break;
    Crossing<Scalar> c;
    c.n = mon.next_level;
    c.t = t;
    c.which = by_inv ? CrossingKind::InvNorm : CrossingKind::YNorm;
    c.delta_n = picard_delta_n(mon.next_level, mon.R, mon.base_Y_norm, mon.base_inv_norm, mon.d, mon.C_lgb);
    c.segment = mon.segment;
    fresh.push_back(c);
    mon.crossed.push_back(c);
    ++mon.next_level;
  }
  return fresh;
}

template <typename Scalar>
struct ExplosionVerdict {
  bool exploded = false;
  std::optional<Scalar> T_e_estimate;
};

// First diagnostics row whose ||C_Y^{-1}||_F exceeds gamma_max or is not
// finite (inversion failed).
template <typename Scalar>
ExplosionVerdict<Scalar> detect_explosion(const std::vector<DiagnosticRow>& rows, Scalar gamma_max) {
  ExplosionVerdict<Scalar> v;
  for (const auto& r : rows) {
    if (!std::isfinite(r.gram_inv_frobenius) || r.gram_inv_frobenius > static_cast<double>(gamma_max)) {
      v.exploded = true;
      v.T_e_estimate = static_cast<Scalar>(r.t);
      break;
    }
  }
  return v;
}

template <typename Scalar>
struct RestartResult {
  DoState<Scalar> state;
  Vector<Scalar> spectrum;  // eigenvalues of E[X X^T], descending
  Scalar discarded_mass = 0;
  int new_rank = 0;
};

// Canonical truncation of X: keep the eigenvalues of E[X X^T] above
// sv_tolerance * trace (at most max_rank when max_rank >= 0); U' holds the
// retained eigenvectors as rows and Y'_i = U' X_i.
template <typename Scalar>
RestartResult<Scalar> truncate_and_restart(const FullState<Scalar>& event, Scalar sv_tolerance, int max_rank = -1) {
  const auto f = second_moment_svd(event.X, static_cast<double>(sv_tolerance), max_rank);
  if (f.rank() == 0) throw Error(ErrorKind::ZeroState, "truncate_and_restart: no eigenvalue above tolerance");
  RestartResult<Scalar> out;
  out.state.t = event.t;
  out.state.U = f.Q.transpose();
  out.state.Y = event.X * f.Q;
  out.spectrum = f.spectrum;
  out.new_rank = f.rank();
  Scalar tail = 0;
  for (Index k = f.spectrum.size() - 1; k >= f.rank(); --k) tail += std::max(f.spectrum(k), Scalar(0));
  out.discarded_mass = tail;
  return out;
}

// Noise-floor lower bound on lambda_min(C_Y):
// min{sigma_Y0, sigma_B^2 / (4 C_lgb (1 + M(T)))}.
template <typename Scalar>
Scalar noise_floor_bound(Scalar sigma_B, Scalar C_lgb, Scalar M_T, Scalar sigma_Y0) {
  if (!(sigma_B > Scalar(0))) throw Error(ErrorKind::NoFloorDeclared, "sigma_B must be positive");
  return std::min(sigma_Y0, sigma_B * sigma_B / (Scalar(4) * C_lgb * (Scalar(1) + M_T)));
}

template <typename Scalar>
Scalar noise_floor_bound(const SdeModel<Scalar>& model, const WellPosednessBounds<Scalar>& bounds, Scalar sigma_Y0) {
  if (!(model.sigma_B > Scalar(0))) throw Error(ErrorKind::NoFloorDeclared, model.name + " declares no noise floor");
  return noise_floor_bound(model.sigma_B, model.C_lgb, bounds.M_T, sigma_Y0);
}

template <typename Scalar>
struct RestartPolicy {
  bool enabled = true;
  Scalar gamma_max_factor = Scalar(1e8);
  Scalar sv_tolerance = Scalar(1e-8);
  int n_max = 64;
};

// Hooks that feed the monitor after every DO step, flag an explosion when
// ||C_Y^{-1}||_F exceeds gamma_max_factor * base or C_Y is singular, and
// restart from the truncated second moment. The restart rank is set by the
// spectrum, capped at old_rank - 1. The monitor is rebased after a restart.
template <typename Scalar>
IntegrateHooks<Scalar> explosion_hooks(ExplosionMonitor<Scalar>& mon, const RestartPolicy<Scalar>& policy) {
  IntegrateHooks<Scalar> hooks;
  hooks.after_step = [&mon, policy](const DoState<Scalar>& s, const GramReport<Scalar>& g) {
    monitor_update(mon, s.t, g, ensemble_norm(s.Y));
    return !g.invertible() || g.inv_frobenius > policy.gamma_max_factor * mon.base_inv_norm;
  };
  if (!policy.enabled) return hooks;
  hooks.restart = [&mon, policy](const DoState<Scalar>& event, const DoState<Scalar>& previous,
                                 RankEvent<Scalar>& ev) -> std::optional<DoState<Scalar>> {
    const int old_rank = static_cast<int>(event.U.rows());
    if (old_rank <= 1) return std::nullopt;
    const auto g = gram(event.Y);
    const FullState<Scalar> full{event.t, event.full()};
    RestartResult<Scalar> res;
    try {
      res = truncate_and_restart(full, policy.sv_tolerance, old_rank - 1);
    } catch (const Error&) {
      return std::nullopt;
    }
    ev.t_event = event.t;
    ev.singular_values = g.eigenvalues;
    ev.old_rank = old_rank;
    ev.new_rank = res.new_rank;
    ev.discarded_mass = res.discarded_mass;
    ev.inv_norm_at_event = g.inv_frobenius;
    ev.X_snapshot = full.X;
    ev.X_previous = previous.full();
    ev.X_restart = res.state.full();
    const auto rep = gram(res.state.Y);
    if (rep.invertible()) {
      mon.base_inv_norm = rep.inv_frobenius;
      mon.base_Y_norm = ensemble_norm(res.state.Y);
      mon.R = res.new_rank;
      mon.next_level = 1;
      ++mon.segment;
    }
    return res.state;
  };
  return hooks;
}

}  // namespace dolr
