#pragma once

// Time steppers: full-space Euler-Maruyama, the DO stepper on (U, Y), the
// ambient projected DLRA stepper, and the Picard construction on [0, delta].

#include "dolr/kernels.hpp"
#include "dolr/models.hpp"
#include "dolr/paths.hpp"

#include <functional>
#include <optional>

namespace dolr {

template <typename Scalar>
struct DoState {
  Scalar t = 0;
  Matrix<Scalar> U;    // R x d, orthonormal rows
  Ensemble<Scalar> Y;  // N x R

  Ensemble<Scalar> full() const { return Y * U; }
};

template <typename Scalar>
struct FullState {
  Scalar t = 0;
  Ensemble<Scalar> X;  // N x d
};

template <typename Scalar>
struct StepReport {
  Scalar gauge_defect = 0;  // ||U_n (U_{n+1} - U_n)^T||_F
  Scalar ortho_defect = 0;  // ||U_raw U_raw^T - I||_F before retraction
  Scalar gram_inv_frobenius = 0;
  Scalar lambda_min = 0;
  Scalar dt_used = 0;
};

// Raised by step_do when C_Y is not invertible; the input state is untouched.
template <typename Scalar>
class SingularGramError : public Error {
 public:
  SingularGramError(const std::string& what, GramReport<Scalar> report)
      : Error(ErrorKind::SingularGram, what), report_(std::move(report)) {}
  const GramReport<Scalar>& report() const { return report_; }

 private:
  GramReport<Scalar> report_;
};

namespace detail {

template <typename Scalar>
Ensemble<Scalar> eval_drift(const SdeModel<Scalar>& model, Scalar t, const Ensemble<Scalar>& X) {
  Ensemble<Scalar> A(X.rows(), X.cols());
  parallel_for(X.rows(), [&](Index i) { model.drift(t, X.row(i), A.row(i)); });
  return A;
}

// Per-atom b(t, X_i) dW_i as an N x d ensemble.
template <typename Scalar, typename DerivedW>
Ensemble<Scalar> eval_noise(const SdeModel<Scalar>& model, Scalar t, const Ensemble<Scalar>& X,
                            const Eigen::MatrixBase<DerivedW>& dW) {
  const Index N = X.rows();
  const Index d = X.cols();
  if (dW.rows() != N || dW.cols() != model.m)
    throw Error(ErrorKind::ShapeMismatch, "noise increments must be N x m");
  Ensemble<Scalar> D(N, d);
  if (model.additive) {
    Matrix<Scalar> B(d, model.m);
    model.diffusion(t, RowVector<Scalar>::Zero(d), B);
    D.noalias() = dW * B.transpose();
    return D;
  }
  parallel_for(N, [&](Index i) {
    Matrix<Scalar> B(d, model.m);
    model.diffusion(t, X.row(i), B);
    D.row(i).noalias() = dW.row(i) * B.transpose();
  });
  return D;
}

template <typename Scalar>
void require_finite(const Ensemble<Scalar>& X, const char* who) {
  if (!all_finite(X)) throw Error(ErrorKind::NonFiniteState, std::string(who) + ": state became non-finite");
}

}  // namespace detail

// X+ = X + a(t, X) dt + b(t, X) dW per atom.
template <typename Scalar, typename DerivedW>
FullState<Scalar> step_reference(const SdeModel<Scalar>& model, const FullState<Scalar>& state, Scalar dt,
                                 const Eigen::MatrixBase<DerivedW>& dW) {
  if (!(dt > Scalar(0))) throw Error(ErrorKind::BadParams, "step_reference: dt must be positive");
  if (state.X.cols() != model.d) throw Error(ErrorKind::ShapeMismatch, "step_reference: state has wrong dimension");
  const Ensemble<Scalar> A = detail::eval_drift(model, state.t, state.X);
  const Ensemble<Scalar> D = detail::eval_noise(model, state.t, state.X, dW);
  FullState<Scalar> next;
  next.t = state.t + dt;
  next.X = state.X + A * dt + D;
  detail::require_finite(next.X, "step_reference");
  return next;
}

struct DoOptions {
  // Rotate Y by the retraction's symmetric factor so that U^T Y is unchanged
  // by the retraction.
  bool compensate_retraction = true;
};

// Polar retraction U+ = (U_raw U_raw^T)^{-1/2} U_raw. Returns the symmetric
// square root S of U_raw U_raw^T, so that U_raw = S U+. Leaves U_raw and S
// untouched when U_raw already has exactly orthonormal rows.
template <typename Scalar>
Matrix<Scalar> retract_rows(Matrix<Scalar>& U_raw) {
  const Index R = U_raw.rows();
  Matrix<Scalar> M = U_raw * U_raw.transpose();
  M = (M + M.transpose()) / Scalar(2);
  if (M == Matrix<Scalar>::Identity(R, R)) return M;
  const auto spec = symmetric_spectrum(M);
  if (!(spec.values(R - 1) > Scalar(0)))
    throw Error(ErrorKind::NonFiniteState, "retraction: basis update lost rank");
  const Vector<Scalar> root = spec.values.cwiseSqrt();
  const Matrix<Scalar> inv_root = spec.vectors * root.cwiseInverse().asDiagonal() * spec.vectors.transpose();
  U_raw = inv_root * U_raw;
  return spec.vectors * root.asDiagonal() * spec.vectors.transpose();
}

// One explicit step of the DO equations with all projections frozen at the
// left endpoint:
//   Y+ = Y + U a dt + U b dW,  U_raw = U + dt C_Y^{-1} E[Y a^T](I - U^T U),
// followed by the polar retraction of U_raw.
template <typename Scalar, typename DerivedW>
DoState<Scalar> step_do(const SdeModel<Scalar>& model, const DoState<Scalar>& state, Scalar dt,
                        const Eigen::MatrixBase<DerivedW>& dW, StepReport<Scalar>* report = nullptr,
                        const DoOptions& opts = {}) {
  if (!(dt > Scalar(0))) throw Error(ErrorKind::BadParams, "step_do: dt must be positive");
  const Index R = state.U.rows();
  if (state.U.cols() != model.d || state.Y.cols() != R)
    throw Error(ErrorKind::ShapeMismatch, "step_do: U must be R x d and Y must be N x R");
  auto rep = gram(state.Y);
  if (!rep.invertible()) throw SingularGramError<Scalar>("step_do: C_Y not invertible", std::move(rep));

  const Ensemble<Scalar> X = state.Y * state.U;
  const Ensemble<Scalar> A = detail::eval_drift(model, state.t, X);
  const Ensemble<Scalar> D = detail::eval_noise(model, state.t, X, dW);
  const Matrix<Scalar> Ut = state.U.transpose();

  DoState<Scalar> next;
  next.t = state.t + dt;
  next.Y = state.Y + (A * Ut) * dt + D * Ut;

  const Matrix<Scalar> G = cross_moment(state.Y, A);  // E[Y a^T], R x d
  const Matrix<Scalar> U_dot = (*rep.inverse) * (G - (G * Ut) * state.U);
  Matrix<Scalar> U_raw = state.U + dt * U_dot;
  const Matrix<Scalar> I = Matrix<Scalar>::Identity(R, R);
  const Scalar ortho = (U_raw * U_raw.transpose() - I).norm();
  // A vanishing update keeps the accepted basis as is.
  if (U_dot.isZero(0)) {
    next.U = state.U;
  } else {
    const Matrix<Scalar> S = retract_rows(U_raw);
    if (opts.compensate_retraction && S != I) next.Y = next.Y * S;
    next.U = std::move(U_raw);
  }

  if (!all_finite(next.U)) throw Error(ErrorKind::NonFiniteState, "step_do: basis became non-finite");
  detail::require_finite(next.Y, "step_do");
  if (report != nullptr) {
    report->gauge_defect = (state.U * (next.U - state.U).transpose()).norm();
    report->ortho_defect = ortho;
    report->gram_inv_frobenius = rep.inv_frobenius;
    report->lambda_min = rep.lambda_min;
    report->dt_used = dt;
  }
  return next;
}

// Ambient projected dynamics:
//   X+ = X + [(I - P_U) P_Y a + P_U a] dt + P_U b dW,
// with P_U the projector onto the top-R eigenspace of E[X X^T] and P_Y the
// L^2 projection onto the span of the corresponding stochastic modes. The
// result is truncated back to rank R. For R = d this is step_reference.
template <typename Scalar, typename DerivedW>
FullState<Scalar> step_ambient_dlra(const SdeModel<Scalar>& model, const FullState<Scalar>& state, int R, Scalar dt,
                                    const Eigen::MatrixBase<DerivedW>& dW, StepReport<Scalar>* report = nullptr) {
  if (!(dt > Scalar(0))) throw Error(ErrorKind::BadParams, "step_ambient_dlra: dt must be positive");
  if (R < 1 || R > model.d) throw Error(ErrorKind::BadParams, "step_ambient_dlra: need 1 <= R <= d");
  if (state.X.cols() != model.d) throw Error(ErrorKind::ShapeMismatch, "step_ambient_dlra: wrong dimension");
  const auto f = second_moment_svd(state.X, kRankTolerance, R);
  if (f.rank() < R) throw Error(ErrorKind::RankDeficient, "step_ambient_dlra: rank of E[X X^T] below R");
  FullState<Scalar> next;
  if (R == model.d) {
    next = step_reference(model, state, dt, dW);
  } else {
    const Ensemble<Scalar> A = detail::eval_drift(model, state.t, state.X);
    const Ensemble<Scalar> D = detail::eval_noise(model, state.t, state.X, dW);
    const Matrix<Scalar> P = f.Q * f.Q.transpose();
    const Ensemble<Scalar> PYA = projector_stochastic(f.phis, A);
    const Ensemble<Scalar> drift = PYA - PYA * P + A * P;
    next.t = state.t + dt;
    next.X = state.X + drift * dt + D * P;
    detail::require_finite(next.X, "step_ambient_dlra");
  }
  const auto g = second_moment_svd(next.X, kRankTolerance, R);
  if (R < model.d) {
    if (g.rank() < R) throw Error(ErrorKind::RankDeficient, "step_ambient_dlra: update lost rank");
    next.X = (next.X * g.Q) * g.Q.transpose();
  }
  if (report != nullptr) {
    report->gauge_defect = 0;
    report->ortho_defect = 0;
    if (g.rank() == R) {
      report->gram_inv_frobenius = g.gammas.cwiseInverse().norm();
      report->lambda_min = g.gammas(R - 1);
    } else {
      report->gram_inv_frobenius = std::numeric_limits<Scalar>::infinity();
      report->lambda_min = 0;
    }
    report->dt_used = dt;
  }
  return next;
}

// Picard construction on the grid of `path` (left-point rule; the stochastic
// integral uses the path's increments). Iterates are stored as the initial
// value plus an accumulated integral so that differences between successive
// iterates keep their relative precision.
template <typename Scalar>
struct PicardResult {
  std::vector<std::vector<Matrix<Scalar>>> U;    // [iterate][grid point]
  std::vector<std::vector<Ensemble<Scalar>>> Y;  // [iterate][grid point]
  std::vector<Scalar> delta;                     // delta[n] = Delta^n, delta[0] = 0
  std::vector<Scalar> sup_U_sq;                  // sup_t ||U^(n)||_F^2
  std::vector<Scalar> sup_Y_sq;                  // E[sup_t |Y^(n)|^2]
};

template <typename Scalar>
PicardResult<Scalar> picard_local_solve(const SdeModel<Scalar>& model, const Matrix<Scalar>& U0,
                                        const Ensemble<Scalar>& Y0, const BrownianPath<Scalar>& path, int n_iters,
                                        Scalar t0 = 0) {
  if (n_iters < 1) throw Error(ErrorKind::BadParams, "picard_local_solve: n_iters must be >= 1");
  const Index R = U0.rows();
  const Index N = Y0.rows();
  const Index K = path.n_steps();
  if (U0.cols() != model.d || Y0.cols() != R || path.atoms() != N || path.channels() != model.m)
    throw Error(ErrorKind::ShapeMismatch, "picard_local_solve: inconsistent shapes");
  const Scalar h = path.dt();

  // Integral parts of the current iterate.
  std::vector<Matrix<Scalar>> IU(static_cast<std::size_t>(K + 1), Matrix<Scalar>::Zero(R, model.d));
  std::vector<Ensemble<Scalar>> IY(static_cast<std::size_t>(K + 1), Ensemble<Scalar>::Zero(N, R));

  PicardResult<Scalar> out;
  auto record = [&](const std::vector<Matrix<Scalar>>& iu, const std::vector<Ensemble<Scalar>>& iy) {
    std::vector<Matrix<Scalar>> us;
    std::vector<Ensemble<Scalar>> ys;
    Scalar sup_u = 0;
    Vector<Scalar> sup_y = Vector<Scalar>::Zero(N);
    for (Index k = 0; k <= K; ++k) {
      us.push_back(U0 + iu[static_cast<std::size_t>(k)]);
      ys.push_back(Y0 + iy[static_cast<std::size_t>(k)]);
      sup_u = std::max(sup_u, us.back().squaredNorm());
      sup_y = sup_y.cwiseMax(ys.back().rowwise().squaredNorm());
    }
    out.U.push_back(std::move(us));
    out.Y.push_back(std::move(ys));
    out.sup_U_sq.push_back(sup_u);
    out.sup_Y_sq.push_back(ensemble_mean(sup_y));
  };
  record(IU, IY);
  out.delta.push_back(0);

  for (int n = 1; n <= n_iters; ++n) {
    std::vector<Matrix<Scalar>> nu(static_cast<std::size_t>(K + 1), Matrix<Scalar>::Zero(R, model.d));
    std::vector<Ensemble<Scalar>> ny(static_cast<std::size_t>(K + 1), Ensemble<Scalar>::Zero(N, R));
    for (Index k = 0; k < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const Matrix<Scalar> U = U0 + IU[kk];
      const Ensemble<Scalar> Y = Y0 + IY[kk];
      const Scalar t = t0 + static_cast<Scalar>(k) * h;
      const auto rep = gram(Y);
      if (!rep.invertible())
        throw SingularGramError<Scalar>("picard_local_solve: iterate " + std::to_string(n - 1) + " left the admissible set",
                                        rep);
      const Ensemble<Scalar> X = Y * U;
      const Ensemble<Scalar> A = detail::eval_drift(model, t, X);
      const Ensemble<Scalar> D = detail::eval_noise(model, t, X, path.increment(k));
      const Matrix<Scalar> Ut = U.transpose();
      const Matrix<Scalar> G = cross_moment(Y, A);
      const Matrix<Scalar> U_dot = (*rep.inverse) * (G - (G * Ut) * U);
      nu[kk + 1] = nu[kk] + h * U_dot;
      ny[kk + 1] = ny[kk] + (A * Ut) * h + D * Ut;
    }
    Scalar du = 0;
    Vector<Scalar> dy = Vector<Scalar>::Zero(N);
    for (Index k = 0; k <= K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      du = std::max(du, (nu[kk] - IU[kk]).squaredNorm());
      dy = dy.cwiseMax((ny[kk] - IY[kk]).rowwise().squaredNorm());
    }
    IU = std::move(nu);
    IY = std::move(ny);
    out.delta.push_back(du + ensemble_mean(dy));
    record(IU, IY);
  }
  return out;
}

enum class Scheme { Do, Ambient, Reference };

const char* to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

struct DiagnosticRow {
  double t = 0;
  double gauge_defect = 0;
  double ortho_defect = 0;
  double gram_inv_frobenius = 0;
  double lambda_min = 0;
};

template <typename Scalar>
struct RankEvent {
  Scalar t_event = 0;
  Vector<Scalar> singular_values;  // spectrum of C_Y at the event, descending
  int old_rank = 0;
  int new_rank = 0;
  Scalar discarded_mass = 0;
  Scalar inv_norm_at_event = 0;
  Ensemble<Scalar> X_snapshot;
  Ensemble<Scalar> X_previous;  // last accepted state before the event
  Ensemble<Scalar> X_restart;   // U'^T Y' after truncation
};

template <typename Scalar>
struct Trajectory {
  std::vector<Scalar> times;
  std::vector<Ensemble<Scalar>> X;
  std::vector<Matrix<Scalar>> U;    // DO only
  std::vector<Ensemble<Scalar>> Y;  // DO only
  std::vector<DiagnosticRow> diagnostics;
  std::vector<RankEvent<Scalar>> events;
  bool halted = false;
  std::string halt_reason;
};

template <typename Scalar>
struct IntegrateHooks {
  // After every accepted DO step, with the Gram report of the new state.
  // Returning true requests a restart from that state.
  std::function<bool(const DoState<Scalar>&, const GramReport<Scalar>&)> after_step;
  // Restart handler: given the event state and the last accepted state
  // before it, returns the state to continue from and fills the event.
  std::function<std::optional<DoState<Scalar>>(const DoState<Scalar>& event, const DoState<Scalar>& previous,
                                               RankEvent<Scalar>& record)>
      restart;
};

template <typename Scalar>
struct IntegrateOptions {
  Scheme scheme = Scheme::Do;
  Scalar t_end = 1;
  Scalar dt = Scalar(1e-3);
  int R = 1;              // ambient rank
  int record_stride = 1;  // record every k-th step (the final state is always recorded)
  DoOptions do_options;
};

namespace detail {

template <typename Scalar>
Index step_count(Scalar t_end, Scalar dt) {
  if (!(dt > Scalar(0)) || !(t_end >= Scalar(0))) throw Error(ErrorKind::BadParams, "integrate: need dt > 0, t_end >= 0");
  return static_cast<Index>(std::llround(static_cast<double>(t_end / dt)));
}

}  // namespace detail

// Driver loop. The DO scheme starts from (U0, Y0); the ambient and reference
// schemes start from X0. Step k uses path.increment(k) and time k * dt.
template <typename Scalar>
Trajectory<Scalar> integrate(const SdeModel<Scalar>& model, const InitialDatum<Scalar>& init,
                             const IntegrateOptions<Scalar>& opts, const BrownianPath<Scalar>& path,
                             const IntegrateHooks<Scalar>& hooks = {}) {
  const Index n_steps = detail::step_count(opts.t_end, opts.dt);
  if (n_steps > path.n_steps()) throw Error(ErrorKind::ShapeMismatch, "integrate: Brownian path is too short");
  if (opts.record_stride < 1) throw Error(ErrorKind::BadParams, "integrate: record_stride must be >= 1");
  Trajectory<Scalar> traj;
  auto time_of = [&](Index k) { return static_cast<Scalar>(k) * opts.dt; };
  auto should_record = [&](Index k) { return k % opts.record_stride == 0 || k == n_steps; };

  if (opts.scheme == Scheme::Do) {
    DoState<Scalar> state{0, init.U0, init.Y0};
    DoState<Scalar> previous = state;
    auto push = [&](const DoState<Scalar>& s) {
      traj.times.push_back(s.t);
      traj.U.push_back(s.U);
      traj.Y.push_back(s.Y);
      traj.X.push_back(s.full());
    };
    push(state);
    for (Index k = 0; k < n_steps; ++k) {
      StepReport<Scalar> rep;
      DoState<Scalar> next;
      try {
        next = step_do(model, state, opts.dt, path.increment(k), &rep, opts.do_options);
      } catch (const SingularGramError<Scalar>& e) {
        // Reached only when no hook flagged the state after the previous step.
        if (!hooks.restart) throw;
        RankEvent<Scalar> ev;
        auto resumed = hooks.restart(state, previous, ev);
        if (!resumed) {
          traj.halted = true;
          traj.halt_reason = e.what();
          return traj;
        }
        traj.events.push_back(std::move(ev));
        state = *resumed;
        next = step_do(model, state, opts.dt, path.increment(k), &rep, opts.do_options);
      }
      next.t = time_of(k + 1);
      const auto g = gram(next.Y);
      traj.diagnostics.push_back({static_cast<double>(next.t), static_cast<double>(rep.gauge_defect),
                                  static_cast<double>(rep.ortho_defect), static_cast<double>(g.inv_frobenius),
                                  static_cast<double>(g.lambda_min)});
      previous = state;
      state = std::move(next);
      if (hooks.after_step) {
        if (hooks.after_step(state, g)) {
          if (!hooks.restart) {
            traj.halted = true;
            traj.halt_reason = "explosion detected";
            push(state);
            return traj;
          }
          RankEvent<Scalar> ev;
          auto resumed = hooks.restart(state, previous, ev);
          if (!resumed) {
            traj.halted = true;
            traj.halt_reason = "explosion detected; restart declined";
            push(state);
            return traj;
          }
          traj.events.push_back(std::move(ev));
          state = *resumed;
        }
      }
      if (should_record(k + 1)) push(state);
    }
    return traj;
  }

  FullState<Scalar> state{0, init.X0};
  traj.times.push_back(state.t);
  traj.X.push_back(state.X);
  for (Index k = 0; k < n_steps; ++k) {
    StepReport<Scalar> rep;
    FullState<Scalar> next = opts.scheme == Scheme::Ambient
                                 ? step_ambient_dlra(model, state, opts.R, opts.dt, path.increment(k), &rep)
                                 : step_reference(model, state, opts.dt, path.increment(k));
    next.t = time_of(k + 1);
    if (opts.scheme == Scheme::Reference) {
      // Full-space analogue: spectrum of E[X X^T].
      const auto f = second_moment_svd(next.X);
      const Index d = next.X.cols();
      rep.dt_used = opts.dt;
      rep.lambda_min = std::max(f.spectrum(d - 1), Scalar(0));
      rep.gram_inv_frobenius =
          f.rank() == d ? f.spectrum.cwiseInverse().norm() : std::numeric_limits<Scalar>::infinity();
    }
    traj.diagnostics.push_back({static_cast<double>(next.t), static_cast<double>(rep.gauge_defect),
                                static_cast<double>(rep.ortho_defect), static_cast<double>(rep.gram_inv_frobenius),
                                static_cast<double>(rep.lambda_min)});
    state = std::move(next);
    if (should_record(k + 1)) {
      traj.times.push_back(state.t);
      traj.X.push_back(state.X);
    }
  }
  return traj;
}

}  // namespace dolr
