#pragma once

// SDE models dX = a(t, X) dt + b(t, X) dW with their structural constants,
// plus an empirical probe of the Lipschitz / linear-growth assumptions.

#include "dolr/common.hpp"
#include "dolr/kernels.hpp"
#include "dolr/random.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>

namespace dolr {

template <typename Scalar>
using DriftFn = std::function<void(Scalar t, Eigen::Ref<const RowVector<Scalar>> x, Eigen::Ref<RowVector<Scalar>> out)>;

// out is d x m.
template <typename Scalar>
using DiffusionFn = std::function<void(Scalar t, Eigen::Ref<const RowVector<Scalar>> x, Eigen::Ref<Matrix<Scalar>> out)>;

template <typename Scalar>
struct SdeModel {
  std::string name;
  int d = 0;
  int m = 0;
  DriftFn<Scalar> drift;
  DiffusionFn<Scalar> diffusion;
  // b depends on t only; steppers evaluate it once per step.
  bool additive = false;
  Scalar C_Lip = 0;
  Scalar C_lgb = 0;
  Scalar sigma_B = 0;  // 0: no noise floor claimed
  // Optional orthonormal rows the model is built around (e.g. the invariant
  // subspace of linear_lowrank); used to seed factored initial data.
  Matrix<Scalar> basis;
};

using ParamValue = std::variant<double, std::vector<double>>;
using ModelParams = std::map<std::string, ParamValue>;

const std::vector<std::string>& builtin_model_names();
// Throws UnknownModel.
const std::vector<std::string>& builtin_param_names(const std::string& model);

namespace detail {

inline double scalar_param(const ModelParams& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  if (it == p.end()) return fallback;
  if (const double* v = std::get_if<double>(&it->second)) return *v;
  throw Error(ErrorKind::BadParams, "parameter '" + key + "' must be a scalar");
}

inline std::vector<double> list_param(const ModelParams& p, const std::string& key, std::vector<double> fallback) {
  auto it = p.find(key);
  if (it == p.end()) return fallback;
  if (const auto* v = std::get_if<std::vector<double>>(&it->second)) return *v;
  return {std::get<double>(it->second)};
}

template <typename Scalar>
Matrix<Scalar> gaussian_matrix(const CounterRng& rng, Index rows, Index cols, std::uint64_t tag) {
  Matrix<Scalar> g(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      g(i, j) = static_cast<Scalar>(rng.normal(tag, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)));
  return g;
}

// d x d orthogonal matrix from the Q factor of a seeded Gaussian matrix,
// with the R factor's diagonal made positive.
template <typename Scalar>
Matrix<Scalar> random_orthogonal(const CounterRng& rng, Index d, std::uint64_t tag) {
  const Matrix<Scalar> g = gaussian_matrix<Scalar>(rng, d, d, tag);
  Eigen::HouseholderQR<Matrix<Scalar>> qr(g);
  Matrix<Scalar> q = qr.householderQ() * Matrix<Scalar>::Identity(d, d);
  const Matrix<Scalar> r = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j)
    if (r(j, j) < Scalar(0)) q.col(j) = -q.col(j);
  return q;
}

inline void check_known_params(const std::string& model, const ModelParams& params) {
  const auto& allowed = builtin_param_names(model);
  for (const auto& [key, value] : params) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error(ErrorKind::BadParams, "model '" + model + "' has no parameter '" + key + "'");
  }
}

}  // namespace detail

// Builtin model zoo: ou, linear_lowrank, gbm_clipped, mode_crossing,
// additive_floor. Throws UnknownModel / BadParams.
template <typename Scalar>
SdeModel<Scalar> builtin(const std::string& name, int d, const ModelParams& params = {}) {
  using detail::list_param;
  using detail::scalar_param;
  if (std::find(builtin_model_names().begin(), builtin_model_names().end(), name) == builtin_model_names().end())
    throw Error(ErrorKind::UnknownModel, "unknown model '" + name + "'");
  if (d < 1) throw Error(ErrorKind::BadParams, "d must be >= 1");
  detail::check_known_params(name, params);

  SdeModel<Scalar> model;
  model.name = name;
  model.d = d;

  if (name == "ou") {
    const Scalar kappa = static_cast<Scalar>(scalar_param(params, "kappa", 1.0));
    const Scalar sigma = static_cast<Scalar>(scalar_param(params, "sigma", 1.0));
    model.m = d;
    model.additive = true;
    model.drift = [kappa](Scalar, Eigen::Ref<const RowVector<Scalar>> x, Eigen::Ref<RowVector<Scalar>> out) {
      out = -kappa * x;
    };
    model.diffusion = [sigma, d](Scalar, Eigen::Ref<const RowVector<Scalar>>, Eigen::Ref<Matrix<Scalar>> out) {
      out = sigma * Matrix<Scalar>::Identity(d, d);
    };
    model.C_Lip = std::abs(kappa);
    model.C_lgb = std::max(kappa * kappa, static_cast<Scalar>(d) * sigma * sigma);
    model.sigma_B = sigma * sigma;
  } else if (name == "linear_lowrank") {
    const std::vector<double> lambda = list_param(params, "lambda", {-1.0, -2.0});
    const Scalar sigma = static_cast<Scalar>(scalar_param(params, "sigma", 0.5));
    const Scalar omega = static_cast<Scalar>(scalar_param(params, "omega", 1.0));
    const auto basis_seed = static_cast<std::uint64_t>(scalar_param(params, "basis_seed", 7.0));
    const Index R = static_cast<Index>(lambda.size());
    if (R < 1 || R > d) throw Error(ErrorKind::BadParams, "linear_lowrank: need 1 <= len(lambda) <= d");
    for (double l : lambda)
      if (l > 0.0) throw Error(ErrorKind::BadParams, "linear_lowrank: lambda entries must be <= 0");
    const CounterRng rng = CounterRng::stream(basis_seed, 11);
    const Matrix<Scalar> V = detail::random_orthogonal<Scalar>(rng, d, 0);
    const Matrix<Scalar> U0 = V.leftCols(R).transpose();
    Vector<Scalar> lam(R);
    for (Index j = 0; j < R; ++j) lam(j) = static_cast<Scalar>(lambda[static_cast<std::size_t>(j)]);
    // Skew generator rotating the invariant subspace; omega = 0 freezes it.
    const Matrix<Scalar> g = detail::gaussian_matrix<Scalar>(rng, d, d, 1);
    Matrix<Scalar> K = g - g.transpose();
    const Scalar knorm = Eigen::JacobiSVD<Matrix<Scalar>>(K).singularValues()(0);
    if (knorm > Scalar(0)) K *= omega / knorm;
    const Matrix<Scalar> A = K + U0.transpose() * lam.asDiagonal() * U0;
    const Matrix<Scalar> B0 = sigma * U0.transpose();  // d x R
    model.m = static_cast<int>(R);
    model.additive = true;
    model.basis = U0;
    model.drift = [A](Scalar, Eigen::Ref<const RowVector<Scalar>> x, Eigen::Ref<RowVector<Scalar>> out) {
      out.noalias() = x * A.transpose();
    };
    // b(t) = exp(tA) B0 keeps the noise inside exp(tA) span(U0^T), so the
    // exact solution exp(tA)(X0 + B0 W_t) has rank R for all t.
    model.diffusion = [A, B0](Scalar t, Eigen::Ref<const RowVector<Scalar>>, Eigen::Ref<Matrix<Scalar>> out) {
      const Matrix<Scalar> tA = t * A;
      out.noalias() = tA.exp() * B0;
    };
    const Scalar anorm = Eigen::JacobiSVD<Matrix<Scalar>>(A).singularValues()(0);
    model.C_Lip = anorm;
    model.C_lgb = std::max(anorm * anorm, B0.squaredNorm());
    if (model.C_lgb <= Scalar(0)) model.C_lgb = Scalar(1);
  } else if (name == "gbm_clipped") {
    const Scalar mu = static_cast<Scalar>(scalar_param(params, "mu", 0.05));
    const Scalar sigma = static_cast<Scalar>(scalar_param(params, "sigma", 0.2));
    const Scalar clip = static_cast<Scalar>(scalar_param(params, "clip", 5.0));
    if (!(clip > Scalar(0))) throw Error(ErrorKind::BadParams, "gbm_clipped: clip must be positive");
    model.m = d;
    model.drift = [mu](Scalar, Eigen::Ref<const RowVector<Scalar>> x, Eigen::Ref<RowVector<Scalar>> out) {
      out = mu * x;
    };
    model.diffusion = [sigma, clip](Scalar, Eigen::Ref<const RowVector<Scalar>> x, Eigen::Ref<Matrix<Scalar>> out) {
      out.setZero();
      for (Index i = 0; i < x.size(); ++i) out(i, i) = sigma * std::clamp(x(i), -clip, clip);
    };
    model.C_Lip = std::max(std::abs(mu), std::abs(sigma));
    model.C_lgb = mu * mu + sigma * sigma;
    if (model.C_lgb <= Scalar(0)) model.C_lgb = Scalar(1);
  } else if (name == "mode_crossing") {
    const Scalar t_star = static_cast<Scalar>(scalar_param(params, "t_star", 1.0));
    if (!(t_star > Scalar(0))) throw Error(ErrorKind::BadParams, "mode_crossing: t_star must be positive");
    if (d < 2) throw Error(ErrorKind::BadParams, "mode_crossing: needs d >= 2");
    // Constant drift -e2/t*: with Y0 = (s, s + 1) the second mode slides
    // onto the first, Y2 - Y1 = 1 - t/t*, and det C_Y ~ (1 - t/t*)^2.
    RowVector<Scalar> c = RowVector<Scalar>::Zero(d);
    c(1) = -Scalar(1) / t_star;
    model.m = 1;
    model.additive = true;
    model.drift = [c](Scalar, Eigen::Ref<const RowVector<Scalar>>, Eigen::Ref<RowVector<Scalar>> out) { out = c; };
    model.diffusion = [](Scalar, Eigen::Ref<const RowVector<Scalar>>, Eigen::Ref<Matrix<Scalar>> out) {
      out.setZero();
    };
    model.C_Lip = 0;
    model.C_lgb = c.squaredNorm();
    model.basis = Matrix<Scalar>::Identity(2, d);
  } else if (name == "additive_floor") {
    const Scalar kappa = static_cast<Scalar>(scalar_param(params, "kappa", 1.0));
    const Scalar beta = static_cast<Scalar>(scalar_param(params, "beta", 0.5));
    const Scalar sigma = static_cast<Scalar>(scalar_param(params, "sigma", 0.5));
    if (!(sigma > Scalar(0))) throw Error(ErrorKind::BadParams, "additive_floor: sigma must be positive");
    model.m = d;
    model.additive = true;
    // a(x) = -kappa x + beta tanh(J x), J the cyclic shift.
    model.drift = [kappa, beta, d](Scalar, Eigen::Ref<const RowVector<Scalar>> x, Eigen::Ref<RowVector<Scalar>> out) {
      for (int i = 0; i < d; ++i) out(i) = -kappa * x(i) + beta * std::tanh(x((i + 1) % d));
    };
    model.diffusion = [sigma, d](Scalar, Eigen::Ref<const RowVector<Scalar>>, Eigen::Ref<Matrix<Scalar>> out) {
      out = sigma * Matrix<Scalar>::Identity(d, d);
    };
    model.C_Lip = std::abs(kappa) + std::abs(beta);
    model.C_lgb = std::max(model.C_Lip * model.C_Lip, static_cast<Scalar>(d) * sigma * sigma);
    model.sigma_B = sigma * sigma;
  }
  return model;
}

template <typename Scalar>
struct InitialDatum {
  bool factored = true;
  Matrix<Scalar> U0;    // R x d, orthonormal rows
  Ensemble<Scalar> Y0;  // N x R
  Ensemble<Scalar> X0;  // N x d (full mode, or U0^T Y0 per atom)
};

// Factored initial datum for a builtin: U0 from the model basis when it has
// at least R rows, otherwise a seeded orthonormal frame; Y0 Gaussian with
// decreasing scales. mode_crossing uses Y0 = (s, s + 1, ...).
template <typename Scalar>
InitialDatum<Scalar> make_initial_datum(const SdeModel<Scalar>& model, Index N, int R, std::uint64_t seed) {
  if (N < 1 || R < 1 || R > model.d) throw Error(ErrorKind::BadParams, "initial datum: need N >= 1, 1 <= R <= d");
  const CounterRng rng = CounterRng::stream(seed, 2);
  InitialDatum<Scalar> init;
  if (model.basis.rows() >= R) {
    init.U0 = model.basis.topRows(R);
  } else {
    init.U0 = detail::random_orthogonal<Scalar>(rng, model.d, 1000).leftCols(R).transpose();
  }
  init.Y0.resize(N, R);
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < R; ++j)
      init.Y0(i, j) = static_cast<Scalar>(rng.normal(0, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j))) /
                      (Scalar(1) + Scalar(0.5) * static_cast<Scalar>(j));
  if (model.name == "mode_crossing") {
    if (R < 2) throw Error(ErrorKind::BadParams, "mode_crossing: needs R >= 2");
    init.Y0.col(1) = init.Y0.col(0).array() + Scalar(1);
  }
  init.X0 = init.Y0 * init.U0;
  return init;
}

// Sampling region for assumption probes.
template <typename Scalar>
struct ProbeBox {
  Scalar lo = -10;
  Scalar hi = 10;
  Scalar t_max = 10;
};

template <typename Scalar>
struct AssumptionReport {
  Scalar drift_lipschitz_ratio = 0;      // max |a(x)-a(y)| / |x-y|
  Scalar diffusion_lipschitz_ratio = 0;  // max ||b(x)-b(y)||_F / |x-y|
  Scalar growth_ratio = 0;               // max (|a|^2 + ||b||_F^2) / (1 + |x|^2)
  Scalar min_bbT_eigenvalue = std::numeric_limits<Scalar>::infinity();
  bool violated = false;
  std::string worst;  // description of the worst offending probe
};

template <typename Scalar>
AssumptionReport<Scalar> probe_assumptions(const SdeModel<Scalar>& model, const ProbeBox<Scalar>& box, int n_probe,
                                           std::uint64_t seed = 1) {
  if (n_probe < 2) throw Error(ErrorKind::BadParams, "probe_assumptions: n_probe must be >= 2");
  const int d = model.d;
  const CounterRng rng = CounterRng::stream(seed, 5);
  AssumptionReport<Scalar> rep;
  RowVector<Scalar> x(d), y(d), ax(d), ay(d);
  Matrix<Scalar> bx(d, model.m), by(d, model.m);
  auto uni = [&](std::uint64_t a, std::uint64_t b, std::uint64_t c, Scalar lo, Scalar hi) {
    return lo + (hi - lo) * static_cast<Scalar>(rng.uniform(a, b, c));
  };
  const Scalar slack = Scalar(1) + Scalar(1e-9);
  Scalar worst_excess = 0;
  auto describe = [&](const char* what, Scalar ratio, Scalar bound) {
    std::ostringstream os;
    os << what << " ratio " << ratio << " > declared " << bound << " at x=[" << x << "] y=[" << y << "]";
    return os.str();
  };
  for (int p = 0; p < n_probe; ++p) {
    const auto pp = static_cast<std::uint64_t>(p);
    const Scalar t = uni(pp, 0, 0, Scalar(0), box.t_max);
    for (int i = 0; i < d; ++i) x(i) = uni(pp, 1, static_cast<std::uint64_t>(i), box.lo, box.hi);
    // Alternate far pairs and nearby pairs.
    const Scalar spread = (p % 2 == 0) ? (box.hi - box.lo) : Scalar(1e-3) * (box.hi - box.lo);
    for (int i = 0; i < d; ++i)
      y(i) = std::clamp(x(i) + uni(pp, 2, static_cast<std::uint64_t>(i), -spread, spread) / Scalar(2), box.lo, box.hi);
    model.drift(t, x, ax);
    model.drift(t, y, ay);
    model.diffusion(t, x, bx);
    model.diffusion(t, y, by);
    const Scalar dist = (x - y).norm();
    if (dist > Scalar(0)) {
      const Scalar ra = (ax - ay).norm() / dist;
      const Scalar rb = (bx - by).norm() / dist;
      rep.drift_lipschitz_ratio = std::max(rep.drift_lipschitz_ratio, ra);
      rep.diffusion_lipschitz_ratio = std::max(rep.diffusion_lipschitz_ratio, rb);
      const Scalar bound = model.C_Lip * slack + Scalar(1e-12);
      if (ra > bound && ra - bound > worst_excess) {
        worst_excess = ra - bound;
        rep.worst = describe("drift Lipschitz", ra, model.C_Lip);
      }
      if (rb > bound && rb - bound > worst_excess) {
        worst_excess = rb - bound;
        rep.worst = describe("diffusion Lipschitz", rb, model.C_Lip);
      }
    }
    const Scalar growth = (ax.squaredNorm() + bx.squaredNorm()) / (Scalar(1) + x.squaredNorm());
    rep.growth_ratio = std::max(rep.growth_ratio, growth);
    if (growth > model.C_lgb * slack && growth - model.C_lgb > worst_excess) {
      worst_excess = growth - model.C_lgb;
      rep.worst = describe("linear growth", growth, model.C_lgb);
    }
    if (model.sigma_B > Scalar(0)) {
      const Matrix<Scalar> bbt = bx * bx.transpose();
      const Scalar lmin = Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>(bbt, Eigen::EigenvaluesOnly).eigenvalues()(0);
      rep.min_bbT_eigenvalue = std::min(rep.min_bbT_eigenvalue, lmin);
      if (lmin < model.sigma_B / slack && model.sigma_B - lmin > worst_excess) {
        worst_excess = model.sigma_B - lmin;
        std::ostringstream os;
        os << "noise floor: lambda_min(b b^T) = " << lmin << " < sigma_B = " << model.sigma_B << " at x=[" << x << "]";
        rep.worst = os.str();
      }
    }
  }
  rep.violated = !rep.worst.empty();
  return rep;
}

// Throws AssumptionViolated naming the worst probe.
template <typename Scalar>
AssumptionReport<Scalar> validate_assumptions(const SdeModel<Scalar>& model, const ProbeBox<Scalar>& box, int n_probe,
                                              std::uint64_t seed = 1) {
  auto rep = probe_assumptions(model, box, n_probe, seed);
  if (rep.violated) throw Error(ErrorKind::AssumptionViolated, model.name + ": " + rep.worst);
  return rep;
}

}  // namespace dolr
