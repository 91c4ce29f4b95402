#pragma once

// Validators: ensemble distances, rotation equivariance, moment and Hoelder
// estimators, rank tracking, and the projector-Lipschitz harness.

#include "dolr/integrators.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <optional>

namespace dolr {

// sqrt((1/N) sum_i |A_i - B_i|^2).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar l2_distance(const Eigen::MatrixBase<DerivedA>& A, const Eigen::MatrixBase<DerivedB>& B) {
  using Scalar = typename DerivedA::Scalar;
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw Error(ErrorKind::ShapeMismatch, "l2_distance: shapes differ");
  const Vector<Scalar> sq = (A.derived() - B.derived()).rowwise().squaredNorm();
  return std::sqrt(ensemble_mean(sq));
}

template <typename Scalar>
struct ErrorReport {
  std::vector<Scalar> times;
  std::vector<Scalar> l2_errors;
  Scalar sup_error = 0;
  std::optional<Scalar> convergence_rate;
};

// Pathwise comparison of two trajectories recorded on the same times.
template <typename Scalar>
ErrorReport<Scalar> compare_trajectories(const Trajectory<Scalar>& a, const Trajectory<Scalar>& b) {
  if (a.X.size() != b.X.size()) throw Error(ErrorKind::ShapeMismatch, "compare_trajectories: record counts differ");
  ErrorReport<Scalar> rep;
  for (std::size_t j = 0; j < a.X.size(); ++j) {
    rep.times.push_back(a.times[j]);
    rep.l2_errors.push_back(l2_distance(a.X[j], b.X[j]));
    rep.sup_error = std::max(rep.sup_error, rep.l2_errors.back());
  }
  return rep;
}

// Least-squares slope of log(y) against log(x).
template <typename Scalar>
Scalar loglog_slope(const std::vector<Scalar>& x, const std::vector<Scalar>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorKind::InsufficientData, "loglog_slope: need >= 2 points");
  const auto n = static_cast<Scalar>(x.size());
  Scalar mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > Scalar(0)) || !(y[i] > Scalar(0)))
      throw Error(ErrorKind::InsufficientData, "loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  Scalar sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Scalar lx = std::log(x[i]) - mx;
    sxy += lx * (std::log(y[i]) - my);
    sxx += lx * lx;
  }
  return sxy / sxx;
}

// Observed order from errors at several step sizes; absent below 3 levels.
template <typename Scalar>
std::optional<Scalar> convergence_rate(const std::vector<Scalar>& dts, const std::vector<Scalar>& errors) {
  if (dts.size() < 3) return std::nullopt;
  return loglog_slope(dts, errors);
}

template <typename Scalar>
struct EquivarianceReport {
  Scalar sup_U_defect = 0;        // sup_t ||U'_t - Theta U_t||_F
  Scalar sup_Y_defect = 0;        // sup_t ||Y'_t - Theta Y_t|| (ensemble norm)
  Scalar sup_product_defect = 0;  // sup_t l2_distance(U'^T Y', U^T Y)
  Scalar sup_product_scale = 0;   // sup_t sqrt(E|U^T Y|^2)
};

// Runs the DO scheme from (U0, Y0) and (Theta U0, Theta Y0) with common noise.
template <typename Scalar>
EquivarianceReport<Scalar> rotation_equivariance_check(const SdeModel<Scalar>& model, const Matrix<Scalar>& U0,
                                                       const Ensemble<Scalar>& Y0, const Matrix<Scalar>& Theta,
                                                       const BrownianPath<Scalar>& path, Scalar t_end, Scalar dt) {
  const Index R = U0.rows();
  if (Theta.rows() != R || Theta.cols() != R) throw Error(ErrorKind::ShapeMismatch, "Theta must be R x R");
  if ((Theta * Theta.transpose() - Matrix<Scalar>::Identity(R, R)).norm() > Scalar(1e-12))
    throw Error(ErrorKind::BadParams, "Theta is not orthogonal");
  IntegrateOptions<Scalar> opts;
  opts.scheme = Scheme::Do;
  opts.t_end = t_end;
  opts.dt = dt;
  InitialDatum<Scalar> a{true, U0, Y0, Y0 * U0};
  InitialDatum<Scalar> b{true, Theta * U0, Y0 * Theta.transpose(), Ensemble<Scalar>()};
  b.X0 = b.Y0 * b.U0;
  const auto ta = integrate(model, a, opts, path);
  const auto tb = integrate(model, b, opts, path);
  EquivarianceReport<Scalar> rep;
  for (std::size_t j = 0; j < ta.U.size(); ++j) {
    rep.sup_U_defect = std::max(rep.sup_U_defect, (tb.U[j] - Theta * ta.U[j]).norm());
    const Ensemble<Scalar> rotated = ta.Y[j] * Theta.transpose();
    rep.sup_Y_defect = std::max(rep.sup_Y_defect, l2_distance(tb.Y[j], rotated));
    rep.sup_product_defect = std::max(rep.sup_product_defect, l2_distance(tb.X[j], ta.X[j]));
    rep.sup_product_scale =
        std::max(rep.sup_product_scale, l2_distance(ta.X[j], Ensemble<Scalar>::Zero(ta.X[j].rows(), ta.X[j].cols())));
  }
  return rep;
}

// E|Z_t|^{2k} at every recorded time.
template <typename Scalar>
std::vector<Scalar> moment_estimator(const std::vector<Ensemble<Scalar>>& Z, int k) {
  if (k < 1) throw Error(ErrorKind::BadParams, "moment_estimator: k must be >= 1");
  std::vector<Scalar> out;
  out.reserve(Z.size());
  for (const auto& z : Z) {
    const Vector<Scalar> p = z.rowwise().squaredNorm().array().pow(static_cast<Scalar>(k)).matrix();
    out.push_back(ensemble_mean(p));
  }
  return out;
}

// max_t |E|X_t|^{2k} - E|Y_t|^{2k}| / max(1, E|Y_t|^{2k}).
template <typename Scalar>
Scalar moment_equality_defect(const std::vector<Ensemble<Scalar>>& X, const std::vector<Ensemble<Scalar>>& Y, int k) {
  const auto mx = moment_estimator(X, k);
  const auto my = moment_estimator(Y, k);
  if (mx.size() != my.size()) throw Error(ErrorKind::ShapeMismatch, "moment_equality_defect: lengths differ");
  Scalar worst = 0;
  for (std::size_t j = 0; j < mx.size(); ++j)
    worst = std::max(worst, std::abs(mx[j] - my[j]) / std::max(Scalar(1), my[j]));
  return worst;
}

// Slope of log E|X_t - X_{t-h}|^{2k} against log h, the moment being
// averaged over all admissible t. X is recorded every `spacing` time units;
// gaps are given in records.
template <typename Scalar>
Scalar holder_estimator(const std::vector<Ensemble<Scalar>>& X, int k, const std::vector<int>& gaps, Scalar spacing) {
  if (gaps.size() < 4) throw Error(ErrorKind::InsufficientData, "holder_estimator: need at least 4 gap levels");
  std::vector<Scalar> hs, ms;
  for (int g : gaps) {
    if (g < 1 || static_cast<std::size_t>(g) >= X.size())
      throw Error(ErrorKind::InsufficientData, "holder_estimator: gap exceeds trajectory length");
    Scalar acc = 0;
    std::size_t count = 0;
    for (std::size_t j = static_cast<std::size_t>(g); j < X.size(); ++j) {
      const Vector<Scalar> p =
          (X[j] - X[j - static_cast<std::size_t>(g)]).rowwise().squaredNorm().array().pow(static_cast<Scalar>(k)).matrix();
      acc += ensemble_mean(p);
      ++count;
    }
    hs.push_back(static_cast<Scalar>(g) * spacing);
    ms.push_back(acc / static_cast<Scalar>(count));
  }
  return loglog_slope(hs, ms);
}

template <typename Scalar>
std::vector<int> second_moment_rank_track(const std::vector<Ensemble<Scalar>>& X) {
  std::vector<int> ranks;
  ranks.reserve(X.size());
  for (const auto& x : X) ranks.push_back(second_moment_svd(x).rank());
  return ranks;
}

// Projector pair of a rank-R ensemble X = sum_j sigma_j U_j V_j: P_U on the
// d-dimensional state space and P_V on the N-dimensional sample space, both
// as orthonormal bases (columns).
template <typename Scalar>
struct ProjectorFrames {
  Matrix<Scalar> U;  // d x R
  Matrix<Scalar> V;  // N x R, Euclidean-orthonormal (= ensemble-orthonormal up to sqrt(N))
  Vector<Scalar> sigma;
};

template <typename Scalar>
ProjectorFrames<Scalar> projector_frames(const Ensemble<Scalar>& X, int R) {
  const Matrix<Scalar> scaled = Matrix<Scalar>(X) / std::sqrt(static_cast<Scalar>(X.rows()));
  Eigen::JacobiSVD<Matrix<Scalar>> svd(scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  ProjectorFrames<Scalar> f;
  f.V = svd.matrixU().leftCols(R);
  f.U = svd.matrixV().leftCols(R);
  f.sigma = svd.singularValues().head(R);
  return f;
}

template <typename Scalar>
Scalar spectral_norm(const Matrix<Scalar>& M) {
  if (M.size() == 0) return 0;
  return Eigen::JacobiSVD<Matrix<Scalar>>(M).singularValues()(0);
}

// Orthonormal basis of span([A B]).
template <typename Scalar>
Matrix<Scalar> joint_basis(const Matrix<Scalar>& A, const Matrix<Scalar>& B) {
  Matrix<Scalar> C(A.rows(), A.cols() + B.cols());
  C << A, B;
  Eigen::JacobiSVD<Matrix<Scalar>> svd(C, Eigen::ComputeThinU);
  const Scalar tol = svd.singularValues()(0) * Scalar(1e-12) * static_cast<Scalar>(C.cols());
  Index r = 0;
  while (r < svd.singularValues().size() && svd.singularValues()(r) > tol) ++r;
  return svd.matrixU().leftCols(r);
}

template <typename Scalar>
struct ProjectorDifferences {
  Scalar U_part = 0;         // ||P_U - P_U^||
  Scalar V_part = 0;         // ||P_V - P_V^||
  Scalar combined = 0;       // ||(P_U + P_V - P_U P_V) - (hat)||
  Scalar distance = 0;       // ||X - X^|| in L^2(Omega; H)
  Scalar sigma_R = 0;
};

// Exact operator norms. The combined projector is I - (I - P_V) (x) (I - P_U)
// on R^N (x) R^d; its difference splits into invariant blocks over
// span(V, V^) and span(U, U^) and their complements, so only a
// (2R)^2-dimensional block needs a dense eigen-solve.
template <typename Scalar>
ProjectorDifferences<Scalar> projector_differences(const Ensemble<Scalar>& X, const Ensemble<Scalar>& Xh, int R) {
  const auto f = projector_frames(X, R);
  const auto fh = projector_frames(Xh, R);
  const Index N = X.rows();
  const Index d = X.cols();
  ProjectorDifferences<Scalar> out;
  out.sigma_R = f.sigma(R - 1);
  out.distance = l2_distance(X, Xh);
  const Matrix<Scalar> PU = f.U * f.U.transpose();
  const Matrix<Scalar> PUh = fh.U * fh.U.transpose();
  const Matrix<Scalar> PV = f.V * f.V.transpose();
  const Matrix<Scalar> PVh = fh.V * fh.V.transpose();
  out.U_part = spectral_norm<Scalar>(PU - PUh);
  out.V_part = spectral_norm<Scalar>(PV - PVh);

  const Matrix<Scalar> H1 = joint_basis<Scalar>(f.U, fh.U);
  const Matrix<Scalar> W1 = joint_basis<Scalar>(f.V, fh.V);
  const Index h1 = H1.cols();
  const Index w1 = W1.cols();
  const Matrix<Scalar> IH = Matrix<Scalar>::Identity(h1, h1);
  const Matrix<Scalar> IW = Matrix<Scalar>::Identity(w1, w1);
  const Matrix<Scalar> B = IH - H1.transpose() * PU * H1;
  const Matrix<Scalar> Bh = IH - H1.transpose() * PUh * H1;
  const Matrix<Scalar> A = IW - W1.transpose() * PV * W1;
  const Matrix<Scalar> Ah = IW - W1.transpose() * PVh * W1;
  const Matrix<Scalar> core = Eigen::kroneckerProduct(Ah, Bh).eval() - Eigen::kroneckerProduct(A, B).eval();
  Scalar combined = spectral_norm<Scalar>(core);
  if (N > w1) combined = std::max(combined, out.U_part);
  if (d > h1) combined = std::max(combined, out.V_part);
  out.combined = combined;
  return out;
}

// Dense reference for projector_differences: the full (N d) x (N d)
// combined projectors.
template <typename Scalar>
Scalar combined_difference_dense(const Ensemble<Scalar>& X, const Ensemble<Scalar>& Xh, int R) {
  const auto f = projector_frames(X, R);
  const auto fh = projector_frames(Xh, R);
  const Index N = X.rows();
  const Index d = X.cols();
  const Matrix<Scalar> IN = Matrix<Scalar>::Identity(N, N);
  const Matrix<Scalar> Id = Matrix<Scalar>::Identity(d, d);
  const Matrix<Scalar> A = IN - f.V * f.V.transpose();
  const Matrix<Scalar> Ah = IN - fh.V * fh.V.transpose();
  const Matrix<Scalar> B = Id - f.U * f.U.transpose();
  const Matrix<Scalar> Bh = Id - fh.U * fh.U.transpose();
  const Matrix<Scalar> D = Eigen::kroneckerProduct(Ah, Bh).eval() - Eigen::kroneckerProduct(A, B).eval();
  const Vector<Scalar> ev =
      Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>(D, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs();
  return ev.maxCoeff();
}

template <typename Scalar>
struct LipschitzHarnessReport {
  int trials = 0;
  Scalar max_ratio_U = 0;         // ||P_U - P_U^|| / ((R / sigma_R) ||X - X^||)
  Scalar max_ratio_V = 0;
  Scalar max_ratio_combined = 0;  // against 3 R / sigma_R
  Scalar max_relative_distance = 0;  // ||X - X^|| / (sigma_R / R), always < 1
};

// Random rank-R pairs X = V S U^T, X^ = (V + e E1)(S + e E2)(U + e E3)^T with
// e shrunk until ||X - X^|| < sigma_R / R.
template <typename Scalar>
LipschitzHarnessReport<Scalar> projector_lipschitz_harness(int n_trials, Index N, Index d, int R, std::uint64_t seed) {
  if (R < 1 || N < R || d < R) throw Error(ErrorKind::BadParams, "harness: need N >= R, d >= R >= 1");
  const CounterRng rng = CounterRng::stream(seed, 9);
  LipschitzHarnessReport<Scalar> rep;
  for (int trial = 0; trial < n_trials; ++trial) {
    const auto tag = static_cast<std::uint64_t>(trial) * 16;
    auto gauss = [&](Index rows, Index cols, std::uint64_t sub) {
      return detail::gaussian_matrix<Scalar>(rng, rows, cols, tag + sub);
    };
    const Matrix<Scalar> V = Eigen::HouseholderQR<Matrix<Scalar>>(gauss(N, R, 0)).householderQ() *
                             Matrix<Scalar>::Identity(N, R) * std::sqrt(static_cast<Scalar>(N));
    const Matrix<Scalar> U = Eigen::HouseholderQR<Matrix<Scalar>>(gauss(d, R, 1)).householderQ() *
                             Matrix<Scalar>::Identity(d, R);
    Vector<Scalar> s(R);
    for (int j = 0; j < R; ++j) s(j) = Scalar(0.25) + Scalar(2) * static_cast<Scalar>(rng.uniform(tag + 2, 0, j));
    const Ensemble<Scalar> X = V * s.asDiagonal() * U.transpose();
    const Scalar sigma_R = s.minCoeff();
    const Matrix<Scalar> E1 = gauss(N, R, 3);
    const Matrix<Scalar> E2 = gauss(R, R, 4);
    const Matrix<Scalar> E3 = gauss(d, R, 5);
    // Perturbation size drawn uniformly in log scale below the admissible radius.
    Scalar eps = std::pow(Scalar(10), Scalar(-3) * static_cast<Scalar>(rng.uniform(tag + 6, 0, 0)));
    Ensemble<Scalar> Xh;
    for (int shrink = 0; shrink < 200; ++shrink) {
      Xh = (V + eps * E1) * (Matrix<Scalar>(s.asDiagonal()) + eps * E2) * (U + eps * E3).transpose();
      if (l2_distance(X, Xh) < sigma_R / static_cast<Scalar>(R)) break;
      eps /= Scalar(2);
    }
    const auto diff = projector_differences(X, Xh, R);
    if (diff.distance == Scalar(0)) {
      ++rep.trials;
      continue;
    }
    const Scalar unit = static_cast<Scalar>(R) / diff.sigma_R * diff.distance;
    rep.max_ratio_U = std::max(rep.max_ratio_U, diff.U_part / unit);
    rep.max_ratio_V = std::max(rep.max_ratio_V, diff.V_part / unit);
    rep.max_ratio_combined = std::max(rep.max_ratio_combined, diff.combined / (Scalar(3) * unit));
    rep.max_relative_distance = std::max(rep.max_relative_distance, diff.distance * static_cast<Scalar>(R) / diff.sigma_R);
    ++rep.trials;
  }
  return rep;
}

}  // namespace dolr
