#pragma once

// Ensemble linear algebra on the uniform N-atom sample space and the
// closed-form scalar bounds used to certify DO solutions.

#include "dolr/common.hpp"

#include <Eigen/Eigenvalues>

#include <limits>
#include <numeric>
#include <optional>

namespace dolr {

// Relative invertibility / rank threshold: eigenvalues above
// kRankTolerance * trace count towards the rank.
inline constexpr double kRankTolerance = 1e-10;

template <typename Scalar>
struct SymmetricSpectrum {
  Vector<Scalar> values;   // descending
  Matrix<Scalar> vectors;  // columns match values
};

// Symmetric eigendecomposition with a fixed gauge: eigenvalues descending
// (stable for ties), and each eigenvector's largest-magnitude component
// (first one on ties) made positive.
template <typename Derived>
SymmetricSpectrum<typename Derived::Scalar> symmetric_spectrum(const Eigen::MatrixBase<Derived>& S) {
  using Scalar = typename Derived::Scalar;
  const Index n = S.rows();
  SymmetricSpectrum<Scalar> out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  if (n == 0) return out;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(Matrix<Scalar>(S.derived()));
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::InvalidEnsemble, "eigendecomposition failed");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  const auto& ev = solver.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return ev(a) > ev(b); });
  for (Index k = 0; k < n; ++k) {
    const Index src = order[static_cast<std::size_t>(k)];
    out.values(k) = ev(src);
    Vector<Scalar> v = solver.eigenvectors().col(src);
    Index arg = 0;
    for (Index i = 1; i < n; ++i)
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    if (v(arg) < Scalar(0)) v = -v;
    out.vectors.col(k) = v;
  }
  return out;
}

template <typename Scalar>
struct GramReport {
  Matrix<Scalar> gram;                    // C_Y = E[Y Y^T]
  std::optional<Matrix<Scalar>> inverse;  // present iff lambda_min > threshold
  Vector<Scalar> eigenvalues;             // descending
  Scalar lambda_min = 0;
  Scalar sigma_R = 0;
  Scalar inv_frobenius = std::numeric_limits<Scalar>::infinity();
  Scalar threshold = 0;  // kRankTolerance * trace
  int rank = 0;

  bool invertible() const { return inverse.has_value(); }
};

template <typename Derived>
GramReport<typename Derived::Scalar> gram(const Eigen::MatrixBase<Derived>& Y) {
  using Scalar = typename Derived::Scalar;
  if (Y.rows() < 1) throw Error(ErrorKind::InvalidEnsemble, "gram: need at least one atom");
  if (!all_finite(Y)) throw Error(ErrorKind::InvalidEnsemble, "gram: non-finite entries");
  GramReport<Scalar> rep;
  Matrix<Scalar> c = cross_moment(Y, Y);
  rep.gram = (c + c.transpose()) / Scalar(2);
  const Index r = rep.gram.rows();
  if (r == 0) return rep;
  const auto spec = symmetric_spectrum(rep.gram);
  rep.eigenvalues = spec.values;
  const Scalar trace = rep.gram.trace();
  rep.threshold = Scalar(kRankTolerance) * trace;
  rep.rank = static_cast<int>((spec.values.array() > rep.threshold).count());
  rep.lambda_min = std::max(spec.values(r - 1), Scalar(0));
  rep.sigma_R = spec.values.cwiseAbs().minCoeff();
  if (trace > Scalar(0) && rep.lambda_min > rep.threshold) {
    Matrix<Scalar> inv = spec.vectors * spec.values.cwiseInverse().asDiagonal() * spec.vectors.transpose();
    rep.inverse = (inv + inv.transpose()) / Scalar(2);
    rep.inv_frobenius = rep.inverse->norm();
  }
  return rep;
}

// eta(rho, gamma) = -rho + sqrt(rho^2 + 1/(2 gamma)); radius of the ball on
// which the Gram inverse stays bounded by 2 gamma.
template <typename Scalar>
Scalar eta_radius(Scalar rho, Scalar gamma) {
  if (!(rho > Scalar(0)) || !(gamma > Scalar(0)))
    throw Error(ErrorKind::InvalidBoundInput, "eta_radius: rho and gamma must be positive");
  // Rationalised form of -rho + sqrt(rho^2 + c); avoids cancellation for large rho.
  const Scalar c = Scalar(1) / (Scalar(2) * gamma);
  return c / (rho + std::sqrt(rho * rho + c));
}

// Local existence window for the Picard construction.
template <typename Scalar>
Scalar picard_delta(int R, Scalar rho, Scalar gamma, int d, Scalar C_lgb) {
  if (R <= 0 || d <= 0 || !(rho > Scalar(0)) || !(gamma > Scalar(0)) || !(C_lgb > Scalar(0)))
    throw Error(ErrorKind::InvalidBoundInput, "picard_delta: all inputs must be positive");
  const Scalar rr = static_cast<Scalar>(R);
  const Scalar eta = std::min(eta_radius(std::sqrt(rr), std::sqrt(rr)), eta_radius(rho, gamma));
  const Scalar eta2 = eta * eta;
  const Scalar moment = Scalar(3) * rho * rho + Scalar(1);
  const Scalar growth = Scalar(1) + Scalar(3) * rr * moment;
  const Scalar term2 = std::min(Scalar(1), eta2) / (Scalar(36) * rr * C_lgb * growth);
  const Scalar root = std::sqrt(static_cast<Scalar>(d)) + std::sqrt(rr);
  const Scalar term3 = std::min(eta2, rr) / (Scalar(8) * gamma * gamma * moment * C_lgb * growth * root * root);
  return std::min({Scalar(1), term2, term3});
}

// M(T) = 3 (E|Y0|^2 + (1+T) T C_lgb) exp(3 (1+T) T C_lgb).
template <typename Scalar>
Scalar stability_bound_M(Scalar T, Scalar E_Y0_sq, Scalar C_lgb) {
  if (!std::isfinite(T) || !std::isfinite(E_Y0_sq) || !std::isfinite(C_lgb))
    throw Error(ErrorKind::InvalidBoundInput, "stability_bound_M: non-finite input");
  const Scalar g = (Scalar(1) + T) * T * C_lgb;
  return Scalar(3) * (E_Y0_sq + g) * std::exp(Scalar(3) * g);
}

template <typename Scalar>
Scalar moment_K1(int k, Scalar T, Scalar C_lgb) {
  const Scalar kk = static_cast<Scalar>(k);
  return Scalar(3) * kk * kk * C_lgb * T / std::pow(Scalar(1) + Scalar(1) / C_lgb, kk - Scalar(1));
}

template <typename Scalar>
Scalar moment_K2(int k, Scalar T, Scalar C_lgb) {
  const Scalar kk = static_cast<Scalar>(k);
  return std::exp(Scalar(6) * kk * kk * C_lgb * (Scalar(1) + Scalar(1) / C_lgb) * T);
}

// (E|Y0|^{2k} + K1(T)) K2(T).
template <typename Scalar>
Scalar moment_bound_2k(int k, Scalar T, Scalar E_Y0_2k, Scalar C_lgb) {
  if (k < 1 || !(C_lgb > Scalar(0)) || T < Scalar(0) || E_Y0_2k < Scalar(0))
    throw Error(ErrorKind::InvalidBoundInput, "moment_bound_2k: need k >= 1, T >= 0, C_lgb > 0");
  return (E_Y0_2k + moment_K1(k, T, C_lgb)) * moment_K2(k, T, C_lgb);
}

template <typename Scalar>
struct WellPosednessBounds {
  Scalar rho = 0;    // ||Y0||
  Scalar gamma = 0;  // ||C_{Y0}^{-1}||_F
  Scalar eta = 0;
  Scalar delta = 0;
  Scalar M_T = 0;
  Scalar K1 = 0;
  Scalar K2 = 0;
};

template <typename Derived>
WellPosednessBounds<typename Derived::Scalar> well_posedness_bounds(const Eigen::MatrixBase<Derived>& Y0, int d,
                                                                    typename Derived::Scalar C_lgb,
                                                                    typename Derived::Scalar T, int k = 1) {
  using Scalar = typename Derived::Scalar;
  const int R = static_cast<int>(Y0.cols());
  const auto rep = gram(Y0);
  if (!rep.invertible()) throw Error(ErrorKind::SingularGram, "well_posedness_bounds: C_{Y0} not invertible");
  WellPosednessBounds<Scalar> b;
  const Scalar second = rep.gram.trace();
  b.rho = std::sqrt(second);
  b.gamma = rep.inv_frobenius;
  const Scalar sr = std::sqrt(static_cast<Scalar>(R));
  b.eta = std::min(eta_radius(sr, sr), eta_radius(b.rho, b.gamma));
  b.delta = picard_delta(R, b.rho, b.gamma, d, C_lgb);
  b.M_T = stability_bound_M(T, second, C_lgb);
  b.K1 = moment_K1(k, T, C_lgb);
  b.K2 = moment_K2(k, T, C_lgb);
  return b;
}

// Orthogonal projector onto the row space of U: U^T (U U^T)^{-1} U.
template <typename DerivedU, typename DerivedG>
Matrix<typename DerivedU::Scalar> projector_row(const Eigen::MatrixBase<DerivedU>& U,
                                                const Eigen::MatrixBase<DerivedG>& gram_uu_inverse) {
  using Scalar = typename DerivedU::Scalar;
  Matrix<Scalar> p = U.transpose() * gram_uu_inverse * U;
  return (p + p.transpose()) / Scalar(2);
}

template <typename DerivedU>
Matrix<typename DerivedU::Scalar> projector_row(const Eigen::MatrixBase<DerivedU>& U) {
  using Scalar = typename DerivedU::Scalar;
  const Matrix<Scalar> uu = U * U.transpose();
  const auto spec = symmetric_spectrum(uu);
  if (uu.rows() == 0) return Matrix<Scalar>::Zero(U.cols(), U.cols());
  const Scalar threshold = Scalar(kRankTolerance) * uu.trace();
  if (!(spec.values(uu.rows() - 1) > threshold))
    throw Error(ErrorKind::SingularRowGram, "projector_row: rows of U are linearly dependent");
  const Matrix<Scalar> inv = spec.vectors * spec.values.cwiseInverse().asDiagonal() * spec.vectors.transpose();
  return projector_row(U, inv);
}

// L^2 projection of each column of f onto span{columns of Y}: Y C_Y^{-1} E[Y f].
template <typename DerivedY, typename DerivedF>
Ensemble<typename DerivedY::Scalar> projector_stochastic(const Eigen::MatrixBase<DerivedY>& Y,
                                                         const Eigen::MatrixBase<DerivedF>& f,
                                                         const GramReport<typename DerivedY::Scalar>& rep) {
  using Scalar = typename DerivedY::Scalar;
  if (!rep.invertible()) throw Error(ErrorKind::SingularGram, "projector_stochastic: C_Y not invertible");
  const Matrix<Scalar> coeff = (*rep.inverse) * cross_moment(Y, f);
  return Y * coeff;
}

template <typename DerivedY, typename DerivedF>
Ensemble<typename DerivedY::Scalar> projector_stochastic(const Eigen::MatrixBase<DerivedY>& Y,
                                                         const Eigen::MatrixBase<DerivedF>& f) {
  return projector_stochastic(Y, f, gram(Y));
}

template <typename Scalar>
struct SecondMomentFactors {
  Matrix<Scalar> Q;        // d x r, orthonormal columns
  Vector<Scalar> gammas;   // r retained eigenvalues of E[X X^T], descending
  Ensemble<Scalar> phis;   // N x r, orthonormal in the ensemble inner product
  Vector<Scalar> spectrum; // all d eigenvalues, descending
  Scalar trace = 0;

  int rank() const { return static_cast<int>(gammas.size()); }
};

// Canonical expansion of E[X .]: E[X X^T] = Q diag(gammas) Q^T and
// phi_k = gamma_k^{-1/2} X q_k. Keeps eigenvalues above
// relative_threshold * trace; at most max_rank of them when max_rank >= 0.
template <typename Derived>
SecondMomentFactors<typename Derived::Scalar> second_moment_svd(const Eigen::MatrixBase<Derived>& X,
                                                                double relative_threshold = kRankTolerance,
                                                                int max_rank = -1) {
  using Scalar = typename Derived::Scalar;
  if (X.rows() < 1) throw Error(ErrorKind::InvalidEnsemble, "second_moment_svd: need at least one atom");
  if (!all_finite(X)) throw Error(ErrorKind::InvalidEnsemble, "second_moment_svd: non-finite entries");
  SecondMomentFactors<Scalar> out;
  Matrix<Scalar> c = cross_moment(X, X);
  c = (c + c.transpose()) / Scalar(2);
  const auto spec = symmetric_spectrum(c);
  out.spectrum = spec.values;
  out.trace = c.trace();
  const Scalar threshold = static_cast<Scalar>(relative_threshold) * out.trace;
  Index r = 0;
  if (out.trace > Scalar(0))
    while (r < spec.values.size() && spec.values(r) > threshold) ++r;
  if (max_rank >= 0) r = std::min<Index>(r, max_rank);
  out.Q = spec.vectors.leftCols(r);
  out.gammas = spec.values.head(r);
  out.phis = X * out.Q * out.gammas.cwiseSqrt().cwiseInverse().asDiagonal();
  return out;
}

}  // namespace dolr
