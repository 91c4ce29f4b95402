#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dolr {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// One row per atom of the finite sample space; rows are contiguous so that
// per-atom callables can bind to them without copies.
template <typename Scalar>
using Ensemble = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

enum class ErrorKind {
  InvalidEnsemble,
  InvalidBoundInput,
  SingularRowGram,
  SingularGram,
  UnknownModel,
  BadParams,
  AssumptionViolated,
  OverflowingDims,
  NonFiniteState,
  RankDeficient,
  ZeroState,
  NoFloorDeclared,
  ShapeMismatch,
  InsufficientData,
  ParseError,
  ValidationError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Thread count used by parallel_for. Initialised from DOLR_THREADS (default 1).
int num_threads();
void set_num_threads(int n);

// Static chunking over [0, n). Every index is visited exactly once and each
// call writes only its own output slot, so results do not depend on the
// thread count.
template <typename F>
void parallel_for(Index n, F&& body) {
  const int threads = std::min<Index>(num_threads(), std::max<Index>(n / 16, 1));
  if (threads <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const Index chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const Index lo = t * chunk;
    const Index hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (Index i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Atoms per leaf of the reduction tree.
inline constexpr Index kLeafAtoms = 64;

namespace detail {

template <typename T>
T tree_combine(std::vector<T>& parts, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return parts[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  T left = tree_combine(parts, lo, mid);
  left += tree_combine(parts, mid, hi);
  return left;
}

}  // namespace detail

// Sum over atoms with a fixed-shape pairwise tree: leaves of kLeafAtoms atoms
// are reduced by `leaf(first, count)`, then combined pairwise. The tree shape
// depends only on n_atoms.
template <typename T, typename LeafFn>
T pairwise_atom_sum(Index n_atoms, LeafFn&& leaf) {
  const Index n_leaves = std::max<Index>((n_atoms + kLeafAtoms - 1) / kLeafAtoms, 1);
  std::vector<T> parts(static_cast<std::size_t>(n_leaves));
  parallel_for(n_leaves, [&](Index b) {
    const Index first = b * kLeafAtoms;
    const Index count = std::max<Index>(std::min(kLeafAtoms, n_atoms - first), 0);
    parts[static_cast<std::size_t>(b)] = leaf(first, count);
  });
  return detail::tree_combine(parts, 0, parts.size());
}

// E[a b^T] on the uniform sample space: (1/N) sum_i A_i^T B_i.
template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> cross_moment(const Eigen::MatrixBase<DerivedA>& A,
                                               const Eigen::MatrixBase<DerivedB>& B) {
  using Scalar = typename DerivedA::Scalar;
  if (A.rows() != B.rows()) throw Error(ErrorKind::ShapeMismatch, "cross_moment: atom counts differ");
  const Index n = A.rows();
  if (n == 0) throw Error(ErrorKind::InvalidEnsemble, "cross_moment: empty ensemble");
  const auto& a = A.derived();
  const auto& b = B.derived();
  Matrix<Scalar> sum = pairwise_atom_sum<Matrix<Scalar>>(n, [&](Index first, Index count) {
    Matrix<Scalar> part = a.middleRows(first, count).transpose() * b.middleRows(first, count);
    return part;
  });
  return sum / static_cast<Scalar>(n);
}

// (1/N) sum_i values_i with the same tree as cross_moment.
template <typename Derived>
typename Derived::Scalar ensemble_mean(const Eigen::MatrixBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  const Index n = values.size();
  if (n == 0) throw Error(ErrorKind::InvalidEnsemble, "ensemble_mean: empty ensemble");
  const auto& v = values.derived();
  Scalar sum = pairwise_atom_sum<Scalar>(n, [&](Index first, Index count) {
    Scalar s(0);
    for (Index i = first; i < first + count; ++i) s += v(i);
    return s;
  });
  return sum / static_cast<Scalar>(n);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

}  // namespace dolr
