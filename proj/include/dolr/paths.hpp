#pragma once

// Reproducible Brownian increments keyed by (seed, fine step, atom, channel).

#include "dolr/common.hpp"
#include "dolr/random.hpp"

#include <cstdint>
#include <string>

namespace dolr {

// Default cap on stored increments (doubles): 2^27, i.e. 1 GiB.
inline constexpr std::uint64_t kDefaultPathCap = std::uint64_t(1) << 27;

template <typename Scalar>
class BrownianPath {
 public:
  BrownianPath() = default;

  std::uint64_t seed() const { return seed_; }
  Index n_steps() const { return n_steps_; }
  Scalar dt() const { return dt_; }
  Index atoms() const { return atoms_; }
  Index channels() const { return channels_; }
  int level() const { return level_; }

  // N x m increments of step `step`.
  Eigen::Map<const Ensemble<Scalar>> increment(Index step) const {
    return Eigen::Map<const Ensemble<Scalar>>(data_.data() + step * atoms_ * channels_, atoms_, channels_);
  }

  const std::vector<Scalar>& data() const { return data_; }

  // Sum of consecutive pairs: the path with n_steps/2 steps of size 2 dt
  // driven by the same fine noise.
  BrownianPath coarsened() const;

  template <typename S>
  friend BrownianPath<S> generate_path(std::uint64_t, Index, S, Index, Index, int, std::uint64_t);

 private:
  std::uint64_t seed_ = 0;
  Index n_steps_ = 0;
  Scalar dt_ = 0;
  Index atoms_ = 0;
  Index channels_ = 0;
  int level_ = 0;
  std::vector<Scalar> data_;  // (step, atom, channel) row-major
};

// Draws N(0, dt / 2^level) increments on the fine grid of n_steps * 2^level
// steps and sums them pairwise, level by level, up to the requested grid.
// Paths with equal n_steps * 2^level share their fine noise exactly.
template <typename Scalar>
BrownianPath<Scalar> generate_path(std::uint64_t seed, Index n_steps, Scalar dt, Index N, Index m, int level = 0,
                                   std::uint64_t memory_cap = kDefaultPathCap) {
  if (n_steps <= 0 || N <= 0 || m <= 0 || level < 0 || !(dt > Scalar(0)))
    throw Error(ErrorKind::OverflowingDims, "generate_path: dimensions must be positive");
  if (level > 30) throw Error(ErrorKind::OverflowingDims, "generate_path: level too deep");
  const double total = static_cast<double>(n_steps) * static_cast<double>(N) * static_cast<double>(m);
  if (total > static_cast<double>(memory_cap))
    throw Error(ErrorKind::OverflowingDims, "generate_path: n_steps*N*m exceeds memory cap");
  BrownianPath<Scalar> path;
  path.seed_ = seed;
  path.n_steps_ = n_steps;
  path.dt_ = dt;
  path.atoms_ = N;
  path.channels_ = m;
  path.level_ = level;
  path.data_.assign(static_cast<std::size_t>(n_steps * N * m), Scalar(0));
  const CounterRng rng(seed);
  const Index fine_per_step = Index(1) << level;
  const Scalar fine_sd = std::sqrt(static_cast<Scalar>(static_cast<double>(dt) / static_cast<double>(fine_per_step)));
  parallel_for(N, [&](Index atom) {
    std::vector<Scalar> buf(static_cast<std::size_t>(fine_per_step));
    for (Index step = 0; step < n_steps; ++step) {
      for (Index ch = 0; ch < m; ++ch) {
        for (Index f = 0; f < fine_per_step; ++f) {
          const auto fine_step = static_cast<std::uint64_t>(step * fine_per_step + f);
          buf[static_cast<std::size_t>(f)] =
              fine_sd * static_cast<Scalar>(rng.normal(fine_step, static_cast<std::uint64_t>(atom),
                                                       static_cast<std::uint64_t>(ch)));
        }
        for (Index width = fine_per_step; width > 1; width /= 2)
          for (Index j = 0; j < width / 2; ++j)
            buf[static_cast<std::size_t>(j)] =
                buf[static_cast<std::size_t>(2 * j)] + buf[static_cast<std::size_t>(2 * j + 1)];
        path.data_[static_cast<std::size_t>((step * N + atom) * m + ch)] = buf[0];
      }
    }
  });
  return path;
}

template <typename Scalar>
BrownianPath<Scalar> BrownianPath<Scalar>::coarsened() const {
  if (n_steps_ % 2 != 0) throw Error(ErrorKind::OverflowingDims, "coarsened: odd number of steps");
  BrownianPath out;
  out.seed_ = seed_;
  out.n_steps_ = n_steps_ / 2;
  out.dt_ = dt_ * Scalar(2);
  out.atoms_ = atoms_;
  out.channels_ = channels_;
  out.level_ = level_ + 1;
  const Index block = atoms_ * channels_;
  out.data_.resize(static_cast<std::size_t>(out.n_steps_ * block));
  for (Index s = 0; s < out.n_steps_; ++s)
    for (Index j = 0; j < block; ++j)
      out.data_[static_cast<std::size_t>(s * block + j)] =
          data_[static_cast<std::size_t>(2 * s * block + j)] + data_[static_cast<std::size_t>((2 * s + 1) * block + j)];
  return out;
}

// Little-endian float64 dump in (step, atom, channel) row-major order.
void write_path_binary(const std::string& filename, const std::vector<double>& increments);

}  // namespace dolr
