#include "dolr/diagnostics.hpp"
#include "dolr/rank_control.hpp"

#include <doctest.h>

#include <cmath>

using namespace dolr;
using Mat = Matrix<double>;
using Ens = Ensemble<double>;

namespace {

Ens normals(Index N, Index k, std::uint64_t seed) {
  const CounterRng rng(seed);
  Ens Y(N, k);
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < k; ++j) Y(i, j) = rng.normal(0, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
  return Y;
}

Mat rotation(double angle) {
  Mat T(2, 2);
  T << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return T;
}

}  // namespace

TEST_SUITE("diagnostics") {
  TEST_CASE("l2 distance examples") {
    const Ens A = normals(7, 3, 1);
    CHECK(l2_distance(A, A) == 0.0);
    CHECK(l2_distance(A, Ens(A.array() + 0.5)) == doctest::Approx(0.5 * std::sqrt(3.0)).epsilon(1e-14));
    Ens P(3, 2), Q(3, 2);
    P << 1, 2, 3, 4, 5, 6;
    Q << 1, 0, 0, 4, 5, 7;
    // (0 + 4 + 9 + 0 + 0 + 1) / 3
    CHECK(l2_distance(P, Q) == doctest::Approx(std::sqrt(14.0 / 3.0)).epsilon(1e-15));
    CHECK_THROWS_AS(l2_distance(P, Ens(3, 3)), Error);
  }

  TEST_CASE("l2 distance is a metric") {
    for (int t = 0; t < 50; ++t) {
      const Ens a = normals(20, 4, 10 + 3 * t);
      const Ens b = normals(20, 4, 11 + 3 * t);
      const Ens c = normals(20, 4, 12 + 3 * t);
      CHECK(l2_distance(a, b) == l2_distance(b, a));
      CHECK(l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-15);
      CHECK(l2_distance(a, b) > 0.0);
    }
  }

  TEST_CASE("convergence rate needs three levels") {
    CHECK_FALSE(convergence_rate<double>({0.1, 0.05}, {1.0, 0.5}).has_value());
    const auto r = convergence_rate<double>({0.1, 0.05, 0.025}, {2.0, 1.0, 0.5});
    REQUIRE(r.has_value());
    CHECK(*r == doctest::Approx(1.0));
    CHECK(loglog_slope<double>({1, 2, 4, 8}, {1, 4, 16, 64}) == doctest::Approx(2.0));
  }

  TEST_CASE("rotation equivariance") {
    const auto m = builtin<double>("additive_floor", 5);
    const auto init = make_initial_datum(m, 128, 2, 3);
    const auto path = generate_path<double>(2, 100, 1e-3, 128, 5);
    auto rep = rotation_equivariance_check(m, init.U0, init.Y0, Mat(Mat::Identity(2, 2)), path, 0.1, 1e-3);
    CHECK(rep.sup_U_defect == 0.0);
    CHECK(rep.sup_Y_defect == 0.0);
    CHECK(rep.sup_product_defect == 0.0);
    rep = rotation_equivariance_check(m, init.U0, init.Y0, rotation(M_PI / 4), path, 0.1, 1e-3);
    CHECK(rep.sup_product_defect <= 1e-8);
    CHECK(rep.sup_U_defect <= 1e-8);
    CHECK(rep.sup_Y_defect <= 1e-8);
    Mat swap(2, 2);
    swap << 0, 1, 1, 0;
    rep = rotation_equivariance_check(m, init.U0, init.Y0, swap, path, 0.1, 1e-3);
    CHECK(rep.sup_U_defect <= 1e-12);
    CHECK(rep.sup_product_defect <= 1e-12);
    CHECK_THROWS_AS(rotation_equivariance_check(m, init.U0, init.Y0, Mat(2.0 * swap), path, 0.1, 1e-3), Error);
  }

  TEST_CASE("moment estimator") {
    Eigen::RowVector3d y0(1, 2, -1);
    const std::vector<Ens> constant(4, Ens(y0.replicate(10, 1)));
    for (double v : moment_estimator(constant, 1)) CHECK(v == doctest::Approx(6.0));
    for (double v : moment_estimator(constant, 2)) CHECK(v == doctest::Approx(36.0));
    CHECK_THROWS_AS(moment_estimator(constant, 0), Error);
  }

  TEST_CASE("ou stationary second moment") {
    const double kappa = 1.0, sigma = 0.8;
    const int d = 3;
    const auto m = builtin<double>("ou", d, {{"kappa", kappa}, {"sigma", sigma}});
    const Index N = 4000;
    InitialDatum<double> init;
    init.X0 = Ens::Zero(N, d);
    const auto path = generate_path<double>(3, 800, 1e-2, N, d);
    IntegrateOptions<double> opts;
    opts.scheme = Scheme::Reference;
    opts.t_end = 8;
    opts.dt = 1e-2;
    opts.record_stride = 800;
    const auto traj = integrate(m, init, opts, path);
    const double expect = d * sigma * sigma / (2 * kappa);
    const double got = moment_estimator(traj.X, 1).back();
    // Sampling error sqrt(2 d / N) relative plus the Euler bias kappa dt / 2.
    CHECK(std::abs(got - expect) / expect <= 5 * std::sqrt(2.0 / (d * N)) + 0.01);
  }

  TEST_CASE("moment equality on a do trajectory") {
    const auto m = builtin<double>("additive_floor", 6);
    const auto init = make_initial_datum(m, 200, 3, 1);
    const auto path = generate_path<double>(2, 200, 5e-3, 200, 6);
    IntegrateOptions<double> opts;
    opts.t_end = 1;
    opts.dt = 5e-3;
    opts.record_stride = 20;
    const auto traj = integrate(m, init, opts, path);
    CHECK(moment_equality_defect(traj.X, traj.Y, 1) <= 1e-10);
    CHECK(moment_equality_defect(traj.X, traj.Y, 2) <= 1e-10);
  }

  TEST_CASE("hoelder slope of linear motion") {
    Eigen::RowVector2d v(0.3, -0.4);
    std::vector<Ens> X;
    for (int j = 0; j <= 64; ++j) X.push_back(Ens((0.01 * j * v).replicate(5, 1)));
    CHECK(holder_estimator(X, 1, {1, 2, 4, 8, 16}, 0.01) == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(holder_estimator(X, 2, {1, 2, 4, 8}, 0.01) == doctest::Approx(4.0).epsilon(1e-10));
    CHECK_THROWS_AS(holder_estimator(X, 1, {1, 2, 4}, 0.01), Error);
    CHECK_THROWS_AS(holder_estimator(X, 1, {1, 2, 4, 100}, 0.01), Error);
  }

  TEST_CASE("hoelder slopes on additive_floor") {
    const auto m = builtin<double>("additive_floor", 4);
    const auto init = make_initial_datum(m, 1024, 2, 2);
    const double dt = 1e-3;
    const auto path = generate_path<double>(5, 1000, dt, 1024, 4);
    IntegrateOptions<double> opts;
    opts.t_end = 1;
    opts.dt = dt;
    opts.record_stride = 4;
    const auto traj = integrate(m, init, opts, path);
    const std::vector<int> gaps{1, 2, 4, 8, 16};
    const double s1 = holder_estimator(traj.X, 1, gaps, 4 * dt);
    const double s2 = holder_estimator(traj.X, 2, gaps, 4 * dt);
    CHECK(s1 >= 0.9);
    CHECK(s1 <= 1.3);
    CHECK(s2 >= 1.8);
  }

  TEST_CASE("second moment rank track") {
    const auto m = builtin<double>("linear_lowrank", 8);
    const auto init = make_initial_datum(m, 256, 2, 4);
    const auto path = generate_path<double>(5, 200, 5e-3, 256, 2);
    IntegrateOptions<double> opts;
    opts.t_end = 1;
    opts.dt = 5e-3;
    opts.record_stride = 10;
    for (int r : second_moment_rank_track(integrate(m, init, opts, path).X)) CHECK(r == 2);
    // Without rotation span(U0) is invariant, so even the full-space scheme keeps rank 2.
    const auto frozen = builtin<double>("linear_lowrank", 8, {{"omega", 0.0}});
    opts.scheme = Scheme::Reference;
    for (int r : second_moment_rank_track(integrate(frozen, make_initial_datum(frozen, 256, 2, 4), opts, path).X))
      CHECK(r == 2);
    CHECK(second_moment_rank_track<double>({Ens::Zero(4, 3)}) == std::vector<int>{0});

    const auto mc = builtin<double>("mode_crossing", 3);
    const auto mi = make_initial_datum(mc, 256, 2, 1);
    const auto mp = generate_path<double>(1, 1200, 1e-3, 256, 1);
    auto mon = make_monitor(mi.Y0, 3, mc.C_lgb);
    IntegrateOptions<double> mo;
    mo.t_end = 1.2;
    mo.dt = 1e-3;
    mo.record_stride = 100;
    const auto traj = integrate(mc, mi, mo, mp, explosion_hooks(mon, RestartPolicy<double>{}));
    const auto ranks = second_moment_rank_track(traj.X);
    REQUIRE(ranks.size() == traj.times.size());
    for (std::size_t j = 0; j < ranks.size(); ++j) CHECK(ranks[j] == (traj.times[j] < 0.95 ? 2 : 1));
  }

  TEST_CASE("projector differences vanish for identical and rotated data") {
    const Ens X = normals(20, 3, 1) * normals(3, 6, 2);
    auto diff = projector_differences(X, X, 3);
    CHECK(diff.U_part < 1e-13);
    CHECK(diff.V_part < 1e-13);
    CHECK(diff.combined < 1e-13);
    // Xh = X Q^T with Q orthogonal and acting inside the row space of X.
    const auto f = projector_frames(X, 3);
    const Mat theta = detail::random_orthogonal<double>(CounterRng(3), 3, 0);
    const Mat Q = Mat::Identity(6, 6) - f.U * f.U.transpose() + f.U * theta * f.U.transpose();
    CHECK((Q * Q.transpose() - Mat::Identity(6, 6)).norm() < 1e-12);
    diff = projector_differences(X, Ens(X * Q.transpose()), 3);
    CHECK(diff.U_part < 1e-12);
  }

  TEST_CASE("combined norm agrees with the dense kronecker reference") {
    for (int t = 0; t < 25; ++t) {
      const Index N = 6 + t % 5;
      const Index d = 3 + t % 4;
      const int R = 1 + t % 3;
      if (R > d) continue;
      const Ens X = normals(N, R, 100 + t) * normals(R, d, 200 + t);
      const Ens Xh = X + 0.05 * normals(N, d, 300 + t);
      const auto diff = projector_differences(X, Xh, R);
      CHECK(diff.combined == doctest::Approx(combined_difference_dense(X, Xh, R)).epsilon(1e-10));
    }
  }

  TEST_CASE("projector lipschitz harness") {
    const auto rep = projector_lipschitz_harness<double>(200, 32, 8, 3, 1);
    CHECK(rep.trials == 200);
    CHECK(rep.max_ratio_U <= 1 + 1e-12);
    CHECK(rep.max_ratio_V <= 1 + 1e-12);
    CHECK(rep.max_ratio_combined <= 1 + 1e-12);
    CHECK(rep.max_relative_distance < 1.0);
    CHECK(rep.max_ratio_U > 0.0);
    const auto again = projector_lipschitz_harness<double>(200, 32, 8, 3, 1);
    CHECK(again.max_ratio_U == rep.max_ratio_U);
    CHECK_THROWS_AS(projector_lipschitz_harness<double>(1, 2, 8, 3, 1), Error);
  }
}
