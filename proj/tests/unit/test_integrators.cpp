#include "dolr/integrators.hpp"

#include <doctest.h>

#include <cmath>

using namespace dolr;
using Mat = Matrix<double>;
using Ens = Ensemble<double>;
using Row = RowVector<double>;

namespace {

SdeModel<double> constant_model(int d, Row c) {
  SdeModel<double> m;
  m.name = "const";
  m.d = d;
  m.m = 1;
  m.additive = true;
  m.C_lgb = 1;
  m.drift = [c](double, Eigen::Ref<const Row>, Eigen::Ref<Row> out) { out = c; };
  m.diffusion = [](double, Eigen::Ref<const Row>, Eigen::Ref<Mat> out) { out.setZero(); };
  return m;
}

SdeModel<double> zero_drift_model(int d, double sigma) {
  SdeModel<double> m;
  m.name = "noise";
  m.d = d;
  m.m = d;
  m.additive = true;
  m.C_lgb = 1;
  m.drift = [](double, Eigen::Ref<const Row>, Eigen::Ref<Row> out) { out.setZero(); };
  m.diffusion = [sigma, d](double, Eigen::Ref<const Row>, Eigen::Ref<Mat> out) {
    out = sigma * Mat::Identity(d, d);
  };
  return m;
}

double l2(const Ens& a, const Ens& b) { return std::sqrt((a - b).rowwise().squaredNorm().mean()); }

Mat drift_matrix(const SdeModel<double>& m) {
  Mat A(m.d, m.d);
  Row out(m.d);
  for (int i = 0; i < m.d; ++i) {
    m.drift(0.0, Row::Unit(m.d, i), out);
    A.col(i) = out.transpose();
  }
  return A;
}

// X_T = exp(TA) (X0 + B0 W_T) for linear_lowrank.
Ens linear_lowrank_exact(const SdeModel<double>& m, const Ens& X0, const BrownianPath<double>& path, double T) {
  const Mat A = drift_matrix(m);
  Mat B0(m.d, m.m);
  m.diffusion(0.0, Row::Zero(m.d), B0);
  Ens W = Ens::Zero(X0.rows(), m.m);
  const Index n = std::llround(T / path.dt());
  for (Index k = 0; k < n; ++k) W += path.increment(k);
  const Mat E = (T * A).exp();
  return (X0 + W * B0.transpose()) * E.transpose();
}

}  // namespace

TEST_SUITE("integrators") {
  TEST_CASE("reference step examples") {
    const auto path = generate_path<double>(1, 1, 0.1, 5, 1);
    Ens X = Ens::Random(5, 3);
    const auto still = constant_model(3, Row::Zero(3));
    CHECK(step_reference(still, FullState<double>{0, X}, 0.1, path.increment(0)).X == X);
    Row c(3);
    c << 1, -2, 0.5;
    const auto moving = constant_model(3, c);
    const auto next = step_reference(moving, FullState<double>{0, X}, 0.1, path.increment(0));
    CHECK((next.X - (X.rowwise() + c * 0.1)).norm() < 1e-15);
    CHECK(next.t == doctest::Approx(0.1));
    CHECK_THROWS_AS(step_reference(moving, FullState<double>{0, X}, 0.0, path.increment(0)), Error);
  }

  TEST_CASE("reference ou mean without noise") {
    const auto m = builtin<double>("ou", 2, {{"kappa", 1.0}, {"sigma", 0.0}});
    const auto path = generate_path<double>(2, 1000, 1e-3, 3, 2);
    InitialDatum<double> init;
    init.X0 = Ens::Ones(3, 2);
    IntegrateOptions<double> opts;
    opts.scheme = Scheme::Reference;
    opts.t_end = 1;
    opts.dt = 1e-3;
    opts.record_stride = 1000;
    const auto traj = integrate(m, init, opts, path);
    CHECK(traj.X.back()(0, 0) == doctest::Approx(std::pow(1 - 1e-3, 1000)).epsilon(1e-12));
    CHECK(std::abs(traj.X.back()(0, 0) - std::exp(-1.0)) < 1e-3);
  }

  TEST_CASE("reference ou strong error is first order") {
    // Exact OU solution on a fine grid with the same increments is the oracle.
    const double kappa = 1.0, sigma = 1.0, T = 1.0;
    const auto m = builtin<double>("ou", 1, {{"kappa", kappa}, {"sigma", sigma}});
    const int fine_level = 8;
    const Index N = 2000;
    const auto fine = generate_path<double>(5, 16 << fine_level, T / (16 << fine_level), N, 1, 0);
    Ens exact = Ens::Constant(N, 1, 1.0) * std::exp(-kappa * T);
    for (Index k = 0; k < fine.n_steps(); ++k) {
      const double tk = static_cast<double>(k) * fine.dt();
      // Exact transition weight over the fine cell, integrated analytically.
      const double w = (std::exp(-kappa * (T - tk - fine.dt())) - std::exp(-kappa * (T - tk))) / (kappa * fine.dt());
      exact += sigma * w * fine.increment(k);
    }
    std::vector<double> errs;
    for (int L : {0, 1, 2}) {
      const Index n = 16 << L;
      const auto path = generate_path<double>(5, n, T / n, N, 1, fine_level - L);
      InitialDatum<double> init;
      init.X0 = Ens::Ones(N, 1);
      IntegrateOptions<double> opts;
      opts.scheme = Scheme::Reference;
      opts.t_end = T;
      opts.dt = T / n;
      opts.record_stride = static_cast<int>(n);
      errs.push_back(l2(integrate(m, init, opts, path).X.back(), exact));
    }
    const double rate = std::log2(errs[0] / errs[2]) / 2.0;
    CHECK(rate > 0.8);
    CHECK(rate < 1.3);
  }

  TEST_CASE("do with R = d reproduces the reference exactly") {
    const auto m = builtin<double>("ou", 4);
    const auto init = make_initial_datum(m, 256, 4, 3);
    DoState<double> s{0, Mat::Identity(4, 4), init.X0};
    FullState<double> f{0, init.X0};
    const auto path = generate_path<double>(8, 100, 1e-3, 256, 4);
    for (Index k = 0; k < 100; ++k) {
      StepReport<double> rep;
      s = step_do(m, s, 1e-3, path.increment(k), &rep);
      f = step_reference(m, f, 1e-3, path.increment(k));
      CHECK(rep.gauge_defect == 0.0);
      CHECK(rep.ortho_defect == 0.0);
    }
    CHECK(s.U == Mat::Identity(4, 4));
    CHECK(s.full() == f.X);
  }

  TEST_CASE("zero drift freezes the basis") {
    const auto m = zero_drift_model(5, 0.3);
    const auto init = make_initial_datum(m, 64, 2, 4);
    const auto path = generate_path<double>(8, 10, 1e-2, 64, 5);
    DoState<double> s{0, init.U0, init.Y0};
    Ens Yexpect = init.Y0;
    for (Index k = 0; k < 10; ++k) {
      s = step_do(m, s, 1e-2, path.increment(k));
      Yexpect += 0.3 * path.increment(k) * init.U0.transpose();
      CHECK(s.U == init.U0);
    }
    CHECK((s.Y - Yexpect).norm() < 1e-13);
  }

  TEST_CASE("singular gram leaves the state untouched") {
    const auto m = builtin<double>("ou", 3);
    Ens Y(4, 2);
    Y << 1, 1, 2, 2, 3, 3, 4, 4;
    DoState<double> s{0, Mat::Identity(2, 3), Y};
    const auto copy = s;
    const auto path = generate_path<double>(1, 1, 1e-2, 4, 3);
    bool thrown = false;
    try {
      step_do(m, s, 1e-2, path.increment(0));
    } catch (const SingularGramError<double>& e) {
      thrown = true;
      CHECK(e.kind() == ErrorKind::SingularGram);
      CHECK(e.report().rank == 1);
    }
    CHECK(thrown);
    CHECK(s.Y == copy.Y);
    CHECK(s.U == copy.U);
  }

  TEST_CASE("do on linear_lowrank converges to the exact solution") {
    const int d = 8;
    const auto m = builtin<double>("linear_lowrank", d);
    const Index N = 400;
    const auto init = make_initial_datum(m, N, 2, 6);
    const int top = 3;
    const auto fine = generate_path<double>(13, 25 << top, 1.0 / (25 << top), N, 2);
    const Ens exact = linear_lowrank_exact(m, init.X0, fine, 1.0);
    std::vector<double> errs;
    for (int L = 0; L <= top; ++L) {
      const Index n = 25 << L;
      const auto path = generate_path<double>(13, n, 1.0 / n, N, 2, top - L);
      IntegrateOptions<double> opts;
      opts.t_end = 1;
      opts.dt = 1.0 / n;
      opts.record_stride = static_cast<int>(n);
      const auto traj = integrate(m, init, opts, path);
      errs.push_back(l2(traj.X.back(), exact));
      for (const auto& U : traj.U) CHECK((U * U.transpose() - Mat::Identity(2, 2)).norm() <= 1e-10);
    }
    CHECK(errs[0] < 0.1);
    for (int L = 0; L < top; ++L) CHECK(errs[L + 1] < 0.65 * errs[L]);
  }

  TEST_CASE("gauge defect is second order") {
    const auto m = builtin<double>("additive_floor", 5);
    const auto init = make_initial_datum(m, 200, 2, 7);
    std::vector<double> worst;
    for (int L = 0; L < 3; ++L) {
      const Index n = 50 << L;
      const auto path = generate_path<double>(21, n, 0.5 / n, 200, 5, 2 - L);
      DoState<double> s{0, init.U0, init.Y0};
      double w = 0;
      for (Index k = 0; k < n; ++k) {
        StepReport<double> rep;
        s = step_do(m, s, 0.5 / n, path.increment(k), &rep);
        w = std::max(w, rep.gauge_defect);
        CHECK((s.U * s.U.transpose() - Mat::Identity(2, 2)).norm() <= 1e-10);
        CHECK(rep.ortho_defect >= 0.0);
      }
      worst.push_back(w);
    }
    CHECK(worst[0] > 0.0);
    CHECK(std::log2(worst[0] / worst[2]) / 2.0 >= 1.8);
  }

  TEST_CASE("retraction compensation keeps the product") {
    const auto m = builtin<double>("additive_floor", 4);
    const auto init = make_initial_datum(m, 100, 2, 2);
    const auto path = generate_path<double>(3, 1, 0.05, 100, 4);
    DoState<double> s{0, init.U0, init.Y0};
    DoOptions raw;
    raw.compensate_retraction = false;
    const auto a = step_do(m, s, 0.05, path.increment(0));
    const auto b = step_do(m, s, 0.05, path.increment(0), static_cast<StepReport<double>*>(nullptr), raw);
    CHECK((a.U - b.U).norm() == 0.0);
    // Product with the unretracted basis equals the compensated product.
    const Ens X = s.Y * s.U;
    Ens A(100, 4);
    for (Index i = 0; i < 100; ++i) m.drift(0.0, X.row(i), A.row(i));
    const Mat G = cross_moment(s.Y, A);
    const Mat U_raw = s.U + 0.05 * gram(s.Y).inverse.value() * (G - G * s.U.transpose() * s.U);
    CHECK((a.full() - b.Y * U_raw).norm() < 1e-12);
    // Polar factor: U+ is the closest orthonormal-row matrix to U_raw.
    const Eigen::JacobiSVD<Mat> svd(U_raw, Eigen::ComputeThinU | Eigen::ComputeThinV);
    CHECK((a.U - svd.matrixU() * svd.matrixV().transpose()).norm() < 1e-13);
  }

  TEST_CASE("ambient with R = d is the reference step") {
    const auto m = builtin<double>("gbm_clipped", 3);
    const auto init = make_initial_datum(m, 50, 3, 1);
    const auto path = generate_path<double>(2, 5, 0.01, 50, 3);
    FullState<double> a{0, init.X0}, r{0, init.X0};
    for (Index k = 0; k < 5; ++k) {
      a = step_ambient_dlra(m, a, 3, 0.01, path.increment(k));
      r = step_reference(m, r, 0.01, path.increment(k));
    }
    CHECK(a.X == r.X);
  }

  TEST_CASE("ambient keeps rank R without noise") {
    const auto m = builtin<double>("linear_lowrank", 6, {{"sigma", 0.0}});
    const auto init = make_initial_datum(m, 80, 2, 9);
    const auto path = generate_path<double>(2, 200, 5e-3, 80, 2);
    FullState<double> s{0, init.X0};
    for (Index k = 0; k < 200; ++k) {
      s = step_ambient_dlra(m, s, 2, 5e-3, path.increment(k));
      const auto f = second_moment_svd(s.X);
      CHECK(f.rank() == 2);
    }
    CHECK_THROWS_AS(step_ambient_dlra(m, FullState<double>{0, Ens::Zero(80, 6)}, 2, 5e-3, path.increment(0)), Error);
  }

  TEST_CASE("one ambient step matches one do step to second order") {
    const auto m = builtin<double>("additive_floor", 6);
    const auto init = make_initial_datum(m, 300, 2, 5);
    std::vector<double> gaps;
    for (double dt : {0.04, 0.02, 0.01}) {
      const auto path = generate_path<double>(17, 1, dt, 300, 6);
      const auto a = step_ambient_dlra(m, FullState<double>{0, init.X0}, 2, dt, path.increment(0));
      const auto b = step_do(m, DoState<double>{0, init.U0, init.Y0}, dt, path.increment(0));
      gaps.push_back(l2(a.X, b.full()));
    }
    CHECK(gaps[0] / gaps[1] > 3.0);
    CHECK(gaps[1] / gaps[2] > 3.0);
  }

  TEST_CASE("picard without dynamics is a fixed point") {
    const auto m = constant_model(3, Row::Zero(3));
    const auto init = make_initial_datum(m, 20, 2, 1);
    const auto path = generate_path<double>(1, 16, 1e-3, 20, 1);
    const auto res = picard_local_solve(m, init.U0, init.Y0, path, 3);
    REQUIRE(res.delta.size() == 4);
    CHECK(res.delta[1] == 0.0);
    CHECK(res.delta[3] == 0.0);
    CHECK(res.U.back().back() == init.U0);
  }

  TEST_CASE("picard contraction on ou") {
    const auto m = builtin<double>("ou", 4);
    const auto init = make_initial_datum(m, 128, 2, 3);
    const auto b = well_posedness_bounds(init.Y0, 4, m.C_lgb, 1.0);
    const auto path = generate_path<double>(4, 64, b.delta / 64, 128, 4);
    const auto res = picard_local_solve(m, init.U0, init.Y0, path, 7);
    for (int n = 0; n <= 7; ++n) {
      CHECK(res.sup_U_sq[static_cast<std::size_t>(n)] <= 3.0 * 2);
      CHECK(res.sup_Y_sq[static_cast<std::size_t>(n)] <= 3.0 * b.rho * b.rho + 1);
    }
    for (int n = 2; n <= 6; ++n)
      CHECK(res.delta[static_cast<std::size_t>(n + 1)] <= 0.5 * res.delta[static_cast<std::size_t>(n)]);
    CHECK(res.delta[1] > 0.0);
    // The limit agrees with the explicit DO scheme on the same grid.
    DoState<double> s{0, init.U0, init.Y0};
    DoOptions raw;
    raw.compensate_retraction = false;
    for (Index k = 0; k < 64; ++k) {
      s = step_do(m, s, path.dt(), path.increment(k), static_cast<StepReport<double>*>(nullptr), raw);
    }
    CHECK(l2(s.full(), res.Y.back().back() * res.U.back().back()) < 1e-8);
  }

  TEST_CASE("integrate records and is deterministic") {
    const auto m = builtin<double>("additive_floor", 4);
    const auto init = make_initial_datum(m, 300, 2, 5);
    const auto path = generate_path<double>(6, 100, 1e-2, 300, 4);
    IntegrateOptions<double> opts;
    opts.t_end = 0.5;
    opts.dt = 1e-2;
    opts.record_stride = 7;
    const auto a = integrate(m, init, opts, path);
    CHECK(a.times.size() == 1 + 50 / 7 + 1);
    CHECK(a.times.back() == doctest::Approx(0.5));
    CHECK(a.diagnostics.size() == 50);
    set_num_threads(4);
    const auto b = integrate(m, init, opts, path);
    set_num_threads(1);
    REQUIRE(a.X.size() == b.X.size());
    for (std::size_t i = 0; i < a.X.size(); ++i) CHECK(a.X[i] == b.X[i]);
    opts.t_end = 0;
    const auto z = integrate(m, init, opts, path);
    REQUIRE(z.X.size() == 1);
    CHECK(z.X[0] == init.X0);
    CHECK(z.U[0] == init.U0);
    opts.t_end = 2;
    CHECK_THROWS_AS(integrate(m, init, opts, path), Error);
  }

  TEST_CASE("integrate halts on explosion without hooks") {
    const auto m = builtin<double>("mode_crossing", 2);
    const auto init = make_initial_datum(m, 100, 2, 1);
    const auto path = generate_path<double>(1, 1500, 1e-3, 100, 1);
    IntegrateOptions<double> opts;
    opts.t_end = 1.5;
    opts.dt = 1e-3;
    opts.record_stride = 100;
    CHECK_THROWS_AS(integrate(m, init, opts, path), SingularGramError<double>);
  }
}
