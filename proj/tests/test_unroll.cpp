#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/QR>

#include "stepcert/unroll.hpp"

using namespace stepcert;

namespace {

QuadraticInstance scalar_quad(double q, double x0) {
  QuadraticInstance inst;
  inst.Q = Mat::Constant(1, 1, q);
  inst.x0 = Vec::Constant(1, x0);
  inst.class_params = {q, q, std::abs(x0)};
  return inst;
}

LassoInstance scalar_lasso(double a, double b, double lambda, double x0) {
  LassoInstance inst;
  inst.A = std::make_shared<const Mat>(Mat::Constant(1, 1, a));
  inst.b = Vec::Constant(1, b);
  inst.lambda_reg = lambda;
  inst.x0 = Vec::Constant(1, x0);
  inst.smooth_L = a * a;
  inst.dist_bound = 10.0;
  return inst;
}

StepSchedule make_schedule(AlgoKind kind, std::initializer_list<double> vals,
                           long K) {
  StepSchedule s;
  s.kind = kind;
  s.K = K;
  s.values = Vec(long(vals.size()));
  long i = 0;
  for (double v : vals) s.values(i++) = v;
  return s;
}

// Least-squares span residual of target against the given columns.
double span_residual(const std::vector<Vec>& cols, const Vec& target) {
  if (target.norm() == 0.0) return 0.0;
  if (cols.empty()) return target.norm();
  Mat basis(target.size(), long(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) basis.col(long(i)) = cols[i];
  const Vec coef = basis.colPivHouseholderQr().solve(target);
  return (basis * coef - target).norm();
}

TvLpInstance tiny_tv() {
  Mat img(3, 3);
  img << 0.2, 0.8, 0.4, 0.6, 0.1, 0.9, 0.3, 0.7, 0.5;
  return build_tv_lp(img, {{0, 0}, {1, 2}, {2, 1}});
}

StepSchedule pdhg_schedule(const TvLpInstance& inst, long K,
                           double rho = 1.0) {
  StepSchedule s;
  s.kind = AlgoKind::pdhg;
  s.K = K;
  s.values = Vec(3 * K);
  const double step = 0.9 / inst.M_max;
  for (long k = 0; k < K; ++k) {
    s.values(3 * k) = step;
    s.values(3 * k + 1) = rho;
    s.values(3 * k + 2) = step;
  }
  return s;
}

}  // namespace

TEST_CASE("one exact gd step lands at the optimum") {
  auto traj = run_algorithm(scalar_quad(1.0, 1.0),
                            make_schedule(AlgoKind::gd, {1.0}, 1));
  CHECK(traj.x[1](0) == doctest::Approx(0.0));
  CHECK(traj.fvals[1] == doctest::Approx(0.0));
}

TEST_CASE("scalar gd recursion matches the closed form") {
  auto traj = run_algorithm(scalar_quad(2.0, 3.0),
                            make_schedule(AlgoKind::gd, {0.25}, 1));
  CHECK(traj.x[1](0) == doctest::Approx(1.5));
  CHECK(traj.fvals[1] == doctest::Approx(2.25));
  Optimum ref;
  ref.x_star = Vec::Zero(1);
  ref.f_star = 0.0;
  const Vec losses = eval_loss(traj, ref, LossKind::function_gap);
  CHECK(losses(0) == doctest::Approx(9.0));
  CHECK(losses(1) == doctest::Approx(2.25));
}

TEST_CASE("ista stays at the zero fixed point") {
  auto traj = run_algorithm(scalar_lasso(1.0, 0.0, 0.4, 0.0),
                            make_schedule(AlgoKind::ista, {1.0, 1.0}, 2));
  for (const auto& x : traj.x) CHECK(x.norm() == 0.0);
  for (double f : traj.fvals) CHECK(f == 0.0);
}

TEST_CASE("scalar lasso loss against the pinned reference") {
  auto inst = scalar_lasso(1.0, 2.0, 0.4, 2.0);
  auto traj = run_algorithm(inst, make_schedule(AlgoKind::ista, {}, 0));
  auto ref = reference_optimum(inst);
  const Vec losses = eval_loss(traj, ref, LossKind::function_gap);
  CHECK(losses(0) == doctest::Approx(0.08).epsilon(1e-8));
}

TEST_CASE("divergence reports the first bad step") {
  auto inst = scalar_quad(2.0, 1.0);
  CHECK_THROWS_WITH_AS(
      run_algorithm(inst, make_schedule(AlgoKind::gd, {1e200, 1e200}, 2)),
      doctest::Contains("step 2"), Error);
}

TEST_CASE("negative loss beyond tolerance raises reference-inconsistency") {
  auto traj = run_algorithm(scalar_quad(2.0, 3.0),
                            make_schedule(AlgoKind::gd, {0.25}, 1));
  Optimum bad;
  bad.x_star = Vec::Zero(1);
  bad.f_star = 100.0;
  CHECK_THROWS_AS(eval_loss(traj, bad, LossKind::function_gap), Error);
}

TEST_CASE("weighted training loss reproduces the pinned sums") {
  Vec three(4);
  three << 5.0, 1.0, 1.0, 1.0;  // leading entry ignored
  CHECK(weighted_training_loss(three, 3) == doctest::Approx(2.71));
  Vec one(1);
  one << 4.2;
  CHECK(weighted_training_loss(one, 1) == doctest::Approx(4.2));
  CHECK(weighted_training_loss(Vec::Zero(4), 3) == 0.0);
}

TEST_CASE("gd jacobian matches the scalar closed form and causality") {
  auto [traj, jac] = run_with_jacobian(scalar_quad(2.0, 3.0),
                                       make_schedule(AlgoKind::gd, {0.25, 0.1}, 2));
  CHECK(jac.dx[0][1](0) == doctest::Approx(-6.0));
  // future parameters do not move earlier iterates
  CHECK(jac.dx[1][1](0) == 0.0);
  CHECK(jac.dx[0][0](0) == 0.0);
  CHECK(traj.x[2](0) == doctest::Approx((1 - 0.1 * 2) * 1.5));
}

TEST_CASE("gd and ista jacobians match finite differences") {
  Rng rng(17);
  auto quad_ds = sample_quadratic_dataset(6, 1.0, 10.0, 5.0, {25, 0, 0, 0}, 3);
  auto lasso_ds = sample_lasso_dataset(5, 9, 0.3, 1.5, 0.05, 0.3,
                                       {25, 0, 0, 0}, 4, 0.0, 5);
  const double h = 1e-6;
  double worst = 0.0;
  for (long trial = 0; trial < 25; ++trial) {
    const long K = 1 + long(rng.uniform_index(3));
    StepSchedule sched;
    sched.K = K;
    sched.values = Vec(K);

    sched.kind = AlgoKind::gd;
    for (long k = 0; k < K; ++k) sched.values(k) = rng.uniform(0.02, 0.18);
    const auto& qinst = quad_ds.train[trial % quad_ds.train.size()];
    auto [qt, qj] = run_with_jacobian(qinst, sched);
    for (long p = 0; p < K; ++p) {
      StepSchedule up = sched, dn = sched;
      up.values(p) += h;
      dn.values(p) -= h;
      auto tu = run_algorithm(qinst, up);
      auto td = run_algorithm(qinst, dn);
      for (long k = 1; k <= K; ++k) {
        const Vec fd = (tu.x[k] - td.x[k]) / (2 * h);
        const double scale = std::max(1.0, fd.norm());
        worst = std::max(worst, (qj.dx[p][k] - fd).norm() / scale);
        const double fdf = (tu.fvals[k] - td.fvals[k]) / (2 * h);
        worst = std::max(worst,
                         std::abs(qj.dfvals[p][k] - fdf) /
                             std::max(1.0, std::abs(fdf)));
      }
    }

    sched.kind = AlgoKind::ista;
    for (long k = 0; k < K; ++k) sched.values(k) = rng.uniform(0.1, 0.9);
    const auto& linst = lasso_ds.train[trial % lasso_ds.train.size()];
    auto [lt, lj] = run_with_jacobian(linst, sched);
    for (long p = 0; p < K; ++p) {
      StepSchedule up = sched, dn = sched;
      up.values(p) += h;
      dn.values(p) -= h;
      auto tu = run_algorithm(linst, up);
      auto td = run_algorithm(linst, dn);
      for (long k = 1; k <= K; ++k) {
        const Vec fd = (tu.x[k] - td.x[k]) / (2 * h);
        worst = std::max(worst,
                         (lj.dx[p][k] - fd).norm() / std::max(1.0, fd.norm()));
      }
      for (long k = 0; k < K; ++k) {
        const Vec fds = (tu.s[k] - td.s[k]) / (2 * h);
        worst = std::max(worst,
                         (lj.ds[p][k] - fds).norm() / std::max(1.0, fds.norm()));
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("ista subgradients are valid and the span condition holds") {
  auto ds = sample_lasso_dataset(6, 10, 0.4, 2.0, 0.05, 0.3, {8, 0, 0, 0}, 21,
                                 0.0, 5);
  Rng rng(3);
  for (const auto& inst : ds.train) {
    const long K = 3;
    StepSchedule sched;
    sched.kind = AlgoKind::ista;
    sched.K = K;
    sched.values = Vec(K);
    for (long k = 0; k < K; ++k) sched.values(k) = rng.uniform(0.1, 0.95);
    auto traj = run_algorithm(inst, sched);
    const double lambda = inst.lambda_reg;
    for (long k = 0; k < K; ++k) {
      const Vec& s = traj.s[k];
      const Vec& x = traj.x[k + 1];
      for (long i = 0; i < s.size(); ++i) {
        CHECK(std::abs(s(i)) <= lambda + 1e-10);
        if (std::abs(x(i)) > 1e-10) {
          CHECK(s(i) == doctest::Approx(lambda * (x(i) > 0 ? 1.0 : -1.0)));
        }
      }
    }
    for (long k = 1; k <= K; ++k) {
      std::vector<Vec> span;
      for (long i = 0; i < k; ++i) span.push_back(traj.g[i]);
      for (long i = 0; i < k; ++i) span.push_back(traj.s[i]);
      const Vec delta = traj.x[k] - traj.x[0];
      CHECK(span_residual(span, delta) <= 1e-8 * std::max(1.0, delta.norm()));
    }
  }
}

TEST_CASE("gd span condition holds") {
  auto ds = sample_quadratic_dataset(8, 1.0, 10.0, 5.0, {5, 0, 0, 0}, 9);
  for (const auto& inst : ds.train) {
    auto traj = run_algorithm(inst, make_schedule(AlgoKind::gd,
                                                  {0.1, 0.05, 0.15}, 3));
    for (long k = 1; k <= 3; ++k) {
      std::vector<Vec> span(traj.g.begin(), traj.g.begin() + k);
      const Vec delta = traj.x[k] - traj.x[0];
      CHECK(span_residual(span, delta) <= 1e-8 * std::max(1.0, delta.norm()));
    }
  }
}

TEST_CASE("pdhg saddle losses are nonnegative and vanish at the saddle") {
  auto inst = tiny_tv();
  auto ref = reference_optimum(inst);
  auto traj = run_algorithm(inst, pdhg_schedule(inst, 3));
  const Vec losses = eval_loss(traj, ref, LossKind::saddle_gap);
  for (long k = 0; k < losses.size(); ++k) CHECK(losses(k) >= 0.0);

  // Start the method exactly at the saddle point: every gap is zero.
  TvLpInstance at_star = inst;
  at_star.x0 = ref.x_star;
  at_star.u0 = ref.u_star;
  auto star_traj = run_algorithm(at_star, pdhg_schedule(inst, 1));
  const Vec star_losses = eval_loss(star_traj, ref, LossKind::saddle_gap);
  CHECK(star_losses(0) <= 1e-7);
}

TEST_CASE("pdhg recovered subgradients reproduce the update span") {
  auto inst = tiny_tv();
  auto traj = run_algorithm(inst, pdhg_schedule(inst, 3, 0.7));
  for (long k = 0; k < 3; ++k) {
    const double tau = pdhg_schedule(inst, 3, 0.7).values(3 * k);
    const double sigma = pdhg_schedule(inst, 3, 0.7).values(3 * k + 2);
    const Vec x_rec = traj.x[k] + tau * traj.Mt_u[k] - tau * traj.sf[k];
    CHECK((x_rec - traj.x[k + 1]).norm() <= 1e-12);
    const Vec u_rec = traj.u[k] - sigma * traj.M_xbar[k] - sigma * traj.sg[k];
    CHECK((u_rec - traj.u[k + 1]).norm() <= 1e-12);
  }
}

TEST_CASE("pdhg jacobian matches finite differences") {
  auto inst = tiny_tv();
  auto base = pdhg_schedule(inst, 2, 0.8);
  auto [traj, jac] = run_with_jacobian(inst, base);
  const double h = 1e-7;
  double worst = 0.0;
  for (long p = 0; p < 6; ++p) {
    StepSchedule up = base, dn = base;
    up.values(p) += h;
    dn.values(p) -= h;
    auto tu = run_algorithm(inst, up);
    auto td = run_algorithm(inst, dn);
    for (long k = 1; k <= 2; ++k) {
      const Vec fdx = (tu.x[k] - td.x[k]) / (2 * h);
      worst = std::max(worst, (jac.dx[p][k] - fdx).norm() /
                                  std::max(1.0, fdx.norm()));
      const Vec fdu = (tu.u[k] - td.u[k]) / (2 * h);
      worst = std::max(worst, (jac.du[p][k] - fdu).norm() /
                                  std::max(1.0, fdu.norm()));
    }
    for (long k = 0; k < 2; ++k) {
      const Vec fdsf = (tu.sf[k] - td.sf[k]) / (2 * h);
      worst = std::max(worst, (jac.dsf[p][k] - fdsf).norm() /
                                  std::max(1.0, fdsf.norm()));
      const Vec fdsg = (tu.sg[k] - td.sg[k]) / (2 * h);
      worst = std::max(worst, (jac.dsg[p][k] - fdsg).norm() /
                                  std::max(1.0, fdsg.norm()));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("schedule validation enforces the bound box") {
  StepSchedule s = make_schedule(AlgoKind::gd, {0.5}, 1);
  s.theta_min = 1e-6;
  s.theta_max = 1.0;
  CHECK_NOTHROW(validate_schedule(s));
  s.values(0) = 2.0;
  CHECK_THROWS_AS(validate_schedule(s), Error);
  s.values(0) = 0.5;
  s.theta_min = 0.0;
  CHECK_THROWS_AS(validate_schedule(s), Error);
}
