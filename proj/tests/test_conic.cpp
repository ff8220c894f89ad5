#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <thread>

#include "stepcert/conic.hpp"

using namespace stepcert;

namespace {

SolverSettings tight() {
  SolverSettings s;
  s.tol_primal = s.tol_dual = s.tol_gap = 1e-9;
  return s;
}

// min x s.t. x >= lo
ConicProgram scalar_bound_lp(double c, double lo) {
  ConicProgram p;
  p.num_vars = 1;
  p.objective = Vec::Constant(1, c);
  p.triplets = {{0, 0, -1.0}};
  p.rhs = Vec::Constant(1, -lo);
  p.cones = {{ConeTag::nonneg, 1}};
  p.tags.push_back({"w", 0, 0, -1.0, TagTarget::rhs, 0, 0});
  return p;
}

}  // namespace

TEST_CASE("scalar lp hits the bound with unit dual") {
  auto sol = solve(scalar_bound_lp(1.0, 1.0), tight());
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.x(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.value == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.z(0) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("trace minimization over X >= I gives 2") {
  ConicProgram p;
  p.num_vars = 3;
  p.objective = svec(Mat::Identity(2, 2));
  p.triplets = {{0, 0, -1.0}, {1, 1, -1.0}, {2, 2, -1.0}};
  p.rhs = -svec(Mat::Identity(2, 2));
  p.cones = {{ConeTag::psd, 2}};
  auto sol = solve(p, tight());
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.value == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("second order cone toy gives 5") {
  ConicProgram p;
  p.num_vars = 1;
  p.objective = Vec::Constant(1, 1.0);
  p.triplets = {{0, 0, -1.0}};
  p.rhs = Vec(3);
  p.rhs << 0.0, 3.0, 4.0;
  p.cones = {{ConeTag::soc, 3}};
  auto sol = solve(p, tight());
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.value == doctest::Approx(5.0).epsilon(1e-8));
}

TEST_CASE("envelope gradient on an active scalar bound equals c") {
  auto p = scalar_bound_lp(2.0, 3.0);
  auto sol = solve(p, tight());
  auto grad = optimal_value_gradient(p, sol, "w");
  REQUIRE(grad.count({0, 0}) == 1);
  CHECK(grad[{0, 0}] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("inactive constraint has zero gradient") {
  // min x s.t. x >= 1, x >= -5; second row slack at the optimum.
  ConicProgram p;
  p.num_vars = 1;
  p.objective = Vec::Constant(1, 1.0);
  p.triplets = {{0, 0, -1.0}, {1, 0, -1.0}};
  p.rhs = Vec(2);
  p.rhs << -1.0, 5.0;
  p.cones = {{ConeTag::nonneg, 2}};
  p.tags.push_back({"w", 0, 0, -1.0, TagTarget::rhs, 1, 0});
  auto sol = solve(p, tight());
  auto grad = optimal_value_gradient(p, sol, "w");
  CHECK(std::abs(grad[{0, 0}]) < 1e-8);
}

TEST_CASE("lp gradient is exact for unique nondegenerate solutions") {
  auto report = finite_diff_check(
      [](double w) { return scalar_bound_lp(2.0, w); }, 3.0, 1e-6, tight());
  CHECK(report.rel_err < 1e-6);
  CHECK(std::abs(report.analytic - 2.0) < 1e-8);
}

TEST_CASE("random sdp gradient matches finite differences") {
  Rng rng(42);
  Mat m0(3, 3), m1(3, 3);
  for (long i = 0; i < 3; ++i) {
    for (long j = i; j < 3; ++j) {
      m0(i, j) = m0(j, i) = rng.normal();
      m1(i, j) = m1(j, i) = rng.normal();
    }
  }
  // min t s.t. M0 + w*M1 + t*I >= 0; value = -lambda_min(M0 + w*M1).
  auto builder = [&](double w) {
    ConicProgram p;
    p.num_vars = 1;
    p.objective = Vec::Constant(1, 1.0);
    const Vec id = svec(Mat::Identity(3, 3));
    for (long r = 0; r < id.size(); ++r) {
      if (id(r) != 0.0) p.triplets.push_back({r, 0, -id(r)});
    }
    p.rhs = svec(m0 + w * m1);
    p.cones = {{ConeTag::psd, 3}};
    const Vec dm = svec(m1);
    for (long r = 0; r < dm.size(); ++r) {
      p.tags.push_back({"w", 0, 0, dm(r), TagTarget::rhs, r, 0});
    }
    return p;
  };
  auto report = finite_diff_check(builder, 0.3, 1e-6, tight());
  CHECK(report.rel_err < 1e-3);
}

TEST_CASE("zero step is rejected") {
  CHECK_THROWS_AS(
      finite_diff_check([](double w) { return scalar_bound_lp(1.0, w); }, 1.0, 0.0),
      Error);
}

TEST_CASE("gradient requires optimal status") {
  // min -x s.t. x >= 0: unbounded below.
  ConicProgram p;
  p.num_vars = 1;
  p.objective = Vec::Constant(1, -1.0);
  p.triplets = {{0, 0, -1.0}};
  p.rhs = Vec::Zero(1);
  p.cones = {{ConeTag::nonneg, 1}};
  auto sol = solve(p, tight());
  CHECK(sol.status == SolveStatus::unbounded);
  CHECK_THROWS_AS(optimal_value_gradient(p, sol, "w"), Error);
}

TEST_CASE("identical inputs give identical solution bytes") {
  auto p = scalar_bound_lp(1.5, 2.5);
  auto a = solve(p, tight());
  auto b = solve(p, tight());
  CHECK(std::memcmp(a.x.data(), b.x.data(), sizeof(double) * a.x.size()) == 0);
  CHECK(std::memcmp(a.z.data(), b.z.data(), sizeof(double) * a.z.size()) == 0);
  CHECK(a.value == b.value);
}

TEST_CASE("weak duality residuals within tolerance at optimal") {
  auto sol = solve(scalar_bound_lp(1.0, 1.0), tight());
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.res_primal <= 1e-8);
  CHECK(sol.res_dual <= 1e-8);
}

TEST_CASE("concurrent solves of distinct programs agree with serial runs") {
  auto p1 = scalar_bound_lp(1.0, 1.0);
  auto p2 = scalar_bound_lp(2.0, 4.0);
  ConicSolution s1, s2;
  std::thread t1([&] { s1 = solve(p1, tight()); });
  std::thread t2([&] { s2 = solve(p2, tight()); });
  t1.join();
  t2.join();
  CHECK(s1.value == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(s2.value == doctest::Approx(8.0).epsilon(1e-8));
}

TEST_CASE("json dump carries the standard-form schema") {
  auto p = scalar_bound_lp(1.0, 1.0);
  auto j = program_to_json(p);
  CHECK(j["num_vars"] == 1);
  CHECK(j["objective"].size() == 1);
  CHECK(j["rhs"].size() == 1);
  CHECK(j["cones"][0]["cone"] == "nonneg");
  CHECK(j["triplets"].size() == 1);
}

TEST_CASE("svec and smat round trip with trace inner product") {
  Rng rng(7);
  Mat s(4, 4), t(4, 4);
  for (long i = 0; i < 4; ++i) {
    for (long j = i; j < 4; ++j) {
      s(i, j) = s(j, i) = rng.normal();
      t(i, j) = t(j, i) = rng.normal();
    }
  }
  CHECK((smat(svec(s), 4) - s).norm() < 1e-14);
  CHECK(svec(s).dot(svec(t)) == doctest::Approx((s * t).trace()).epsilon(1e-12));
}
