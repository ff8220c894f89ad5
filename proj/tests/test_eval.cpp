#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "stepcert/eval.hpp"
#include "stepcert/pep.hpp"

using namespace stepcert;

namespace {

SolverSettings tight() {
  SolverSettings s;
  s.tol_primal = 1e-9;
  s.tol_dual = 1e-9;
  s.tol_gap = 1e-9;
  return s;
}

CertificationFamily quad_family(double mu, double L, double R) {
  CertificationFamily fam;
  fam.function_class = FunctionClass::quadratic;
  fam.mu = mu;
  fam.L = L;
  fam.initial_bound = R;
  return fam;
}

StepSchedule gd_schedule(std::vector<double> theta) {
  StepSchedule sched;
  sched.kind = AlgoKind::gd;
  sched.K = static_cast<long>(theta.size());
  sched.values = Eigen::Map<Vec>(theta.data(), theta.size());
  return sched;
}

const std::vector<double> kEtas = {1e-1, 1e-2, 1e-3};

}  // namespace

TEST_CASE("quantiles follow the linear interpolation estimator") {
  std::vector<double> one_to_ten;
  for (int v = 1; v <= 10; ++v) one_to_ten.push_back(v);
  const std::vector<double> q =
      quantiles(one_to_ten, {0.0, 0.5, 1.0, 0.25});
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] == doctest::Approx(5.5));
  CHECK(q[2] == doctest::Approx(10.0));
  CHECK(q[3] == doctest::Approx(3.25));

  const std::vector<double> constant(7, 3.5);
  for (const double level : {0.0, 0.1, 0.5, 0.9, 1.0}) {
    CHECK(quantiles(constant, {level})[0] == doctest::Approx(3.5));
  }

  // monotone in the level on an unsorted sample
  const std::vector<double> sample = {4.0, -1.0, 2.5, 0.0, 9.0};
  double previous = -std::numeric_limits<double>::infinity();
  for (double level = 0.0; level <= 1.0; level += 0.05) {
    const double value = quantiles(sample, {level})[0];
    CHECK(value >= previous - 1e-15);
    previous = value;
  }

  CHECK_THROWS_AS(quantiles({}, {0.5}), Error);
  CHECK_THROWS_AS(quantiles(sample, {1.5}), Error);
  CHECK_THROWS_AS(quantiles(sample, {-0.1}), Error);
}

TEST_CASE("fraction solved applies the relative tolerance rule") {
  // threshold eta * (1 + |f_star|) = 0.2 splits the two losses
  CHECK(fraction_solved({0.05, 0.5}, {1.0, 1.0}, 0.1) == doctest::Approx(0.5));
  CHECK(fraction_solved({0.0, 0.0, 0.0}, {3.0, -2.0, 0.0}, 1e-6) ==
        doctest::Approx(1.0));
  // zero reference value makes the threshold exactly eta
  CHECK(fraction_solved({0.1}, {0.0}, 0.1) == doctest::Approx(1.0));
  CHECK(fraction_solved({0.1000001}, {0.0}, 0.1) == doctest::Approx(0.0));
  // monotone nondecreasing in eta
  const std::vector<double> losses = {1e-4, 3e-3, 0.02, 0.7};
  const std::vector<double> f_stars(4, 0.0);
  double previous = 0.0;
  for (const double eta : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    const double f = fraction_solved(losses, f_stars, eta);
    CHECK(f >= previous);
    previous = f;
  }
  // non-finite losses never count
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(fraction_solved({inf, 0.0}, {0.0, 0.0}, 1e9) == doctest::Approx(0.5));

  CHECK_THROWS_AS(fraction_solved({}, {}, 0.1), Error);
  CHECK_THROWS_AS(fraction_solved({1.0}, {1.0, 2.0}, 0.1), Error);
  CHECK_THROWS_AS(fraction_solved({1.0}, {1.0}, 0.0), Error);
}

TEST_CASE("timing summaries discard the warmup iterations") {
  std::vector<double> seconds(5, 50.0);  // compilation outliers
  for (int i = 0; i < 5; ++i) seconds.push_back(1.0);
  TimingSummary s = summarize_timings(seconds);
  CHECK(s.count == 5);
  CHECK(s.mean == doctest::Approx(1.0));
  CHECK(s.band == doctest::Approx(0.0));

  const std::vector<double> mixed = {9.0, 9.0, 9.0, 9.0, 9.0, 1.0, 2.0, 3.0};
  s = summarize_timings(mixed);
  CHECK(s.count == 3);
  CHECK(s.mean == doctest::Approx(2.0));
  CHECK(s.band == doctest::Approx(2.0));  // sample variance 1

  CHECK_THROWS_AS(summarize_timings({1.0, 2.0}, 5), Error);

  TrainedSchedule fake;
  for (long it = 0; it < 7; ++it) {
    TrainCurvePoint point;
    point.iteration = it;
    // cumulative clock 1, 3, 6, 10, 15, 21, 28 -> increments 1..7
    point.wall_time = double((it + 1) * (it + 2)) / 2.0;
    fake.curve.push_back(point);
  }
  s = training_iteration_timing(fake);
  CHECK(s.count == 2);
  CHECK(s.mean == doctest::Approx(6.5));
  CHECK(s.band == doctest::Approx(2.0 * std::sqrt(0.5)));
}

TEST_CASE("the exact one-step solver solves every instance at any tolerance") {
  const QuadraticDataset data =
      sample_quadratic_dataset(3, 2.0, 2.0, 1.0, {0, 0, 4, 2}, 31);
  const CertificationFamily fam = quad_family(2.0, 2.0, 1.0);
  const EvalReport report = evaluate_schedule(
      gd_schedule({0.5}), data, fam, {1e-1, 1e-6, 1e-12}, NAN, "exact");

  REQUIRE(report.rows.size() == 6);
  REQUIRE(report.splits.size() == 2);
  CHECK(report.splits[0].split == "test");
  CHECK(report.splits[1].split == "ood");
  // in distribution every eigenvalue is 2, so one step of 1/2 is exact;
  // the wider out-of-distribution spectrum only promises a valid report
  for (const double f : report.splits[0].fraction_solved) {
    CHECK(f == doctest::Approx(1.0));
  }
  for (const SplitSummary& split : report.splits) {
    CHECK(split.diverged == 0);
    CHECK(std::isnan(split.certificate_coverage));
    for (const double f : split.fraction_solved) {
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
    }
    // quantiles monotone in the level
    for (std::size_t q = 1; q < split.loss_quantiles.size(); ++q) {
      CHECK(split.loss_quantiles[q] >= split.loss_quantiles[q - 1] - 1e-18);
    }
  }
  for (const InstanceResult& row : report.rows) {
    if (row.split == "test") CHECK(row.loss <= 1e-12);
    CHECK(row.f_star == doctest::Approx(0.0));
  }
}

TEST_CASE("a blowup schedule is flagged divergent and never solved") {
  const QuadraticDataset data =
      sample_quadratic_dataset(3, 1.0, 10.0, 1.0, {0, 0, 3, 0}, 37);
  const CertificationFamily fam = quad_family(1.0, 10.0, 1.0);
  const EvalReport report =
      evaluate_schedule(gd_schedule({1e200, 1e200}), data, fam, kEtas);

  REQUIRE(report.splits.size() == 1);
  CHECK(report.splits[0].diverged == 3);
  CHECK(std::isnan(report.splits[0].mean_loss));
  for (const double f : report.splits[0].fraction_solved) {
    CHECK(f == doctest::Approx(0.0));
  }
  for (const InstanceResult& row : report.rows) {
    CHECK(row.diverged);
    CHECK(std::isinf(row.loss));
  }
  const std::string csv = eval_report_csv(report);
  CHECK(csv.find(",1,0,0,0\n") != std::string::npos);  // diverged, unsolved
}

TEST_CASE("the worst-case certificate covers every in-class instance") {
  const QuadraticDataset data =
      sample_quadratic_dataset(4, 1.0, 10.0, 1.0, {0, 0, 12, 0}, 41);
  const CertificationFamily fam = quad_family(1.0, 10.0, 1.0);
  const StepSchedule sched = gd_schedule({0.12, 0.15});
  const double certificate = certify_schedule(sched, fam, tight()).value;

  const EvalReport report =
      evaluate_schedule(sched, data, fam, kEtas, certificate, "pep");
  REQUIRE(report.splits.size() == 1);
  CHECK(report.splits[0].certificate_coverage == doctest::Approx(1.0));
  for (const InstanceResult& row : report.rows) {
    CHECK(row.loss <= certificate + 1e-7 * (1.0 + certificate));
  }

  // an absurdly small certificate cannot cover the sample
  const EvalReport tiny =
      evaluate_schedule(sched, data, fam, kEtas, 1e-12, "pep");
  CHECK(tiny.splits[0].certificate_coverage < 1.0);
}

TEST_CASE("reports serialize to stable csv and json") {
  const QuadraticDataset data =
      sample_quadratic_dataset(3, 1.0, 10.0, 1.0, {0, 0, 3, 2}, 43);
  const CertificationFamily fam = quad_family(1.0, 10.0, 1.0);
  const StepSchedule sched = gd_schedule({0.1, 0.1});
  const EvalReport a = evaluate_schedule(sched, data, fam, kEtas, NAN, "l2o");
  const EvalReport b = evaluate_schedule(sched, data, fam, kEtas, NAN, "l2o");

  const std::string csv = eval_report_csv(a);
  CHECK(csv.rfind("instance_id,split,method,K,loss,f_star,diverged,"
                  "solved@0.1,solved@0.01,solved@0.001\n",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  CHECK(csv == eval_report_csv(b));  // parallel evaluation stays deterministic
  CHECK(csv.find(",test,l2o,2,") != std::string::npos);
  CHECK(csv.find(",ood,l2o,2,") != std::string::npos);

  const std::string summary = eval_summary_csv(a);
  CHECK(summary.rfind("split,method,K,count,diverged,mean_loss,q0.1,q0.25,"
                      "q0.5,q0.75,q0.9,certificate,coverage,"
                      "solved@0.1,solved@0.01,solved@0.001\n",
                      0) == 0);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);

  const nlohmann::json j = eval_report_to_json(a);
  CHECK(j["method"] == "l2o");
  CHECK(j["K"] == 2);
  CHECK(j["certificate"].is_null());
  CHECK(j["splits"].size() == 2);
  CHECK(j["splits"][0]["certificate_coverage"].is_null());
  CHECK(j["rows"].size() == 5);
  CHECK(j["rows"][0]["solved"].size() == 3);
}

TEST_CASE("synthetic inpainting datasets are reproducible and evaluable") {
  const TvLpDataset data =
      sample_tv_dataset(4, 4, 2, 0.3, {2, 1, 2, 1}, 47);
  CHECK(data.train.size() == 2);
  CHECK(data.validation.size() == 1);
  CHECK(data.test.size() == 2);
  CHECK(data.ood.size() == 1);
  const double bound = data.train[0].M_max;
  CHECK(bound > 0.0);
  for (const TvLpInstance& inst : data.test) CHECK(inst.M_max == bound);
  CHECK(data.ood[0].M_max == bound);
  CHECK(data.provenance["kind"] == "tv");
  CHECK(data.provenance["drop_frac_ood"] == doctest::Approx(0.45));
  CHECK(data.train[0].rows_img == 4);

  const TvLpDataset replay =
      sample_tv_dataset(4, 4, 2, 0.3, {2, 1, 2, 1}, 47);
  CHECK((replay.train[0].c - data.train[0].c).norm() == 0.0);
  CHECK((replay.train[0].b_eq - data.train[0].b_eq).norm() == 0.0);
  const TvLpDataset other =
      sample_tv_dataset(4, 4, 2, 0.3, {2, 1, 2, 1}, 48);
  CHECK((other.train[0].b_eq - data.train[0].b_eq).norm() > 0.0);

  CertificationFamily fam;
  fam.function_class = FunctionClass::saddle;
  fam.initial_bound = 100.0;
  fam.op_bound = bound;
  StepSchedule sched;
  sched.kind = AlgoKind::pdhg;
  sched.K = 1;
  sched.values = Vec(3);
  sched.values << 0.5 / bound, 1.0, 0.5 / bound;
  const EvalReport report = evaluate_schedule(sched, data, fam, kEtas);
  REQUIRE(report.rows.size() == 3);
  for (const InstanceResult& row : report.rows) {
    CHECK(std::isfinite(row.loss));
    CHECK(row.loss >= -1e-9);
  }

  CHECK_THROWS_AS(evaluate_schedule(gd_schedule({0.1}), data, fam, kEtas),
                  Error);
  CHECK_THROWS_AS(sample_tv_dataset(1, 4, 2, 0.3, {1, 0, 0, 0}, 1), Error);
  CHECK_THROWS_AS(sample_tv_dataset(4, 4, 2, 1.5, {1, 0, 0, 0}, 1), Error);
}

TEST_CASE("malformed evaluation inputs are rejected") {
  const QuadraticDataset data =
      sample_quadratic_dataset(2, 1.0, 4.0, 1.0, {0, 0, 2, 0}, 53);
  const CertificationFamily fam = quad_family(1.0, 4.0, 1.0);
  CHECK_THROWS_AS(evaluate_schedule(gd_schedule({0.1}), data, fam, {}), Error);
  CHECK_THROWS_AS(evaluate_schedule(gd_schedule({0.1}), data, fam, {-0.1}),
                  Error);
  QuadraticDataset empty;
  empty.train = data.test;  // only a train split: nothing to evaluate
  CHECK_THROWS_AS(evaluate_schedule(gd_schedule({0.1}), empty, fam, kEtas),
                  Error);
}

TEST_CASE("the run manifest echoes the full configuration") {
  const nlohmann::json config = {{"family", "quadratic"}, {"K", 3}};
  const nlohmann::json provenance = {{"kind", "quadratic"}, {"seed", 9}};
  SolverSettings settings;
  settings.max_iter = 1234;
  const RunManifest manifest =
      make_manifest("train", config, 9, provenance, settings);
  CHECK(manifest.code_version == stepcert_version());

  const nlohmann::json j = manifest_to_json(manifest);
  CHECK(j["subcommand"] == "train");
  CHECK(j["config"] == config);
  CHECK(j["seed"] == 9);
  CHECK(j["dataset_provenance"] == provenance);
  CHECK(j["solver"]["max_iter"] == 1234);
  CHECK(j["solver"]["tol_gap"] == doctest::Approx(1e-5));
  CHECK(j["created_utc"].get<std::string>().size() == 20);
}
