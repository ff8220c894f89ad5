#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <Eigen/Eigenvalues>

#include "stepcert/instances.hpp"

using namespace stepcert;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

double power_top(const Mat& sym) {
  Rng rng(99);
  Vec v(sym.rows());
  for (long i = 0; i < v.size(); ++i) v(i) = rng.normal();
  v.normalize();
  double lambda = 0.0;
  for (long it = 0; it < 800; ++it) {
    Vec w = sym * v;
    lambda = w.norm();
    v = w / lambda;
  }
  return lambda;
}

}  // namespace

TEST_CASE("degenerate quadratic class gives the identity") {
  auto ds = sample_quadratic_dataset(1, 1.0, 1.0, 1.0, {1, 0, 0, 0}, 7);
  REQUIRE(ds.train.size() == 1);
  CHECK(ds.train[0].Q(0, 0) == doctest::Approx(1.0));
  CHECK(ds.train[0].x0.norm() <= 1.0);
}

TEST_CASE("quadratic spectra stay inside the class interval") {
  auto ds = sample_quadratic_dataset(300, 1.0, 10.0, 10.0, {2, 0, 0, 1}, 11);
  for (const auto& inst : ds.train) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(inst.Q);
    CHECK(eig.eigenvalues().minCoeff() >= 1.0 - 1e-10);
    CHECK(eig.eigenvalues().maxCoeff() <= 10.0 + 1e-10);
    CHECK(inst.x0.norm() <= 10.0 + 1e-12);
  }
  // Out-of-distribution split widens the smoothness bound to L + 1.
  Eigen::SelfAdjointEigenSolver<Mat> eig(ds.ood[0].Q);
  CHECK(eig.eigenvalues().minCoeff() >= 1.0 - 1e-10);
  CHECK(eig.eigenvalues().maxCoeff() <= 11.0 + 1e-10);
  CHECK(ds.ood[0].class_params.L == doctest::Approx(11.0));
}

TEST_CASE("quadratic regeneration is bit-identical") {
  auto a = sample_quadratic_dataset(20, 1.0, 10.0, 10.0, {3, 2, 1, 1}, 123);
  auto b = sample_quadratic_dataset(20, 1.0, 10.0, 10.0, {3, 2, 1, 1}, 123);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(std::memcmp(a.train[i].Q.data(), b.train[i].Q.data(),
                      sizeof(double) * a.train[i].Q.size()) == 0);
    CHECK(std::memcmp(a.train[i].x0.data(), b.train[i].x0.data(),
                      sizeof(double) * a.train[i].x0.size()) == 0);
  }
  CHECK(std::memcmp(a.ood[0].Q.data(), b.ood[0].Q.data(),
                    sizeof(double) * a.ood[0].Q.size()) == 0);
}

TEST_CASE("rejection cap raises sampler-exhausted") {
  // cap 0 forces exhaustion on the first instance needing a draw
  CHECK_THROWS_WITH_AS(
      sample_quadratic_dataset(4, 1.0, 10.0, 1.0, {1, 0, 0, 0}, 5, 0.0, 0),
      doctest::Contains("rejection"), Error);
}

TEST_CASE("invalid quadratic class parameters are rejected") {
  CHECK_THROWS_AS(sample_quadratic_dataset(0, 1, 10, 1, {1, 0, 0, 0}, 1), Error);
  CHECK_THROWS_AS(sample_quadratic_dataset(4, 0, 10, 1, {1, 0, 0, 0}, 1), Error);
  CHECK_THROWS_AS(sample_quadratic_dataset(4, 2, 1, 1, {1, 0, 0, 0}, 1), Error);
}

TEST_CASE("lasso dictionary has unit columns and a shared pointer") {
  auto ds = sample_lasso_dataset(10, 20, 0.4, 2.0, 0.01, 0.1, {2, 1, 1, 1}, 31,
                                 0.0, 50);
  const Mat& a = *ds.train[0].A;
  for (long j = 0; j < a.cols(); ++j) {
    CHECK(std::abs(a.col(j).norm() - 1.0) <= 1e-10);
  }
  CHECK(ds.train[0].A.get() == ds.ood[0].A.get());
  CHECK(ds.train[0].x0.norm() == 0.0);
  const double power = power_top(a.transpose() * a);
  CHECK(std::abs(ds.train[0].smooth_L - power) <=
        1e-6 * std::max(1.0, std::abs(power)));
}

TEST_CASE("lasso distance bound carries exactly the ten percent buffer") {
  auto ds = sample_lasso_dataset(8, 16, 0.3, 2.0, 0.01, 0.2, {1, 0, 0, 0}, 77,
                                 0.0, 40);
  const double max_dist = ds.provenance["presolve_max_dist"].get<double>();
  CHECK(ds.train[0].dist_bound == doctest::Approx(1.1 * max_dist).epsilon(1e-15));
  CHECK(max_dist > 0.0);
}

TEST_CASE("zero-signal lasso keeps b at noise scale") {
  auto ds = sample_lasso_dataset(12, 6, 0.4, 2.0, 0.01, 0.0, {3, 0, 0, 0}, 5,
                                 0.0, 10);
  for (const auto& inst : ds.train) {
    CHECK(inst.b.lpNorm<Eigen::Infinity>() < 0.1);
  }
}

TEST_CASE("lasso regeneration is bit-identical") {
  auto a = sample_lasso_dataset(6, 12, 0.4, 2.0, 0.01, 0.2, {2, 1, 1, 1}, 99,
                                0.0, 20);
  auto b = sample_lasso_dataset(6, 12, 0.4, 2.0, 0.01, 0.2, {2, 1, 1, 1}, 99,
                                0.0, 20);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(std::memcmp(a.train[i].b.data(), b.train[i].b.data(),
                      sizeof(double) * a.train[i].b.size()) == 0);
  }
  CHECK(a.train[0].dist_bound == b.train[0].dist_bound);
}

TEST_CASE("tv lp variable and mask counts") {
  Mat img = Mat::Constant(3, 3, 0.5);
  std::vector<std::pair<long, long>> mask = {{0, 0}, {1, 1}};
  auto inst = build_tv_lp(img, mask);
  CHECK(inst.c.size() == 17);  // 9 pixels + 2*(2*2) slacks
  CHECK(inst.A_eq.rows() == 2);
  CHECK(inst.G_ineq.rows() == 16);
  CHECK(inst.M_stack.rows() == 18);

  auto mask64 = sample_pixel_mask(64, 64, 0.1, 42);
  CHECK(mask64.size() == 3687);
  auto big = build_tv_lp(Mat::Constant(64, 64, 0.25), mask64);
  CHECK(big.A_eq.rows() == 3687);
}

TEST_CASE("empty mask is an invalid instance") {
  CHECK_THROWS_AS(build_tv_lp(Mat::Constant(3, 3, 0.5), {}), Error);
}

TEST_CASE("tv lp spectral bound covers the stacked matrix") {
  auto mask = sample_pixel_mask(5, 5, 0.2, 3);
  Rng rng(8);
  Mat img(5, 5);
  for (long i = 0; i < 5; ++i) {
    for (long j = 0; j < 5; ++j) img(i, j) = rng.uniform01();
  }
  auto inst = build_tv_lp(img, mask);
  Mat m = Mat(inst.M_stack);
  Eigen::JacobiSVD<Mat> svd(m);
  CHECK(svd.singularValues()(0) <= inst.M_max);
  CHECK(inst.x0.size() == inst.c.size());
  CHECK((inst.x0.array() >= inst.lower.array()).all());
  CHECK(inst.u0.size() == inst.M_stack.rows());
}

TEST_CASE("slack reformulation reproduces the tv sum") {
  Rng rng(21);
  const long m = 4, n = 4;
  Mat img(m, n);
  for (long i = 0; i < m; ++i) {
    for (long j = 0; j < n; ++j) img(i, j) = rng.uniform01();
  }
  auto inst = build_tv_lp(img, {{0, 0}});
  // Feasible point: pixels at the image, slacks at the absolute differences.
  Vec x(inst.c.size());
  for (long i = 0; i < m; ++i) {
    for (long j = 0; j < n; ++j) x(i * n + j) = img(i, j);
  }
  double tv = 0.0;
  const long n_pix = m * n;
  const long n_cells = (m - 1) * (n - 1);
  for (long i = 0; i + 1 < m; ++i) {
    for (long j = 0; j + 1 < n; ++j) {
      const double dh = std::abs(img(i, j + 1) - img(i, j));
      const double dv = std::abs(img(i + 1, j) - img(i, j));
      x(n_pix + i * (n - 1) + j) = dh;
      x(n_pix + n_cells + i * (n - 1) + j) = dv;
      tv += dh + dv;
    }
  }
  CHECK(tv_lp_objective(inst, x) == doctest::Approx(tv).epsilon(1e-12));
  CHECK(((inst.G_ineq * x - inst.h).array() <= 1e-12).all());
}

TEST_CASE("fully known image is reproduced by the lp optimum") {
  Mat img(3, 3);
  img << 0.1, 0.9, 0.3, 0.2, 0.8, 0.4, 0.6, 0.5, 0.7;
  std::vector<std::pair<long, long>> mask;
  for (long i = 0; i < 3; ++i) {
    for (long j = 0; j < 3; ++j) mask.push_back({i, j});
  }
  auto inst = build_tv_lp(img, mask);
  CHECK(inst.A_eq.rows() == 9);
  auto opt = reference_optimum(inst);
  for (long i = 0; i < 3; ++i) {
    for (long j = 0; j < 3; ++j) {
      CHECK(opt.x_star(i * 3 + j) == doctest::Approx(img(i, j)).epsilon(1e-6));
    }
  }
  CHECK(opt.u_star.size() == inst.M_stack.rows());
}

TEST_CASE("reference optima match the pinned closed forms") {
  QuadraticInstance quad;
  quad.Q = Mat::Constant(1, 1, 3.0);
  quad.x0 = Vec::Constant(1, 2.0);
  quad.class_params = {3.0, 3.0, 2.0};
  auto qopt = reference_optimum(quad);
  CHECK(qopt.x_star.norm() == 0.0);
  CHECK(qopt.f_star == 0.0);

  LassoInstance lasso;
  lasso.A = std::make_shared<const Mat>(Mat::Constant(1, 1, 1.0));
  lasso.b = Vec::Constant(1, 2.0);
  lasso.lambda_reg = 0.4;
  lasso.x0 = Vec::Zero(1);
  lasso.smooth_L = 1.0;
  lasso.dist_bound = 2.0;
  auto lopt = reference_optimum(lasso);
  CHECK(lopt.x_star(0) == doctest::Approx(1.6).epsilon(1e-9));
  CHECK(lopt.f_star == doctest::Approx(0.72).epsilon(1e-9));

  // One-variable LP: min x over [0, 1].
  TvLpInstance lp;
  lp.c = Vec::Constant(1, 1.0);
  lp.A_eq = SpMat(0, 1);
  lp.b_eq = Vec(0);
  lp.G_ineq = SpMat(0, 1);
  lp.h = Vec(0);
  lp.lower = Vec::Zero(1);
  lp.upper = Vec::Ones(1);
  lp.M_stack = SpMat(0, 1);
  lp.x0 = Vec::Constant(1, 0.5);
  lp.u0 = Vec(0);
  lp.M_max = 0.0;
  auto popt = reference_optimum(lp);
  CHECK(popt.x_star(0) == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(std::abs(popt.f_star) <= 1e-8);
}

TEST_CASE("pgm and csv loading hit the pinned grids") {
  const std::string dir = "/tmp/stepcert_img_test";
  std::remove((dir + "_a.pgm").c_str());
  write_file(dir + "_a.pgm", "P2\n2 2\n255\n255 255\n255 255\n");
  Mat ones = load_image_matrix(dir + "_a.pgm");
  CHECK(ones.rows() == 2);
  CHECK((ones.array() == 1.0).all());

  std::string p5 = "P5\n2 2\n255\n";
  p5 += std::string(4, '\0');
  write_file(dir + "_b.pgm", p5);
  Mat zeros = load_image_matrix(dir + "_b.pgm");
  CHECK((zeros.array() == 0.0).all());

  write_file(dir + "_c.csv", "0,255;255,0");
  Mat checker = load_image_matrix(dir + "_c.csv");
  REQUIRE(checker.rows() == 2);
  CHECK(checker(0, 0) == 0.0);
  CHECK(checker(0, 1) == 1.0);
  CHECK(checker(1, 0) == 1.0);
  CHECK(checker(1, 1) == 0.0);
}

TEST_CASE("color images split into three channels") {
  std::string p6 = "P6\n1 2\n255\n";
  const unsigned char raw[6] = {255, 0, 0, 0, 255, 0};
  p6.append(reinterpret_cast<const char*>(raw), 6);
  write_file("/tmp/stepcert_img_test_d.ppm", p6);
  auto channels = load_image_channels("/tmp/stepcert_img_test_d.ppm");
  REQUIRE(channels.size() == 3);
  CHECK(channels[0](0, 0) == 1.0);
  CHECK(channels[1](1, 0) == 1.0);
  CHECK(channels[2](0, 0) == 0.0);
  CHECK_THROWS_AS(load_image_matrix("/tmp/stepcert_img_test_d.ppm"), Error);
}

TEST_CASE("malformed images report a position") {
  write_file("/tmp/stepcert_img_bad.pgm", "P2\n2 2\n255\n1 2 3\n");
  CHECK_THROWS_WITH_AS(load_image_matrix("/tmp/stepcert_img_bad.pgm"),
                       doctest::Contains("line"), Error);
  write_file("/tmp/stepcert_img_bad.csv", "1,2;3,oops");
  CHECK_THROWS_WITH_AS(load_image_matrix("/tmp/stepcert_img_bad.csv"),
                       doctest::Contains("line"), Error);
}
