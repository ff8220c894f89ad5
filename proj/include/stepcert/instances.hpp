#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "stepcert/common.hpp"

namespace stepcert {

using SpMat = Eigen::SparseMatrix<double>;

struct ClassParams {
  double mu = 0.0;
  double L = 0.0;
  double R = 0.0;
};

// min (1/2) x'Qx; the minimizer is the origin.
struct QuadraticInstance {
  Mat Q;
  Vec x0;
  ClassParams class_params;
};

// min (1/2)||Ax - b||^2 + lambda_reg * ||x||_1 with a dictionary shared
// across the whole dataset.
struct LassoInstance {
  std::shared_ptr<const Mat> A;
  Vec b;
  double lambda_reg = 0.0;
  Vec x0;
  double smooth_L = 0.0;   // largest eigenvalue of A'A
  double dist_bound = 0.0; // radius bound on ||x0 - x_star|| with 10% buffer
};

// Total-variation inpainting LP in standard form:
//   min c'x  s.t.  A_eq x = b_eq,  G_ineq x <= h,  lower <= x <= upper,
// with x = (pixels, slack variables for the l1 difference terms).
struct TvLpInstance {
  Vec c;
  SpMat A_eq;
  Vec b_eq;
  SpMat G_ineq;
  Vec h;
  Vec lower;
  Vec upper;  // +inf entries for the slack block
  SpMat M_stack;  // [A_eq; -G_ineq]
  Vec x0;
  Vec u0;
  double M_max = 0.0;  // spectral-norm bound covering the dataset
  long rows_img = 0;
  long cols_img = 0;
};

struct SplitSizes {
  long train = 0;
  long validation = 0;
  long test = 0;
  long ood = 0;
};

struct QuadraticDataset {
  std::vector<QuadraticInstance> train, validation, test, ood;
  std::uint64_t rng_seed = 0;
  nlohmann::json provenance;
};

struct LassoDataset {
  std::vector<LassoInstance> train, validation, test, ood;
  std::uint64_t rng_seed = 0;
  nlohmann::json provenance;
};

struct TvLpDataset {
  std::vector<TvLpInstance> train, validation, test, ood;
  std::uint64_t rng_seed = 0;
  nlohmann::json provenance;
};

struct Optimum {
  Vec x_star;
  double f_star = 0.0;
  Vec u_star;  // filled for LP instances only
};

// Marchenko-Pastur ensemble with rejection of spectra leaving [mu, L];
// x0 uniform in the radius-R ball. The out-of-distribution split uses
// L_ood (0 selects L + 1).
QuadraticDataset sample_quadratic_dataset(long d, double mu, double L, double R,
                                          const SplitSizes& sizes,
                                          std::uint64_t seed, double L_ood = 0.0,
                                          long attempt_cap = 1000);

// One dictionary with unit-norm columns shared across every split; b = A x~ + e
// with x~ sparse Gaussian. The out-of-distribution split uses sigma_x_ood
// (0 selects 1.5 * sigma_x). dist_bound comes from a separate pre-solve set of
// n_presolve instances with a 10% buffer.
LassoDataset sample_lasso_dataset(long m, long n, double lambda_reg,
                                  double sigma_x, double sigma_err,
                                  double p_mask, const SplitSizes& sizes,
                                  std::uint64_t seed, double sigma_x_ood = 0.0,
                                  long n_presolve = 1000);

// Known-pixel positions: keeps mn - floor(drop_frac * mn) pixels, sampled
// without replacement.
std::vector<std::pair<long, long>> sample_pixel_mask(long rows, long cols,
                                                     double drop_frac,
                                                     std::uint64_t seed);

TvLpInstance build_tv_lp(const Mat& image,
                         const std::vector<std::pair<long, long>>& mask);

Optimum reference_optimum(const QuadraticInstance& instance);
Optimum reference_optimum(const LassoInstance& instance);
Optimum reference_optimum(const TvLpInstance& instance);

// PGM (P2/P5, maxval 255) or numeric CSV grid (',' columns, ';' or newline
// rows); values divided by 255. Color PPM decomposes into three channels.
Mat load_image_matrix(const std::string& path);
std::vector<Mat> load_image_channels(const std::string& path);

double lasso_objective(const LassoInstance& instance, const Vec& x);
double tv_lp_objective(const TvLpInstance& instance, const Vec& x);

}  // namespace stepcert
