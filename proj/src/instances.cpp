#include "stepcert/instances.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "stepcert/conic.hpp"

namespace stepcert {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// RNG stream ids per module; instances regenerate identically regardless of
// sampling order.
enum Stream : std::uint64_t {
  stream_quad_matrix = 1,
  stream_quad_x0 = 2,
  stream_lasso_dict = 3,
  stream_lasso_signal = 4,
  stream_lasso_noise = 5,
  stream_lasso_presolve_signal = 6,
  stream_lasso_presolve_noise = 7,
  stream_mask = 8,
};

Vec uniform_ball(Rng& rng, long d, double radius) {
  Vec v(d);
  for (long i = 0; i < d; ++i) v(i) = rng.normal();
  const double norm = v.norm();
  if (norm == 0.0) return Vec::Zero(d);
  const double r = radius * std::pow(rng.uniform01(), 1.0 / double(d));
  return v * (r / norm);
}

Mat sample_mp_matrix(long d, double mu, double L, std::uint64_t seed,
                     long attempt_cap) {
  if (mu == L) return mu * Mat::Identity(d, d);
  const long k = 4 * d;  // aspect ratio 1/4 puts the bulk at [0.25, 2.25]
  const double a = (L - mu) / 2.0;
  const double c = mu - 0.25 * a;
  Rng rng(seed);
  for (long attempt = 0; attempt < attempt_cap; ++attempt) {
    Mat b(k, d);
    for (long i = 0; i < k; ++i) {
      for (long j = 0; j < d; ++j) b(i, j) = rng.normal();
    }
    Mat s = (b.transpose() * b) / double(k);
    s = ((s + s.transpose()) / 2.0).eval();
    Mat q = a * s + c * Mat::Identity(d, d);
    Eigen::SelfAdjointEigenSolver<Mat> eig(q);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (lo >= mu && hi <= L) return q;
  }
  throw Error(ErrorCode::sampler_exhausted,
              "spectrum rejection cap reached; (mu, L) incompatible with the "
              "sampling ensemble");
}

double spectral_norm(const SpMat& m, long iters = 500) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Rng rng(54321);
  Vec v(m.cols());
  for (long i = 0; i < v.size(); ++i) v(i) = rng.normal();
  v.normalize();
  double lambda = 0.0;
  for (long it = 0; it < iters; ++it) {
    Vec w = m.transpose() * (m * v);
    lambda = w.norm();
    if (lambda == 0.0) return 0.0;
    v = w / lambda;
  }
  return std::sqrt(lambda);
}

Vec soft_threshold(const Vec& v, double thresh) {
  Vec out(v.size());
  for (long i = 0; i < v.size(); ++i) {
    if (v(i) > thresh) {
      out(i) = v(i) - thresh;
    } else if (v(i) < -thresh) {
      out(i) = v(i) + thresh;
    } else {
      out(i) = 0.0;
    }
  }
  return out;
}

double lasso_kkt_residual(const Mat& a, const Vec& b, double lambda,
                          const Vec& x) {
  const Vec g = a.transpose() * (a * x - b);
  double res = 0.0;
  for (long i = 0; i < x.size(); ++i) {
    double r;
    if (x(i) > 0.0) {
      r = std::abs(g(i) + lambda);
    } else if (x(i) < 0.0) {
      r = std::abs(g(i) - lambda);
    } else {
      r = std::max(0.0, std::abs(g(i)) - lambda);
    }
    res = std::max(res, r);
  }
  return res;
}

LassoInstance make_lasso_instance(const std::shared_ptr<const Mat>& a,
                                  double lambda_reg, double sigma_x,
                                  double sigma_err, double p_mask,
                                  double smooth_l, double dist_bound,
                                  std::uint64_t seed, std::uint64_t sig_stream,
                                  std::uint64_t noise_stream,
                                  std::uint64_t index) {
  const long m = a->rows();
  const long n = a->cols();
  Rng sig_rng(derive_seed(seed, sig_stream, index));
  Vec x_tilde = Vec::Zero(n);
  for (long i = 0; i < n; ++i) {
    const bool active = sig_rng.uniform01() < p_mask;
    if (active) x_tilde(i) = sigma_x * sig_rng.normal();
  }
  Rng noise_rng(derive_seed(seed, noise_stream, index));
  Vec eps(m);
  for (long i = 0; i < m; ++i) eps(i) = sigma_err * noise_rng.normal();
  LassoInstance inst;
  inst.A = a;
  inst.b = (*a) * x_tilde + eps;
  inst.lambda_reg = lambda_reg;
  inst.x0 = Vec::Zero(n);
  inst.smooth_L = smooth_l;
  inst.dist_bound = dist_bound;
  return inst;
}

}  // namespace

QuadraticDataset sample_quadratic_dataset(long d, double mu, double L, double R,
                                          const SplitSizes& sizes,
                                          std::uint64_t seed, double L_ood,
                                          long attempt_cap) {
  if (d < 1 || mu <= 0.0 || L < mu || R <= 0.0) {
    throw Error(ErrorCode::invalid_argument, "invalid quadratic class parameters");
  }
  if (L_ood == 0.0) L_ood = L + 1.0;
  QuadraticDataset ds;
  ds.rng_seed = seed;
  ds.provenance = {
      {"family", "quadratic"}, {"d", d},       {"mu", mu},
      {"L", L},                {"R", R},       {"L_ood", L_ood},
      {"seed", seed},          {"attempt_cap", attempt_cap},
      {"sizes",
       {{"train", sizes.train},
        {"validation", sizes.validation},
        {"test", sizes.test},
        {"ood", sizes.ood}}},
  };
  std::uint64_t index = 0;
  auto fill = [&](std::vector<QuadraticInstance>& out, long count, double l_hi) {
    for (long i = 0; i < count; ++i, ++index) {
      QuadraticInstance inst;
      inst.Q = sample_mp_matrix(d, mu, l_hi,
                                derive_seed(seed, stream_quad_matrix, index),
                                attempt_cap);
      Rng x_rng(derive_seed(seed, stream_quad_x0, index));
      inst.x0 = uniform_ball(x_rng, d, R);
      inst.class_params = {mu, l_hi, R};
      out.push_back(std::move(inst));
    }
  };
  fill(ds.train, sizes.train, L);
  fill(ds.validation, sizes.validation, L);
  fill(ds.test, sizes.test, L);
  fill(ds.ood, sizes.ood, L_ood);
  return ds;
}

LassoDataset sample_lasso_dataset(long m, long n, double lambda_reg,
                                  double sigma_x, double sigma_err,
                                  double p_mask, const SplitSizes& sizes,
                                  std::uint64_t seed, double sigma_x_ood,
                                  long n_presolve) {
  if (m < 1 || n < 1 || lambda_reg <= 0.0 || sigma_x < 0.0 ||
      sigma_err < 0.0 || p_mask < 0.0 || p_mask > 1.0 || n_presolve < 1) {
    throw Error(ErrorCode::invalid_argument, "invalid lasso sampler parameters");
  }
  if (sigma_x_ood == 0.0) sigma_x_ood = 1.5 * sigma_x;

  Rng dict_rng(derive_seed(seed, stream_lasso_dict, 0));
  Mat a_raw(m, n);
  for (long i = 0; i < m; ++i) {
    for (long j = 0; j < n; ++j) a_raw(i, j) = dict_rng.normal();
  }
  for (long j = 0; j < n; ++j) {
    const double norm = a_raw.col(j).norm();
    if (norm == 0.0) {
      throw Error(ErrorCode::sampler_exhausted, "zero dictionary column drawn");
    }
    a_raw.col(j) /= norm;
  }
  auto a = std::make_shared<const Mat>(std::move(a_raw));

  Eigen::SelfAdjointEigenSolver<Mat> eig(a->transpose() * (*a));
  const double smooth_l = eig.eigenvalues().maxCoeff();

  // Pre-solve set fixes the distance bound before any split is drawn.
  double max_dist = 0.0;
  for (long j = 0; j < n_presolve; ++j) {
    LassoInstance pre = make_lasso_instance(
        a, lambda_reg, sigma_x, sigma_err, p_mask, smooth_l, 0.0, seed,
        stream_lasso_presolve_signal, stream_lasso_presolve_noise, j);
    const Optimum opt = reference_optimum(pre);
    max_dist = std::max(max_dist, (pre.x0 - opt.x_star).norm());
  }
  const double dist_bound = 1.1 * max_dist;

  LassoDataset ds;
  ds.rng_seed = seed;
  ds.provenance = {
      {"family", "lasso"},
      {"m", m},
      {"n", n},
      {"lambda_reg", lambda_reg},
      {"sigma_x", sigma_x},
      {"sigma_err", sigma_err},
      {"p_mask", p_mask},
      {"sigma_x_ood", sigma_x_ood},
      {"n_presolve", n_presolve},
      {"presolve_max_dist", max_dist},
      {"seed", seed},
      {"sizes",
       {{"train", sizes.train},
        {"validation", sizes.validation},
        {"test", sizes.test},
        {"ood", sizes.ood}}},
  };
  std::uint64_t index = 0;
  auto fill = [&](std::vector<LassoInstance>& out, long count, double sx) {
    for (long i = 0; i < count; ++i, ++index) {
      out.push_back(make_lasso_instance(a, lambda_reg, sx, sigma_err, p_mask,
                                        smooth_l, dist_bound, seed,
                                        stream_lasso_signal, stream_lasso_noise,
                                        index));
    }
  };
  fill(ds.train, sizes.train, sigma_x);
  fill(ds.validation, sizes.validation, sigma_x);
  fill(ds.test, sizes.test, sigma_x);
  fill(ds.ood, sizes.ood, sigma_x_ood);
  return ds;
}

std::vector<std::pair<long, long>> sample_pixel_mask(long rows, long cols,
                                                     double drop_frac,
                                                     std::uint64_t seed) {
  if (rows < 1 || cols < 1 || drop_frac < 0.0 || drop_frac >= 1.0) {
    throw Error(ErrorCode::invalid_argument, "invalid mask parameters");
  }
  const long total = rows * cols;
  const long keep = total - long(std::floor(drop_frac * double(total)));
  std::vector<long> positions(total);
  for (long i = 0; i < total; ++i) positions[i] = i;
  Rng rng(derive_seed(seed, stream_mask, 0));
  for (long i = total - 1; i > 0; --i) {
    const long j = long(rng.uniform_index(std::uint64_t(i + 1)));
    std::swap(positions[i], positions[j]);
  }
  positions.resize(keep);
  std::sort(positions.begin(), positions.end());
  std::vector<std::pair<long, long>> mask;
  mask.reserve(keep);
  for (long p : positions) mask.push_back({p / cols, p % cols});
  return mask;
}

TvLpInstance build_tv_lp(const Mat& image,
                         const std::vector<std::pair<long, long>>& mask) {
  const long m = image.rows();
  const long n = image.cols();
  if (mask.empty()) {
    throw Error(ErrorCode::invalid_instance, "empty pixel mask");
  }
  for (long i = 0; i < m; ++i) {
    for (long j = 0; j < n; ++j) {
      if (!(image(i, j) >= 0.0 && image(i, j) <= 1.0)) {
        throw Error(ErrorCode::invalid_instance, "image values must lie in [0,1]");
      }
    }
  }
  const long n_pix = m * n;
  const long n_cells = (m - 1) * (n - 1);
  const long n_slack = 2 * n_cells;
  const long n_vars = n_pix + n_slack;
  auto pix = [&](long i, long j) { return i * n + j; };
  auto cell = [&](long i, long j) { return i * (n - 1) + j; };

  TvLpInstance inst;
  inst.rows_img = m;
  inst.cols_img = n;
  inst.c = Vec::Zero(n_vars);
  inst.c.segment(n_pix, n_slack).setOnes();

  std::vector<Eigen::Triplet<double>> eq_trip;
  inst.b_eq = Vec(long(mask.size()));
  for (std::size_t r = 0; r < mask.size(); ++r) {
    const auto [i, j] = mask[r];
    if (i < 0 || i >= m || j < 0 || j >= n) {
      throw Error(ErrorCode::invalid_instance, "mask pixel out of range");
    }
    eq_trip.push_back({int(r), int(pix(i, j)), 1.0});
    inst.b_eq(long(r)) = image(i, j);
  }
  inst.A_eq = SpMat(long(mask.size()), n_vars);
  inst.A_eq.setFromTriplets(eq_trip.begin(), eq_trip.end());

  // G = [D -I; -D -I] with D stacking horizontal then vertical differences
  // over the (m-1)x(n-1) cell grid.
  std::vector<Eigen::Triplet<double>> g_trip;
  auto add_diff_rows = [&](double sign) {
    const long row0 = sign > 0 ? 0 : n_slack;
    for (long i = 0; i + 1 < m; ++i) {
      for (long j = 0; j + 1 < n; ++j) {
        const long ch = row0 + cell(i, j);
        g_trip.push_back({int(ch), int(pix(i, j + 1)), sign});
        g_trip.push_back({int(ch), int(pix(i, j)), -sign});
        g_trip.push_back({int(ch), int(n_pix + cell(i, j)), -1.0});
        const long cv = row0 + n_cells + cell(i, j);
        g_trip.push_back({int(cv), int(pix(i + 1, j)), sign});
        g_trip.push_back({int(cv), int(pix(i, j)), -sign});
        g_trip.push_back({int(cv), int(n_pix + n_cells + cell(i, j)), -1.0});
      }
    }
  };
  add_diff_rows(1.0);
  add_diff_rows(-1.0);
  inst.G_ineq = SpMat(2 * n_slack, n_vars);
  inst.G_ineq.setFromTriplets(g_trip.begin(), g_trip.end());
  inst.h = Vec::Zero(2 * n_slack);

  inst.lower = Vec::Zero(n_vars);
  inst.upper = Vec::Constant(n_vars, kInf);
  inst.upper.head(n_pix).setOnes();

  std::vector<Eigen::Triplet<double>> m_trip;
  for (int k = 0; k < inst.A_eq.outerSize(); ++k) {
    for (SpMat::InnerIterator it(inst.A_eq, k); it; ++it) {
      m_trip.push_back({int(it.row()), int(it.col()), it.value()});
    }
  }
  const long eq_rows = inst.A_eq.rows();
  for (int k = 0; k < inst.G_ineq.outerSize(); ++k) {
    for (SpMat::InnerIterator it(inst.G_ineq, k); it; ++it) {
      m_trip.push_back({int(eq_rows + it.row()), int(it.col()), -it.value()});
    }
  }
  inst.M_stack = SpMat(eq_rows + inst.G_ineq.rows(), n_vars);
  inst.M_stack.setFromTriplets(m_trip.begin(), m_trip.end());

  inst.x0 = Vec::Constant(n_vars, 0.5);
  inst.u0 = Vec::Ones(inst.M_stack.rows());
  inst.M_max = spectral_norm(inst.M_stack) * (1.0 + 1e-4);
  return inst;
}

Optimum reference_optimum(const QuadraticInstance& instance) {
  Optimum opt;
  opt.x_star = Vec::Zero(instance.Q.rows());
  opt.f_star = 0.0;
  return opt;
}

Optimum reference_optimum(const LassoInstance& instance) {
  const Mat& a = *instance.A;
  const Vec& b = instance.b;
  const double lambda = instance.lambda_reg;
  const double step = 1.0 / instance.smooth_L;
  Vec x = instance.x0;
  Vec x_prev = x;
  double t_acc = 1.0;
  const long max_iter = 1000000;
  for (long it = 0; it < max_iter; ++it) {
    const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t_acc * t_acc)) / 2.0;
    Vec y = x + ((t_acc - 1.0) / t_next) * (x - x_prev);
    x_prev = x;
    x = soft_threshold(y - step * (a.transpose() * (a * y - b)), step * lambda);
    t_acc = t_next;
    if (it % 10 == 0 && lasso_kkt_residual(a, b, lambda, x) <= 1e-9) {
      Optimum opt;
      opt.x_star = x;
      opt.f_star = 0.5 * (a * x - b).squaredNorm() + lambda * x.lpNorm<1>();
      return opt;
    }
  }
  if (lasso_kkt_residual(a, b, lambda, x) <= 1e-9) {
    Optimum opt;
    opt.x_star = x;
    opt.f_star = 0.5 * (a * x - b).squaredNorm() + lambda * x.lpNorm<1>();
    return opt;
  }
  throw Error(ErrorCode::certification_unavailable,
              "lasso reference solve did not reach the target residual");
}

Optimum reference_optimum(const TvLpInstance& instance) {
  const long n = instance.c.size();
  const long eq_rows = instance.A_eq.rows();
  const long ineq_rows = instance.G_ineq.rows();

  ConicProgram prog;
  prog.num_vars = n;
  prog.objective = instance.c;

  long row = 0;
  std::vector<double> rhs;
  for (int k = 0; k < instance.A_eq.outerSize(); ++k) {
    for (SpMat::InnerIterator it(instance.A_eq, k); it; ++it) {
      prog.triplets.push_back({it.row(), it.col(), it.value()});
    }
  }
  for (long r = 0; r < eq_rows; ++r) rhs.push_back(instance.b_eq(r));
  row += eq_rows;

  for (int k = 0; k < instance.G_ineq.outerSize(); ++k) {
    for (SpMat::InnerIterator it(instance.G_ineq, k); it; ++it) {
      prog.triplets.push_back({row + it.row(), it.col(), it.value()});
    }
  }
  for (long r = 0; r < ineq_rows; ++r) rhs.push_back(instance.h(r));
  row += ineq_rows;

  long lower_rows = 0;
  for (long j = 0; j < n; ++j) {
    if (std::isfinite(instance.lower(j))) {
      prog.triplets.push_back({row, j, -1.0});
      rhs.push_back(-instance.lower(j));
      ++row;
      ++lower_rows;
    }
  }
  long upper_rows = 0;
  for (long j = 0; j < n; ++j) {
    if (std::isfinite(instance.upper(j))) {
      prog.triplets.push_back({row, j, 1.0});
      rhs.push_back(instance.upper(j));
      ++row;
      ++upper_rows;
    }
  }
  prog.rhs = Eigen::Map<const Vec>(rhs.data(), long(rhs.size()));
  if (eq_rows > 0) prog.cones.push_back({ConeTag::zero, eq_rows});
  const long nonneg_rows = ineq_rows + lower_rows + upper_rows;
  if (nonneg_rows > 0) prog.cones.push_back({ConeTag::nonneg, nonneg_rows});

  SolverSettings settings;
  settings.tol_primal = settings.tol_dual = settings.tol_gap = 1e-10;
  const ConicSolution sol = solve(prog, settings);
  if (sol.status != SolveStatus::optimal) {
    throw Error(ErrorCode::certification_unavailable,
                std::string("lp reference solve ended with status ") +
                    solve_status_name(sol.status));
  }
  const double dual_value = -prog.rhs.dot(sol.z);
  if (std::abs(sol.value - dual_value) >
      1e-9 * std::max(1.0, std::abs(sol.value))) {
    throw Error(ErrorCode::certification_unavailable,
                "lp reference duality gap above target");
  }
  Optimum opt;
  opt.x_star = sol.x;
  opt.f_star = sol.value;
  // Saddle convention pairs u with (q - Mx); equality duals flip sign.
  opt.u_star = Vec(eq_rows + ineq_rows);
  opt.u_star.head(eq_rows) = -sol.z.head(eq_rows);
  opt.u_star.tail(ineq_rows) = sol.z.segment(eq_rows, ineq_rows);
  return opt;
}

namespace {

struct TokenReader {
  const std::string& data;
  std::size_t pos = 0;
  long line = 1;

  void skip_space_and_comments() {
    while (pos < data.size()) {
      const char c = data[pos];
      if (c == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (c == '\n') {
        ++line;
        ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  }

  long next_int(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos;
    while (pos < data.size() &&
           !std::isspace(static_cast<unsigned char>(data[pos])) &&
           data[pos] != '#') {
      ++pos;
    }
    if (start == pos) {
      throw Error(ErrorCode::parse_error,
                  "missing " + std::string(what) + " at line " +
                      std::to_string(line) + ", byte " + std::to_string(start));
    }
    try {
      return std::stol(data.substr(start, pos - start));
    } catch (const std::exception&) {
      throw Error(ErrorCode::parse_error,
                  "bad " + std::string(what) + " at line " +
                      std::to_string(line) + ", byte " + std::to_string(start));
    }
  }
};

std::vector<Mat> parse_pnm(const std::string& data, int channels, bool binary) {
  TokenReader reader{data};
  reader.pos = 2;  // past the magic
  const long w = reader.next_int("width");
  const long h = reader.next_int("height");
  const long maxval = reader.next_int("maxval");
  if (w < 1 || h < 1) {
    throw Error(ErrorCode::parse_error, "nonpositive image dimensions");
  }
  if (maxval != 255) {
    throw Error(ErrorCode::parse_error, "unsupported maxval (expected 255)");
  }
  const long count = w * h * channels;
  std::vector<double> vals;
  vals.reserve(count);
  if (binary) {
    // Exactly one whitespace byte separates the header from raster data.
    if (reader.pos >= data.size() ||
        !std::isspace(static_cast<unsigned char>(data[reader.pos]))) {
      throw Error(ErrorCode::parse_error, "missing raster separator");
    }
    ++reader.pos;
    if (data.size() - reader.pos < std::size_t(count)) {
      throw Error(ErrorCode::parse_error,
                  "raster truncated at byte " + std::to_string(data.size()));
    }
    for (long i = 0; i < count; ++i) {
      vals.push_back(double(static_cast<unsigned char>(data[reader.pos + i])));
    }
  } else {
    for (long i = 0; i < count; ++i) {
      const long v = reader.next_int("pixel value");
      if (v < 0 || v > maxval) {
        throw Error(ErrorCode::parse_error,
                    "pixel out of range at line " + std::to_string(reader.line));
      }
      vals.push_back(double(v));
    }
  }
  std::vector<Mat> out(channels, Mat(h, w));
  for (long i = 0; i < h; ++i) {
    for (long j = 0; j < w; ++j) {
      for (int ch = 0; ch < channels; ++ch) {
        out[ch](i, j) = vals[(i * w + j) * channels + ch] / 255.0;
      }
    }
  }
  return out;
}

std::vector<Mat> parse_csv(const std::string& data) {
  std::vector<std::vector<double>> rows;
  std::vector<double> current;
  std::string token;
  long line = 1;
  auto flush_token = [&](bool required) {
    std::string trimmed;
    for (char c : token) {
      if (!std::isspace(static_cast<unsigned char>(c))) trimmed += c;
    }
    token.clear();
    if (trimmed.empty()) {
      if (required) {
        throw Error(ErrorCode::parse_error,
                    "empty cell at line " + std::to_string(line));
      }
      return;
    }
    try {
      std::size_t used = 0;
      const double v = std::stod(trimmed, &used);
      if (used != trimmed.size()) throw std::invalid_argument(trimmed);
      current.push_back(v / 255.0);
    } catch (const std::exception&) {
      throw Error(ErrorCode::parse_error,
                  "bad numeric cell '" + trimmed + "' at line " +
                      std::to_string(line));
    }
  };
  auto flush_row = [&] {
    flush_token(false);
    if (!current.empty()) {
      rows.push_back(current);
      current.clear();
    }
  };
  for (char c : data) {
    if (c == ',') {
      flush_token(true);
    } else if (c == ';' || c == '\n') {
      flush_row();
      if (c == '\n') ++line;
    } else {
      token += c;
    }
  }
  flush_row();
  if (rows.empty()) {
    throw Error(ErrorCode::parse_error, "empty csv image");
  }
  const std::size_t cols = rows[0].size();
  Mat out(long(rows.size()), long(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) {
      throw Error(ErrorCode::parse_error,
                  "ragged csv row " + std::to_string(i + 1));
    }
    for (std::size_t j = 0; j < cols; ++j) out(long(i), long(j)) = rows[i][j];
  }
  return {out};
}

}  // namespace

std::vector<Mat> load_image_channels(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw Error(ErrorCode::io_error, "cannot open image file: " + path);
  }
  std::ostringstream buf;
  buf << file.rdbuf();
  const std::string data = buf.str();
  if (data.size() >= 2 && data[0] == 'P') {
    switch (data[1]) {
      case '2': return parse_pnm(data, 1, false);
      case '5': return parse_pnm(data, 1, true);
      case '3': return parse_pnm(data, 3, false);
      case '6': return parse_pnm(data, 3, true);
      default:
        throw Error(ErrorCode::parse_error,
                    std::string("unsupported image magic 'P") + data[1] + "'");
    }
  }
  return parse_csv(data);
}

Mat load_image_matrix(const std::string& path) {
  auto channels = load_image_channels(path);
  if (channels.size() != 1) {
    throw Error(ErrorCode::invalid_argument,
                "multi-channel image; load channels individually");
  }
  return channels[0];
}

double lasso_objective(const LassoInstance& instance, const Vec& x) {
  return 0.5 * ((*instance.A) * x - instance.b).squaredNorm() +
         instance.lambda_reg * x.lpNorm<1>();
}

double tv_lp_objective(const TvLpInstance& instance, const Vec& x) {
  return instance.c.dot(x);
}

}  // namespace stepcert
