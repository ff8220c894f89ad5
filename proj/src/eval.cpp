#include "stepcert/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace stepcert {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
const std::vector<double> kQuantileLevels = {0.1, 0.25, 0.5, 0.75, 0.9};

std::string eta_label(double eta) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", eta);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void check_etas(const std::vector<double>& etas) {
  if (etas.empty()) {
    throw Error(ErrorCode::invalid_argument, "no solve tolerances given");
  }
  for (const double eta : etas) {
    if (!(eta > 0.0)) {
      throw Error(ErrorCode::invalid_argument,
                  "solve tolerances must be positive");
    }
  }
}

bool covered(double loss, double certificate) {
  return loss <= certificate + 1e-7 * (1.0 + std::abs(certificate));
}

template <typename InstanceT>
InstanceResult eval_one(const InstanceT& instance, long id,
                        const std::string& split_name,
                        const StepSchedule& schedule,
                        const std::vector<double>& etas, LossKind loss_kind) {
  InstanceResult row;
  row.instance_id = id;
  row.split = split_name;
  row.solved.assign(etas.size(), false);
  const Optimum opt = reference_optimum(instance);
  row.f_star = opt.f_star;
  try {
    Trajectory traj = run_algorithm(instance, schedule);
    eval_loss_into(traj, opt, loss_kind);
    row.loss = traj.losses(schedule.K);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::divergence) throw;
    row.diverged = true;
    row.loss = std::numeric_limits<double>::infinity();
    return row;
  }
  for (std::size_t e = 0; e < etas.size(); ++e) {
    row.solved[e] = std::isfinite(row.loss) &&
                    row.loss <= etas[e] * (1.0 + std::abs(row.f_star));
  }
  return row;
}

template <typename InstanceT>
void eval_split(const std::vector<InstanceT>& instances,
                const std::string& split_name, const StepSchedule& schedule,
                const std::vector<double>& etas, LossKind loss_kind,
                EvalReport& report) {
  if (instances.empty()) return;
  const long n = static_cast<long>(instances.size());
  std::vector<InstanceResult> rows(n);
  std::atomic<long> cursor{0};
  std::exception_ptr first_error;
  std::mutex error_lock;
  const long workers = std::min<long>(
      n, std::max(1L, static_cast<long>(std::thread::hardware_concurrency())));
  auto drain = [&]() {
    for (long i = cursor.fetch_add(1); i < n; i = cursor.fetch_add(1)) {
      try {
        rows[i] = eval_one(instances[i], i, split_name, schedule, etas,
                           loss_kind);
      } catch (...) {
        const std::lock_guard<std::mutex> hold(error_lock);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (long w = 1; w < workers; ++w) pool.emplace_back(drain);
  drain();
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  SplitSummary summary;
  summary.split = split_name;
  summary.count = n;
  std::vector<double> clean;
  clean.reserve(n);
  double sum = 0.0;
  long with_certificate = 0;
  for (const InstanceResult& row : rows) {
    if (row.diverged) {
      ++summary.diverged;
    } else {
      clean.push_back(row.loss);
      sum += row.loss;
    }
    if (!std::isnan(report.certificate) &&
        covered(row.loss, report.certificate)) {
      ++with_certificate;
    }
  }
  summary.mean_loss = clean.empty() ? kNaN : sum / double(clean.size());
  summary.loss_quantiles =
      clean.empty() ? std::vector<double>(kQuantileLevels.size(), kNaN)
                    : quantiles(clean, kQuantileLevels);
  for (std::size_t e = 0; e < etas.size(); ++e) {
    long solved = 0;
    for (const InstanceResult& row : rows) solved += row.solved[e] ? 1 : 0;
    summary.fraction_solved.push_back(double(solved) / double(n));
  }
  summary.certificate_coverage =
      std::isnan(report.certificate) ? kNaN
                                     : double(with_certificate) / double(n);
  report.splits.push_back(std::move(summary));
  report.rows.insert(report.rows.end(), rows.begin(), rows.end());
}

template <typename DatasetT>
EvalReport evaluate_impl(const StepSchedule& schedule, const DatasetT& dataset,
                         const CertificationFamily& family,
                         const std::vector<double>& etas, double certificate,
                         const std::string& method) {
  validate_schedule(schedule);
  check_etas(etas);
  if (family_algo_kind(family.function_class) != schedule.kind) {
    throw Error(ErrorCode::invalid_argument,
                "schedule kind does not fit the family");
  }
  if (dataset.test.empty() && dataset.ood.empty()) {
    throw Error(ErrorCode::invalid_argument, "no test instances to evaluate");
  }
  EvalReport report;
  report.method = method;
  report.K = schedule.K;
  report.etas = etas;
  report.quantile_levels = kQuantileLevels;
  report.certificate = certificate;
  const LossKind loss_kind = schedule.kind == AlgoKind::pdhg
                                 ? LossKind::saddle_gap
                                 : LossKind::function_gap;
  eval_split(dataset.test, "test", schedule, etas, loss_kind, report);
  eval_split(dataset.ood, "ood", schedule, etas, loss_kind, report);
  return report;
}

void append_maybe(std::ostringstream& os, double value) {
  if (std::isnan(value)) return;
  os << value;
}

}  // namespace

std::vector<double> quantiles(std::vector<double> values,
                              const std::vector<double>& levels) {
  if (values.empty()) {
    throw Error(ErrorCode::invalid_argument, "no values to summarize");
  }
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  out.reserve(levels.size());
  const long n = static_cast<long>(values.size());
  for (const double level : levels) {
    if (!(level >= 0.0 && level <= 1.0)) {
      throw Error(ErrorCode::invalid_argument,
                  "quantile level outside [0, 1]");
    }
    const double pos = level * double(n - 1);
    const long lo = static_cast<long>(std::floor(pos));
    const long hi = std::min(lo + 1, n - 1);
    const double frac = pos - double(lo);
    out.push_back((1.0 - frac) * values[lo] + frac * values[hi]);
  }
  return out;
}

double fraction_solved(const std::vector<double>& losses,
                       const std::vector<double>& f_stars, double eta) {
  if (losses.empty() || losses.size() != f_stars.size()) {
    throw Error(ErrorCode::invalid_argument,
                "losses and reference values must pair up nonempty");
  }
  if (!(eta > 0.0)) {
    throw Error(ErrorCode::invalid_argument,
                "solve tolerance must be positive");
  }
  long solved = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (std::isfinite(losses[i]) &&
        losses[i] <= eta * (1.0 + std::abs(f_stars[i]))) {
      ++solved;
    }
  }
  return double(solved) / double(losses.size());
}

TimingSummary summarize_timings(const std::vector<double>& seconds,
                                long discard) {
  const long n = static_cast<long>(seconds.size());
  if (discard < 0) discard = 0;
  if (n <= discard) {
    throw Error(ErrorCode::invalid_argument,
                "not enough timing samples after the warmup discard");
  }
  TimingSummary out;
  out.count = n - discard;
  double sum = 0.0;
  for (long i = discard; i < n; ++i) sum += seconds[i];
  out.mean = sum / double(out.count);
  if (out.count > 1) {
    double ss = 0.0;
    for (long i = discard; i < n; ++i) {
      const double d = seconds[i] - out.mean;
      ss += d * d;
    }
    out.band = 2.0 * std::sqrt(ss / double(out.count - 1));
  }
  return out;
}

TimingSummary training_iteration_timing(const TrainedSchedule& result,
                                        long discard) {
  std::vector<double> per_iteration;
  per_iteration.reserve(result.curve.size());
  double previous = 0.0;
  for (const TrainCurvePoint& point : result.curve) {
    per_iteration.push_back(point.wall_time - previous);
    previous = point.wall_time;
  }
  return summarize_timings(per_iteration, discard);
}

EvalReport evaluate_schedule(const StepSchedule& schedule,
                             const QuadraticDataset& dataset,
                             const CertificationFamily& family,
                             const std::vector<double>& etas,
                             double certificate, const std::string& method) {
  return evaluate_impl(schedule, dataset, family, etas, certificate, method);
}
EvalReport evaluate_schedule(const StepSchedule& schedule,
                             const LassoDataset& dataset,
                             const CertificationFamily& family,
                             const std::vector<double>& etas,
                             double certificate, const std::string& method) {
  return evaluate_impl(schedule, dataset, family, etas, certificate, method);
}
EvalReport evaluate_schedule(const StepSchedule& schedule,
                             const TvLpDataset& dataset,
                             const CertificationFamily& family,
                             const std::vector<double>& etas,
                             double certificate, const std::string& method) {
  return evaluate_impl(schedule, dataset, family, etas, certificate, method);
}

std::string eval_report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "instance_id,split,method,K,loss,f_star,diverged";
  for (const double eta : report.etas) os << ",solved@" << eta_label(eta);
  os << '\n';
  for (const InstanceResult& row : report.rows) {
    os << row.instance_id << ',' << row.split << ',' << report.method << ','
       << report.K << ',' << row.loss << ',' << row.f_star << ','
       << (row.diverged ? 1 : 0);
    for (const bool solved : row.solved) os << ',' << (solved ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

std::string eval_summary_csv(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "split,method,K,count,diverged,mean_loss";
  for (const double level : report.quantile_levels) {
    os << ",q" << eta_label(level);
  }
  os << ",certificate,coverage";
  for (const double eta : report.etas) os << ",solved@" << eta_label(eta);
  os << '\n';
  for (const SplitSummary& split : report.splits) {
    os << split.split << ',' << report.method << ',' << report.K << ','
       << split.count << ',' << split.diverged << ',';
    append_maybe(os, split.mean_loss);
    for (const double q : split.loss_quantiles) {
      os << ',';
      append_maybe(os, q);
    }
    os << ',';
    append_maybe(os, report.certificate);
    os << ',';
    append_maybe(os, split.certificate_coverage);
    for (const double f : split.fraction_solved) os << ',' << f;
    os << '\n';
  }
  return os.str();
}

nlohmann::json eval_report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["K"] = report.K;
  j["etas"] = report.etas;
  j["quantile_levels"] = report.quantile_levels;
  j["certificate"] = std::isnan(report.certificate)
                         ? nlohmann::json(nullptr)
                         : nlohmann::json(report.certificate);
  j["splits"] = nlohmann::json::array();
  for (const SplitSummary& split : report.splits) {
    nlohmann::json s;
    s["split"] = split.split;
    s["count"] = split.count;
    s["diverged"] = split.diverged;
    s["mean_loss"] = std::isnan(split.mean_loss)
                         ? nlohmann::json(nullptr)
                         : nlohmann::json(split.mean_loss);
    s["loss_quantiles"] = split.loss_quantiles;
    s["fraction_solved"] = split.fraction_solved;
    s["certificate_coverage"] =
        std::isnan(split.certificate_coverage)
            ? nlohmann::json(nullptr)
            : nlohmann::json(split.certificate_coverage);
    j["splits"].push_back(std::move(s));
  }
  j["rows"] = nlohmann::json::array();
  for (const InstanceResult& row : report.rows) {
    j["rows"].push_back({{"instance_id", row.instance_id},
                         {"split", row.split},
                         {"loss", std::isfinite(row.loss)
                                      ? nlohmann::json(row.loss)
                                      : nlohmann::json(nullptr)},
                         {"f_star", row.f_star},
                         {"diverged", row.diverged},
                         {"solved", row.solved}});
  }
  if (report.timing) {
    j["timing"] = {{"mean", report.timing->mean},
                   {"band", report.timing->band},
                   {"count", report.timing->count}};
  }
  return j;
}

TvLpDataset sample_tv_dataset(long rows, long cols, long n_rects,
                              double drop_frac, const SplitSizes& sizes,
                              std::uint64_t seed, double drop_frac_ood) {
  if (rows < 2 || cols < 2) {
    throw Error(ErrorCode::invalid_argument,
                "inpainting images need at least two rows and columns");
  }
  if (n_rects < 0 || !(drop_frac > 0.0 && drop_frac < 1.0)) {
    throw Error(ErrorCode::invalid_argument,
                "rectangle count or drop fraction out of range");
  }
  if (drop_frac_ood <= 0.0) drop_frac_ood = std::min(0.9, 1.5 * drop_frac);
  if (!(drop_frac_ood < 1.0)) {
    throw Error(ErrorCode::invalid_argument,
                "out-of-distribution drop fraction out of range");
  }

  TvLpDataset data;
  data.rng_seed = seed;
  auto sample_split = [&](std::vector<TvLpInstance>& split, long count,
                          std::uint64_t stream, double drop) {
    for (long i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, stream, static_cast<std::uint64_t>(i)));
      Mat image = Mat::Constant(rows, cols, rng.uniform01());
      for (long r = 0; r < n_rects; ++r) {
        long r0 = static_cast<long>(rng.uniform_index(rows));
        long r1 = static_cast<long>(rng.uniform_index(rows));
        long c0 = static_cast<long>(rng.uniform_index(cols));
        long c1 = static_cast<long>(rng.uniform_index(cols));
        if (r0 > r1) std::swap(r0, r1);
        if (c0 > c1) std::swap(c0, c1);
        image.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).setConstant(
            rng.uniform01());
      }
      const auto mask = sample_pixel_mask(rows, cols, drop, rng.next_u64());
      split.push_back(build_tv_lp(image, mask));
    }
  };
  sample_split(data.train, sizes.train, 0, drop_frac);
  sample_split(data.validation, sizes.validation, 1, drop_frac);
  sample_split(data.test, sizes.test, 2, drop_frac);
  sample_split(data.ood, sizes.ood, 3, drop_frac_ood);

  double bound = 0.0;
  auto scan = [&bound](const std::vector<TvLpInstance>& split) {
    for (const TvLpInstance& inst : split) {
      bound = std::max(bound, inst.M_max);
    }
  };
  scan(data.train);
  scan(data.validation);
  scan(data.test);
  scan(data.ood);
  auto lift = [bound](std::vector<TvLpInstance>& split) {
    for (TvLpInstance& inst : split) inst.M_max = bound;
  };
  lift(data.train);
  lift(data.validation);
  lift(data.test);
  lift(data.ood);

  data.provenance = {{"kind", "tv"},
                     {"rows", rows},
                     {"cols", cols},
                     {"n_rects", n_rects},
                     {"drop_frac", drop_frac},
                     {"drop_frac_ood", drop_frac_ood},
                     {"sizes",
                      {{"train", sizes.train},
                       {"validation", sizes.validation},
                       {"test", sizes.test},
                       {"ood", sizes.ood}}},
                     {"seed", seed},
                     {"operator_bound", bound}};
  return data;
}

RunManifest make_manifest(const std::string& subcommand,
                          const nlohmann::json& config, std::uint64_t seed,
                          const nlohmann::json& dataset_provenance,
                          const SolverSettings& settings) {
  RunManifest manifest;
  manifest.subcommand = subcommand;
  manifest.config = config;
  manifest.seed = seed;
  manifest.code_version = stepcert_version();
  manifest.dataset_provenance = dataset_provenance;
  manifest.solver = {{"tol_primal", settings.tol_primal},
                     {"tol_dual", settings.tol_dual},
                     {"tol_gap", settings.tol_gap},
                     {"max_iter", settings.max_iter},
                     {"verbose", settings.verbose}};
  manifest.created_utc = utc_timestamp();
  return manifest;
}

nlohmann::json manifest_to_json(const RunManifest& manifest) {
  return {{"subcommand", manifest.subcommand},
          {"config", manifest.config},
          {"seed", manifest.seed},
          {"code_version", manifest.code_version},
          {"dataset_provenance", manifest.dataset_provenance},
          {"solver", manifest.solver},
          {"created_utc", manifest.created_utc}};
}

}  // namespace stepcert
