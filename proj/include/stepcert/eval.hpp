#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepcert/train.hpp"

namespace stepcert {

// Linear-interpolation sample quantiles on the sorted values: level q reads
// position q * (n - 1), interpolating between the bracketing order statistics.
// Level 0 is the minimum, level 1 the maximum. Raises on empty input or a
// level outside [0, 1].
std::vector<double> quantiles(std::vector<double> values,
                              const std::vector<double>& levels);

// Share of instances with loss <= eta * (1 + |f_star|). Raises on empty or
// mismatched inputs or eta <= 0. Non-finite losses never count as solved.
double fraction_solved(const std::vector<double>& losses,
                       const std::vector<double>& f_stars, double eta);

// Mean and 2-sigma band of per-iteration times with the leading warmup
// entries dropped. Raises unless at least one sample survives the discard.
struct TimingSummary {
  double mean = 0.0;
  double band = 0.0;  // two sample standard deviations
  long count = 0;
};

TimingSummary summarize_timings(const std::vector<double>& seconds,
                                long discard = 5);

// Per-iteration wall times recovered from a training curve's cumulative
// clock, then summarized with the warmup discard.
TimingSummary training_iteration_timing(const TrainedSchedule& result,
                                        long discard = 5);

struct InstanceResult {
  long instance_id = 0;
  std::string split;
  double loss = 0.0;
  double f_star = 0.0;
  bool diverged = false;
  std::vector<bool> solved;  // one entry per eta
};

struct SplitSummary {
  std::string split;
  long count = 0;
  long diverged = 0;
  double mean_loss = 0.0;              // over non-diverged rows; NaN if none
  std::vector<double> loss_quantiles;  // at the report's quantile levels
  std::vector<double> fraction_solved;  // one entry per eta
  double certificate_coverage = 0.0;    // NaN when no certificate given
};

struct EvalReport {
  std::string method;
  long K = 0;
  std::vector<double> etas;
  std::vector<double> quantile_levels;  // {0.1, 0.25, 0.5, 0.75, 0.9}
  double certificate = 0.0;             // NaN when none given
  std::vector<InstanceResult> rows;
  std::vector<SplitSummary> splits;
  std::optional<TimingSummary> timing;
};

// Runs the schedule over the test and out-of-distribution splits in parallel
// across instances. Divergent runs count as unsolved at every eta and are
// flagged; certificate coverage is the share of rows with
// loss <= certificate + 1e-7 * (1 + |certificate|) (solver slack).
EvalReport evaluate_schedule(const StepSchedule& schedule,
                             const QuadraticDataset& dataset,
                             const CertificationFamily& family,
                             const std::vector<double>& etas,
                             double certificate =
                                 std::numeric_limits<double>::quiet_NaN(),
                             const std::string& method = "");
EvalReport evaluate_schedule(const StepSchedule& schedule,
                             const LassoDataset& dataset,
                             const CertificationFamily& family,
                             const std::vector<double>& etas,
                             double certificate =
                                 std::numeric_limits<double>::quiet_NaN(),
                             const std::string& method = "");
EvalReport evaluate_schedule(const StepSchedule& schedule,
                             const TvLpDataset& dataset,
                             const CertificationFamily& family,
                             const std::vector<double>& etas,
                             double certificate =
                                 std::numeric_limits<double>::quiet_NaN(),
                             const std::string& method = "");

// Per-instance rows: instance_id, split, method, K, loss, f_star, diverged,
// then one solved@eta column per tolerance.
std::string eval_report_csv(const EvalReport& report);

// One row per split: counts, mean, quantiles, coverage, and the
// fraction-solved table.
std::string eval_summary_csv(const EvalReport& report);

nlohmann::json eval_report_to_json(const EvalReport& report);

// Synthetic inpainting dataset: piecewise-constant images built from random
// axis-aligned rectangles, a fresh pixel mask per instance, and every
// instance's operator bound lifted to the dataset-wide maximum. The
// out-of-distribution split drops more pixels (0 selects 1.5x, capped at 0.9).
TvLpDataset sample_tv_dataset(long rows, long cols, long n_rects,
                              double drop_frac, const SplitSizes& sizes,
                              std::uint64_t seed, double drop_frac_ood = 0.0);

// Everything needed to byte-reproduce a run: the resolved config, seeds,
// code version, dataset provenance, and solver settings.
struct RunManifest {
  std::string subcommand;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string code_version;
  nlohmann::json dataset_provenance;
  nlohmann::json solver;
  std::string created_utc;
};

RunManifest make_manifest(const std::string& subcommand,
                          const nlohmann::json& config, std::uint64_t seed,
                          const nlohmann::json& dataset_provenance,
                          const SolverSettings& settings);

nlohmann::json manifest_to_json(const RunManifest& manifest);

}  // namespace stepcert
