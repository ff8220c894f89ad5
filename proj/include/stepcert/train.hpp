#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepcert/dro.hpp"

namespace stepcert {

// Hyperparameters for one training run plus the grids the cross-validation
// sweep draws cells from. The scalar lr_max / weight_decay / epsilon fields
// are the active cell; cross_validate overrides them per grid point.
struct TrainConfig {
  long total_iterations = 1000;
  double warmup_fraction = 0.1;
  std::vector<double> lr_grid = {1e-5, 1e-4, 1e-3};
  std::vector<double> weight_decay_grid = {0.0, 1e-5, 1e-4, 1e-3};
  std::vector<double> epsilon_grid = {1e-2, 1e-1, 1.0, 5.0, 10.0};
  long minibatch = 20;  // quadratic ensembles; lasso runs use 10
  double weight_base = 0.9;
  std::uint64_t seed = 0;
  double lr_max = 1e-3;
  double weight_decay = 0.0;
  double epsilon = 0.1;
  long checkpoint_every = 25;
  bool warm_start = false;  // consumed by train_sweep only
  SolverSettings solver;
};

void validate_train_config(const TrainConfig& config);

// AdamW on the square-root parametrization u with theta = u^2 entrywise;
// moments track u, not theta.
struct OptimizerState {
  Vec u;
  Vec m;
  Vec v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

OptimizerState make_optimizer(const Vec& u0);

// One decoupled-weight-decay update with bias correction; increments step.
void adamw_update(OptimizerState& state, const Vec& grad_u, double lr,
                  double weight_decay);

// Linear ramp 0 -> lr_max over ceil(warmup_fraction * T) steps, then cosine
// decay lr_max -> ~0 at T - 1. Raises on iteration outside [0, T).
double lr_at(long iteration, const TrainConfig& config);

enum class TrainMethod { dr_l2o, l2o, opt_pep };

const char* train_method_name(TrainMethod method);

struct TrainCurvePoint {
  long iteration = 0;
  double lr = 0.0;
  double objective = 0.0;        // minibatch training objective (NaN: failed)
  double validation_risk = 0.0;  // NaN except at checkpoint iterations
  double wall_time = 0.0;        // seconds since the run started
};

struct TrainedSchedule {
  StepSchedule schedule;        // best by validation (final when no split)
  StepSchedule final_schedule;  // last iterate
  StepSchedule initial_schedule;
  TrainMethod method = TrainMethod::dr_l2o;
  double epsilon = 0.0;
  double lr_max = 0.0;
  double weight_decay = 0.0;
  double validation_score = 0.0;  // NaN when no validation split
  std::vector<TrainCurvePoint> curve;
  std::vector<std::pair<long, StepSchedule>> checkpoints;
};

// Minibatched robust training: sample a batch, take the robust-risk gradient
// on the exponentially weighted surrogate loss, AdamW-update u, clip
// theta = u^2 to the box. Over half the total iterations failing
// consecutively raises training-aborted.
TrainedSchedule train_dr_l2o(const QuadraticDataset& dataset,
                             const CertificationFamily& family, long K,
                             const TrainConfig& config);
TrainedSchedule train_dr_l2o(const LassoDataset& dataset,
                             const CertificationFamily& family, long K,
                             const TrainConfig& config);
TrainedSchedule train_dr_l2o(const TvLpDataset& dataset,
                             const CertificationFamily& family, long K,
                             const TrainConfig& config);

// Same loop at radius zero: direct unrolled-loss gradients, no conic solves.
TrainedSchedule train_l2o(const QuadraticDataset& dataset,
                          const CertificationFamily& family, long K,
                          const TrainConfig& config);
TrainedSchedule train_l2o(const LassoDataset& dataset,
                          const CertificationFamily& family, long K,
                          const TrainConfig& config);
TrainedSchedule train_l2o(const TvLpDataset& dataset,
                          const CertificationFamily& family, long K,
                          const TrainConfig& config);

// Deterministic full-gradient descent on the weighted worst-case value; the
// kept schedule is the best objective seen.
TrainedSchedule train_opt_pep(const CertificationFamily& family, long K,
                              const TrainConfig& config);

// Full grid product for the method (epsilon x lr x wd for the robust method,
// lr x wd at radius zero, lr alone for the worst-case method), each cell a
// full training run; selection by validation empirical risk, ties broken by
// smaller epsilon then smaller lr. Every cell aborting raises cv-failed.
TrainedSchedule cross_validate(const QuadraticDataset& dataset,
                               const CertificationFamily& family, long K,
                               const TrainConfig& config, TrainMethod method);
TrainedSchedule cross_validate(const LassoDataset& dataset,
                               const CertificationFamily& family, long K,
                               const TrainConfig& config, TrainMethod method);
TrainedSchedule cross_validate(const TvLpDataset& dataset,
                               const CertificationFamily& family, long K,
                               const TrainConfig& config, TrainMethod method);

// One trained schedule per horizon k = 1..K. warm_start seeds horizon k
// with the previous best schedule extended by the default initial step.
std::vector<TrainedSchedule> train_sweep(const QuadraticDataset& dataset,
                                         const CertificationFamily& family,
                                         long K, const TrainConfig& config,
                                         TrainMethod method);
std::vector<TrainedSchedule> train_sweep(const LassoDataset& dataset,
                                         const CertificationFamily& family,
                                         long K, const TrainConfig& config,
                                         TrainMethod method);
std::vector<TrainedSchedule> train_sweep(const TvLpDataset& dataset,
                                         const CertificationFamily& family,
                                         long K, const TrainConfig& config,
                                         TrainMethod method);

// Default constant initial step for the family (the schedule holds its
// square root as u).
double initial_step(const CertificationFamily& family, long coordinate);

// Mean terminal loss of the schedule over a split (the validation metric).
double empirical_risk(const std::vector<QuadraticInstance>& split,
                      const StepSchedule& schedule);
double empirical_risk(const std::vector<LassoInstance>& split,
                      const StepSchedule& schedule);
double empirical_risk(const std::vector<TvLpInstance>& split,
                      const StepSchedule& schedule);

// iteration, lr, training objective, validation risk, wall time per row.
std::string training_curve_csv(const TrainedSchedule& result);

// Schedules, chosen hyperparameters, curve, and checkpoints.
nlohmann::json trained_schedule_to_json(const TrainedSchedule& result);

}  // namespace stepcert
