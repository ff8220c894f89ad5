#include "stepcert/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace stepcert {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool recoverable_step_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::gradient_unavailable:
    case ErrorCode::solver_failure:
    case ErrorCode::invalid_class:
    case ErrorCode::divergence:
    case ErrorCode::reference_inconsistency:
      return true;
    default:
      return false;
  }
}

void add_to_batch(Minibatch& batch, const QuadraticInstance& instance) {
  batch.quadratic.push_back(instance);
}
void add_to_batch(Minibatch& batch, const LassoInstance& instance) {
  batch.lasso.push_back(instance);
}
void add_to_batch(Minibatch& batch, const TvLpInstance& instance) {
  batch.tv.push_back(instance);
}

struct StepEval {
  Vec grad_theta;
  double objective = kNaN;
  bool ok = false;
};

using StepFn = std::function<StepEval(const StepSchedule&, Rng&)>;
using ValidateFn = std::function<double(const StepSchedule&)>;

StepSchedule make_proto(AlgoKind kind, long K,
                        const CertificationFamily& family) {
  StepSchedule sched;
  sched.kind = kind;
  sched.K = K;
  const long n_params = (kind == AlgoKind::pdhg) ? 3 * K : K;
  sched.values = Vec(n_params);
  double max_init = 0.0;
  for (long p = 0; p < n_params; ++p) {
    sched.values(p) = initial_step(family, p);
    max_init = std::max(max_init, sched.values(p));
  }
  sched.theta_min = 1e-6;
  sched.theta_max = 10.0 * max_init;
  return sched;
}

// theta = clamp(u^2) entrywise; u keeps its sign so the optimizer state stays
// continuous away from the box boundary.
void apply_box(StepSchedule& sched, OptimizerState& opt) {
  for (long p = 0; p < opt.u.size(); ++p) {
    const double theta =
        std::clamp(opt.u(p) * opt.u(p), sched.theta_min, sched.theta_max);
    sched.values(p) = theta;
    opt.u(p) = std::copysign(std::sqrt(theta), opt.u(p));
  }
}

TrainedSchedule run_training(const Vec& u0, const StepSchedule& proto,
                             const TrainConfig& config, TrainMethod method,
                             double epsilon, const StepFn& step,
                             const ValidateFn& validate) {
  validate_train_config(config);
  TrainedSchedule out;
  out.method = method;
  out.epsilon = epsilon;
  out.lr_max = config.lr_max;
  out.weight_decay = config.weight_decay;
  out.validation_score = kNaN;

  StepSchedule sched = proto;
  OptimizerState opt = make_optimizer(u0);
  apply_box(sched, opt);
  out.initial_schedule = sched;

  double best_score = std::numeric_limits<double>::infinity();
  bool have_best = false;
  Rng rng(config.seed);
  const auto start = std::chrono::steady_clock::now();
  long consecutive_failures = 0;
  const long abort_after = config.total_iterations / 2;

  for (long it = 0; it < config.total_iterations; ++it) {
    const double lr = lr_at(it, config);
    const StepSchedule pre_update = sched;
    const StepEval eval = step(sched, rng);

    TrainCurvePoint point;
    point.iteration = it;
    point.lr = lr;
    point.objective = eval.ok ? eval.objective : kNaN;
    point.validation_risk = kNaN;

    if (!eval.ok) {
      if (++consecutive_failures > abort_after) {
        throw Error(ErrorCode::training_aborted,
                    "over half the training iterations failed consecutively");
      }
    } else {
      consecutive_failures = 0;
      if (method == TrainMethod::opt_pep && eval.objective < best_score) {
        best_score = eval.objective;
        out.schedule = pre_update;
        have_best = true;
      }
      const Vec grad_u = 2.0 * opt.u.cwiseProduct(eval.grad_theta);
      adamw_update(opt, grad_u, lr, config.weight_decay);
      apply_box(sched, opt);
    }

    const bool at_checkpoint = (it + 1) % config.checkpoint_every == 0 ||
                               it + 1 == config.total_iterations;
    if (at_checkpoint) {
      out.checkpoints.push_back({it, sched});
      if (validate) {
        const double score = validate(sched);
        point.validation_risk = score;
        if (!have_best || score < best_score) {
          best_score = score;
          out.schedule = sched;
          have_best = true;
        }
      }
    }
    point.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    out.curve.push_back(point);
  }

  out.final_schedule = sched;
  if (!have_best) out.schedule = sched;
  if (validate && have_best) out.validation_score = best_score;
  return out;
}

template <typename InstanceT>
StepFn make_data_step(const std::vector<InstanceT>& split,
                      const CertificationFamily& family,
                      const TrainConfig& config, double epsilon) {
  CertificationFamily surrogate = family;
  surrogate.weighted_loss = true;
  surrogate.weight_base = config.weight_base;
  const long batch_size =
      std::min<long>(config.minibatch, static_cast<long>(split.size()));
  const SolverSettings solver = config.solver;
  return [&split, surrogate, solver, epsilon,
          batch_size](const StepSchedule& sched, Rng& rng) {
    std::vector<long> index(split.size());
    std::iota(index.begin(), index.end(), 0L);
    for (long j = 0; j < batch_size; ++j) {
      const long pick =
          j + static_cast<long>(rng.uniform_index(index.size() - j));
      std::swap(index[j], index[pick]);
    }
    Minibatch batch;
    for (long j = 0; j < batch_size; ++j) {
      add_to_batch(batch, split[index[j]]);
    }
    DroConfig cfg;
    cfg.epsilon = epsilon;
    StepEval eval;
    try {
      eval.grad_theta = dro_risk_gradient(sched, batch, surrogate, cfg, solver,
                                          &eval.objective);
      eval.ok = true;
    } catch (const Error& e) {
      if (!recoverable_step_error(e.code())) throw;
    }
    return eval;
  };
}

template <typename InstanceT>
double empirical_risk_impl(const std::vector<InstanceT>& split,
                           const StepSchedule& schedule) {
  if (split.empty()) {
    throw Error(ErrorCode::invalid_argument, "empty evaluation split");
  }
  const LossKind loss_kind = schedule.kind == AlgoKind::pdhg
                                 ? LossKind::saddle_gap
                                 : LossKind::function_gap;
  double sum = 0.0;
  for (const InstanceT& instance : split) {
    Trajectory traj = run_algorithm(instance, schedule);
    eval_loss_into(traj, reference_optimum(instance), loss_kind);
    sum += traj.losses(schedule.K);
  }
  return sum / static_cast<double>(split.size());
}

template <typename DatasetT>
TrainedSchedule train_data(const DatasetT& dataset,
                           const CertificationFamily& family, long K,
                           const TrainConfig& config, TrainMethod method,
                           const Vec* u_init) {
  if (K < 1) {
    throw Error(ErrorCode::invalid_argument, "horizon must be at least 1");
  }
  if (dataset.train.empty()) {
    throw Error(ErrorCode::invalid_argument, "training split is empty");
  }
  const AlgoKind kind = family_algo_kind(family.function_class);
  const StepSchedule proto = make_proto(kind, K, family);
  const Vec u0 = u_init != nullptr ? *u_init : proto.values.cwiseSqrt().eval();
  const double epsilon = method == TrainMethod::dr_l2o ? config.epsilon : 0.0;
  const StepFn step = make_data_step(dataset.train, family, config, epsilon);
  ValidateFn validate;
  if (!dataset.validation.empty()) {
    validate = [&dataset](const StepSchedule& sched) {
      return empirical_risk_impl(dataset.validation, sched);
    };
  }
  return run_training(u0, proto, config, method, epsilon, step, validate);
}

TrainedSchedule train_pep(const CertificationFamily& family, long K,
                          const TrainConfig& config, const Vec* u_init) {
  if (K < 1) {
    throw Error(ErrorCode::invalid_argument, "horizon must be at least 1");
  }
  const AlgoKind kind = family_algo_kind(family.function_class);
  const StepSchedule proto = make_proto(kind, K, family);
  const Vec u0 = u_init != nullptr ? *u_init : proto.values.cwiseSqrt().eval();
  CertificationFamily surrogate = family;
  surrogate.weighted_loss = true;
  surrogate.weight_base = config.weight_base;
  const SolverSettings solver = config.solver;
  const StepFn step = [surrogate, solver](const StepSchedule& sched, Rng&) {
    StepEval eval;
    try {
      eval.grad_theta =
          worst_case_gradient(sched, surrogate, solver, &eval.objective);
      eval.ok = true;
    } catch (const Error& e) {
      if (!recoverable_step_error(e.code())) throw;
    }
    return eval;
  };
  return run_training(u0, proto, config, TrainMethod::opt_pep, 0.0, step,
                      ValidateFn{});
}

template <typename DatasetT>
TrainedSchedule train_one(const DatasetT& dataset,
                          const CertificationFamily& family, long K,
                          const TrainConfig& config, TrainMethod method,
                          const Vec* u_init) {
  if (method == TrainMethod::opt_pep) {
    return train_pep(family, K, config, u_init);
  }
  return train_data(dataset, family, K, config, method, u_init);
}

std::vector<double> sorted_copy(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return values;
}

template <typename DatasetT>
TrainedSchedule cv_impl(const DatasetT& dataset,
                        const CertificationFamily& family, long K,
                        const TrainConfig& config, TrainMethod method) {
  validate_train_config(config);
  if (dataset.validation.empty()) {
    throw Error(ErrorCode::invalid_argument, "validation split is empty");
  }
  const std::vector<double> eps_cells =
      method == TrainMethod::dr_l2o ? sorted_copy(config.epsilon_grid)
                                    : std::vector<double>{0.0};
  const std::vector<double> lr_cells = sorted_copy(config.lr_grid);
  const std::vector<double> wd_cells =
      method == TrainMethod::opt_pep ? std::vector<double>{0.0}
                                     : sorted_copy(config.weight_decay_grid);

  TrainedSchedule best;
  double best_score = std::numeric_limits<double>::infinity();
  bool found = false;
  // Ascending visit order plus strict improvement realizes the tie-break:
  // smaller epsilon first, then smaller learning rate.
  for (const double eps : eps_cells) {
    for (const double lr : lr_cells) {
      for (const double wd : wd_cells) {
        TrainConfig cell = config;
        cell.epsilon = eps;
        cell.lr_max = lr;
        cell.weight_decay = wd;
        try {
          TrainedSchedule run =
              train_one(dataset, family, K, cell, method, nullptr);
          const double score =
              empirical_risk_impl(dataset.validation, run.schedule);
          run.validation_score = score;
          if (!found || score < best_score) {
            best = std::move(run);
            best_score = score;
            found = true;
          }
        } catch (const Error& e) {
          if (e.code() != ErrorCode::training_aborted) throw;
        }
      }
    }
  }
  if (!found) {
    throw Error(ErrorCode::cv_failed, "every cross-validation cell aborted");
  }
  return best;
}

template <typename DatasetT>
std::vector<TrainedSchedule> sweep_impl(const DatasetT& dataset,
                                        const CertificationFamily& family,
                                        long K, const TrainConfig& config,
                                        TrainMethod method) {
  if (K < 1) {
    throw Error(ErrorCode::invalid_argument, "horizon must be at least 1");
  }
  const AlgoKind kind = family_algo_kind(family.function_class);
  std::vector<TrainedSchedule> out;
  for (long k = 1; k <= K; ++k) {
    Vec warm;
    const Vec* u_init = nullptr;
    if (config.warm_start && k > 1) {
      const long n_params = (kind == AlgoKind::pdhg) ? 3 * k : k;
      const Vec& prev = out.back().schedule.values;
      warm = Vec(n_params);
      warm.head(prev.size()) = prev.cwiseSqrt();
      for (long p = prev.size(); p < n_params; ++p) {
        warm(p) = std::sqrt(initial_step(family, p));
      }
      u_init = &warm;
    }
    out.push_back(train_one(dataset, family, k, config, method, u_init));
  }
  return out;
}

const char* algo_kind_name(AlgoKind kind) {
  switch (kind) {
    case AlgoKind::gd:
      return "gd";
    case AlgoKind::ista:
      return "ista";
    default:
      return "pdhg";
  }
}

nlohmann::json schedule_to_json(const StepSchedule& sched) {
  return {{"kind", algo_kind_name(sched.kind)},
          {"K", sched.K},
          {"values", std::vector<double>(sched.values.data(),
                                         sched.values.data() +
                                             sched.values.size())},
          {"theta_min", sched.theta_min},
          {"theta_max", sched.theta_max}};
}

void append_csv_value(std::ostringstream& os, double value) {
  if (std::isnan(value)) return;  // empty field
  os << value;
}

}  // namespace

void validate_train_config(const TrainConfig& config) {
  if (config.total_iterations < 1) {
    throw Error(ErrorCode::invalid_argument,
                "at least one training iteration required");
  }
  if (!(config.warmup_fraction > 0.0 && config.warmup_fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument,
                "warmup fraction must lie strictly between 0 and 1");
  }
  if (config.lr_grid.empty() || config.weight_decay_grid.empty() ||
      config.epsilon_grid.empty()) {
    throw Error(ErrorCode::invalid_argument, "hyperparameter grids are empty");
  }
  if (config.minibatch < 1) {
    throw Error(ErrorCode::invalid_argument, "minibatch size must be positive");
  }
  if (!(config.weight_base > 0.0 && config.weight_base <= 1.0)) {
    throw Error(ErrorCode::invalid_argument,
                "loss weight base must lie in (0, 1]");
  }
  if (config.lr_max <= 0.0 || config.weight_decay < 0.0 ||
      config.epsilon < 0.0 || config.checkpoint_every < 1) {
    throw Error(ErrorCode::invalid_argument,
                "active training hyperparameters out of range");
  }
}

OptimizerState make_optimizer(const Vec& u0) {
  OptimizerState state;
  state.u = u0;
  state.m = Vec::Zero(u0.size());
  state.v = Vec::Zero(u0.size());
  return state;
}

void adamw_update(OptimizerState& state, const Vec& grad_u, double lr,
                  double weight_decay) {
  if (grad_u.size() != state.u.size()) {
    throw Error(ErrorCode::invalid_argument,
                "gradient shape does not match the optimizer state");
  }
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad_u;
  state.v =
      state.beta2 * state.v + (1.0 - state.beta2) * grad_u.cwiseProduct(grad_u);
  const double bias1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, double(state.step));
  const Vec m_hat = state.m / bias1;
  const Vec v_hat = state.v / bias2;
  state.u -= lr * weight_decay * state.u;
  state.u.array() -=
      lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
}

double lr_at(long iteration, const TrainConfig& config) {
  validate_train_config(config);
  const long total = config.total_iterations;
  if (iteration < 0 || iteration >= total) {
    throw Error(ErrorCode::invalid_argument,
                "iteration outside the training horizon");
  }
  const long warmup = static_cast<long>(
      std::ceil(config.warmup_fraction * static_cast<double>(total)));
  if (iteration <= warmup) {
    return config.lr_max * static_cast<double>(iteration) /
           static_cast<double>(warmup);
  }
  const double progress = static_cast<double>(iteration - warmup) /
                          static_cast<double>(total - warmup);
  return config.lr_max * 0.5 * (1.0 + std::cos(M_PI * progress));
}

const char* train_method_name(TrainMethod method) {
  switch (method) {
    case TrainMethod::dr_l2o:
      return "dr-l2o";
    case TrainMethod::l2o:
      return "l2o";
    default:
      return "opt-pep";
  }
}

double initial_step(const CertificationFamily& family, long coordinate) {
  switch (family.function_class) {
    case FunctionClass::quadratic:
    case FunctionClass::smooth_strongly_convex:
      return 1.5 / (family.mu + family.L);
    case FunctionClass::composite:
      return 1.0 / family.L;
    default:
      // (tau, rho, sigma) triples: unit extrapolation, step 0.5 / |M| so the
      // product tau sigma |M|^2 starts safely below one.
      return coordinate % 3 == 1 ? 1.0 : 0.5 / family.op_bound;
  }
}

TrainedSchedule train_dr_l2o(const QuadraticDataset& dataset,
                             const CertificationFamily& family, long K,
                             const TrainConfig& config) {
  return train_data(dataset, family, K, config, TrainMethod::dr_l2o, nullptr);
}
TrainedSchedule train_dr_l2o(const LassoDataset& dataset,
                             const CertificationFamily& family, long K,
                             const TrainConfig& config) {
  return train_data(dataset, family, K, config, TrainMethod::dr_l2o, nullptr);
}
TrainedSchedule train_dr_l2o(const TvLpDataset& dataset,
                             const CertificationFamily& family, long K,
                             const TrainConfig& config) {
  return train_data(dataset, family, K, config, TrainMethod::dr_l2o, nullptr);
}

TrainedSchedule train_l2o(const QuadraticDataset& dataset,
                          const CertificationFamily& family, long K,
                          const TrainConfig& config) {
  return train_data(dataset, family, K, config, TrainMethod::l2o, nullptr);
}
TrainedSchedule train_l2o(const LassoDataset& dataset,
                          const CertificationFamily& family, long K,
                          const TrainConfig& config) {
  return train_data(dataset, family, K, config, TrainMethod::l2o, nullptr);
}
TrainedSchedule train_l2o(const TvLpDataset& dataset,
                          const CertificationFamily& family, long K,
                          const TrainConfig& config) {
  return train_data(dataset, family, K, config, TrainMethod::l2o, nullptr);
}

TrainedSchedule train_opt_pep(const CertificationFamily& family, long K,
                              const TrainConfig& config) {
  return train_pep(family, K, config, nullptr);
}

TrainedSchedule cross_validate(const QuadraticDataset& dataset,
                               const CertificationFamily& family, long K,
                               const TrainConfig& config, TrainMethod method) {
  return cv_impl(dataset, family, K, config, method);
}
TrainedSchedule cross_validate(const LassoDataset& dataset,
                               const CertificationFamily& family, long K,
                               const TrainConfig& config, TrainMethod method) {
  return cv_impl(dataset, family, K, config, method);
}
TrainedSchedule cross_validate(const TvLpDataset& dataset,
                               const CertificationFamily& family, long K,
                               const TrainConfig& config, TrainMethod method) {
  return cv_impl(dataset, family, K, config, method);
}

std::vector<TrainedSchedule> train_sweep(const QuadraticDataset& dataset,
                                         const CertificationFamily& family,
                                         long K, const TrainConfig& config,
                                         TrainMethod method) {
  return sweep_impl(dataset, family, K, config, method);
}
std::vector<TrainedSchedule> train_sweep(const LassoDataset& dataset,
                                         const CertificationFamily& family,
                                         long K, const TrainConfig& config,
                                         TrainMethod method) {
  return sweep_impl(dataset, family, K, config, method);
}
std::vector<TrainedSchedule> train_sweep(const TvLpDataset& dataset,
                                         const CertificationFamily& family,
                                         long K, const TrainConfig& config,
                                         TrainMethod method) {
  return sweep_impl(dataset, family, K, config, method);
}

double empirical_risk(const std::vector<QuadraticInstance>& split,
                      const StepSchedule& schedule) {
  return empirical_risk_impl(split, schedule);
}
double empirical_risk(const std::vector<LassoInstance>& split,
                      const StepSchedule& schedule) {
  return empirical_risk_impl(split, schedule);
}
double empirical_risk(const std::vector<TvLpInstance>& split,
                      const StepSchedule& schedule) {
  return empirical_risk_impl(split, schedule);
}

std::string training_curve_csv(const TrainedSchedule& result) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "iteration,lr,training_objective,validation_risk,wall_time\n";
  for (const TrainCurvePoint& point : result.curve) {
    os << point.iteration << ',' << point.lr << ',';
    append_csv_value(os, point.objective);
    os << ',';
    append_csv_value(os, point.validation_risk);
    os << ',' << point.wall_time << '\n';
  }
  return os.str();
}

nlohmann::json trained_schedule_to_json(const TrainedSchedule& result) {
  nlohmann::json j;
  j["method"] = train_method_name(result.method);
  j["schedule"] = schedule_to_json(result.schedule);
  j["final_schedule"] = schedule_to_json(result.final_schedule);
  j["initial_schedule"] = schedule_to_json(result.initial_schedule);
  j["epsilon"] = result.epsilon;
  j["lr_max"] = result.lr_max;
  j["weight_decay"] = result.weight_decay;
  if (std::isnan(result.validation_score)) {
    j["validation_score"] = nullptr;
  } else {
    j["validation_score"] = result.validation_score;
  }
  j["curve"] = nlohmann::json::array();
  for (const TrainCurvePoint& point : result.curve) {
    j["curve"].push_back(
        {{"iteration", point.iteration},
         {"lr", point.lr},
         {"objective",
          std::isnan(point.objective) ? nlohmann::json(nullptr)
                                      : nlohmann::json(point.objective)},
         {"validation_risk",
          std::isnan(point.validation_risk)
              ? nlohmann::json(nullptr)
              : nlohmann::json(point.validation_risk)},
         {"wall_time", point.wall_time}});
  }
  j["checkpoints"] = nlohmann::json::array();
  for (const auto& [iteration, sched] : result.checkpoints) {
    j["checkpoints"].push_back(
        {{"iteration", iteration}, {"schedule", schedule_to_json(sched)}});
  }
  return j;
}

}  // namespace stepcert
