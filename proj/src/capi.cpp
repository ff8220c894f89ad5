#include "stepcert/capi.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <new>
#include <string>
#include <type_traits>
#include <vector>

#include "stepcert/dro.hpp"
#include "stepcert/eval.hpp"
#include "stepcert/instances.hpp"
#include "stepcert/interp.hpp"
#include "stepcert/pep.hpp"
#include "stepcert/train.hpp"
#include "stepcert/unroll.hpp"

namespace stepcert {
namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------- parsing --

FunctionClass parse_function_class(const std::string& name) {
  if (name == "quadratic") return FunctionClass::quadratic;
  if (name == "smooth_strongly_convex" || name == "ssc") {
    return FunctionClass::smooth_strongly_convex;
  }
  if (name == "composite" || name == "lasso") return FunctionClass::composite;
  if (name == "saddle" || name == "tv") return FunctionClass::saddle;
  throw Error(ErrorCode::invalid_argument,
              "unknown function class '" + name + "'");
}

AlgoKind parse_algo_kind(const std::string& name) {
  if (name == "gd") return AlgoKind::gd;
  if (name == "ista") return AlgoKind::ista;
  if (name == "pdhg") return AlgoKind::pdhg;
  throw Error(ErrorCode::invalid_argument,
              "unknown algorithm kind '" + name + "'");
}

TrainMethod parse_method(std::string name) {
  std::replace(name.begin(), name.end(), '_', '-');
  if (name == "dr-l2o") return TrainMethod::dr_l2o;
  if (name == "l2o") return TrainMethod::l2o;
  if (name == "opt-pep") return TrainMethod::opt_pep;
  throw Error(ErrorCode::invalid_argument,
              "unknown training method '" + name + "'");
}

SolverSettings parse_solver(const json& cfg) {
  SolverSettings s;
  const json node = cfg.value("solver", json::object());
  s.tol_primal = node.value("tol_primal", s.tol_primal);
  s.tol_dual = node.value("tol_dual", s.tol_dual);
  s.tol_gap = node.value("tol_gap", s.tol_gap);
  s.max_iter = node.value("max_iter", s.max_iter);
  s.verbose = node.value("verbose", s.verbose);
  return s;
}

CertificationFamily parse_family(const json& node) {
  CertificationFamily fam;
  fam.function_class =
      parse_function_class(node.value("class", std::string("quadratic")));
  fam.mu = node.value("mu", 0.0);
  fam.L = node.value("L", 0.0);
  fam.initial_bound = node.value("initial_bound", 0.0);
  fam.op_bound = node.value("op_bound", 0.0);
  return fam;
}

SplitSizes parse_splits(const json& node) {
  SplitSizes sizes;
  sizes.train = node.value("train", 0L);
  sizes.validation = node.value("validation", 0L);
  sizes.test = node.value("test", 0L);
  sizes.ood = node.value("ood", 0L);
  return sizes;
}

TrainConfig parse_train_config(const json& node, const json& cfg) {
  TrainConfig tc;
  tc.total_iterations = node.value("total_iterations", tc.total_iterations);
  tc.warmup_fraction = node.value("warmup_fraction", tc.warmup_fraction);
  if (node.contains("lr_grid")) {
    tc.lr_grid = node["lr_grid"].get<std::vector<double>>();
  }
  if (node.contains("weight_decay_grid")) {
    tc.weight_decay_grid = node["weight_decay_grid"].get<std::vector<double>>();
  }
  if (node.contains("epsilon_grid")) {
    tc.epsilon_grid = node["epsilon_grid"].get<std::vector<double>>();
  }
  tc.minibatch = node.value("minibatch", tc.minibatch);
  tc.weight_base = node.value("weight_base", tc.weight_base);
  tc.seed = node.value("seed", tc.seed);
  tc.lr_max = node.value("lr_max", tc.lr_max);
  tc.weight_decay = node.value("weight_decay", tc.weight_decay);
  tc.epsilon = node.value("epsilon", tc.epsilon);
  tc.checkpoint_every = node.value("checkpoint_every", tc.checkpoint_every);
  tc.warm_start = node.value("warm_start", tc.warm_start);
  tc.solver = parse_solver(cfg);
  return tc;
}

// Accepts either {"kind","K","values"} or a wrapper {"schedule": {...}} as
// emitted by the training commands; the kind falls back to the family's.
StepSchedule parse_schedule(const json& given, AlgoKind fallback) {
  const json& node =
      (!given.contains("values") && given.contains("schedule"))
          ? given["schedule"]
          : given;
  if (!node.contains("values")) {
    throw Error(ErrorCode::invalid_argument, "schedule has no values");
  }
  StepSchedule sched;
  sched.kind = node.contains("kind")
                   ? parse_algo_kind(node["kind"].get<std::string>())
                   : fallback;
  const std::vector<double> values =
      node["values"].get<std::vector<double>>();
  sched.values = Eigen::Map<const Vec>(values.data(), values.size());
  const long per_step = sched.kind == AlgoKind::pdhg ? 3 : 1;
  if (values.empty() || static_cast<long>(values.size()) % per_step != 0) {
    throw Error(ErrorCode::invalid_argument,
                "schedule length does not fit the algorithm kind");
  }
  sched.K = node.value("K", static_cast<long>(values.size()) / per_step);
  sched.theta_min = node.value("theta_min", sched.theta_min);
  sched.theta_max = node.value("theta_max", sched.theta_max);
  return sched;
}

// ---------------------------------------------------------------- dataset --

struct AnyDataset {
  std::unique_ptr<QuadraticDataset> quad;
  std::unique_ptr<LassoDataset> lasso;
  std::unique_ptr<TvLpDataset> tv;

  const json& provenance() const {
    if (quad) return quad->provenance;
    if (lasso) return lasso->provenance;
    return tv->provenance;
  }
};

AnyDataset load_dataset(const json& cfg) {
  if (!cfg.contains("dataset")) {
    throw Error(ErrorCode::invalid_argument, "config has no dataset section");
  }
  const json& node = cfg["dataset"];
  const std::string kind = node.value("kind", std::string("quadratic"));
  const SplitSizes sizes = parse_splits(node.value("splits", json::object()));
  const std::uint64_t seed = node.value("seed", 0ULL);
  AnyDataset out;
  if (kind == "quadratic") {
    out.quad = std::make_unique<QuadraticDataset>(sample_quadratic_dataset(
        node.value("d", 10L), node.value("mu", 1.0), node.value("L", 10.0),
        node.value("R", 1.0), sizes, seed, node.value("L_ood", 0.0)));
  } else if (kind == "lasso") {
    out.lasso = std::make_unique<LassoDataset>(sample_lasso_dataset(
        node.value("m", 20L), node.value("n", 40L),
        node.value("lambda", 0.1), node.value("sigma_x", 1.0),
        node.value("sigma_err", 0.1), node.value("p_mask", 0.1), sizes, seed,
        node.value("sigma_x_ood", 0.0), node.value("n_presolve", 1000L)));
  } else if (kind == "tv") {
    out.tv = std::make_unique<TvLpDataset>(sample_tv_dataset(
        node.value("rows", 8L), node.value("cols", 8L),
        node.value("n_rects", 3L), node.value("drop_frac", 0.3), sizes, seed,
        node.value("drop_frac_ood", 0.0)));
  } else {
    throw Error(ErrorCode::invalid_argument,
                "unknown dataset kind '" + kind + "'");
  }
  return out;
}

template <typename Fn>
json with_dataset(const AnyDataset& ds, Fn&& fn) {
  if (ds.quad) return fn(*ds.quad);
  if (ds.lasso) return fn(*ds.lasso);
  return fn(*ds.tv);
}

template <typename InstanceT>
double max_start_distance(const std::vector<InstanceT>& split) {
  double bound = 0.0;
  for (const InstanceT& inst : split) {
    const Optimum opt = reference_optimum(inst);
    double d2 = (inst.x0 - opt.x_star).squaredNorm();
    if constexpr (std::is_same_v<InstanceT, TvLpInstance>) {
      d2 += (inst.u0 - opt.u_star).squaredNorm();
    }
    bound = std::max(bound, std::sqrt(d2));
  }
  return bound;
}

CertificationFamily derive_family(const AnyDataset& ds) {
  CertificationFamily fam;
  if (ds.quad) {
    const auto& split =
        !ds.quad->train.empty() ? ds.quad->train : ds.quad->test;
    if (split.empty()) {
      throw Error(ErrorCode::invalid_argument,
                  "cannot derive a family from an empty dataset");
    }
    fam.function_class = FunctionClass::quadratic;
    fam.mu = split.front().class_params.mu;
    fam.L = split.front().class_params.L;
    fam.initial_bound = split.front().class_params.R;
    return fam;
  }
  if (ds.lasso) {
    fam.function_class = FunctionClass::composite;
    fam.mu = 0.0;
    for (const auto* split :
         {&ds.lasso->train, &ds.lasso->validation, &ds.lasso->test,
          &ds.lasso->ood}) {
      for (const LassoInstance& inst : *split) {
        fam.L = std::max(fam.L, inst.smooth_L);
        fam.initial_bound = std::max(fam.initial_bound, inst.dist_bound);
      }
    }
    if (fam.L <= 0.0) {
      throw Error(ErrorCode::invalid_argument,
                  "cannot derive a family from an empty dataset");
    }
    return fam;
  }
  fam.function_class = FunctionClass::saddle;
  for (const auto* split :
       {&ds.tv->train, &ds.tv->validation, &ds.tv->test, &ds.tv->ood}) {
    for (const TvLpInstance& inst : *split) {
      fam.op_bound = std::max(fam.op_bound, inst.M_max);
    }
    fam.initial_bound =
        std::max(fam.initial_bound, max_start_distance(*split));
  }
  if (fam.op_bound <= 0.0) {
    throw Error(ErrorCode::invalid_argument,
                "cannot derive a family from an empty dataset");
  }
  return fam;
}

CertificationFamily resolve_family(const json& cfg, const AnyDataset* ds) {
  if (cfg.contains("family")) return parse_family(cfg["family"]);
  if (ds == nullptr) {
    throw Error(ErrorCode::invalid_argument,
                "config needs a family section (no dataset to derive from)");
  }
  return derive_family(*ds);
}

json family_to_json(const CertificationFamily& fam) {
  const char* name = "quadratic";
  switch (fam.function_class) {
    case FunctionClass::quadratic:
      name = "quadratic";
      break;
    case FunctionClass::smooth_strongly_convex:
      name = "smooth_strongly_convex";
      break;
    case FunctionClass::composite:
      name = "composite";
      break;
    case FunctionClass::saddle:
      name = "saddle";
      break;
  }
  return {{"class", name},
          {"mu", fam.mu},
          {"L", fam.L},
          {"initial_bound", fam.initial_bound},
          {"op_bound", fam.op_bound}};
}

json sizes_to_json(const AnyDataset& ds) {
  return with_dataset(ds, [](const auto& data) -> json {
    return {{"train", data.train.size()},
            {"validation", data.validation.size()},
            {"test", data.test.size()},
            {"ood", data.ood.size()}};
  });
}

json vec_to_json(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (long r = 0; r < m.rows(); ++r) {
    rows.push_back(vec_to_json(m.row(r).transpose()));
  }
  return rows;
}

json spmat_to_json(const SpMat& m) {
  json triplets = json::array();
  for (long outer = 0; outer < m.outerSize(); ++outer) {
    for (SpMat::InnerIterator it(m, outer); it; ++it) {
      triplets.push_back({it.row(), it.col(), it.value()});
    }
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"triplets", triplets}};
}

json materialize_dataset(const AnyDataset& ds) {
  json out;
  auto add_split = [&out](const char* name, const auto& split,
                          const auto& tojson) {
    json arr = json::array();
    for (const auto& inst : split) arr.push_back(tojson(inst));
    out[name] = std::move(arr);
  };
  if (ds.quad) {
    auto tojson = [](const QuadraticInstance& inst) -> json {
      return {{"Q", mat_to_json(inst.Q)},
              {"x0", vec_to_json(inst.x0)},
              {"mu", inst.class_params.mu},
              {"L", inst.class_params.L},
              {"R", inst.class_params.R}};
    };
    add_split("train", ds.quad->train, tojson);
    add_split("validation", ds.quad->validation, tojson);
    add_split("test", ds.quad->test, tojson);
    add_split("ood", ds.quad->ood, tojson);
  } else if (ds.lasso) {
    bool first = true;
    auto tojson = [&first, &out](const LassoInstance& inst) -> json {
      if (first) {  // one dictionary shared by every split
        out["A"] = mat_to_json(*inst.A);
        first = false;
      }
      return {{"b", vec_to_json(inst.b)},
              {"x0", vec_to_json(inst.x0)},
              {"lambda", inst.lambda_reg},
              {"smooth_L", inst.smooth_L},
              {"dist_bound", inst.dist_bound}};
    };
    add_split("train", ds.lasso->train, tojson);
    add_split("validation", ds.lasso->validation, tojson);
    add_split("test", ds.lasso->test, tojson);
    add_split("ood", ds.lasso->ood, tojson);
  } else {
    auto tojson = [](const TvLpInstance& inst) -> json {
      return {{"c", vec_to_json(inst.c)},
              {"A_eq", spmat_to_json(inst.A_eq)},
              {"b_eq", vec_to_json(inst.b_eq)},
              {"G_ineq", spmat_to_json(inst.G_ineq)},
              {"h", vec_to_json(inst.h)},
              {"lower", vec_to_json(inst.lower)},
              {"upper", vec_to_json(inst.upper)},
              {"x0", vec_to_json(inst.x0)},
              {"u0", vec_to_json(inst.u0)},
              {"M_max", inst.M_max},
              {"rows_img", inst.rows_img},
              {"cols_img", inst.cols_img}};
    };
    add_split("train", ds.tv->train, tojson);
    add_split("validation", ds.tv->validation, tojson);
    add_split("test", ds.tv->test, tojson);
    add_split("ood", ds.tv->ood, tojson);
  }
  out["provenance"] = ds.provenance();
  return out;
}

void fill_batch(Minibatch& batch, const std::vector<QuadraticInstance>& split,
                long limit) {
  for (long i = 0; i < limit; ++i) batch.quadratic.push_back(split[i]);
}
void fill_batch(Minibatch& batch, const std::vector<LassoInstance>& split,
                long limit) {
  for (long i = 0; i < limit; ++i) batch.lasso.push_back(split[i]);
}
void fill_batch(Minibatch& batch, const std::vector<TvLpInstance>& split,
                long limit) {
  for (long i = 0; i < limit; ++i) batch.tv.push_back(split[i]);
}

Minibatch batch_from(const AnyDataset& ds, const std::string& split_name,
                     long limit) {
  Minibatch batch;
  with_dataset(ds, [&](const auto& data) -> json {
    const auto* split = &data.train;
    if (split_name == "validation") {
      split = &data.validation;
    } else if (split_name == "test") {
      split = &data.test;
    } else if (split_name == "ood") {
      split = &data.ood;
    } else if (split_name != "train") {
      throw Error(ErrorCode::invalid_argument,
                  "unknown split '" + split_name + "'");
    }
    const long n = static_cast<long>(split->size());
    const long take = limit > 0 ? std::min(limit, n) : n;
    if (take == 0) {
      throw Error(ErrorCode::invalid_argument,
                  "split '" + split_name + "' is empty");
    }
    fill_batch(batch, *split, take);
    return json();
  });
  return batch;
}

// --------------------------------------------------------------- commands --

json wrap_response(const std::string& command, const json& cfg,
                   std::uint64_t seed, const json& provenance,
                   const SolverSettings& solver, json result, json outputs) {
  return {{"command", command},
          {"manifest", manifest_to_json(
                           make_manifest(command, cfg, seed, provenance,
                                         solver))},
          {"result", std::move(result)},
          {"outputs", std::move(outputs)}};
}

json cmd_generate(const json& cfg) {
  const AnyDataset ds = load_dataset(cfg);
  const CertificationFamily fam = derive_family(ds);
  json outputs = json::object();
  if (cfg.value("materialize", false)) {
    outputs["dataset.json"] = materialize_dataset(ds).dump(2);
  }
  json result = {{"sizes", sizes_to_json(ds)},
                 {"provenance", ds.provenance()},
                 {"derived_family", family_to_json(fam)}};
  return wrap_response("generate", cfg,
                       cfg["dataset"].value("seed", 0ULL), ds.provenance(),
                       parse_solver(cfg), std::move(result), std::move(outputs));
}

json train_result_payload(const TrainedSchedule& result) {
  json payload = trained_schedule_to_json(result);
  if (result.curve.size() > 5) {
    const TimingSummary timing = training_iteration_timing(result);
    payload["timing"] = {{"mean", timing.mean},
                         {"band", timing.band},
                         {"count", timing.count}};
  }
  return payload;
}

json cmd_train(const json& cfg) {
  const json train_node = cfg.value("train", json::object());
  const TrainConfig tc = parse_train_config(train_node, cfg);
  const TrainMethod method = parse_method(
      train_node.value("method", cfg.value("method", std::string("dr-l2o"))));
  const long K = train_node.value("K", cfg.value("K", 0L));
  if (K < 1) {
    throw Error(ErrorCode::invalid_argument, "config gives no horizon K");
  }
  const bool per_horizon = train_node.value("per_horizon", false);

  AnyDataset ds;
  json provenance;
  const bool needs_data =
      method != TrainMethod::opt_pep || cfg.contains("dataset");
  if (needs_data) {
    ds = load_dataset(cfg);
    provenance = ds.provenance();
  }
  const CertificationFamily fam =
      resolve_family(cfg, needs_data ? &ds : nullptr);

  json result;
  json outputs = json::object();
  if (per_horizon) {
    std::vector<TrainedSchedule> runs;
    if (!needs_data) {
      runs = train_sweep(QuadraticDataset{}, fam, K, tc, method);
    } else if (ds.quad) {
      runs = train_sweep(*ds.quad, fam, K, tc, method);
    } else if (ds.lasso) {
      runs = train_sweep(*ds.lasso, fam, K, tc, method);
    } else {
      runs = train_sweep(*ds.tv, fam, K, tc, method);
    }
    json arr = json::array();
    for (const TrainedSchedule& run : runs) {
      arr.push_back(train_result_payload(run));
      outputs["curve_k" + std::to_string(run.schedule.K) + ".csv"] =
          training_curve_csv(run);
    }
    result = {{"schedules", std::move(arr)}};
  } else {
    TrainedSchedule run;
    if (method == TrainMethod::opt_pep) {
      run = train_opt_pep(fam, K, tc);
    } else if (ds.quad) {
      run = method == TrainMethod::dr_l2o ? train_dr_l2o(*ds.quad, fam, K, tc)
                                          : train_l2o(*ds.quad, fam, K, tc);
    } else if (ds.lasso) {
      run = method == TrainMethod::dr_l2o
                ? train_dr_l2o(*ds.lasso, fam, K, tc)
                : train_l2o(*ds.lasso, fam, K, tc);
    } else {
      run = method == TrainMethod::dr_l2o ? train_dr_l2o(*ds.tv, fam, K, tc)
                                          : train_l2o(*ds.tv, fam, K, tc);
    }
    result = train_result_payload(run);
    outputs["curve.csv"] = training_curve_csv(run);
    outputs["trained_schedule.json"] = result.dump(2);
  }
  result["family"] = family_to_json(fam);
  return wrap_response("train", cfg, tc.seed, provenance, tc.solver,
                       std::move(result), std::move(outputs));
}

json cmd_sweep(const json& cfg) {
  const json train_node = cfg.value("train", json::object());
  const TrainConfig tc = parse_train_config(train_node, cfg);
  const TrainMethod method = parse_method(
      train_node.value("method", cfg.value("method", std::string("dr-l2o"))));
  const long K = train_node.value("K", cfg.value("K", 0L));
  if (K < 1) {
    throw Error(ErrorCode::invalid_argument, "config gives no horizon K");
  }
  const AnyDataset ds = load_dataset(cfg);
  const CertificationFamily fam = resolve_family(cfg, &ds);
  const TrainedSchedule best =
      ds.quad   ? cross_validate(*ds.quad, fam, K, tc, method)
      : ds.lasso ? cross_validate(*ds.lasso, fam, K, tc, method)
                 : cross_validate(*ds.tv, fam, K, tc, method);
  json result = train_result_payload(best);
  result["selected"] = {{"epsilon", best.epsilon},
                        {"lr_max", best.lr_max},
                        {"weight_decay", best.weight_decay}};
  result["family"] = family_to_json(fam);
  json outputs = {{"curve.csv", training_curve_csv(best)},
                  {"trained_schedule.json", result.dump(2)}};
  return wrap_response("sweep", cfg, tc.seed, ds.provenance(), tc.solver,
                       std::move(result), std::move(outputs));
}

json cmd_certify(const json& cfg) {
  const AnyDataset ds = load_dataset(cfg);
  const CertificationFamily fam = resolve_family(cfg, &ds);
  const StepSchedule sched = parse_schedule(
      cfg.value("schedule", json::object()),
      family_algo_kind(fam.function_class));
  const Minibatch batch =
      batch_from(ds, cfg.value("split", std::string("train")),
                 cfg.value("limit", 0L));
  DroConfig dro_cfg;
  dro_cfg.epsilon = cfg.value("epsilon", 0.0);
  dro_cfg.with_pep = cfg.value("with_pep", true);
  const SolverSettings solver = parse_solver(cfg);
  const DroCertificate cert = dro_risk(sched, batch, fam, dro_cfg, solver);
  json result = dro_certificate_to_json(cert, dro_cfg, solver);
  result["family"] = family_to_json(fam);
  json outputs = {{"certificate.json", result.dump(2)}};
  return wrap_response("certify", cfg, cfg["dataset"].value("seed", 0ULL),
                       ds.provenance(), solver, std::move(result),
                       std::move(outputs));
}

json cmd_evaluate(const json& cfg) {
  const AnyDataset ds = load_dataset(cfg);
  const CertificationFamily fam = resolve_family(cfg, &ds);
  const StepSchedule sched = parse_schedule(
      cfg.value("schedule", json::object()),
      family_algo_kind(fam.function_class));
  std::vector<double> etas = {1e-1, 1e-2, 1e-3};
  if (cfg.contains("etas")) etas = cfg["etas"].get<std::vector<double>>();
  const SolverSettings solver = parse_solver(cfg);

  double certificate = kNaN;
  if (cfg.contains("certificate")) {
    const json& c = cfg["certificate"];
    if (c.is_number()) {
      certificate = c.get<double>();
    } else if (c.is_string() && c.get<std::string>() == "pep") {
      certificate = certify_schedule(sched, fam, solver).value;
    } else {
      throw Error(ErrorCode::invalid_argument,
                  "certificate must be a number or \"pep\"");
    }
  }
  const std::string method = cfg.value("method", std::string(""));
  EvalReport report;
  if (ds.quad) {
    report = evaluate_schedule(sched, *ds.quad, fam, etas, certificate,
                               method);
  } else if (ds.lasso) {
    report = evaluate_schedule(sched, *ds.lasso, fam, etas, certificate,
                               method);
  } else {
    report = evaluate_schedule(sched, *ds.tv, fam, etas, certificate, method);
  }
  json result = eval_report_to_json(report);
  result["family"] = family_to_json(fam);
  json outputs = {{"report.csv", eval_report_csv(report)},
                  {"summary.csv", eval_summary_csv(report)}};
  return wrap_response("evaluate", cfg, cfg["dataset"].value("seed", 0ULL),
                       ds.provenance(), solver, std::move(result),
                       std::move(outputs));
}

// ------------------------------------------------------------------ check --

void expect(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error(what);
}

void run_check(json& checks, bool& all_pass, const std::string& name,
               const std::function<void()>& body) {
  try {
    body();
    checks.push_back({{"name", name}, {"pass", true}});
  } catch (const std::exception& e) {
    all_pass = false;
    checks.push_back({{"name", name}, {"pass", false}, {"detail", e.what()}});
  }
}

template <typename InstanceT>
void check_interpolation(const std::vector<InstanceT>& split,
                         const StepSchedule& sched,
                         const CertificationFamily& fam, LossKind loss_kind,
                         long limit) {
  const BasisLayout layout = make_basis_layout(sched.kind, sched.K);
  const ClassSystem system =
      build_class_system(layout, sched, family_class_config(fam, false));
  const long n = std::min<long>(limit, static_cast<long>(split.size()));
  for (long i = 0; i < n; ++i) {
    Trajectory traj = run_algorithm(split[i], sched);
    eval_loss_into(traj, reference_optimum(split[i]), loss_kind);
    const LiftedSample sample = lift(traj);
    const Vec values = lmi_values(system.lmis, sample.G, sample.F);
    if (values.size() > 0) {
      expect(values.maxCoeff() <= 1e-7,
             "interpolation inequality violated by " +
                 std::to_string(values.maxCoeff()));
    }
    for (const PsdBlock& block : system.blocks.blocks) {
      const Mat H = psd_block_value(block, sample.G, sample.F);
      const Eigen::SelfAdjointEigenSolver<Mat> eig(H);
      expect(eig.eigenvalues().minCoeff() >= -1e-7,
             "interpolation block " + block.name + " indefinite by " +
                 std::to_string(eig.eigenvalues().minCoeff()));
    }
  }
}

template <typename DatasetT, typename InstanceT>
void battery_common(json& checks, bool& all_pass, const DatasetT& data,
                    const CertificationFamily& fam, const StepSchedule& sched,
                    LossKind loss_kind, bool quick, bool monotone,
                    const SolverSettings& solver) {
  const std::vector<InstanceT>& train = data.train;

  run_check(checks, all_pass, "trajectory-losses", [&]() {
    for (const InstanceT& inst : train) {
      Trajectory traj = run_algorithm(inst, sched);
      eval_loss_into(traj, reference_optimum(inst), loss_kind);
      expect(traj.losses.allFinite(), "non-finite loss");
      expect(traj.losses.minCoeff() >= -1e-6, "negative loss");
      if (monotone) {
        for (long k = 1; k <= sched.K; ++k) {
          expect(traj.losses(k) <= traj.losses(k - 1) + 1e-9,
                 "loss increased along the trajectory");
        }
      }
    }
  });

  run_check(checks, all_pass, "interpolation-soundness", [&]() {
    check_interpolation(train, sched, fam, loss_kind, quick ? 2 : 4);
  });

  double pep_value = kNaN;
  run_check(checks, all_pass, "worst-case-certificate", [&]() {
    pep_value = certify_schedule(sched, fam, solver).value;
    for (const InstanceT& inst : train) {
      Trajectory traj = run_algorithm(inst, sched);
      eval_loss_into(traj, reference_optimum(inst), loss_kind);
      expect(traj.losses(sched.K) <=
                 pep_value + 1e-6 * (1.0 + std::abs(pep_value)),
             "a sampled loss exceeds the worst-case certificate");
    }
  });

  run_check(checks, all_pass, "robust-risk-interpolation", [&]() {
    Minibatch batch;
    fill_batch(batch, train, std::min<long>(2, train.size()));
    DroConfig cfg;
    cfg.epsilon = 0.0;
    const DroCertificate at_zero = dro_risk(sched, batch, fam, cfg, solver);
    expect(std::abs(at_zero.risk - at_zero.empirical) <=
               1e-6 * (1.0 + std::abs(at_zero.empirical)),
           "zero-radius risk is not the empirical mean");
    cfg.epsilon = 0.5;
    const DroCertificate mid = dro_risk(sched, batch, fam, cfg, solver);
    expect(mid.risk >= at_zero.risk - 1e-9,
           "robust risk dropped below the empirical mean");
    if (!std::isnan(pep_value)) {
      expect(mid.risk <= pep_value + 1e-3 * (1.0 + std::abs(pep_value)),
             "robust risk exceeds the worst-case value");
    }
  });

  if (!quick) {
    run_check(checks, all_pass, "gradient-check", [&]() {
      Minibatch batch;
      fill_batch(batch, train, std::min<long>(2, train.size()));
      DroConfig cfg;
      cfg.epsilon = 0.5;
      const Vec grad =
          dro_risk_gradient(sched, batch, fam, cfg, solver);
      const double h = 1e-5;
      StepSchedule lo = sched, hi = sched;
      hi.values(0) += h;
      lo.values(0) -= h;
      const double fp = dro_risk(hi, batch, fam, cfg, solver).risk;
      const double fm = dro_risk(lo, batch, fam, cfg, solver).risk;
      const double fd = (fp - fm) / (2.0 * h);
      expect(std::abs(grad(0) - fd) <= 1e-3 * (1.0 + std::abs(fd)),
             "risk gradient disagrees with finite differences");
    });
  }
}

json cmd_check(const json& cfg) {
  const std::string family_name =
      cfg.value("family", std::string("quadratic"));
  const bool quick = cfg.value("quick", false);
  SolverSettings solver = parse_solver(cfg);
  if (!cfg.contains("solver")) {
    solver.tol_primal = solver.tol_dual = solver.tol_gap = 1e-8;
  }
  const FunctionClass fclass = parse_function_class(family_name);

  json checks = json::array();
  bool all_pass = true;

  run_check(checks, all_pass, "metric-oracles", [&]() {
    expect(std::abs(fraction_solved({0.05, 0.5}, {1.0, 1.0}, 0.1) - 0.5) == 0,
           "fraction-solved oracle");
    std::vector<double> ten;
    for (int v = 1; v <= 10; ++v) ten.push_back(v);
    expect(quantiles(ten, {0.5})[0] == 5.5, "median oracle");
    expect(quantiles(ten, {0.0})[0] == 1.0 && quantiles(ten, {1.0})[0] == 10.0,
           "extreme quantile oracle");
    Vec losses(3);
    losses << 5.0, 1.0, 2.0;
    expect(std::abs(weighted_training_loss(losses, 2, 0.9) - 2.9) < 1e-12,
           "weighted loss oracle");
    TrainConfig tc;
    expect(lr_at(0, tc) == 0.0, "warmup start oracle");
    expect(std::abs(lr_at(100, tc) - tc.lr_max) < 1e-15, "warmup end oracle");
  });

  if (fclass == FunctionClass::quadratic ||
      fclass == FunctionClass::smooth_strongly_convex) {
    const long d = quick ? 3 : 6;
    const SplitSizes sizes =
        quick ? SplitSizes{4, 2, 2, 0} : SplitSizes{12, 6, 6, 0};
    QuadraticDataset data;
    run_check(checks, all_pass, "dataset-sampling", [&]() {
      data = sample_quadratic_dataset(d, 1.0, 10.0, 1.0, sizes, 123);
      expect(static_cast<long>(data.train.size()) == sizes.train,
             "train split size");
      expect(data.train.front().class_params.L == 10.0, "ensemble bound echo");
    });
    if (!data.train.empty()) {
      CertificationFamily fam;
      fam.function_class = fclass;
      fam.mu = 1.0;
      fam.L = 10.0;
      fam.initial_bound = 1.0;
      StepSchedule sched;
      sched.kind = AlgoKind::gd;
      sched.K = 2;
      sched.values = Vec::Constant(2, 0.1);
      battery_common<QuadraticDataset, QuadraticInstance>(
          checks, all_pass, data, fam, sched, LossKind::function_gap, quick,
          true, solver);
    }
  } else if (fclass == FunctionClass::composite) {
    const SplitSizes sizes =
        quick ? SplitSizes{3, 2, 2, 0} : SplitSizes{8, 4, 4, 0};
    LassoDataset data;
    CertificationFamily fam;
    run_check(checks, all_pass, "dataset-sampling", [&]() {
      data = sample_lasso_dataset(quick ? 4 : 8, quick ? 8 : 16, 0.1, 1.0,
                                  0.1, 0.25, sizes, 123, 0.0,
                                  quick ? 50 : 200);
      expect(static_cast<long>(data.train.size()) == sizes.train,
             "train split size");
      AnyDataset holder;
      holder.lasso = std::make_unique<LassoDataset>(data);
      fam = derive_family(holder);
      expect(fam.L > 0.0 && fam.initial_bound > 0.0, "derived family bounds");
    });
    if (!data.train.empty() && fam.L > 0.0) {
      StepSchedule sched;
      sched.kind = AlgoKind::ista;
      sched.K = 2;
      sched.values = Vec::Constant(2, 1.0 / fam.L);
      battery_common<LassoDataset, LassoInstance>(
          checks, all_pass, data, fam, sched, LossKind::function_gap, quick,
          true, solver);
    }
  } else {
    const SplitSizes sizes =
        quick ? SplitSizes{2, 1, 1, 0} : SplitSizes{4, 2, 2, 0};
    TvLpDataset data;
    CertificationFamily fam;
    run_check(checks, all_pass, "dataset-sampling", [&]() {
      data = sample_tv_dataset(4, 4, 2, 0.3, sizes, 123);
      expect(static_cast<long>(data.train.size()) == sizes.train,
             "train split size");
      AnyDataset holder;
      holder.tv = std::make_unique<TvLpDataset>(data);
      fam = derive_family(holder);
      expect(fam.op_bound > 0.0 && fam.initial_bound > 0.0,
             "derived family bounds");
    });
    if (!data.train.empty() && fam.op_bound > 0.0) {
      StepSchedule sched;
      sched.kind = AlgoKind::pdhg;
      sched.K = 1;
      sched.values = Vec(3);
      sched.values << 0.5 / fam.op_bound, 1.0, 0.5 / fam.op_bound;
      battery_common<TvLpDataset, TvLpInstance>(
          checks, all_pass, data, fam, sched, LossKind::saddle_gap, quick,
          false, solver);
    }
  }

  json result = {{"checks", checks},
                 {"all_pass", all_pass},
                 {"family", family_name},
                 {"quick", quick}};
  return wrap_response("check", cfg, 123, json(), solver, std::move(result),
                       json::object());
}

json run_command(const json& request) {
  const std::string command = request.value("command", std::string(""));
  const json cfg = request.value("config", json::object());
  if (command == "generate") return cmd_generate(cfg);
  if (command == "train") return cmd_train(cfg);
  if (command == "sweep") return cmd_sweep(cfg);
  if (command == "certify") return cmd_certify(cfg);
  if (command == "evaluate") return cmd_evaluate(cfg);
  if (command == "check") return cmd_check(cfg);
  throw Error(ErrorCode::invalid_argument,
              command.empty() ? "request has no command"
                              : "unknown command '" + command + "'");
}

int map_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::ok:
      return STEPCERT_OK;
    case ErrorCode::invalid_argument:
      return STEPCERT_ERR_INVALID_ARGUMENT;
    case ErrorCode::invalid_instance:
      return STEPCERT_ERR_INVALID_INSTANCE;
    case ErrorCode::invalid_class:
      return STEPCERT_ERR_INVALID_CLASS;
    case ErrorCode::sampler_exhausted:
      return STEPCERT_ERR_SAMPLER_EXHAUSTED;
    case ErrorCode::parse_error:
      return STEPCERT_ERR_PARSE;
    case ErrorCode::divergence:
      return STEPCERT_ERR_DIVERGENCE;
    case ErrorCode::reference_inconsistency:
      return STEPCERT_ERR_REFERENCE;
    case ErrorCode::gradient_unavailable:
      return STEPCERT_ERR_GRADIENT_UNAVAILABLE;
    case ErrorCode::check_inconclusive:
      return STEPCERT_ERR_CHECK_INCONCLUSIVE;
    case ErrorCode::solver_failure:
      return STEPCERT_ERR_SOLVER_FAILURE;
    case ErrorCode::training_aborted:
      return STEPCERT_ERR_TRAINING_ABORTED;
    case ErrorCode::cv_failed:
      return STEPCERT_ERR_CV_FAILED;
    case ErrorCode::certification_unavailable:
      return STEPCERT_ERR_CERTIFICATION_UNAVAILABLE;
    case ErrorCode::io_error:
      return STEPCERT_ERR_IO;
  }
  return STEPCERT_ERR_INTERNAL;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace
}  // namespace stepcert

struct stepcert_ctx {
  int status = STEPCERT_OK;
  std::string message;
};

extern "C" {

const char* stepcert_version_string(void) {
  return stepcert::stepcert_version();
}

stepcert_ctx* stepcert_ctx_new(void) { return new (std::nothrow) stepcert_ctx; }

void stepcert_ctx_free(stepcert_ctx* ctx) { delete ctx; }

int stepcert_last_status(const stepcert_ctx* ctx) {
  return ctx != nullptr ? ctx->status : STEPCERT_ERR_INVALID_ARGUMENT;
}

const char* stepcert_last_message(const stepcert_ctx* ctx) {
  return ctx != nullptr ? ctx->message.c_str() : "null context";
}

char* stepcert_run(stepcert_ctx* ctx, const char* request_json) {
  if (ctx == nullptr) return nullptr;
  if (request_json == nullptr) {
    ctx->status = STEPCERT_ERR_INVALID_ARGUMENT;
    ctx->message = "null request";
    return nullptr;
  }
  try {
    const nlohmann::json request = nlohmann::json::parse(request_json);
    const nlohmann::json response = stepcert::run_command(request);
    ctx->status = STEPCERT_OK;
    ctx->message.clear();
    return stepcert::dup_string(response.dump(2));
  } catch (const stepcert::Error& e) {
    ctx->status = stepcert::map_error(e.code());
    ctx->message = e.what();
  } catch (const nlohmann::json::exception& e) {
    ctx->status = STEPCERT_ERR_PARSE;
    ctx->message = e.what();
  } catch (const std::exception& e) {
    ctx->status = STEPCERT_ERR_INTERNAL;
    ctx->message = e.what();
  }
  return nullptr;
}

void stepcert_string_free(char* s) { std::free(s); }

}  // extern "C"
