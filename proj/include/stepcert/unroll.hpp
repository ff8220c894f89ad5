#pragma once

#include <limits>
#include <utility>
#include <vector>

#include "stepcert/instances.hpp"

namespace stepcert {

enum class AlgoKind { gd, ista, pdhg };
enum class LossKind { function_gap, saddle_gap };

struct StepSchedule {
  AlgoKind kind = AlgoKind::gd;
  long K = 0;
  // K entries for gd/ista; K (tau, rho, sigma) triples flattened for pdhg.
  Vec values;
  double theta_min = 1e-6;
  double theta_max = std::numeric_limits<double>::infinity();
};

long schedule_param_count(const StepSchedule& schedule);
void validate_schedule(const StepSchedule& schedule);

struct Trajectory {
  AlgoKind kind = AlgoKind::gd;
  long K = 0;
  std::vector<Vec> x;          // iterates 0..K
  std::vector<Vec> g;          // gd: Qx^k; ista: A'(Ax^k - b); 0..K
  std::vector<Vec> s;          // ista: recovered l1 subgradients at x^1..x^K
  std::vector<double> fvals;   // objective per iterate
  std::vector<double> hvals;   // ista smooth part per iterate
  std::vector<double> l1vals;  // ista l1 part per iterate
  Vec losses;                  // filled by eval_loss_into

  // pdhg records
  std::vector<Vec> u;        // duals 0..K
  std::vector<Vec> xbar;     // extrapolated points 1..K
  std::vector<Vec> Mt_u;     // M'u^k, 0..K
  std::vector<Vec> M_xbar;   // M xbar^k, 1..K
  std::vector<Vec> sf;       // recovered primal subgradients 1..K
  std::vector<Vec> sg;       // recovered dual subgradients 1..K
  std::vector<double> cx;    // c'x^k, 0..K
  std::vector<Vec> Mx;       // M x^k, 0..K
  Vec q;                     // [b_eq; -h]
  Vec c;                     // linear objective
  SpMat M;                   // kept for loss evaluation

  // ista problem data needed by the lifting stage
  std::shared_ptr<const Mat> A;
  Vec b_data;
  double lambda_reg = 0.0;

  // attached by eval_loss_into; lifting requires it
  Optimum reference;
  bool has_reference = false;
};

// Derivatives of every trajectory record with respect to each schedule entry,
// indexed [param][iterate]; absent steps are zero by causality.
struct TrajectoryJacobian {
  AlgoKind kind = AlgoKind::gd;
  long K = 0;
  long n_params = 0;
  std::vector<std::vector<Vec>> dx, dg, ds;
  std::vector<std::vector<double>> dfvals, dhvals, dl1vals;
  std::vector<std::vector<Vec>> du, dxbar, dMt_u, dM_xbar, dsf, dsg, dMx;
  std::vector<std::vector<double>> dcx;
};

Trajectory run_algorithm(const QuadraticInstance& instance,
                         const StepSchedule& schedule);
Trajectory run_algorithm(const LassoInstance& instance,
                         const StepSchedule& schedule);
Trajectory run_algorithm(const TvLpInstance& instance,
                         const StepSchedule& schedule);

std::pair<Trajectory, TrajectoryJacobian> run_with_jacobian(
    const QuadraticInstance& instance, const StepSchedule& schedule);
std::pair<Trajectory, TrajectoryJacobian> run_with_jacobian(
    const LassoInstance& instance, const StepSchedule& schedule);
std::pair<Trajectory, TrajectoryJacobian> run_with_jacobian(
    const TvLpInstance& instance, const StepSchedule& schedule);

TrajectoryJacobian trajectory_jacobian(const QuadraticInstance& instance,
                                       const StepSchedule& schedule);
TrajectoryJacobian trajectory_jacobian(const LassoInstance& instance,
                                       const StepSchedule& schedule);
TrajectoryJacobian trajectory_jacobian(const TvLpInstance& instance,
                                       const StepSchedule& schedule);

// Per-iterate losses: function-value gap for gd/ista, Lagrangian saddle gap
// for pdhg. Values in [-1e-9, 0) clip to 0; anything lower raises
// reference-inconsistency.
Vec eval_loss(const Trajectory& trajectory, const Optimum& reference,
              LossKind loss_kind);
void eval_loss_into(Trajectory& trajectory, const Optimum& reference,
                    LossKind loss_kind);

// sum_{k=1..K} base^(K-k) * loss_k. Accepts K+1 losses (entry 0 skipped) or
// exactly K losses.
double weighted_training_loss(const Vec& per_iterate_losses, long K,
                              double base = 0.9);

}  // namespace stepcert
