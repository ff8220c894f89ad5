#pragma once

#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepcert/pep.hpp"

namespace stepcert {

// Wasserstein ambiguity ball around the empirical distribution of lifted
// samples. The transport cost is the pair norm
//   |(G, F)| = sqrt(|G|_F^2 + |F|^2),
// which is Euclidean on (svec(G), F) and therefore self-dual: the dual-norm
// bound |(X, Y)|_* <= lambda in the dual form is the same second-order cone
// as the primal transport rows.
struct DroConfig {
  double epsilon = 0.0;   // ball radius, >= 0
  long N = 1;             // sample count, >= 1
  bool extended = false;  // PSD interpolation blocks present
  bool with_pep = false;  // also solve the worst-case program for the sandwich
};

// Dual variables attached to one sample of the dual-form solve.
struct DroSampleDual {
  double s = 0.0;      // per-sample epigraph value
  double tau = 0.0;    // initial-condition multiplier
  Vec y;               // one entry per scalar constraint row, >= 0
  Mat X;               // Gram-side transport potential
  Vec Y;               // value-side transport potential
  std::vector<Mat> H;  // one PSD multiplier per interpolation block
};

struct DroCertificate {
  double risk = 0.0;
  double lambda = 0.0;  // shared dual-norm bound
  double epsilon = 0.0;
  std::vector<DroSampleDual> duals;
  std::vector<LiftedSample> anchors;  // the (G_hat, F_hat) the ball centers on
  // Sandwich companions: the empirical mean always; the worst-case value only
  // when requested and solvable.
  double empirical = 0.0;
  double pep_value = std::numeric_limits<double>::quiet_NaN();
  bool pep_available = false;
  double lipschitz = 0.0;  // norm of the loss functional |(A_obj, b_obj)|
  Vec theta;
  double res_primal = 0.0;
  double res_dual = 0.0;
  double gap = 0.0;
  long iterations = 0;
  double solve_time = 0.0;
};

// Instances fed to one risk evaluation. Exactly one vector may be nonempty
// and it must carry the family's algorithm.
struct Minibatch {
  std::vector<QuadraticInstance> quadratic;
  std::vector<LassoInstance> lasso;
  std::vector<TvLpInstance> tv;
  long size() const;
};

// Column bookkeeping for the dual form. Each sample owns one contiguous
// variable block [s; tau; y vars; svec(X); Y; svec(H) per interpolation
// block]; the shared lambda column comes last. Paired "...+"/"...-" equality
// halves share a single free y variable carrying the "+" coefficients, so
// n_y_vars <= lmi_count; y_var_of_lmi/y_sign/y_pair recover the one-sided
// multipliers. epsilon = 0 decouples lambda: the column and its second-order
// cones are dropped (lambda_col = -1).
struct DroDualAssembly {
  ConicProgram program;
  long lambda_col = -1;
  long sample_stride = 0;
  long n_y_vars = 0;
  std::vector<long> y_var_of_lmi;  // per LMI, offset within the y block
  std::vector<int> y_sign;         // -1 for a merged "-" half, else +1
  std::vector<bool> y_pair;        // true when the y variable is free
  long side = 0;
  long fdim = 0;
  long tri = 0;
  std::vector<long> block_tri;  // svec length per interpolation block
};

// Dual form: minimize (1/N) sum s_i subject to, per sample,
//   -c0 tau_i - <(X_i, Y_i), (G_hat_i, F_hat_i)> + lambda eps <= s_i,
//   tau_i A0 + sum_m (y_i)_m A_m - sum_kl (H_i)_kl C_kl - A_obj - X_i psd,
//   the matching F-part equality, and |(X_i, Y_i)| <= lambda.
// With jac given, schedule-dependent constraint coefficients are tagged with
// kind "theta"; with anchor_jac given, the anchor entries of the epigraph
// rows are tagged as well, so the envelope gradient pools into dR/dtheta.
DroDualAssembly assemble_dro_dual(
    const std::vector<LiftedSample>& samples, const LmiSet& lmis,
    const PsdBlockSet& blocks, const PepObjective& objective,
    const DroConfig& config, const ConstraintJacobians* jac = nullptr,
    const std::vector<LiftedJacobian>* anchor_jac = nullptr);

ConicProgram build_dro_dual(const std::vector<LiftedSample>& samples,
                            const LmiSet& lmis, const PsdBlockSet& blocks,
                            const PepObjective& objective,
                            const DroConfig& config);

// Primal form: maximize the mean loss over per-sample lifted points that stay
// interpolation-feasible while their mean pair-norm distance to the anchors
// is at most epsilon. Requires epsilon > 0. Variable order: per sample
// [svec(G_i); F_i; t_i] with samples consecutive; t_i is the per-sample
// transport epigraph and one trailing nonneg row budgets sum t_i <= N eps.
ConicProgram build_dro_primal(const std::vector<LiftedSample>& samples,
                              const LmiSet& lmis, const PsdBlockSet& blocks,
                              const PepObjective& objective,
                              const DroConfig& config);

// Full pipeline: run the schedule on every instance, lift, assemble the dual
// form, solve, and extract the certificate. config.N must match the batch;
// config.extended is derived from the class. epsilon = 0 short-circuits to
// the analytic empirical mean (no conic solve). config.with_pep adds the
// worst-case companion value when its solve succeeds.
DroCertificate dro_risk(const StepSchedule& schedule,
                        const Minibatch& minibatch,
                        const CertificationFamily& family,
                        const DroConfig& config,
                        const SolverSettings& settings = {});

// d(risk)/d(theta) through the envelope of the dual form: constraint
// coefficient sensitivities contracted with the class jacobians plus anchor
// sensitivities contracted with the lift jacobians. epsilon = 0 reduces to
// the mean anchor-loss gradient (no conic solve). Raises gradient-unavailable
// when the solve ends non-optimal. risk_out, when given, receives the risk
// value of the same solve (the empirical mean at epsilon = 0).
Vec dro_risk_gradient(const StepSchedule& schedule,
                      const Minibatch& minibatch,
                      const CertificationFamily& family,
                      const DroConfig& config,
                      const SolverSettings& settings = {},
                      double* risk_out = nullptr);

nlohmann::json dro_certificate_to_json(const DroCertificate& certificate,
                                       const DroConfig& config,
                                       const SolverSettings& settings);

}  // namespace stepcert
