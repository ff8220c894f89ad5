#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "stepcert/conic.hpp"
#include "stepcert/interp.hpp"
#include "stepcert/unroll.hpp"

namespace stepcert {

// One worst-case certification setting: the function class with its curvature
// and bound parameters plus the loss functional the certificate bounds.
struct CertificationFamily {
  FunctionClass function_class = FunctionClass::quadratic;
  double mu = 0.0;
  double L = 0.0;
  double initial_bound = 0.0;  // distance (or duality-gap) bound R
  double op_bound = 0.0;       // operator norm bound, saddle only
  bool weighted_loss = false;  // false: terminal loss
  double weight_base = 0.9;
};

// Algorithm family whose trajectories the class quantifies over.
AlgoKind family_algo_kind(FunctionClass function_class);

const char* function_class_name(FunctionClass function_class);

// Expands a family into the interp-facing class configuration.
ClassConfig family_class_config(const CertificationFamily& family,
                                bool with_jacobian);

// The loss functional the family certifies (terminal or weighted) joined
// with the initial condition.
PepObjective family_objective(const CertificationFamily& family,
                              const BasisLayout& layout,
                              const InitialCondition& init);

// Upper bound on the loss over every in-class instance, with the dual
// multipliers that certify it.
struct PepCertificate {
  double value = 0.0;
  Vec y;                         // one multiplier per LMI row, >= 0
  double tau = 0.0;              // initial-condition multiplier, >= 0
  std::vector<Mat> block_duals;  // one PSD matrix per interpolation block
  Vec theta;                     // schedule the certificate was evaluated at
  double res_primal = 0.0;
  double res_dual = 0.0;
  double gap = 0.0;
  long iterations = 0;
  double solve_time = 0.0;
};

// Conic encoding of max Tr(A_obj'G) + b_obj'F over the lifted feasible set.
// Variables are (svec(G), F). Paired equality halves (labels "...+"/"...-")
// are merged into single zero-cone rows so the feasible set keeps a strict
// interior; the remaining rows form one nonneg block [initial; inequalities],
// then the PSD cone for G and one PSD cone per interpolation block. When jac
// is given, every schedule-dependent coefficient is tagged with kind
// "theta", outer = parameter index, scale = d(coefficient)/d(theta_p), so
// the envelope gradient pools directly into dvalue/dtheta.
struct PepAssembly {
  ConicProgram program;
  long initial_row = 0;        // slack row of the initial condition
  std::vector<long> lmi_row;   // slack row per LMI; pair halves share one
  std::vector<int> lmi_sign;   // -1 for a merged "-" half, else +1
  std::vector<bool> lmi_pair;  // true when the row is a zero-cone equality
  long gram_cone = 0;          // cone index of the G block
  long first_block_cone = 0;   // cone index of the first interpolation block
};

PepAssembly assemble_pep_program(const LmiSet& lmis,
                                 const PsdBlockSet& blocks,
                                 const PepObjective& objective,
                                 const ConstraintJacobians* jac = nullptr);

// Solves the worst-case problem for one assembled constraint system.
// Unbounded status raises invalid-class: the function class or initial
// condition does not cap the loss. A solve that stalls short of a tight
// request is retried once at just above its achieved residual floor (never
// looser than the default tolerances); remaining non-optimal statuses raise
// solver-failure. The certificate records the achieved residuals.
PepCertificate solve_pep(const LmiSet& lmis, const PsdBlockSet& blocks,
                         const PepObjective& objective,
                         const SolverSettings& settings = {});

// Builds the constraint system for (family, schedule) and certifies it.
PepCertificate certify_schedule(const StepSchedule& schedule,
                                const CertificationFamily& family,
                                const SolverSettings& settings = {});

// Gradient of the certificate value in the schedule parameters, via the
// envelope theorem at the conic optimum chained through the constraint
// jacobians. Requires an optimal solve at the given schedule. value_out, when
// given, receives the certificate value of the same solve.
Vec worst_case_gradient(const StepSchedule& schedule,
                        const CertificationFamily& family,
                        const SolverSettings& settings = {},
                        double* value_out = nullptr);

// Certificate with the settings it was produced under and a timestamp.
nlohmann::json certificate_to_json(const PepCertificate& certificate,
                                   const CertificationFamily& family,
                                   const SolverSettings& settings);

}  // namespace stepcert
