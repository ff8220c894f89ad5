#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stepcert/common.hpp"
#include "stepcert/lifting.hpp"
#include "stepcert/unroll.hpp"

namespace stepcert {

// Coefficient vectors expressing schedule-dependent iterates in the lifted
// basis, together with their derivatives in every schedule parameter.
// Positions are relative to the optimum: x[k] represents x^k - x*. For pdhg
// the primal positions live on the primal block, u[k] represents u^k - u*
// on the dual block, and xbar[k-1] represents the extrapolated point fed to
// the operator at step k.
struct CoefficientVectors {
  BasisLayout layout;
  long n_params = 0;
  std::vector<Vec> x;
  std::vector<std::vector<Vec>> dx;    // [param][k]
  std::vector<Vec> u;                  // pdhg only
  std::vector<std::vector<Vec>> du;    // [param][k]
  std::vector<Vec> xbar;               // pdhg only, k = 1..K at index k-1
  std::vector<std::vector<Vec>> dxbar; // [param][k-1]
};

CoefficientVectors build_coefficients(const BasisLayout& layout,
                                      const StepSchedule& schedule);

// One scalar constraint row. The stored pair (A, b) is the negative of the
// inequality's coefficients, so the row value
//   lmi_value = -Tr(A'G) - b'F
// is the constraint slack and feasibility means every value is >= 0.
// Equalities appear as two opposing rows (family suffixed + and -).
// family names the constraint group; i and j are point indices with -1
// meaning the optimum; mu and L record the class parameters the row was
// generated with (0 and infinity for plain convexity).
struct ConstraintLabel {
  std::string family;
  long i = 0;
  long j = 0;
  double mu = 0.0;
  double L = 0.0;
};

struct LmiSet {
  std::vector<Mat> A;
  std::vector<Vec> b;
  std::vector<ConstraintLabel> labels;
  long lmi_count() const { return static_cast<long>(A.size()); }
};

double lmi_value(const LmiSet& set, long m, const Mat& G, const Vec& F);
Vec lmi_values(const LmiSet& set, const Mat& G, const Vec& F);

// One PSD block H with (H)_kl = Tr(C_kl'G) + d_kl'F; C and d are stored
// row-major with C_kl = C_lk. p1/p2 record the generating parameters
// (mu/L for the curvature block, operator bound for the operator blocks).
struct PsdBlock {
  std::string name;
  long side = 0;
  std::vector<Mat> C;
  std::vector<Vec> d;
  double p1 = 0.0;
  double p2 = 0.0;
};

struct PsdBlockSet {
  std::vector<PsdBlock> blocks;
};

Mat psd_block_value(const PsdBlock& block, const Mat& G, const Vec& F);

// Interpolation constraints for an L-smooth mu-strongly-convex function over
// the points {*, 0..K}: one row per ordered pair. Pass L = infinity for the
// non-smooth limit and mu = 0 for plain convexity.
LmiSet smooth_strongly_convex_lmis(long K, double mu, double L,
                                   const BasisLayout& layout,
                                   const CoefficientVectors& coeffs);

// Quadratic-class conditions: gradient symmetry equalities, f = x'g/2
// equalities, and the curvature block (P - mu X)'(L X - P) >= 0.
std::pair<LmiSet, PsdBlockSet> quadratic_class_constraints(
    long K, double mu, double L, const BasisLayout& layout,
    const CoefficientVectors& coeffs);

// Linear-operator conditions tying recorded products to their inputs:
// adjointness equalities plus one operator-norm block per direction.
std::pair<LmiSet, PsdBlockSet> linear_operator_constraints(
    double L_bound, const BasisLayout& layout,
    const CoefficientVectors& coeffs);

// Initial condition Tr(A'G) + b'F + c <= 0 selecting the squared distance of
// the starting state to the optimum.
struct InitialCondition {
  Mat A;
  Vec b;
  double c = 0.0;
};

InitialCondition initial_condition(const BasisLayout& layout, double bound);

double initial_value(const InitialCondition& init, const Mat& G,
                     const Vec& F);

// Linear loss functional ell(G, F) = Tr(A_obj'G) + b_obj'F with its
// Lipschitz constant sqrt(|A_obj|_F^2 + |b_obj|^2).
struct LossObjective {
  Mat A_obj;
  Vec b_obj;
  double lipschitz = 0.0;
};

LossObjective terminal_loss_objective(const BasisLayout& layout);
LossObjective weighted_loss_objective(const BasisLayout& layout,
                                      double base = 0.9);

double loss_value(const LossObjective& objective, const Mat& G, const Vec& F);

struct PepObjective {
  Mat A_obj;
  Vec b_obj;
  Mat A0;
  Vec b0;
  double c0 = 0.0;
  double lipschitz = 0.0;
};

PepObjective make_pep_objective(const BasisLayout& layout,
                                const LossObjective& loss,
                                const InitialCondition& init);

// Derivatives of every constraint coefficient in every schedule parameter.
// b and d parts are schedule independent, so db and the block d tensors are
// identically zero; they are materialized for shape completeness.
struct ConstraintJacobians {
  std::vector<std::vector<Mat>> dA;  // [param][row]
  std::vector<std::vector<Vec>> db;  // [param][row]
  std::vector<PsdBlockSet> dblocks;  // [param]
};

ConstraintJacobians lmi_jacobian(const LmiSet& lmis, const PsdBlockSet& blocks,
                                 const CoefficientVectors& coeffs);

// Which function class the certificate quantifies over.
enum class FunctionClass { quadratic, smooth_strongly_convex, composite,
                           saddle };

struct ClassConfig {
  FunctionClass function_class = FunctionClass::quadratic;
  double mu = 0.0;
  double L = 0.0;             // curvature range (ignored for saddle)
  double initial_bound = 0.0; // distance bound R
  double op_bound = 0.0;      // operator norm bound (saddle only)
  bool with_jacobian = false;
};

// Everything the certificate solvers need for one (layout, schedule, class).
struct ClassSystem {
  CoefficientVectors coeffs;
  LmiSet lmis;
  PsdBlockSet blocks;
  InitialCondition init;
  ConstraintJacobians jac;  // empty unless with_jacobian
};

ClassSystem build_class_system(const BasisLayout& layout,
                               const StepSchedule& schedule,
                               const ClassConfig& config);

// Smallest constraint slack and smallest block eigenvalue of a sample.
struct SlackReport {
  double min_lmi_slack = 0.0;
  double min_block_eig = 0.0;
};

SlackReport min_slack(const LmiSet& lmis, const PsdBlockSet& blocks,
                      const Mat& G, const Vec& F);

}  // namespace stepcert
