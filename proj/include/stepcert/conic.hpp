#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepcert/common.hpp"

namespace stepcert {

// Standard form: min q'x  s.t.  Ax + s = b,  s in K, where K is the product
// of the tagged cone blocks in row order.

enum class ConeTag { zero, nonneg, soc, psd };

struct ConeBlock {
  ConeTag tag;
  long dim;  // psd: matrix side; the block occupies tri_size(dim) rows
};

inline long cone_rows(const ConeBlock& block) {
  return block.tag == ConeTag::psd ? tri_size(block.dim) : block.dim;
}

struct Triplet {
  long row;
  long col;
  double val;
};

// Links one coefficient to its source data entry so the envelope gradient can
// be pooled per source. target selects where the coefficient lives; scale is
// d(coefficient)/d(source entry).
enum class TagTarget { mat, rhs, obj };

struct DataTag {
  std::string kind;
  long outer = 0;
  long inner = 0;
  double scale = 1.0;
  TagTarget target = TagTarget::mat;
  long row = 0;
  long col = 0;
};

struct ConicProgram {
  long num_vars = 0;
  Vec objective;                 // q, length num_vars
  std::vector<Triplet> triplets; // sparse A
  Vec rhs;                       // b, length = total cone rows
  std::vector<ConeBlock> cones;
  std::vector<DataTag> tags;
};

long program_rows(const ConicProgram& program);

enum class SolveStatus { optimal, infeasible, unbounded, numerical_limit };

const char* solve_status_name(SolveStatus status);

struct ConicSolution {
  Vec x;  // primal
  Vec z;  // dual, one entry per constraint row
  Vec s;  // slack
  double value = 0.0;
  SolveStatus status = SolveStatus::numerical_limit;
  double res_primal = 0.0;
  double res_dual = 0.0;
  double gap = 0.0;
  long iterations = 0;
  double solve_time = 0.0;
};

struct SolverSettings {
  double tol_primal = 1e-5;
  double tol_dual = 1e-5;
  double tol_gap = 1e-5;
  long max_iter = 200000;
  bool verbose = false;
};

// Solves the program. numerical-limit comes back as a status, not an error;
// malformed dimensions raise invalid-argument.
ConicSolution solve(const ConicProgram& program, const SolverSettings& settings = {});

// Degenerate programs can stall the interior-point method a hair short of
// tight tolerance requests. On numerical-limit, re-solves once at just above
// the achieved floor, per component; the retry never loosens past the default
// tolerances, so genuine failures still surface as numerical-limit.
ConicSolution solve_with_floor_retry(const ConicProgram& program,
                                     const SolverSettings& settings = {});

// Dual segment belonging to one cone block.
Vec block_dual(const ConicProgram& program, const ConicSolution& solution,
               std::size_t block_index);

// Gradient of the optimal value with respect to every tagged source entry of
// the given kind, keyed by (outer, inner). Uses the Lagrangian stationarity
// at the returned primal-dual pair: d/dA_rc = z_r x_c, d/db_r = -z_r,
// d/dq_c = x_c, each times the tag's scale. Requires optimal status.
std::map<std::pair<long, long>, double> optimal_value_gradient(
    const ConicProgram& program, const ConicSolution& solution,
    const std::string& kind);

struct FiniteDiffReport {
  double analytic = 0.0;
  double fd = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
};

// Central-difference check of d(optimal value)/dw for a scalar parameter w.
// The builder must tag every w-dependent coefficient with kind "w" and scale
// equal to d(coefficient)/dw. h must be nonzero; non-optimal re-solves raise
// check-inconclusive.
FiniteDiffReport finite_diff_check(
    const std::function<ConicProgram(double)>& builder, double w, double h,
    const SolverSettings& settings = {});

// Debug dump in the documented standard-form schema.
nlohmann::json program_to_json(const ConicProgram& program);

}  // namespace stepcert
