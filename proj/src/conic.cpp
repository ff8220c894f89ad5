#include "stepcert/conic.hpp"

#include <algorithm>
#include <cstdint>

namespace stepcert {

extern "C" {
int conic_backend_solve(
    std::int64_t n, std::int64_t m, const double* p_nzval,
    const std::int64_t* p_rowval, const std::int64_t* p_colptr,
    std::int64_t p_nnz, const double* q, const double* a_nzval,
    const std::int64_t* a_rowval, const std::int64_t* a_colptr,
    std::int64_t a_nnz, const double* b, const std::int32_t* cone_tags,
    const std::int64_t* cone_dims, std::int64_t n_cones, double tol_feas,
    double tol_gap, std::int64_t max_iter, std::int32_t verbose,
    double* x_out, double* z_out,
    double* s_out, double* obj_out, double* res_out, std::int64_t* iters_out,
    double* time_out);
const char* conic_backend_version();
}

long program_rows(const ConicProgram& program) {
  long rows = 0;
  for (const auto& block : program.cones) rows += cone_rows(block);
  return rows;
}

const char* solve_status_name(SolveStatus status) {
  switch (status) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::numerical_limit: return "numerical-limit";
  }
  return "unknown";
}

namespace {

struct CscData {
  std::vector<double> nzval;
  std::vector<std::int64_t> rowval;
  std::vector<std::int64_t> colptr;
};

CscData triplets_to_csc(const std::vector<Triplet>& triplets, long rows,
                        long cols) {
  std::vector<Triplet> sorted = triplets;
  std::sort(sorted.begin(), sorted.end(), [](const Triplet& a, const Triplet& b) {
    return a.col != b.col ? a.col < b.col : a.row < b.row;
  });
  CscData out;
  out.colptr.assign(cols + 1, 0);
  long last_row = -1;
  long last_col = -1;
  for (const auto& t : sorted) {
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
      throw Error(ErrorCode::invalid_argument,
                  "triplet index out of range in conic program");
    }
    if (t.row == last_row && t.col == last_col) {
      // Duplicate entries sum.
      out.nzval.back() += t.val;
      continue;
    }
    out.nzval.push_back(t.val);
    out.rowval.push_back(t.row);
    out.colptr[t.col + 1] += 1;
    last_row = t.row;
    last_col = t.col;
  }
  for (long c = 0; c < cols; ++c) out.colptr[c + 1] += out.colptr[c];
  return out;
}

}  // namespace

ConicSolution solve(const ConicProgram& program, const SolverSettings& settings) {
  if (settings.tol_primal <= 0 || settings.tol_dual <= 0 || settings.tol_gap <= 0) {
    throw Error(ErrorCode::invalid_argument, "solver tolerances must be positive");
  }
  const long n = program.num_vars;
  const long m = program_rows(program);
  if (program.objective.size() != n) {
    throw Error(ErrorCode::invalid_argument, "objective length mismatch");
  }
  if (program.rhs.size() != m) {
    throw Error(ErrorCode::invalid_argument,
                "rhs length does not match cone rows");
  }

  CscData a = triplets_to_csc(program.triplets, m, n);

  std::vector<std::int32_t> tags;
  std::vector<std::int64_t> dims;
  tags.reserve(program.cones.size());
  for (const auto& block : program.cones) {
    if (block.dim <= 0) {
      throw Error(ErrorCode::invalid_argument, "cone block with nonpositive size");
    }
    tags.push_back(std::int32_t(block.tag));
    dims.push_back(block.dim);
  }

  std::vector<std::int64_t> p_colptr(n + 1, 0);

  ConicSolution sol;
  sol.x = Vec::Zero(n);
  sol.z = Vec::Zero(m);
  sol.s = Vec::Zero(m);
  double residuals[3] = {0, 0, 0};
  std::int64_t iters = 0;
  double solve_time = 0.0;
  double obj = 0.0;

  const double tol_feas = std::min(settings.tol_primal, settings.tol_dual);
  const int code = conic_backend_solve(
      n, m, nullptr, nullptr, p_colptr.data(), 0, program.objective.data(),
      a.nzval.data(), a.rowval.data(), a.colptr.data(),
      std::int64_t(a.nzval.size()), program.rhs.data(), tags.data(),
      dims.data(), std::int64_t(tags.size()), tol_feas, settings.tol_gap,
      settings.max_iter, settings.verbose ? 1 : 0, sol.x.data(), sol.z.data(),
      sol.s.data(), &obj, residuals, &iters, &solve_time);

  if (code == 5) {
    throw Error(ErrorCode::solver_failure, "conic backend rejected the program");
  }
  sol.value = obj;
  sol.res_primal = residuals[0];
  sol.res_dual = residuals[1];
  sol.gap = residuals[2];
  sol.iterations = iters;
  sol.solve_time = solve_time;
  switch (code) {
    case 0: sol.status = SolveStatus::optimal; break;
    case 1: sol.status = SolveStatus::infeasible; break;
    case 2: sol.status = SolveStatus::unbounded; break;
    default: sol.status = SolveStatus::numerical_limit; break;
  }
  return sol;
}

ConicSolution solve_with_floor_retry(const ConicProgram& program,
                                     const SolverSettings& settings) {
  ConicSolution sol = solve(program, settings);
  if (sol.status != SolveStatus::numerical_limit) return sol;
  const SolverSettings defaults;
  SolverSettings relaxed = settings;
  const double feas_req = std::min(settings.tol_primal, settings.tol_dual);
  relaxed.tol_primal = relaxed.tol_dual =
      std::clamp(10.0 * std::max(sol.res_primal, sol.res_dual), feas_req,
                 defaults.tol_primal);
  relaxed.tol_gap =
      std::clamp(10.0 * sol.gap, settings.tol_gap, defaults.tol_gap);
  const ConicSolution second = solve(program, relaxed);
  return second.status == SolveStatus::optimal ? second : sol;
}

Vec block_dual(const ConicProgram& program, const ConicSolution& solution,
               std::size_t block_index) {
  if (block_index >= program.cones.size()) {
    throw Error(ErrorCode::invalid_argument, "cone block index out of range");
  }
  long offset = 0;
  for (std::size_t k = 0; k < block_index; ++k) {
    offset += cone_rows(program.cones[k]);
  }
  return solution.z.segment(offset, cone_rows(program.cones[block_index]));
}

std::map<std::pair<long, long>, double> optimal_value_gradient(
    const ConicProgram& program, const ConicSolution& solution,
    const std::string& kind) {
  if (solution.status != SolveStatus::optimal) {
    throw Error(ErrorCode::gradient_unavailable,
                std::string("gradient requires optimal status, got ") +
                    solve_status_name(solution.status));
  }
  std::map<std::pair<long, long>, double> grad;
  for (const auto& tag : program.tags) {
    if (tag.kind != kind) continue;
    double d = 0.0;
    switch (tag.target) {
      case TagTarget::mat: d = solution.z(tag.row) * solution.x(tag.col); break;
      case TagTarget::rhs: d = -solution.z(tag.row); break;
      case TagTarget::obj: d = solution.x(tag.col); break;
    }
    grad[{tag.outer, tag.inner}] += tag.scale * d;
  }
  return grad;
}

FiniteDiffReport finite_diff_check(
    const std::function<ConicProgram(double)>& builder, double w, double h,
    const SolverSettings& settings) {
  if (h == 0.0) {
    throw Error(ErrorCode::invalid_argument, "finite difference step must be nonzero");
  }
  const ConicProgram base = builder(w);
  const ConicSolution sol = solve(base, settings);
  if (sol.status != SolveStatus::optimal) {
    throw Error(ErrorCode::check_inconclusive, "base solve not optimal");
  }
  double analytic = 0.0;
  for (const auto& [key, val] : optimal_value_gradient(base, sol, "w")) {
    (void)key;
    analytic += val;
  }
  const ConicSolution up = solve(builder(w + h), settings);
  const ConicSolution dn = solve(builder(w - h), settings);
  if (up.status != SolveStatus::optimal || dn.status != SolveStatus::optimal) {
    throw Error(ErrorCode::check_inconclusive, "perturbed solve not optimal");
  }
  FiniteDiffReport report;
  report.analytic = analytic;
  report.fd = (up.value - dn.value) / (2.0 * h);
  report.abs_err = std::abs(report.analytic - report.fd);
  report.rel_err = report.abs_err / std::max(1.0, std::abs(report.fd));
  return report;
}

nlohmann::json program_to_json(const ConicProgram& program) {
  nlohmann::json out;
  out["num_vars"] = program.num_vars;
  out["objective"] = std::vector<double>(
      program.objective.data(), program.objective.data() + program.objective.size());
  out["rhs"] = std::vector<double>(program.rhs.data(),
                                   program.rhs.data() + program.rhs.size());
  nlohmann::json cones = nlohmann::json::array();
  for (const auto& block : program.cones) {
    const char* name = "";
    switch (block.tag) {
      case ConeTag::zero: name = "zero"; break;
      case ConeTag::nonneg: name = "nonneg"; break;
      case ConeTag::soc: name = "soc"; break;
      case ConeTag::psd: name = "psd"; break;
    }
    cones.push_back({{"cone", name}, {"dim", block.dim}});
  }
  out["cones"] = cones;
  nlohmann::json triplets = nlohmann::json::array();
  for (const auto& t : program.triplets) {
    triplets.push_back({t.row, t.col, t.val});
  }
  out["triplets"] = triplets;
  return out;
}

}  // namespace stepcert
