#include "stepcert/pep.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <utility>

namespace stepcert {
namespace {

constexpr double kRoot2 = 1.4142135623730951;

// Appends the svec row of a symmetric coefficient matrix plus the F part.
void append_inner_product_row(std::vector<Triplet>& triplets, long row,
                              const Mat& A, const Vec& b, long tri) {
  const long dim = A.rows();
  for (long j = 0; j < dim; ++j) {
    for (long i = 0; i <= j; ++i) {
      const double val = (i == j) ? A(i, j) : kRoot2 * A(i, j);
      if (val != 0.0) triplets.push_back({row, svec_index(i, j), val});
    }
  }
  for (long f = 0; f < b.size(); ++f) {
    if (b(f) != 0.0) triplets.push_back({row, tri + f, b(f)});
  }
}

void append_theta_tags(std::vector<DataTag>& tags, long param, long row,
                       const Mat& dA, double row_scale) {
  const long dim = dA.rows();
  for (long j = 0; j < dim; ++j) {
    for (long i = 0; i <= j; ++i) {
      const double val =
          row_scale * ((i == j) ? dA(i, j) : kRoot2 * dA(i, j));
      if (val != 0.0) {
        tags.push_back({"theta", param, 0, val, TagTarget::mat, row,
                        svec_index(i, j)});
      }
    }
  }
}

PepCertificate extract_certificate(const PepAssembly& assembly,
                                   const ConicSolution& solution,
                                   const PsdBlockSet& blocks) {
  if (solution.status == SolveStatus::unbounded) {
    throw Error(ErrorCode::invalid_class,
                "worst-case problem is unbounded; the function class or "
                "initial condition leaves the loss uncapped");
  }
  if (solution.status != SolveStatus::optimal) {
    throw Error(ErrorCode::solver_failure,
                std::string("worst-case solve ended ") +
                    solve_status_name(solution.status));
  }
  const long M = static_cast<long>(assembly.lmi_row.size());
  PepCertificate cert;
  cert.value = -solution.value;
  cert.tau = solution.z(assembly.initial_row);
  cert.y = Vec(M);
  for (long m = 0; m < M; ++m) {
    const double z = solution.z(assembly.lmi_row[m]);
    // A merged pair's free multiplier splits into its nonnegative halves.
    cert.y(m) = assembly.lmi_pair[m]
                    ? std::max(assembly.lmi_sign[m] * z, 0.0)
                    : z;
  }
  for (std::size_t b = 0; b < blocks.blocks.size(); ++b) {
    cert.block_duals.push_back(
        smat(block_dual(assembly.program, solution,
                        assembly.first_block_cone + b),
             blocks.blocks[b].side));
  }
  cert.res_primal = solution.res_primal;
  cert.res_dual = solution.res_dual;
  cert.gap = solution.gap;
  cert.iterations = solution.iterations;
  cert.solve_time = solution.solve_time;
  return cert;
}

}  // namespace

const char* function_class_name(FunctionClass function_class) {
  switch (function_class) {
    case FunctionClass::quadratic: return "quadratic";
    case FunctionClass::smooth_strongly_convex:
      return "smooth_strongly_convex";
    case FunctionClass::composite: return "composite";
    case FunctionClass::saddle: return "saddle";
  }
  return "unknown";
}

ClassConfig family_class_config(const CertificationFamily& family,
                                bool with_jacobian) {
  ClassConfig config;
  config.function_class = family.function_class;
  config.mu = family.mu;
  config.L = family.L;
  config.initial_bound = family.initial_bound;
  config.op_bound = family.op_bound;
  config.with_jacobian = with_jacobian;
  return config;
}

PepObjective family_objective(const CertificationFamily& family,
                              const BasisLayout& layout,
                              const InitialCondition& init) {
  const LossObjective loss =
      family.weighted_loss ? weighted_loss_objective(layout, family.weight_base)
                           : terminal_loss_objective(layout);
  return make_pep_objective(layout, loss, init);
}

AlgoKind family_algo_kind(FunctionClass function_class) {
  switch (function_class) {
    case FunctionClass::quadratic:
    case FunctionClass::smooth_strongly_convex:
      return AlgoKind::gd;
    case FunctionClass::composite: return AlgoKind::ista;
    case FunctionClass::saddle: return AlgoKind::pdhg;
  }
  throw Error(ErrorCode::invalid_class, "unknown function class");
}

PepAssembly assemble_pep_program(const LmiSet& lmis,
                                 const PsdBlockSet& blocks,
                                 const PepObjective& objective,
                                 const ConstraintJacobians* jac) {
  const long dim = objective.A_obj.rows();
  const long fdim = objective.b_obj.size();
  const long tri = tri_size(dim);
  const long M = lmis.lmi_count();

  // Adjacent "...+"/"...-" halves describe one equality; fold each pair into
  // a single zero-cone row so the cone constraints keep a strict interior.
  std::vector<bool> in_pair(M, false);
  std::vector<bool> is_minus(M, false);
  std::vector<long> pair_leads;
  for (long m = 0; m + 1 < M; ++m) {
    if (in_pair[m]) continue;
    const ConstraintLabel& a = lmis.labels[m];
    const ConstraintLabel& b = lmis.labels[m + 1];
    if (!a.family.empty() && a.family.back() == '+' &&
        b.family ==
            a.family.substr(0, a.family.size() - 1) + "-" &&
        a.i == b.i && a.j == b.j) {
      in_pair[m] = in_pair[m + 1] = true;
      is_minus[m + 1] = true;
      pair_leads.push_back(m);
    }
  }

  PepAssembly out;
  ConicProgram& program = out.program;
  program.num_vars = tri + fdim;
  program.objective = Vec::Zero(program.num_vars);
  program.objective.head(tri) = -svec(objective.A_obj);
  program.objective.tail(fdim) = -objective.b_obj;

  out.lmi_row.assign(M, 0);
  out.lmi_sign.assign(M, 1);
  out.lmi_pair.assign(M, false);

  long rows = 0;
  const long n_eq = static_cast<long>(pair_leads.size());
  if (n_eq > 0) {
    program.cones.push_back({ConeTag::zero, n_eq});
    for (long p = 0; p < n_eq; ++p) {
      const long m = pair_leads[p];
      append_inner_product_row(program.triplets, rows + p, lmis.A[m],
                               lmis.b[m], tri);
      out.lmi_row[m] = rows + p;
      out.lmi_row[m + 1] = rows + p;
      out.lmi_pair[m] = out.lmi_pair[m + 1] = true;
      out.lmi_sign[m + 1] = -1;
    }
    rows += n_eq;
  }

  long n_ineq = 0;
  for (long m = 0; m < M; ++m) {
    if (!in_pair[m]) ++n_ineq;
  }
  program.cones.push_back({ConeTag::nonneg, 1 + n_ineq});
  out.initial_row = rows;
  append_inner_product_row(program.triplets, rows, objective.A0, objective.b0,
                           tri);
  {
    long r = rows + 1;
    for (long m = 0; m < M; ++m) {
      if (in_pair[m]) continue;
      append_inner_product_row(program.triplets, r, lmis.A[m], lmis.b[m],
                               tri);
      out.lmi_row[m] = r++;
    }
  }
  rows += 1 + n_ineq;

  out.gram_cone = static_cast<long>(program.cones.size());
  program.cones.push_back({ConeTag::psd, dim});
  for (long r = 0; r < tri; ++r) {
    program.triplets.push_back({rows + r, r, -1.0});
  }
  rows += tri;

  out.first_block_cone = static_cast<long>(program.cones.size());
  std::vector<long> block_base;
  for (const PsdBlock& block : blocks.blocks) {
    block_base.push_back(rows);
    program.cones.push_back({ConeTag::psd, block.side});
    for (long l = 0; l < block.side; ++l) {
      for (long k = 0; k <= l; ++k) {
        const long row = rows + svec_index(k, l);
        const double scale = (k == l) ? 1.0 : kRoot2;
        const Mat& C = block.C[k * block.side + l];
        const Vec& d = block.d[k * block.side + l];
        append_inner_product_row(program.triplets, row, Mat(-scale * C),
                                 Vec(-scale * d), tri);
      }
    }
    rows += tri_size(block.side);
  }

  program.rhs = Vec::Zero(rows);
  program.rhs(out.initial_row) = -objective.c0;

  if (jac != nullptr) {
    const long n_params = static_cast<long>(jac->dA.size());
    for (long p = 0; p < n_params; ++p) {
      for (long m = 0; m < M; ++m) {
        // A merged "-" half would double its pair's contribution; skip it.
        if (is_minus[m]) continue;
        append_theta_tags(program.tags, p, out.lmi_row[m], jac->dA[p][m],
                          1.0);
      }
      const PsdBlockSet& dblocks = jac->dblocks[p];
      for (std::size_t b = 0; b < dblocks.blocks.size(); ++b) {
        const PsdBlock& dblock = dblocks.blocks[b];
        for (long l = 0; l < dblock.side; ++l) {
          for (long k = 0; k <= l; ++k) {
            const long row = block_base[b] + svec_index(k, l);
            const double scale = (k == l) ? 1.0 : kRoot2;
            append_theta_tags(program.tags, p, row,
                              dblock.C[k * dblock.side + l], -scale);
          }
        }
      }
    }
  }
  return out;
}

PepCertificate solve_pep(const LmiSet& lmis, const PsdBlockSet& blocks,
                         const PepObjective& objective,
                         const SolverSettings& settings) {
  const PepAssembly assembly =
      assemble_pep_program(lmis, blocks, objective, nullptr);
  const ConicSolution solution =
      solve_with_floor_retry(assembly.program, settings);
  return extract_certificate(assembly, solution, blocks);
}

PepCertificate certify_schedule(const StepSchedule& schedule,
                                const CertificationFamily& family,
                                const SolverSettings& settings) {
  const BasisLayout layout =
      make_basis_layout(family_algo_kind(family.function_class), schedule.K);
  const ClassSystem system =
      build_class_system(layout, schedule, family_class_config(family, false));
  const PepObjective objective =
      family_objective(family, layout, system.init);
  PepCertificate cert =
      solve_pep(system.lmis, system.blocks, objective, settings);
  cert.theta = schedule.values;
  return cert;
}

Vec worst_case_gradient(const StepSchedule& schedule,
                        const CertificationFamily& family,
                        const SolverSettings& settings, double* value_out) {
  const BasisLayout layout =
      make_basis_layout(family_algo_kind(family.function_class), schedule.K);
  const ClassSystem system =
      build_class_system(layout, schedule, family_class_config(family, true));
  const PepObjective objective = family_objective(family, layout, system.init);
  const PepAssembly assembly = assemble_pep_program(
      system.lmis, system.blocks, objective, &system.jac);
  const ConicSolution solution =
      solve_with_floor_retry(assembly.program, settings);
  const PepCertificate cert =
      extract_certificate(assembly, solution, system.blocks);
  if (value_out != nullptr) *value_out = cert.value;

  const auto pooled =
      optimal_value_gradient(assembly.program, solution, "theta");
  Vec gradient = Vec::Zero(schedule_param_count(schedule));
  for (const auto& [key, dv] : pooled) gradient(key.first) = -dv;
  return gradient;
}

nlohmann::json certificate_to_json(const PepCertificate& certificate,
                                   const CertificationFamily& family,
                                   const SolverSettings& settings) {
  nlohmann::json j;
  j["theta"] = std::vector<double>(certificate.theta.data(),
                                   certificate.theta.data() +
                                       certificate.theta.size());
  j["value"] = certificate.value;
  j["multipliers"]["tau"] = certificate.tau;
  j["multipliers"]["y"] =
      std::vector<double>(certificate.y.data(),
                          certificate.y.data() + certificate.y.size());
  j["family"] = {{"function_class",
                  function_class_name(family.function_class)},
                 {"mu", family.mu},
                 {"L", family.L},
                 {"initial_bound", family.initial_bound},
                 {"op_bound", family.op_bound},
                 {"weighted_loss", family.weighted_loss},
                 {"weight_base", family.weight_base}};
  j["settings"] = {{"tol_primal", settings.tol_primal},
                   {"tol_dual", settings.tol_dual},
                   {"tol_gap", settings.tol_gap},
                   {"max_iter", settings.max_iter}};
  j["residuals"] = {{"primal", certificate.res_primal},
                    {"dual", certificate.res_dual},
                    {"gap", certificate.gap}};
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ",
                std::gmtime(&now));
  j["timestamp"] = stamp;
  return j;
}

}  // namespace stepcert
