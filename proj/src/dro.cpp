#include "stepcert/dro.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <tuple>
#include <utility>

namespace stepcert {
namespace {

constexpr double kRoot2 = 1.4142135623730951;
constexpr double kParamSlack = 1e-9;
constexpr double kDistanceSlack = 1e-6;

double loss_at(const PepObjective& objective, const LiftedSample& sample) {
  return objective.A_obj.cwiseProduct(sample.G).sum() +
         objective.b_obj.dot(sample.F);
}

// Equality halves arrive as adjacent "...+"/"...-" label pairs; each pair
// folds into one free multiplier variable carrying the "+" coefficients.
struct PairScan {
  std::vector<bool> is_minus;
  std::vector<long> y_var_of_lmi;
  std::vector<int> y_sign;
  std::vector<bool> y_pair;
  std::vector<long> lead_of_var;  // y variable -> coefficient-providing LMI
  std::vector<bool> var_pair;     // y variable -> free (equality) multiplier
  long n_y_vars = 0;
  long n_ineq_vars = 0;
};

PairScan scan_equality_pairs(const LmiSet& lmis) {
  const long M = lmis.lmi_count();
  PairScan scan;
  scan.is_minus.assign(M, false);
  scan.y_var_of_lmi.assign(M, -1);
  scan.y_sign.assign(M, 1);
  scan.y_pair.assign(M, false);
  std::vector<bool> in_pair(M, false);
  for (long m = 0; m + 1 < M; ++m) {
    if (in_pair[m]) continue;
    const ConstraintLabel& a = lmis.labels[m];
    const ConstraintLabel& b = lmis.labels[m + 1];
    if (!a.family.empty() && a.family.back() == '+' &&
        b.family == a.family.substr(0, a.family.size() - 1) + "-" &&
        a.i == b.i && a.j == b.j) {
      in_pair[m] = in_pair[m + 1] = true;
      scan.is_minus[m + 1] = true;
    }
  }
  for (long m = 0; m < M; ++m) {
    if (scan.is_minus[m]) continue;
    const long var = scan.n_y_vars++;
    scan.lead_of_var.push_back(m);
    scan.var_pair.push_back(in_pair[m]);
    if (!in_pair[m]) ++scan.n_ineq_vars;
    scan.y_var_of_lmi[m] = var;
    scan.y_pair[m] = in_pair[m];
    if (in_pair[m]) {
      scan.y_var_of_lmi[m + 1] = var;
      scan.y_sign[m + 1] = -1;
      scan.y_pair[m + 1] = true;
    }
  }
  return scan;
}

void validate_program_inputs(const std::vector<LiftedSample>& samples,
                             const PsdBlockSet& blocks,
                             const PepObjective& objective,
                             const DroConfig& config) {
  if (config.epsilon < 0.0) {
    throw Error(ErrorCode::invalid_argument, "negative ball radius");
  }
  if (config.N < 1 || samples.empty()) {
    throw Error(ErrorCode::invalid_argument, "at least one sample required");
  }
  if (static_cast<long>(samples.size()) != config.N) {
    throw Error(ErrorCode::invalid_argument,
                "sample count differs from the configured N");
  }
  for (const LiftedSample& sample : samples) {
    if (sample.layout != samples.front().layout) {
      throw Error(ErrorCode::invalid_argument, "sample layouts differ");
    }
  }
  const long side = objective.A_obj.rows();
  const long fdim = objective.b_obj.size();
  if (samples.front().G.rows() != side ||
      samples.front().F.size() != fdim) {
    throw Error(ErrorCode::invalid_argument,
                "sample dimensions do not match the objective");
  }
  if (config.extended != !blocks.blocks.empty()) {
    throw Error(ErrorCode::invalid_argument,
                "extended flag disagrees with the interpolation blocks");
  }
}

// Pushes the svec of a symmetric coefficient matrix down one column, i.e.
// A[row0 + svec_index(i, j), col] = sign * svec(S).
void push_svec_column(std::vector<Triplet>& triplets, long row0, long col,
                      const Mat& S, double sign) {
  const long n = S.rows();
  for (long j = 0; j < n; ++j) {
    for (long i = 0; i <= j; ++i) {
      const double val = sign * ((i == j) ? S(i, j) : kRoot2 * S(i, j));
      if (val != 0.0) triplets.push_back({row0 + svec_index(i, j), col, val});
    }
  }
}

void push_svec_column_tags(std::vector<DataTag>& tags, long param, long row0,
                           long col, const Mat& dS, double sign) {
  const long n = dS.rows();
  for (long j = 0; j < n; ++j) {
    for (long i = 0; i <= j; ++i) {
      const double val = sign * ((i == j) ? dS(i, j) : kRoot2 * dS(i, j));
      if (val != 0.0) {
        tags.push_back({"theta", param, 0, val, TagTarget::mat,
                        row0 + svec_index(i, j), col});
      }
    }
  }
}

// Spreads the svec row of a symmetric coefficient plus its F part across one
// sample's (svec(G), F) columns, as the primal-form support rows need.
void push_sample_row(std::vector<Triplet>& triplets, long row, long col0,
                     const Mat& A, const Vec& b, long tri, double scale) {
  const long n = A.rows();
  for (long j = 0; j < n; ++j) {
    for (long i = 0; i <= j; ++i) {
      const double val = scale * ((i == j) ? A(i, j) : kRoot2 * A(i, j));
      if (val != 0.0) {
        triplets.push_back({row, col0 + svec_index(i, j), val});
      }
    }
  }
  for (long f = 0; f < b.size(); ++f) {
    if (b(f) != 0.0) triplets.push_back({row, col0 + tri + f, scale * b(f)});
  }
}

}  // namespace

long Minibatch::size() const {
  return static_cast<long>(quadratic.size() + lasso.size() + tv.size());
}

DroDualAssembly assemble_dro_dual(const std::vector<LiftedSample>& samples,
                                  const LmiSet& lmis,
                                  const PsdBlockSet& blocks,
                                  const PepObjective& objective,
                                  const DroConfig& config,
                                  const ConstraintJacobians* jac,
                                  const std::vector<LiftedJacobian>* anchor_jac) {
  validate_program_inputs(samples, blocks, objective, config);
  const long N = config.N;
  const long side = objective.A_obj.rows();
  const long fdim = objective.b_obj.size();
  const long tri = tri_size(side);
  const bool has_lambda = config.epsilon > 0.0;
  const PairScan scan = scan_equality_pairs(lmis);
  const long n_y = scan.n_y_vars;

  DroDualAssembly out;
  out.side = side;
  out.fdim = fdim;
  out.tri = tri;
  out.n_y_vars = n_y;
  out.y_var_of_lmi = scan.y_var_of_lmi;
  out.y_sign = scan.y_sign;
  out.y_pair = scan.y_pair;
  long h_total = 0;
  for (const PsdBlock& block : blocks.blocks) {
    out.block_tri.push_back(tri_size(block.side));
    h_total += tri_size(block.side);
  }

  // Per-sample variable block: [s; tau; y; svec(X); Y; svec(H) per block].
  const long stride = 2 + n_y + tri + fdim + h_total;
  out.sample_stride = stride;
  ConicProgram& program = out.program;
  program.num_vars = N * stride + (has_lambda ? 1 : 0);
  out.lambda_col = has_lambda ? N * stride : -1;
  program.objective = Vec::Zero(program.num_vars);
  for (long i = 0; i < N; ++i) program.objective(i * stride) = 1.0 / N;

  const long zero_rows = N * fdim;
  const long nonneg_per_sample = 2 + scan.n_ineq_vars;
  const long nonneg_rows = N * nonneg_per_sample;
  const long soc_dim = 1 + tri + fdim;
  const long soc_rows = has_lambda ? N * soc_dim : 0;
  const long nonneg_base = zero_rows;
  const long soc_base = nonneg_base + nonneg_rows;
  const long psdz_base = soc_base + soc_rows;
  const long psdh_base = psdz_base + N * tri;
  const long total_rows = psdh_base + N * h_total;

  if (zero_rows > 0) program.cones.push_back({ConeTag::zero, zero_rows});
  program.cones.push_back({ConeTag::nonneg, nonneg_rows});
  if (has_lambda) {
    for (long i = 0; i < N; ++i) {
      program.cones.push_back({ConeTag::soc, soc_dim});
    }
  }
  for (long i = 0; i < N; ++i) program.cones.push_back({ConeTag::psd, side});
  for (long i = 0; i < N; ++i) {
    for (const PsdBlock& block : blocks.blocks) {
      program.cones.push_back({ConeTag::psd, block.side});
    }
  }
  program.rhs = Vec::Zero(total_rows);

  const Vec svec_A0 = svec(objective.A0);
  const Vec svec_Aobj = svec(objective.A_obj);
  std::vector<Vec> svec_Am(n_y);
  for (long v = 0; v < n_y; ++v) svec_Am[v] = svec(lmis.A[scan.lead_of_var[v]]);

  for (long i = 0; i < N; ++i) {
    const long base = i * stride;
    const long s_col = base;
    const long tau_col = base + 1;
    const long y_col = base + 2;
    const long x_col = y_col + n_y;
    const long yv_col = x_col + tri;
    const long h_col = yv_col + fdim;

    // F-part equality: tau b0 + sum_v y_v b_v - sum H_kl d_kl - b_obj - Y = 0.
    for (long f = 0; f < fdim; ++f) {
      const long row = i * fdim + f;
      program.rhs(row) = objective.b_obj(f);
      if (objective.b0(f) != 0.0) {
        program.triplets.push_back({row, tau_col, objective.b0(f)});
      }
      for (long v = 0; v < n_y; ++v) {
        const double bv = lmis.b[scan.lead_of_var[v]](f);
        if (bv != 0.0) program.triplets.push_back({row, y_col + v, bv});
      }
      long h_off = h_col;
      for (const PsdBlock& block : blocks.blocks) {
        for (long l = 0; l < block.side; ++l) {
          for (long k = 0; k <= l; ++k) {
            const double scale = (k == l) ? 1.0 : kRoot2;
            const double dv = block.d[k * block.side + l](f);
            if (dv != 0.0) {
              program.triplets.push_back(
                  {row, h_off + svec_index(k, l), -scale * dv});
            }
          }
        }
        h_off += tri_size(block.side);
      }
      program.triplets.push_back({row, yv_col + f, -1.0});
    }

    // Epigraph: -c0 tau - <(X, Y), anchor> + eps lambda <= s.
    const long epi_row = nonneg_base + i * nonneg_per_sample;
    program.triplets.push_back({epi_row, s_col, -1.0});
    if (objective.c0 != 0.0) {
      program.triplets.push_back({epi_row, tau_col, -objective.c0});
    }
    const Vec anchor_G = svec(samples[i].G);
    for (long j = 0; j < tri; ++j) {
      if (anchor_G(j) != 0.0) {
        program.triplets.push_back({epi_row, x_col + j, -anchor_G(j)});
      }
    }
    for (long f = 0; f < fdim; ++f) {
      if (samples[i].F(f) != 0.0) {
        program.triplets.push_back({epi_row, yv_col + f, -samples[i].F(f)});
      }
    }
    if (has_lambda) {
      program.triplets.push_back({epi_row, out.lambda_col, config.epsilon});
    }

    program.triplets.push_back({epi_row + 1, tau_col, -1.0});
    {
      long r = epi_row + 2;
      for (long v = 0; v < n_y; ++v) {
        if (!scan.var_pair[v]) program.triplets.push_back({r++, y_col + v, -1.0});
      }
    }

    // |(X, Y)| <= lambda.
    if (has_lambda) {
      const long r0 = soc_base + i * soc_dim;
      program.triplets.push_back({r0, out.lambda_col, -1.0});
      for (long j = 0; j < tri; ++j) {
        program.triplets.push_back({r0 + 1 + j, x_col + j, -1.0});
      }
      for (long f = 0; f < fdim; ++f) {
        program.triplets.push_back({r0 + 1 + tri + f, yv_col + f, -1.0});
      }
    }

    // tau A0 + sum_v y_v A_v - sum H_kl C_kl - A_obj - X psd.
    const long rz = psdz_base + i * tri;
    for (long j = 0; j < tri; ++j) {
      program.rhs(rz + j) = -svec_Aobj(j);
      if (svec_A0(j) != 0.0) {
        program.triplets.push_back({rz + j, tau_col, -svec_A0(j)});
      }
      program.triplets.push_back({rz + j, x_col + j, 1.0});
    }
    for (long v = 0; v < n_y; ++v) {
      for (long j = 0; j < tri; ++j) {
        if (svec_Am[v](j) != 0.0) {
          program.triplets.push_back({rz + j, y_col + v, -svec_Am[v](j)});
        }
      }
    }
    {
      long h_off = h_col;
      for (const PsdBlock& block : blocks.blocks) {
        for (long l = 0; l < block.side; ++l) {
          for (long k = 0; k <= l; ++k) {
            const double scale = (k == l) ? 1.0 : kRoot2;
            push_svec_column(program.triplets, rz,
                             h_off + svec_index(k, l),
                             block.C[k * block.side + l], scale);
          }
        }
        h_off += tri_size(block.side);
      }
    }

    // H psd, per block.
    {
      long h_off = h_col;
      long rh = psdh_base + i * h_total;
      for (const PsdBlock& block : blocks.blocks) {
        const long bt = tri_size(block.side);
        for (long j = 0; j < bt; ++j) {
          program.triplets.push_back({rh + j, h_off + j, -1.0});
        }
        h_off += bt;
        rh += bt;
      }
    }

    if (jac != nullptr) {
      const long n_params = static_cast<long>(jac->dA.size());
      for (long p = 0; p < n_params; ++p) {
        for (long v = 0; v < n_y; ++v) {
          push_svec_column_tags(program.tags, p, rz, y_col + v,
                                jac->dA[p][scan.lead_of_var[v]], -1.0);
        }
        const PsdBlockSet& dblocks = jac->dblocks[p];
        long h_off = h_col;
        for (const PsdBlock& dblock : dblocks.blocks) {
          for (long l = 0; l < dblock.side; ++l) {
            for (long k = 0; k <= l; ++k) {
              const double scale = (k == l) ? 1.0 : kRoot2;
              push_svec_column_tags(program.tags, p, rz,
                                    h_off + svec_index(k, l),
                                    dblock.C[k * dblock.side + l], scale);
            }
          }
          h_off += tri_size(dblock.side);
        }
      }
    }
    if (anchor_jac != nullptr) {
      const LiftedJacobian& aj = (*anchor_jac)[i];
      for (long p = 0; p < aj.n_params; ++p) {
        const Vec dG = svec(aj.dG[p]);
        for (long j = 0; j < tri; ++j) {
          if (dG(j) != 0.0) {
            program.tags.push_back({"theta", p, 0, -dG(j), TagTarget::mat,
                                    epi_row, x_col + j});
          }
        }
        for (long f = 0; f < fdim; ++f) {
          if (aj.dF[p](f) != 0.0) {
            program.tags.push_back({"theta", p, 0, -aj.dF[p](f),
                                    TagTarget::mat, epi_row, yv_col + f});
          }
        }
      }
    }
  }
  return out;
}

ConicProgram build_dro_dual(const std::vector<LiftedSample>& samples,
                            const LmiSet& lmis, const PsdBlockSet& blocks,
                            const PepObjective& objective,
                            const DroConfig& config) {
  return assemble_dro_dual(samples, lmis, blocks, objective, config).program;
}

ConicProgram build_dro_primal(const std::vector<LiftedSample>& samples,
                              const LmiSet& lmis, const PsdBlockSet& blocks,
                              const PepObjective& objective,
                              const DroConfig& config) {
  validate_program_inputs(samples, blocks, objective, config);
  if (config.epsilon <= 0.0) {
    throw Error(ErrorCode::invalid_argument,
                "the transport-constrained form needs a positive radius");
  }
  const long N = config.N;
  const long side = objective.A_obj.rows();
  const long fdim = objective.b_obj.size();
  const long tri = tri_size(side);
  const PairScan scan = scan_equality_pairs(lmis);
  long n_eq = 0;
  for (bool pair : scan.var_pair) n_eq += pair ? 1 : 0;
  const long n_ineq = scan.n_ineq_vars;
  long h_total = 0;
  for (const PsdBlock& block : blocks.blocks) h_total += tri_size(block.side);

  // Per-sample variables [svec(G); F; t], samples consecutive.
  const long stride = tri + fdim + 1;
  ConicProgram program;
  program.num_vars = N * stride;
  program.objective = Vec::Zero(program.num_vars);
  for (long i = 0; i < N; ++i) {
    program.objective.segment(i * stride, tri) = -svec(objective.A_obj) / N;
    program.objective.segment(i * stride + tri, fdim) = -objective.b_obj / N;
  }

  const long zero_rows = N * n_eq;
  const long nonneg_rows = N * (1 + n_ineq) + 1;  // trailing transport budget
  const long soc_dim = 1 + tri + fdim;
  const long nonneg_base = zero_rows;
  const long budget_row = nonneg_base + nonneg_rows - 1;
  const long soc_base = nonneg_base + nonneg_rows;
  const long psdg_base = soc_base + N * soc_dim;
  const long psdh_base = psdg_base + N * tri;
  const long total_rows = psdh_base + N * h_total;

  if (zero_rows > 0) program.cones.push_back({ConeTag::zero, zero_rows});
  program.cones.push_back({ConeTag::nonneg, nonneg_rows});
  for (long i = 0; i < N; ++i) program.cones.push_back({ConeTag::soc, soc_dim});
  for (long i = 0; i < N; ++i) program.cones.push_back({ConeTag::psd, side});
  for (long i = 0; i < N; ++i) {
    for (const PsdBlock& block : blocks.blocks) {
      program.cones.push_back({ConeTag::psd, block.side});
    }
  }
  program.rhs = Vec::Zero(total_rows);
  program.rhs(budget_row) = N * config.epsilon;

  for (long i = 0; i < N; ++i) {
    const long col0 = i * stride;
    const long t_col = col0 + tri + fdim;
    {
      long r = i * n_eq;
      for (long v = 0; v < scan.n_y_vars; ++v) {
        if (!scan.var_pair[v]) continue;
        const long m = scan.lead_of_var[v];
        push_sample_row(program.triplets, r++, col0, lmis.A[m], lmis.b[m],
                        tri, 1.0);
      }
    }
    {
      long r = nonneg_base + i * (1 + n_ineq);
      program.rhs(r) = -objective.c0;
      push_sample_row(program.triplets, r++, col0, objective.A0, objective.b0,
                      tri, 1.0);
      for (long v = 0; v < scan.n_y_vars; ++v) {
        if (scan.var_pair[v]) continue;
        const long m = scan.lead_of_var[v];
        push_sample_row(program.triplets, r++, col0, lmis.A[m], lmis.b[m],
                        tri, 1.0);
      }
    }
    program.triplets.push_back({budget_row, t_col, 1.0});

    // (t_i; svec(G_i) - svec(anchor); F_i - anchor) in the second-order cone.
    const long r0 = soc_base + i * soc_dim;
    program.triplets.push_back({r0, t_col, -1.0});
    const Vec anchor_G = svec(samples[i].G);
    for (long j = 0; j < tri; ++j) {
      program.rhs(r0 + 1 + j) = -anchor_G(j);
      program.triplets.push_back({r0 + 1 + j, col0 + j, -1.0});
    }
    for (long f = 0; f < fdim; ++f) {
      program.rhs(r0 + 1 + tri + f) = -samples[i].F(f);
      program.triplets.push_back({r0 + 1 + tri + f, col0 + tri + f, -1.0});
    }

    const long rg = psdg_base + i * tri;
    for (long j = 0; j < tri; ++j) {
      program.triplets.push_back({rg + j, col0 + j, -1.0});
    }

    long rh = psdh_base + i * h_total;
    for (const PsdBlock& block : blocks.blocks) {
      for (long l = 0; l < block.side; ++l) {
        for (long k = 0; k <= l; ++k) {
          const double scale = (k == l) ? 1.0 : kRoot2;
          push_sample_row(program.triplets, rh + svec_index(k, l), col0,
                          block.C[k * block.side + l],
                          block.d[k * block.side + l], tri, -scale);
        }
      }
      rh += tri_size(block.side);
    }
  }
  return program;
}

namespace {

void check_batch(const Minibatch& batch, AlgoKind kind) {
  const bool q = !batch.quadratic.empty();
  const bool l = !batch.lasso.empty();
  const bool t = !batch.tv.empty();
  if (int(q) + int(l) + int(t) != 1) {
    throw Error(ErrorCode::invalid_argument,
                "minibatch must hold exactly one instance family");
  }
  const bool matches = (kind == AlgoKind::gd && q) ||
                       (kind == AlgoKind::ista && l) ||
                       (kind == AlgoKind::pdhg && t);
  if (!matches) {
    throw Error(ErrorCode::invalid_argument,
                "minibatch instances do not match the family's algorithm");
  }
}

void validate_instance(const QuadraticInstance& instance,
                       const CertificationFamily& family) {
  if (instance.class_params.mu < family.mu - kParamSlack ||
      instance.class_params.L > family.L + kParamSlack) {
    throw Error(ErrorCode::invalid_instance,
                "instance curvature range leaves the family");
  }
}

void validate_instance(const LassoInstance& instance,
                       const CertificationFamily& family) {
  if (instance.smooth_L > family.L + kParamSlack) {
    throw Error(ErrorCode::invalid_instance,
                "instance smoothness exceeds the family bound");
  }
}

void validate_instance(const TvLpInstance& instance,
                       const CertificationFamily& family) {
  if (instance.M_max > family.op_bound + kParamSlack) {
    throw Error(ErrorCode::invalid_instance,
                "instance operator norm exceeds the family bound");
  }
}

double start_distance(const QuadraticInstance& instance, const Optimum& ref) {
  return (instance.x0 - ref.x_star).norm();
}

double start_distance(const LassoInstance& instance, const Optimum& ref) {
  return (instance.x0 - ref.x_star).norm();
}

double start_distance(const TvLpInstance& instance, const Optimum& ref) {
  return std::sqrt((instance.x0 - ref.x_star).squaredNorm() +
                   (instance.u0 - ref.u_star).squaredNorm());
}

struct AnchorBundle {
  std::vector<LiftedSample> anchors;
  std::vector<LiftedJacobian> anchor_jacs;
  double empirical = 0.0;
};

template <typename Instance>
void lift_one(const Instance& instance, const StepSchedule& schedule,
              const CertificationFamily& family, const PepObjective& objective,
              LossKind loss_kind, bool with_jacobian, AnchorBundle& out) {
  validate_instance(instance, family);
  Trajectory trajectory;
  TrajectoryJacobian jacobian;
  if (with_jacobian) {
    std::tie(trajectory, jacobian) = run_with_jacobian(instance, schedule);
  } else {
    trajectory = run_algorithm(instance, schedule);
  }
  const Optimum reference = reference_optimum(instance);
  eval_loss_into(trajectory, reference, loss_kind);
  if (start_distance(instance, reference) >
      family.initial_bound + kDistanceSlack) {
    throw Error(ErrorCode::invalid_instance,
                "instance starts outside the family radius");
  }
  out.anchors.push_back(lift(trajectory));
  if (with_jacobian) {
    out.anchor_jacs.push_back(lift_jacobian(trajectory, jacobian));
  }
  out.empirical += loss_at(objective, out.anchors.back());
}

AnchorBundle build_anchors(const Minibatch& batch,
                           const StepSchedule& schedule,
                           const CertificationFamily& family,
                           const PepObjective& objective,
                           bool with_jacobian) {
  const AlgoKind kind = family_algo_kind(family.function_class);
  const LossKind loss_kind = kind == AlgoKind::pdhg ? LossKind::saddle_gap
                                                    : LossKind::function_gap;
  AnchorBundle out;
  for (const QuadraticInstance& instance : batch.quadratic) {
    lift_one(instance, schedule, family, objective, loss_kind, with_jacobian,
             out);
  }
  for (const LassoInstance& instance : batch.lasso) {
    lift_one(instance, schedule, family, objective, loss_kind, with_jacobian,
             out);
  }
  for (const TvLpInstance& instance : batch.tv) {
    lift_one(instance, schedule, family, objective, loss_kind, with_jacobian,
             out);
  }
  out.empirical /= static_cast<double>(out.anchors.size());
  return out;
}

struct RiskSetup {
  BasisLayout layout;
  ClassSystem system;
  PepObjective objective;
  AnchorBundle bundle;
  DroConfig config;
};

RiskSetup prepare_risk(const StepSchedule& schedule, const Minibatch& batch,
                       const CertificationFamily& family,
                       const DroConfig& config, bool with_jacobian) {
  validate_schedule(schedule);
  const AlgoKind kind = family_algo_kind(family.function_class);
  if (schedule.kind != kind) {
    throw Error(ErrorCode::invalid_argument,
                "schedule algorithm does not match the family");
  }
  check_batch(batch, kind);
  RiskSetup setup;
  setup.layout = make_basis_layout(kind, schedule.K);
  setup.system = build_class_system(setup.layout, schedule,
                                    family_class_config(family, with_jacobian));
  setup.objective = family_objective(family, setup.layout, setup.system.init);
  setup.bundle =
      build_anchors(batch, schedule, family, setup.objective, with_jacobian);
  setup.config = config;
  setup.config.N = batch.size();
  setup.config.extended = !setup.system.blocks.blocks.empty();
  return setup;
}

}  // namespace

DroCertificate dro_risk(const StepSchedule& schedule,
                        const Minibatch& minibatch,
                        const CertificationFamily& family,
                        const DroConfig& config,
                        const SolverSettings& settings) {
  RiskSetup setup = prepare_risk(schedule, minibatch, family, config, false);
  DroCertificate cert;
  cert.epsilon = setup.config.epsilon;
  cert.lipschitz = setup.objective.lipschitz;
  cert.theta = schedule.values;
  cert.empirical = setup.bundle.empirical;
  cert.anchors = std::move(setup.bundle.anchors);
  if (config.with_pep) {
    try {
      const PepCertificate pep = solve_pep(setup.system.lmis,
                                           setup.system.blocks,
                                           setup.objective, settings);
      cert.pep_value = pep.value;
      cert.pep_available = true;
    } catch (const Error&) {
      // The sandwich companion stays unavailable; the risk itself is intact.
    }
  }
  if (setup.config.epsilon == 0.0) {
    // Zero radius pins the ball to the empirical distribution; the value is
    // analytic and the transport potentials decouple.
    cert.risk = cert.empirical;
    return cert;
  }
  const DroDualAssembly assembly =
      assemble_dro_dual(cert.anchors, setup.system.lmis, setup.system.blocks,
                        setup.objective, setup.config);
  const ConicSolution solution =
      solve_with_floor_retry(assembly.program, settings);
  // The minimization is the dual form, so an empty feasible set there means
  // the worst-case side is uncapped.
  if (solution.status == SolveStatus::infeasible) {
    throw Error(ErrorCode::invalid_class,
                "distributionally robust program is infeasible; the function "
                "class or initial condition leaves the loss uncapped");
  }
  if (solution.status != SolveStatus::optimal) {
    throw Error(ErrorCode::solver_failure,
                std::string("distributionally robust solve ended ") +
                    solve_status_name(solution.status));
  }
  cert.risk = solution.value;
  cert.lambda = solution.x(assembly.lambda_col);
  const long M = setup.system.lmis.lmi_count();
  for (long i = 0; i < setup.config.N; ++i) {
    const long base = i * assembly.sample_stride;
    DroSampleDual dual;
    dual.s = solution.x(base);
    dual.tau = solution.x(base + 1);
    dual.y = Vec(M);
    for (long m = 0; m < M; ++m) {
      const double val = solution.x(base + 2 + assembly.y_var_of_lmi[m]);
      dual.y(m) = assembly.y_pair[m]
                      ? std::max(assembly.y_sign[m] * val, 0.0)
                      : val;
    }
    const long x_col = base + 2 + assembly.n_y_vars;
    dual.X = smat(solution.x.segment(x_col, assembly.tri), assembly.side);
    dual.Y = solution.x.segment(x_col + assembly.tri, assembly.fdim);
    long off = x_col + assembly.tri + assembly.fdim;
    for (std::size_t b = 0; b < setup.system.blocks.blocks.size(); ++b) {
      dual.H.push_back(smat(solution.x.segment(off, assembly.block_tri[b]),
                            setup.system.blocks.blocks[b].side));
      off += assembly.block_tri[b];
    }
    cert.duals.push_back(std::move(dual));
  }
  cert.res_primal = solution.res_primal;
  cert.res_dual = solution.res_dual;
  cert.gap = solution.gap;
  cert.iterations = solution.iterations;
  cert.solve_time = solution.solve_time;
  return cert;
}

Vec dro_risk_gradient(const StepSchedule& schedule,
                      const Minibatch& minibatch,
                      const CertificationFamily& family,
                      const DroConfig& config,
                      const SolverSettings& settings, double* risk_out) {
  RiskSetup setup = prepare_risk(schedule, minibatch, family, config, true);
  const long n_params = schedule_param_count(schedule);
  const long N = setup.config.N;
  if (setup.config.epsilon == 0.0) {
    // The risk is the mean anchor loss, so the gradient is the mean of the
    // loss functional contracted with each lift jacobian.
    if (risk_out != nullptr) *risk_out = setup.bundle.empirical;
    Vec gradient = Vec::Zero(n_params);
    for (long i = 0; i < N; ++i) {
      const LiftedJacobian& aj = setup.bundle.anchor_jacs[i];
      for (long p = 0; p < n_params; ++p) {
        gradient(p) +=
            (setup.objective.A_obj.cwiseProduct(aj.dG[p]).sum() +
             setup.objective.b_obj.dot(aj.dF[p])) /
            static_cast<double>(N);
      }
    }
    return gradient;
  }
  const DroDualAssembly assembly = assemble_dro_dual(
      setup.bundle.anchors, setup.system.lmis, setup.system.blocks,
      setup.objective, setup.config, &setup.system.jac,
      &setup.bundle.anchor_jacs);
  const ConicSolution solution =
      solve_with_floor_retry(assembly.program, settings);
  const auto pooled =
      optimal_value_gradient(assembly.program, solution, "theta");
  if (risk_out != nullptr) *risk_out = solution.value;
  Vec gradient = Vec::Zero(n_params);
  for (const auto& [key, dv] : pooled) gradient(key.first) += dv;
  return gradient;
}

nlohmann::json dro_certificate_to_json(const DroCertificate& certificate,
                                       const DroConfig& config,
                                       const SolverSettings& settings) {
  nlohmann::json j;
  j["risk"] = certificate.risk;
  j["epsilon"] = certificate.epsilon;
  j["N"] = static_cast<long>(certificate.anchors.size());
  j["extended"] = config.extended;
  j["lambda"] = certificate.lambda;
  j["theta"] = std::vector<double>(certificate.theta.data(),
                                   certificate.theta.data() +
                                       certificate.theta.size());
  j["sandwich"] = {{"empirical", certificate.empirical},
                   {"regularization_bound",
                    certificate.empirical +
                        certificate.epsilon * certificate.lipschitz}};
  if (certificate.pep_available) {
    j["sandwich"]["pep"] = certificate.pep_value;
  } else {
    j["sandwich"]["pep"] = nullptr;
  }
  j["duals"] = nlohmann::json::array();
  for (const DroSampleDual& dual : certificate.duals) {
    nlohmann::json d = {{"s", dual.s},
                        {"tau", dual.tau},
                        {"y_norm", dual.y.size() > 0 ? dual.y.norm() : 0.0},
                        {"X_norm", dual.X.size() > 0 ? dual.X.norm() : 0.0},
                        {"Y_norm", dual.Y.size() > 0 ? dual.Y.norm() : 0.0}};
    d["H_norms"] = nlohmann::json::array();
    for (const Mat& H : dual.H) d["H_norms"].push_back(H.norm());
    j["duals"].push_back(std::move(d));
  }
  j["residuals"] = {{"primal", certificate.res_primal},
                    {"dual", certificate.res_dual},
                    {"gap", certificate.gap}};
  j["settings"] = {{"tol_primal", settings.tol_primal},
                   {"tol_dual", settings.tol_dual},
                   {"tol_gap", settings.tol_gap},
                   {"max_iter", settings.max_iter}};
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ",
                std::gmtime(&now));
  j["timestamp"] = stamp;
  return j;
}

}  // namespace stepcert
