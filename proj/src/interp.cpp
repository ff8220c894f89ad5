#include "stepcert/interp.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <map>

namespace stepcert {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Mat outer_sym(const Vec& a, const Vec& b) {
  return 0.5 * (a * b.transpose() + b * a.transpose());
}

Vec unit_col(const BasisLayout& layout, const std::string& role) {
  return Vec::Unit(layout.column_count(), layout.column_index(role));
}

Vec unit_f(const BasisLayout& layout, const std::string& name) {
  return Vec::Unit(layout.f_count(), layout.f_index(name));
}

std::string num(long k) { return std::to_string(k); }

// One interpolated function: point ids (-1 = optimum), position and
// (sub)gradient coefficients, F selections, and position derivatives.
struct PointSet {
  std::vector<long> ids;
  std::vector<Vec> pos;
  std::vector<Vec> grad;
  std::vector<Vec> fsel;
  std::vector<std::vector<Vec>> dpos;  // [param][point]

  long find(long id) const {
    for (std::size_t a = 0; a < ids.size(); ++a) {
      if (ids[a] == static_cast<long>(id)) return static_cast<long>(a);
    }
    throw Error(ErrorCode::invalid_argument, "unknown interpolation point");
  }
};

PointSet make_points(const CoefficientVectors& coeffs,
                     const std::string& family) {
  const BasisLayout& lay = coeffs.layout;
  const long K = lay.K;
  const long dim = lay.column_count();
  const long fdim = lay.f_count();
  const Vec zero = Vec::Zero(dim);
  const Vec fzero = Vec::Zero(fdim);
  const long np = coeffs.n_params;

  PointSet ps;
  auto push = [&](long id, const Vec& pos, const Vec& grad, const Vec& fsel) {
    ps.ids.push_back(id);
    ps.pos.push_back(pos);
    ps.grad.push_back(grad);
    ps.fsel.push_back(fsel);
  };

  if (family == "f") {
    push(-1, zero, zero, fzero);
    for (long k = 0; k <= K; ++k) {
      push(k, coeffs.x[k], unit_col(lay, "g" + num(k)),
           unit_f(lay, "f" + num(k)));
    }
  } else if (family == "h") {
    push(-1, zero, unit_col(lay, "gh*"), fzero);
    for (long k = 0; k <= K; ++k) {
      push(k, coeffs.x[k], unit_col(lay, "gh" + num(k)),
           unit_f(lay, "h" + num(k)));
    }
  } else if (family == "l1") {
    push(-1, zero, -unit_col(lay, "gh*"), fzero);
    for (long k = 1; k <= K; ++k) {
      push(k, coeffs.x[k], unit_col(lay, "s" + num(k)),
           unit_f(lay, "l1_" + num(k)));
    }
  } else if (family == "phi") {
    push(-1, zero, zero, fzero);
    for (long k = 1; k <= K; ++k) {
      push(k, coeffs.x[k], unit_col(lay, "sf" + num(k)),
           unit_f(lay, "phi" + num(k)));
    }
  } else if (family == "gamma") {
    push(-1, zero, zero, fzero);
    for (long k = 1; k <= K; ++k) {
      push(k, coeffs.u[k], unit_col(lay, "sg" + num(k)),
           unit_f(lay, "gamma" + num(k)));
    }
  } else {
    throw Error(ErrorCode::invalid_argument,
                "unknown interpolation family " + family);
  }

  ps.dpos.resize(np);
  for (long p = 0; p < np; ++p) {
    ps.dpos[p].reserve(ps.ids.size());
    for (long id : ps.ids) {
      if (id < 0) {
        ps.dpos[p].push_back(zero);
      } else if (family == "gamma") {
        ps.dpos[p].push_back(coeffs.du[p][id]);
      } else {
        ps.dpos[p].push_back(coeffs.dx[p][id]);
      }
    }
  }
  return ps;
}

struct ThgCoef {
  double inv_L;
  double ratio;
  double kappa;
};

ThgCoef thg_coef(double mu, double L) {
  ThgCoef c;
  c.inv_L = std::isinf(L) ? 0.0 : 1.0 / L;
  c.ratio = mu * c.inv_L;
  c.kappa = 1.0 / (2.0 * (1.0 - c.ratio));
  return c;
}

// Interpolation inequality for pair (a, b), as value = Tr(S'G) + t'F >= 0:
//   f_a - f_b - <g_b, x_a - x_b>
//     - kappa * [ (1/L)|g_a - g_b|^2 + mu|x_a - x_b|^2
//                 - (2mu/L)<g_b - g_a, x_b - x_a> ]
Mat thg_matrix(const PointSet& ps, long a, long b, double mu, double L) {
  const ThgCoef c = thg_coef(mu, L);
  const Vec dc = ps.pos[a] - ps.pos[b];
  const Vec dg = ps.grad[a] - ps.grad[b];
  Mat s = -outer_sym(ps.grad[b], dc);
  s -= c.kappa * c.inv_L * outer_sym(dg, dg);
  s -= c.kappa * mu * outer_sym(dc, dc);
  s += 2.0 * c.kappa * c.ratio * outer_sym(dg, dc);
  return s;
}

Vec thg_fcoef(const PointSet& ps, long a, long b) {
  return ps.fsel[a] - ps.fsel[b];
}

Mat thg_matrix_deriv(const PointSet& ps, long a, long b, double mu, double L,
                     long p) {
  const ThgCoef c = thg_coef(mu, L);
  const Vec dc = ps.pos[a] - ps.pos[b];
  const Vec dg = ps.grad[a] - ps.grad[b];
  const Vec dcp = ps.dpos[p][a] - ps.dpos[p][b];
  Mat s = -outer_sym(ps.grad[b], dcp);
  s -= 2.0 * c.kappa * mu * outer_sym(dc, dcp);
  s += 2.0 * c.kappa * c.ratio * outer_sym(dg, dcp);
  return s;
}

void check_thg_class(double mu, double L) {
  if (!(mu >= 0.0) || !(mu < L)) {
    throw Error(ErrorCode::invalid_class,
                "interpolation class needs 0 <= mu < L");
  }
}

void check_quad_class(double mu, double L) {
  if (!(mu > 0.0) || !(mu <= L) || std::isinf(L)) {
    throw Error(ErrorCode::invalid_class,
                "quadratic class needs 0 < mu <= L < infinity");
  }
}

void append_thg_rows(LmiSet& out, const PointSet& ps,
                     const std::string& family, double mu, double L) {
  const long n = static_cast<long>(ps.ids.size());
  for (long a = 0; a < n; ++a) {
    for (long b = 0; b < n; ++b) {
      if (a == b) continue;
      out.A.push_back(-thg_matrix(ps, a, b, mu, L));
      out.b.push_back(-thg_fcoef(ps, a, b));
      out.labels.push_back({family, ps.ids[a], ps.ids[b], mu, L});
    }
  }
}

void append_equality(LmiSet& out, const std::string& family, long i, long j,
                     double mu, double L, const Mat& s, const Vec& t) {
  out.A.push_back(-s);
  out.b.push_back(-t);
  out.labels.push_back({family + "+", i, j, mu, L});
  out.A.push_back(s);
  out.b.push_back(t);
  out.labels.push_back({family + "-", i, j, mu, L});
}

// quad symmetry pair value: <x_i, g_j> - <x_j, g_i>
Mat quad_sym_matrix(const CoefficientVectors& coeffs, long i, long j) {
  const BasisLayout& lay = coeffs.layout;
  return outer_sym(coeffs.x[i], unit_col(lay, "g" + num(j))) -
         outer_sym(coeffs.x[j], unit_col(lay, "g" + num(i)));
}

Mat quad_sym_matrix_deriv(const CoefficientVectors& coeffs, long i, long j,
                          long p) {
  const BasisLayout& lay = coeffs.layout;
  return outer_sym(coeffs.dx[p][i], unit_col(lay, "g" + num(j))) -
         outer_sym(coeffs.dx[p][j], unit_col(lay, "g" + num(i)));
}

// quad value equality: F_i - <x_i, g_i>/2
Mat quad_fval_matrix(const CoefficientVectors& coeffs, long i) {
  return -0.5 *
         outer_sym(coeffs.x[i], unit_col(coeffs.layout, "g" + num(i)));
}

Mat quad_fval_matrix_deriv(const CoefficientVectors& coeffs, long i, long p) {
  return -0.5 *
         outer_sym(coeffs.dx[p][i], unit_col(coeffs.layout, "g" + num(i)));
}

Mat quad_block_entry(const CoefficientVectors& coeffs, long k, long l,
                     double mu, double L) {
  const BasisLayout& lay = coeffs.layout;
  const Vec gk = unit_col(lay, "g" + num(k));
  const Vec gl = unit_col(lay, "g" + num(l));
  Mat c = 0.5 * (L + mu) *
          (outer_sym(gk, coeffs.x[l]) + outer_sym(gl, coeffs.x[k]));
  c -= outer_sym(gk, gl);
  c -= mu * L * outer_sym(coeffs.x[k], coeffs.x[l]);
  return c;
}

Mat quad_block_entry_deriv(const CoefficientVectors& coeffs, long k, long l,
                           double mu, double L, long p) {
  const BasisLayout& lay = coeffs.layout;
  const Vec gk = unit_col(lay, "g" + num(k));
  const Vec gl = unit_col(lay, "g" + num(l));
  Mat c = 0.5 * (L + mu) *
          (outer_sym(gk, coeffs.dx[p][l]) + outer_sym(gl, coeffs.dx[p][k]));
  c -= mu * L *
       (outer_sym(coeffs.dx[p][k], coeffs.x[l]) +
        outer_sym(coeffs.x[k], coeffs.dx[p][l]));
  return c;
}

// adjointness value: <Mxbar_k, u'_j> - <xbar'_k, Mtu_j>
Mat op_adj_matrix(const CoefficientVectors& coeffs, long k, long j) {
  const BasisLayout& lay = coeffs.layout;
  return outer_sym(unit_col(lay, "Mxbar" + num(k)), coeffs.u[j]) -
         outer_sym(coeffs.xbar[k - 1], unit_col(lay, "Mtu" + num(j)));
}

Mat op_adj_matrix_deriv(const CoefficientVectors& coeffs, long k, long j,
                        long p) {
  const BasisLayout& lay = coeffs.layout;
  return outer_sym(unit_col(lay, "Mxbar" + num(k)), coeffs.du[p][j]) -
         outer_sym(coeffs.dxbar[p][k - 1], unit_col(lay, "Mtu" + num(j)));
}

Mat op_fwd_entry(const CoefficientVectors& coeffs, long k, long l,
                 double bound) {
  const BasisLayout& lay = coeffs.layout;
  return bound * bound * outer_sym(coeffs.xbar[k], coeffs.xbar[l]) -
         outer_sym(unit_col(lay, "Mxbar" + num(k + 1)),
                   unit_col(lay, "Mxbar" + num(l + 1)));
}

Mat op_fwd_entry_deriv(const CoefficientVectors& coeffs, long k, long l,
                       double bound, long p) {
  return bound * bound *
         (outer_sym(coeffs.dxbar[p][k], coeffs.xbar[l]) +
          outer_sym(coeffs.xbar[k], coeffs.dxbar[p][l]));
}

Mat op_bwd_entry(const CoefficientVectors& coeffs, long k, long l,
                 double bound) {
  const BasisLayout& lay = coeffs.layout;
  return bound * bound * outer_sym(coeffs.u[k], coeffs.u[l]) -
         outer_sym(unit_col(lay, "Mtu" + num(k)),
                   unit_col(lay, "Mtu" + num(l)));
}

Mat op_bwd_entry_deriv(const CoefficientVectors& coeffs, long k, long l,
                       double bound, long p) {
  return bound * bound *
         (outer_sym(coeffs.du[p][k], coeffs.u[l]) +
          outer_sym(coeffs.u[k], coeffs.du[p][l]));
}

void check_layout_match(const BasisLayout& layout,
                        const CoefficientVectors& coeffs) {
  if (layout != coeffs.layout) {
    throw Error(ErrorCode::invalid_argument,
                "coefficient vectors were built for a different layout");
  }
}

}  // namespace

CoefficientVectors build_coefficients(const BasisLayout& layout,
                                      const StepSchedule& schedule) {
  if (schedule.kind != layout.kind || schedule.K != layout.K) {
    throw Error(ErrorCode::invalid_argument,
                "schedule does not match the layout");
  }
  const long np = schedule_param_count(schedule);
  if (schedule.values.size() != np) {
    throw Error(ErrorCode::invalid_argument,
                "schedule value count does not match its horizon");
  }
  const long K = layout.K;
  const long dim = layout.column_count();
  const Vec zero = Vec::Zero(dim);

  CoefficientVectors cv;
  cv.layout = layout;
  cv.n_params = np;
  cv.x.assign(K + 1, zero);
  cv.dx.assign(np, std::vector<Vec>(K + 1, zero));

  switch (layout.kind) {
    case AlgoKind::gd: {
      cv.x[0] = unit_col(layout, "x0");
      for (long k = 0; k < K; ++k) {
        const Vec eg = unit_col(layout, "g" + num(k));
        cv.x[k + 1] = cv.x[k] - schedule.values(k) * eg;
        for (long p = 0; p < np; ++p) {
          cv.dx[p][k + 1] = cv.dx[p][k];
          if (p == k) cv.dx[p][k + 1] -= eg;
        }
      }
      break;
    }
    case AlgoKind::ista: {
      cv.x[0] = unit_col(layout, "x0");
      for (long k = 0; k < K; ++k) {
        const Vec dir = unit_col(layout, "gh" + num(k)) +
                        unit_col(layout, "s" + num(k + 1));
        cv.x[k + 1] = cv.x[k] - schedule.values(k) * dir;
        for (long p = 0; p < np; ++p) {
          cv.dx[p][k + 1] = cv.dx[p][k];
          if (p == k) cv.dx[p][k + 1] -= dir;
        }
      }
      break;
    }
    case AlgoKind::pdhg: {
      cv.u.assign(K + 1, zero);
      cv.du.assign(np, std::vector<Vec>(K + 1, zero));
      cv.xbar.assign(K, zero);
      cv.dxbar.assign(np, std::vector<Vec>(K, zero));
      cv.x[0] = unit_col(layout, "x0");
      cv.u[0] = unit_col(layout, "u0");
      for (long k = 0; k < K; ++k) {
        const double tau = schedule.values(3 * k);
        const double rho = schedule.values(3 * k + 1);
        const double sigma = schedule.values(3 * k + 2);
        const Vec primal_dir = unit_col(layout, "Mtu" + num(k)) -
                               unit_col(layout, "sf" + num(k + 1));
        const Vec dual_dir = unit_col(layout, "Mxbar" + num(k + 1)) +
                             unit_col(layout, "sg" + num(k + 1));
        cv.x[k + 1] = cv.x[k] + tau * primal_dir;
        cv.xbar[k] = (1.0 + rho) * cv.x[k + 1] - rho * cv.x[k];
        cv.u[k + 1] = cv.u[k] - sigma * dual_dir;
        for (long p = 0; p < np; ++p) {
          cv.dx[p][k + 1] = cv.dx[p][k];
          if (p == 3 * k) cv.dx[p][k + 1] += primal_dir;
          cv.dxbar[p][k] = (1.0 + rho) * cv.dx[p][k + 1] - rho * cv.dx[p][k];
          if (p == 3 * k + 1) cv.dxbar[p][k] += cv.x[k + 1] - cv.x[k];
          cv.du[p][k + 1] = cv.du[p][k];
          if (p == 3 * k + 2) cv.du[p][k + 1] -= dual_dir;
        }
      }
      break;
    }
  }
  return cv;
}

double lmi_value(const LmiSet& set, long m, const Mat& G, const Vec& F) {
  return -set.A[m].cwiseProduct(G).sum() - set.b[m].dot(F);
}

Vec lmi_values(const LmiSet& set, const Mat& G, const Vec& F) {
  Vec v(set.lmi_count());
  for (long m = 0; m < set.lmi_count(); ++m) v(m) = lmi_value(set, m, G, F);
  return v;
}

Mat psd_block_value(const PsdBlock& block, const Mat& G, const Vec& F) {
  Mat h(block.side, block.side);
  for (long k = 0; k < block.side; ++k) {
    for (long l = 0; l < block.side; ++l) {
      h(k, l) = block.C[k * block.side + l].cwiseProduct(G).sum() +
                block.d[k * block.side + l].dot(F);
    }
  }
  return h;
}

LmiSet smooth_strongly_convex_lmis(long K, double mu, double L,
                                   const BasisLayout& layout,
                                   const CoefficientVectors& coeffs) {
  check_thg_class(mu, L);
  check_layout_match(layout, coeffs);
  if (layout.kind != AlgoKind::gd || layout.K != K) {
    throw Error(ErrorCode::invalid_argument,
                "layout lacks gradient roles for this constraint set");
  }
  LmiSet out;
  append_thg_rows(out, make_points(coeffs, "f"), "f", mu, L);
  return out;
}

std::pair<LmiSet, PsdBlockSet> quadratic_class_constraints(
    long K, double mu, double L, const BasisLayout& layout,
    const CoefficientVectors& coeffs) {
  check_quad_class(mu, L);
  check_layout_match(layout, coeffs);
  if (layout.kind != AlgoKind::gd || layout.K != K) {
    throw Error(ErrorCode::invalid_argument,
                "layout lacks gradient roles for this constraint set");
  }
  LmiSet lmis;
  const long fdim = layout.f_count();
  for (long i = 0; i <= K; ++i) {
    for (long j = i + 1; j <= K; ++j) {
      append_equality(lmis, "sym", i, j, mu, L,
                      quad_sym_matrix(coeffs, i, j), Vec::Zero(fdim));
    }
  }
  for (long i = 0; i <= K; ++i) {
    append_equality(lmis, "fval", i, i, mu, L, quad_fval_matrix(coeffs, i),
                    unit_f(layout, "f" + num(i)));
  }

  PsdBlock block;
  block.name = "quad";
  block.side = K + 1;
  block.p1 = mu;
  block.p2 = L;
  const Vec fzero = Vec::Zero(fdim);
  for (long k = 0; k <= K; ++k) {
    for (long l = 0; l <= K; ++l) {
      block.C.push_back(quad_block_entry(coeffs, k, l, mu, L));
      block.d.push_back(fzero);
    }
  }
  PsdBlockSet blocks;
  blocks.blocks.push_back(std::move(block));
  return {std::move(lmis), std::move(blocks)};
}

std::pair<LmiSet, PsdBlockSet> linear_operator_constraints(
    double L_bound, const BasisLayout& layout,
    const CoefficientVectors& coeffs) {
  if (!(L_bound > 0.0)) {
    throw Error(ErrorCode::invalid_argument,
                "operator norm bound must be positive");
  }
  check_layout_match(layout, coeffs);
  if (layout.kind != AlgoKind::pdhg) {
    throw Error(ErrorCode::invalid_argument,
                "layout lacks operator-product roles");
  }
  const long K = layout.K;
  const long fdim = layout.f_count();
  LmiSet lmis;
  for (long k = 1; k <= K; ++k) {
    for (long j = 0; j < K; ++j) {
      append_equality(lmis, "adj", k, j, 0.0, kInf,
                      op_adj_matrix(coeffs, k, j), Vec::Zero(fdim));
    }
  }
  PsdBlockSet blocks;
  const Vec fzero = Vec::Zero(fdim);
  PsdBlock fwd;
  fwd.name = "op_fwd";
  fwd.side = K;
  fwd.p1 = L_bound;
  for (long k = 0; k < K; ++k) {
    for (long l = 0; l < K; ++l) {
      fwd.C.push_back(op_fwd_entry(coeffs, k, l, L_bound));
      fwd.d.push_back(fzero);
    }
  }
  PsdBlock bwd;
  bwd.name = "op_bwd";
  bwd.side = K;
  bwd.p1 = L_bound;
  for (long k = 0; k < K; ++k) {
    for (long l = 0; l < K; ++l) {
      bwd.C.push_back(op_bwd_entry(coeffs, k, l, L_bound));
      bwd.d.push_back(fzero);
    }
  }
  blocks.blocks.push_back(std::move(fwd));
  blocks.blocks.push_back(std::move(bwd));
  return {std::move(lmis), std::move(blocks)};
}

InitialCondition initial_condition(const BasisLayout& layout, double bound) {
  if (!(bound > 0.0)) {
    throw Error(ErrorCode::invalid_argument,
                "initial distance bound must be positive");
  }
  InitialCondition init;
  const Vec ex = unit_col(layout, "x0");
  init.A = ex * ex.transpose();
  if (layout.kind == AlgoKind::pdhg) {
    const Vec eu = unit_col(layout, "u0");
    init.A += eu * eu.transpose();
  }
  init.b = Vec::Zero(layout.f_count());
  init.c = -bound * bound;
  return init;
}

double initial_value(const InitialCondition& init, const Mat& G,
                     const Vec& F) {
  return init.A.cwiseProduct(G).sum() + init.b.dot(F) + init.c;
}

LossObjective terminal_loss_objective(const BasisLayout& layout) {
  LossObjective obj;
  obj.A_obj = Mat::Zero(layout.column_count(), layout.column_count());
  obj.b_obj = Vec::Zero(layout.f_count());
  const long K = layout.K;
  switch (layout.kind) {
    case AlgoKind::gd:
      obj.b_obj += unit_f(layout, "f" + num(K));
      break;
    case AlgoKind::ista:
      if (K < 1) {
        throw Error(ErrorCode::invalid_argument,
                    "terminal composite loss needs at least one step");
      }
      obj.b_obj += unit_f(layout, "h" + num(K));
      obj.b_obj += unit_f(layout, "l1_" + num(K));
      break;
    case AlgoKind::pdhg:
      if (K < 1) {
        throw Error(ErrorCode::invalid_argument,
                    "terminal saddle loss needs at least one step");
      }
      obj.b_obj += unit_f(layout, "phi" + num(K));
      obj.b_obj += unit_f(layout, "gamma" + num(K));
      break;
  }
  obj.lipschitz =
      std::sqrt(obj.A_obj.squaredNorm() + obj.b_obj.squaredNorm());
  return obj;
}

LossObjective weighted_loss_objective(const BasisLayout& layout,
                                      double base) {
  if (!(base > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "weight base must be positive");
  }
  LossObjective obj;
  obj.A_obj = Mat::Zero(layout.column_count(), layout.column_count());
  obj.b_obj = Vec::Zero(layout.f_count());
  const long K = layout.K;
  for (long k = 1; k <= K; ++k) {
    const double w = std::pow(base, double(K - k));
    switch (layout.kind) {
      case AlgoKind::gd:
        obj.b_obj += w * unit_f(layout, "f" + num(k));
        break;
      case AlgoKind::ista:
        obj.b_obj += w * unit_f(layout, "h" + num(k));
        obj.b_obj += w * unit_f(layout, "l1_" + num(k));
        break;
      case AlgoKind::pdhg:
        obj.b_obj += w * unit_f(layout, "phi" + num(k));
        obj.b_obj += w * unit_f(layout, "gamma" + num(k));
        break;
    }
  }
  obj.lipschitz =
      std::sqrt(obj.A_obj.squaredNorm() + obj.b_obj.squaredNorm());
  return obj;
}

double loss_value(const LossObjective& objective, const Mat& G,
                  const Vec& F) {
  return objective.A_obj.cwiseProduct(G).sum() + objective.b_obj.dot(F);
}

PepObjective make_pep_objective(const BasisLayout& layout,
                                const LossObjective& loss,
                                const InitialCondition& init) {
  if (loss.A_obj.rows() != layout.column_count() ||
      loss.b_obj.size() != layout.f_count() ||
      init.A.rows() != layout.column_count()) {
    throw Error(ErrorCode::invalid_argument,
                "objective pieces do not match the layout");
  }
  PepObjective obj;
  obj.A_obj = loss.A_obj;
  obj.b_obj = loss.b_obj;
  obj.A0 = init.A;
  obj.b0 = init.b;
  obj.c0 = init.c;
  obj.lipschitz = loss.lipschitz;
  return obj;
}

ConstraintJacobians lmi_jacobian(const LmiSet& lmis, const PsdBlockSet& blocks,
                                 const CoefficientVectors& coeffs) {
  const long np = coeffs.n_params;
  const long rows = lmis.lmi_count();
  const long fdim = coeffs.layout.f_count();

  std::map<std::string, PointSet> point_sets;
  auto points_for = [&](const std::string& family) -> const PointSet& {
    auto it = point_sets.find(family);
    if (it == point_sets.end()) {
      it = point_sets.emplace(family, make_points(coeffs, family)).first;
    }
    return it->second;
  };

  ConstraintJacobians jac;
  jac.dA.assign(np, {});
  jac.db.assign(np, std::vector<Vec>(rows, Vec::Zero(fdim)));
  for (long p = 0; p < np; ++p) {
    jac.dA[p].reserve(rows);
    for (long m = 0; m < rows; ++m) {
      const ConstraintLabel& lab = lmis.labels[m];
      Mat ds;
      double sign = 1.0;
      if (lab.family == "f" || lab.family == "h" || lab.family == "l1" ||
          lab.family == "phi" || lab.family == "gamma") {
        const PointSet& ps = points_for(lab.family);
        ds = thg_matrix_deriv(ps, ps.find(lab.i), ps.find(lab.j), lab.mu,
                              lab.L, p);
      } else if (lab.family == "sym+" || lab.family == "sym-") {
        ds = quad_sym_matrix_deriv(coeffs, lab.i, lab.j, p);
        sign = lab.family.back() == '+' ? 1.0 : -1.0;
      } else if (lab.family == "fval+" || lab.family == "fval-") {
        ds = quad_fval_matrix_deriv(coeffs, lab.i, p);
        sign = lab.family.back() == '+' ? 1.0 : -1.0;
      } else if (lab.family == "adj+" || lab.family == "adj-") {
        ds = op_adj_matrix_deriv(coeffs, lab.i, lab.j, p);
        sign = lab.family.back() == '+' ? 1.0 : -1.0;
      } else {
        throw Error(ErrorCode::invalid_argument,
                    "unknown constraint family " + lab.family);
      }
      jac.dA[p].push_back(-sign * ds);
    }
  }

  jac.dblocks.assign(np, PsdBlockSet{});
  for (long p = 0; p < np; ++p) {
    for (const PsdBlock& block : blocks.blocks) {
      PsdBlock d;
      d.name = block.name;
      d.side = block.side;
      d.p1 = block.p1;
      d.p2 = block.p2;
      for (long k = 0; k < block.side; ++k) {
        for (long l = 0; l < block.side; ++l) {
          if (block.name == "quad") {
            d.C.push_back(
                quad_block_entry_deriv(coeffs, k, l, block.p1, block.p2, p));
          } else if (block.name == "op_fwd") {
            d.C.push_back(op_fwd_entry_deriv(coeffs, k, l, block.p1, p));
          } else if (block.name == "op_bwd") {
            d.C.push_back(op_bwd_entry_deriv(coeffs, k, l, block.p1, p));
          } else {
            throw Error(ErrorCode::invalid_argument,
                        "unknown block name " + block.name);
          }
          d.d.push_back(Vec::Zero(fdim));
        }
      }
      jac.dblocks[p].blocks.push_back(std::move(d));
    }
  }
  return jac;
}

ClassSystem build_class_system(const BasisLayout& layout,
                               const StepSchedule& schedule,
                               const ClassConfig& config) {
  const auto kind_matches = [&] {
    switch (config.function_class) {
      case FunctionClass::quadratic:
      case FunctionClass::smooth_strongly_convex:
        return layout.kind == AlgoKind::gd;
      case FunctionClass::composite:
        return layout.kind == AlgoKind::ista;
      case FunctionClass::saddle:
        return layout.kind == AlgoKind::pdhg;
    }
    return false;
  }();
  if (!kind_matches) {
    throw Error(ErrorCode::invalid_class,
                "function class does not match the trajectory family");
  }

  ClassSystem sys;
  sys.coeffs = build_coefficients(layout, schedule);
  switch (config.function_class) {
    case FunctionClass::quadratic: {
      auto [lmis, blocks] = quadratic_class_constraints(
          layout.K, config.mu, config.L, layout, sys.coeffs);
      sys.lmis = std::move(lmis);
      sys.blocks = std::move(blocks);
      break;
    }
    case FunctionClass::smooth_strongly_convex:
      sys.lmis = smooth_strongly_convex_lmis(layout.K, config.mu, config.L,
                                             layout, sys.coeffs);
      break;
    case FunctionClass::composite: {
      check_thg_class(config.mu, config.L);
      append_thg_rows(sys.lmis, make_points(sys.coeffs, "h"), "h", config.mu,
                      config.L);
      append_thg_rows(sys.lmis, make_points(sys.coeffs, "l1"), "l1", 0.0,
                      kInf);
      break;
    }
    case FunctionClass::saddle: {
      append_thg_rows(sys.lmis, make_points(sys.coeffs, "phi"), "phi", 0.0,
                      kInf);
      append_thg_rows(sys.lmis, make_points(sys.coeffs, "gamma"), "gamma",
                      0.0, kInf);
      auto [lmis, blocks] =
          linear_operator_constraints(config.op_bound, layout, sys.coeffs);
      for (long m = 0; m < lmis.lmi_count(); ++m) {
        sys.lmis.A.push_back(std::move(lmis.A[m]));
        sys.lmis.b.push_back(std::move(lmis.b[m]));
        sys.lmis.labels.push_back(lmis.labels[m]);
      }
      sys.blocks = std::move(blocks);
      break;
    }
  }
  sys.init = initial_condition(layout, config.initial_bound);
  if (config.with_jacobian) {
    sys.jac = lmi_jacobian(sys.lmis, sys.blocks, sys.coeffs);
  }
  return sys;
}

SlackReport min_slack(const LmiSet& lmis, const PsdBlockSet& blocks,
                      const Mat& G, const Vec& F) {
  SlackReport report;
  report.min_lmi_slack = kInf;
  for (long m = 0; m < lmis.lmi_count(); ++m) {
    report.min_lmi_slack = std::min(report.min_lmi_slack,
                                    lmi_value(lmis, m, G, F));
  }
  report.min_block_eig = kInf;
  for (const PsdBlock& block : blocks.blocks) {
    if (block.side == 0) continue;
    Eigen::SelfAdjointEigenSolver<Mat> es(psd_block_value(block, G, F));
    report.min_block_eig =
        std::min(report.min_block_eig, es.eigenvalues().minCoeff());
  }
  return report;
}

}  // namespace stepcert
