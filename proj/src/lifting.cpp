#include "stepcert/lifting.hpp"

#include <cmath>
#include <utility>

namespace stepcert {

namespace {

void require_complete(const Trajectory& t) {
  if (!t.has_reference) {
    throw Error(ErrorCode::invalid_argument,
                "trajectory has no attached reference; run eval_loss_into "
                "before lifting");
  }
  if (static_cast<long>(t.x.size()) != t.K + 1) {
    throw Error(ErrorCode::invalid_argument,
                "trajectory iterate count does not match its horizon");
  }
  if (t.kind == AlgoKind::ista && !t.A) {
    throw Error(ErrorCode::invalid_argument,
                "ista trajectory lacks problem data required for lifting");
  }
}

Mat symmetrized_gram(const Mat& p) {
  Mat g = p.transpose() * p;
  return 0.5 * (g + g.transpose());
}

Mat symmetrized_product(const Mat& dp, const Mat& p) {
  Mat g = dp.transpose() * p + p.transpose() * dp;
  return 0.5 * (g + g.transpose());
}

// Basis columns for one trajectory, split into the two pdhg sides; the dual
// block stays empty for the single-block families.
struct ColumnSet {
  Mat primal;
  Mat dual;
};

ColumnSet build_columns(const Trajectory& t) {
  const long K = t.K;
  ColumnSet cols;
  switch (t.kind) {
    case AlgoKind::gd: {
      const long n = t.x[0].size();
      cols.primal = Mat::Zero(n, K + 2);
      cols.primal.col(0) = t.x[0] - t.reference.x_star;
      for (long k = 0; k <= K; ++k) cols.primal.col(1 + k) = t.g[k];
      break;
    }
    case AlgoKind::ista: {
      const long n = t.x[0].size();
      const Mat& a = *t.A;
      const Vec gh_star = a.transpose() * (a * t.reference.x_star - t.b_data);
      cols.primal = Mat::Zero(n, 2 * K + 3);
      cols.primal.col(0) = t.x[0] - t.reference.x_star;
      cols.primal.col(1) = gh_star;
      for (long k = 0; k <= K; ++k) cols.primal.col(2 + k) = t.g[k];
      for (long k = 1; k <= K; ++k) {
        cols.primal.col(2 + K + k) = t.s[k - 1];
      }
      break;
    }
    case AlgoKind::pdhg: {
      const long n = t.x[0].size();
      const long m = t.u[0].size();
      const Vec mtu_star = t.M.transpose() * t.reference.u_star;
      const Vec mx_star = t.M * t.reference.x_star;
      cols.primal = Mat::Zero(n, 2 * K + 1);
      cols.dual = Mat::Zero(m, 2 * K + 1);
      cols.primal.col(0) = t.x[0] - t.reference.x_star;
      cols.dual.col(0) = t.u[0] - t.reference.u_star;
      for (long k = 0; k < K; ++k) {
        cols.primal.col(1 + k) = t.Mt_u[k] - mtu_star;
        cols.primal.col(1 + K + k) = t.sf[k] - mtu_star;
        cols.dual.col(1 + k) = t.M_xbar[k] - mx_star;
        cols.dual.col(1 + K + k) = t.sg[k] + mx_star;
      }
      break;
    }
  }
  return cols;
}

// Derivative of the basis columns with respect to schedule parameter p.
// Star and tilt shifts are schedule independent, so only recorded iterate
// derivatives appear.
ColumnSet build_column_derivatives(const Trajectory& t,
                                   const TrajectoryJacobian& j, long p) {
  const long K = t.K;
  ColumnSet cols;
  switch (t.kind) {
    case AlgoKind::gd: {
      const long n = t.x[0].size();
      cols.primal = Mat::Zero(n, K + 2);
      for (long k = 0; k <= K; ++k) cols.primal.col(1 + k) = j.dg[p][k];
      break;
    }
    case AlgoKind::ista: {
      const long n = t.x[0].size();
      cols.primal = Mat::Zero(n, 2 * K + 3);
      for (long k = 0; k <= K; ++k) cols.primal.col(2 + k) = j.dg[p][k];
      for (long k = 1; k <= K; ++k) {
        cols.primal.col(2 + K + k) = j.ds[p][k - 1];
      }
      break;
    }
    case AlgoKind::pdhg: {
      const long n = t.x[0].size();
      const long m = t.u[0].size();
      cols.primal = Mat::Zero(n, 2 * K + 1);
      cols.dual = Mat::Zero(m, 2 * K + 1);
      for (long k = 0; k < K; ++k) {
        cols.primal.col(1 + k) = j.dMt_u[p][k];
        cols.primal.col(1 + K + k) = j.dsf[p][k];
        cols.dual.col(1 + k) = j.dM_xbar[p][k];
        cols.dual.col(1 + K + k) = j.dsg[p][k];
      }
      break;
    }
  }
  return cols;
}

Vec build_f(const Trajectory& t) {
  const long K = t.K;
  switch (t.kind) {
    case AlgoKind::gd: {
      Vec f(K + 1);
      for (long k = 0; k <= K; ++k) f(k) = t.fvals[k] - t.reference.f_star;
      return f;
    }
    case AlgoKind::ista: {
      const double psi_star =
          t.lambda_reg * t.reference.x_star.lpNorm<1>();
      const double h_star = t.reference.f_star - psi_star;
      Vec f(2 * K + 1);
      for (long k = 0; k <= K; ++k) f(k) = t.hvals[k] - h_star;
      for (long k = 1; k <= K; ++k) f(K + k) = t.l1vals[k] - psi_star;
      return f;
    }
    case AlgoKind::pdhg: {
      const Vec mx_star = t.M * t.reference.x_star;
      const Vec dual_slope = t.q - mx_star;
      const double cx_star = t.c.dot(t.reference.x_star);
      Vec f(2 * K);
      for (long k = 1; k <= K; ++k) {
        f(k - 1) = t.cx[k] - cx_star -
                   t.reference.u_star.dot(t.Mx[k] - mx_star);
        f(K + k - 1) = -(t.u[k] - t.reference.u_star).dot(dual_slope);
      }
      return f;
    }
  }
  throw Error(ErrorCode::invalid_argument, "unknown algorithm kind");
}

Vec build_df(const Trajectory& t, const TrajectoryJacobian& j, long p) {
  const long K = t.K;
  switch (t.kind) {
    case AlgoKind::gd: {
      Vec f(K + 1);
      for (long k = 0; k <= K; ++k) f(k) = j.dfvals[p][k];
      return f;
    }
    case AlgoKind::ista: {
      Vec f(2 * K + 1);
      for (long k = 0; k <= K; ++k) f(k) = j.dhvals[p][k];
      for (long k = 1; k <= K; ++k) f(K + k) = j.dl1vals[p][k];
      return f;
    }
    case AlgoKind::pdhg: {
      const Vec dual_slope = t.q - t.M * t.reference.x_star;
      Vec f(2 * K);
      for (long k = 1; k <= K; ++k) {
        f(k - 1) = j.dcx[p][k] - t.reference.u_star.dot(j.dMx[p][k]);
        f(K + k - 1) = -j.du[p][k].dot(dual_slope);
      }
      return f;
    }
  }
  throw Error(ErrorCode::invalid_argument, "unknown algorithm kind");
}

Mat assemble_gram(const ColumnSet& cols, const BasisLayout& layout) {
  if (layout.primal_columns == 0) return symmetrized_gram(cols.primal);
  const long np = layout.primal_columns;
  const long nc = layout.column_count();
  Mat g = Mat::Zero(nc, nc);
  g.topLeftCorner(np, np) = symmetrized_gram(cols.primal);
  g.bottomRightCorner(nc - np, nc - np) = symmetrized_gram(cols.dual);
  return g;
}

Mat assemble_gram_derivative(const ColumnSet& cols, const ColumnSet& dcols,
                             const BasisLayout& layout) {
  if (layout.primal_columns == 0) {
    return symmetrized_product(dcols.primal, cols.primal);
  }
  const long np = layout.primal_columns;
  const long nc = layout.column_count();
  Mat g = Mat::Zero(nc, nc);
  g.topLeftCorner(np, np) = symmetrized_product(dcols.primal, cols.primal);
  g.bottomRightCorner(nc - np, nc - np) =
      symmetrized_product(dcols.dual, cols.dual);
  return g;
}

}  // namespace

long BasisLayout::column_index(const std::string& role) const {
  for (long i = 0; i < column_count(); ++i) {
    if (columns[i] == role) return i;
  }
  throw Error(ErrorCode::invalid_argument,
              "unknown basis column role: " + role);
}

long BasisLayout::f_index(const std::string& name) const {
  for (long i = 0; i < f_count(); ++i) {
    if (f_entries[i] == name) return i;
  }
  throw Error(ErrorCode::invalid_argument,
              "unknown value-gap entry: " + name);
}

bool BasisLayout::operator==(const BasisLayout& other) const {
  return kind == other.kind && K == other.K &&
         primal_columns == other.primal_columns &&
         columns == other.columns && f_entries == other.f_entries;
}

BasisLayout make_basis_layout(AlgoKind kind, long K) {
  if (K < 0) throw Error(ErrorCode::invalid_argument, "negative horizon");
  BasisLayout layout;
  layout.kind = kind;
  layout.K = K;
  switch (kind) {
    case AlgoKind::gd:
      layout.columns.push_back("x0");
      for (long k = 0; k <= K; ++k) {
        layout.columns.push_back("g" + std::to_string(k));
      }
      for (long k = 0; k <= K; ++k) {
        layout.f_entries.push_back("f" + std::to_string(k));
      }
      break;
    case AlgoKind::ista:
      layout.columns.push_back("x0");
      layout.columns.push_back("gh*");
      for (long k = 0; k <= K; ++k) {
        layout.columns.push_back("gh" + std::to_string(k));
      }
      for (long k = 1; k <= K; ++k) {
        layout.columns.push_back("s" + std::to_string(k));
      }
      for (long k = 0; k <= K; ++k) {
        layout.f_entries.push_back("h" + std::to_string(k));
      }
      for (long k = 1; k <= K; ++k) {
        layout.f_entries.push_back("l1_" + std::to_string(k));
      }
      break;
    case AlgoKind::pdhg:
      layout.primal_columns = 2 * K + 1;
      layout.columns.push_back("x0");
      for (long k = 0; k < K; ++k) {
        layout.columns.push_back("Mtu" + std::to_string(k));
      }
      for (long k = 1; k <= K; ++k) {
        layout.columns.push_back("sf" + std::to_string(k));
      }
      layout.columns.push_back("u0");
      for (long k = 1; k <= K; ++k) {
        layout.columns.push_back("Mxbar" + std::to_string(k));
      }
      for (long k = 1; k <= K; ++k) {
        layout.columns.push_back("sg" + std::to_string(k));
      }
      for (long k = 1; k <= K; ++k) {
        layout.f_entries.push_back("phi" + std::to_string(k));
      }
      for (long k = 1; k <= K; ++k) {
        layout.f_entries.push_back("gamma" + std::to_string(k));
      }
      break;
  }
  return layout;
}

LiftedSample lift(const Trajectory& trajectory) {
  require_complete(trajectory);
  LiftedSample sample;
  sample.layout = make_basis_layout(trajectory.kind, trajectory.K);
  const ColumnSet cols = build_columns(trajectory);
  sample.G = assemble_gram(cols, sample.layout);
  sample.F = build_f(trajectory);
  return sample;
}

double lifted_norm(const LiftedSample& a, const LiftedSample& b) {
  if (a.layout != b.layout) {
    throw Error(ErrorCode::invalid_argument,
                "lifted samples have different layouts");
  }
  const double g2 = (a.G - b.G).squaredNorm();
  const double f2 = (a.F - b.F).squaredNorm();
  return std::sqrt(g2 + f2);
}

LiftedJacobian lift_jacobian(const Trajectory& trajectory,
                             const TrajectoryJacobian& jacobian) {
  require_complete(trajectory);
  if (jacobian.kind != trajectory.kind || jacobian.K != trajectory.K) {
    throw Error(ErrorCode::invalid_argument,
                "jacobian does not match the trajectory");
  }
  LiftedJacobian out;
  out.kind = trajectory.kind;
  out.K = trajectory.K;
  out.n_params = jacobian.n_params;
  out.layout = make_basis_layout(trajectory.kind, trajectory.K);
  const ColumnSet cols = build_columns(trajectory);
  out.dG.reserve(out.n_params);
  out.dF.reserve(out.n_params);
  for (long p = 0; p < out.n_params; ++p) {
    const ColumnSet dcols = build_column_derivatives(trajectory, jacobian, p);
    out.dG.push_back(assemble_gram_derivative(cols, dcols, out.layout));
    out.dF.push_back(build_df(trajectory, jacobian, p));
  }
  return out;
}

}  // namespace stepcert
