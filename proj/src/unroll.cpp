#include "stepcert/unroll.hpp"

#include <cmath>
#include <string>

namespace stepcert {

namespace {

void check_kind(const StepSchedule& schedule, AlgoKind expected) {
  if (schedule.kind != expected) {
    throw Error(ErrorCode::invalid_argument,
                "schedule kind does not match the instance family");
  }
  const long want = expected == AlgoKind::pdhg ? 3 * schedule.K : schedule.K;
  if (schedule.values.size() != want) {
    throw Error(ErrorCode::invalid_argument, "schedule length mismatch");
  }
  for (long i = 0; i < schedule.values.size(); ++i) {
    if (!(schedule.values(i) > 0.0)) {
      throw Error(ErrorCode::invalid_argument,
                  "schedule entries must be positive");
    }
  }
}

void check_finite(const Vec& v, long step) {
  if (!v.allFinite()) {
    throw Error(ErrorCode::divergence,
                "non-finite iterate at step " + std::to_string(step));
  }
}

std::vector<std::vector<Vec>> grid(long p, long k, long dim) {
  return std::vector<std::vector<Vec>>(p, std::vector<Vec>(k, Vec::Zero(dim)));
}

std::vector<std::vector<double>> dgrid(long p, long k) {
  return std::vector<std::vector<double>>(p, std::vector<double>(k, 0.0));
}

std::pair<Trajectory, TrajectoryJacobian> run_gd(
    const QuadraticInstance& inst, const StepSchedule& sched, bool want_jac) {
  check_kind(sched, AlgoKind::gd);
  const long K = sched.K;
  const long d = inst.Q.rows();

  Trajectory t;
  t.kind = AlgoKind::gd;
  t.K = K;
  t.x.resize(K + 1);
  t.g.resize(K + 1);
  t.fvals.resize(K + 1);
  t.x[0] = inst.x0;
  t.g[0] = inst.Q * inst.x0;
  t.fvals[0] = 0.5 * inst.x0.dot(t.g[0]);

  TrajectoryJacobian j;
  if (want_jac) {
    j.kind = AlgoKind::gd;
    j.K = K;
    j.n_params = K;
    j.dx = grid(K, K + 1, d);
    j.dg = grid(K, K + 1, d);
    j.dfvals = dgrid(K, K + 1);
  }

  for (long k = 0; k < K; ++k) {
    const double theta = sched.values(k);
    t.x[k + 1] = t.x[k] - theta * t.g[k];
    check_finite(t.x[k + 1], k + 1);
    t.g[k + 1] = inst.Q * t.x[k + 1];
    t.fvals[k + 1] = 0.5 * t.x[k + 1].dot(t.g[k + 1]);
    if (want_jac) {
      for (long p = 0; p < K; ++p) {
        Vec dx = j.dx[p][k] - theta * j.dg[p][k];
        if (p == k) dx -= t.g[k];
        j.dx[p][k + 1] = dx;
        j.dg[p][k + 1] = inst.Q * dx;
        j.dfvals[p][k + 1] = t.g[k + 1].dot(dx);
      }
    }
  }
  return {std::move(t), std::move(j)};
}

double signed_l1_derivative(const Vec& x, const Vec& dx) {
  double out = 0.0;
  for (long i = 0; i < x.size(); ++i) {
    if (x(i) > 0.0) {
      out += dx(i);
    } else if (x(i) < 0.0) {
      out -= dx(i);
    }
  }
  return out;
}

std::pair<Trajectory, TrajectoryJacobian> run_ista(
    const LassoInstance& inst, const StepSchedule& sched, bool want_jac) {
  check_kind(sched, AlgoKind::ista);
  const long K = sched.K;
  const Mat& a = *inst.A;
  const long n = a.cols();
  const double lambda = inst.lambda_reg;

  Trajectory t;
  t.kind = AlgoKind::ista;
  t.K = K;
  t.x.resize(K + 1);
  t.g.resize(K + 1);
  t.s.resize(K);
  t.fvals.resize(K + 1);
  t.hvals.resize(K + 1);
  t.l1vals.resize(K + 1);
  t.A = inst.A;
  t.b_data = inst.b;
  t.lambda_reg = lambda;

  auto record = [&](long k) {
    const Vec resid = a * t.x[k] - inst.b;
    t.g[k] = a.transpose() * resid;
    t.hvals[k] = 0.5 * resid.squaredNorm();
    t.l1vals[k] = lambda * t.x[k].lpNorm<1>();
    t.fvals[k] = t.hvals[k] + t.l1vals[k];
  };
  t.x[0] = inst.x0;
  record(0);

  TrajectoryJacobian j;
  if (want_jac) {
    j.kind = AlgoKind::ista;
    j.K = K;
    j.n_params = K;
    j.dx = grid(K, K + 1, n);
    j.dg = grid(K, K + 1, n);
    j.ds = grid(K, K, n);
    j.dfvals = dgrid(K, K + 1);
    j.dhvals = dgrid(K, K + 1);
    j.dl1vals = dgrid(K, K + 1);
  }

  for (long k = 0; k < K; ++k) {
    const double theta = sched.values(k);
    const double thresh = lambda * theta;
    const Vec v = t.x[k] - theta * t.g[k];
    Vec xn(n);
    for (long i = 0; i < n; ++i) {
      if (v(i) > thresh) {
        xn(i) = v(i) - thresh;
      } else if (v(i) < -thresh) {
        xn(i) = v(i) + thresh;
      } else {
        xn(i) = 0.0;
      }
    }
    t.x[k + 1] = xn;
    check_finite(t.x[k + 1], k + 1);
    t.s[k] = (v - xn) / theta;
    record(k + 1);
    if (want_jac) {
      for (long p = 0; p < K; ++p) {
        Vec dv = j.dx[p][k] - theta * j.dg[p][k];
        if (p == k) dv -= t.g[k];
        Vec dxn = Vec::Zero(n);
        for (long i = 0; i < n; ++i) {
          // Zero branch at the kink |v_i| = thresh.
          if (v(i) > thresh) {
            dxn(i) = dv(i) - (p == k ? lambda : 0.0);
          } else if (v(i) < -thresh) {
            dxn(i) = dv(i) + (p == k ? lambda : 0.0);
          }
        }
        j.dx[p][k + 1] = dxn;
        Vec dsn = (dv - dxn) / theta;
        if (p == k) dsn -= (v - xn) / (theta * theta);
        j.ds[p][k] = dsn;
        j.dg[p][k + 1] = a.transpose() * (a * dxn);
        j.dhvals[p][k + 1] = t.g[k + 1].dot(dxn);
        j.dl1vals[p][k + 1] = lambda * signed_l1_derivative(xn, dxn);
        j.dfvals[p][k + 1] = j.dhvals[p][k + 1] + j.dl1vals[p][k + 1];
      }
    }
  }
  return {std::move(t), std::move(j)};
}

std::pair<Trajectory, TrajectoryJacobian> run_pdhg(
    const TvLpInstance& inst, const StepSchedule& sched, bool want_jac) {
  check_kind(sched, AlgoKind::pdhg);
  const long K = sched.K;
  const long n = inst.c.size();
  const long m = inst.M_stack.rows();
  const long eq_rows = inst.A_eq.rows();

  Trajectory t;
  t.kind = AlgoKind::pdhg;
  t.K = K;
  t.M = inst.M_stack;
  t.c = inst.c;
  t.q = Vec(m);
  t.q.head(eq_rows) = inst.b_eq;
  t.q.tail(m - eq_rows) = -inst.h;
  t.x.resize(K + 1);
  t.u.resize(K + 1);
  t.xbar.resize(K);
  t.Mt_u.resize(K + 1);
  t.M_xbar.resize(K);
  t.sf.resize(K);
  t.sg.resize(K);
  t.cx.resize(K + 1);
  t.Mx.resize(K + 1);
  t.x[0] = inst.x0;
  t.u[0] = inst.u0;
  t.Mt_u[0] = inst.M_stack.transpose() * inst.u0;
  t.Mx[0] = inst.M_stack * inst.x0;
  t.cx[0] = inst.c.dot(inst.x0);

  TrajectoryJacobian j;
  const long np = 3 * K;
  if (want_jac) {
    j.kind = AlgoKind::pdhg;
    j.K = K;
    j.n_params = np;
    j.dx = grid(np, K + 1, n);
    j.du = grid(np, K + 1, m);
    j.dxbar = grid(np, K, n);
    j.dMt_u = grid(np, K + 1, n);
    j.dM_xbar = grid(np, K, m);
    j.dsf = grid(np, K, n);
    j.dsg = grid(np, K, m);
    j.dMx = grid(np, K + 1, m);
    j.dcx = dgrid(np, K + 1);
  }

  for (long k = 0; k < K; ++k) {
    const double tau = sched.values(3 * k);
    const double rho = sched.values(3 * k + 1);
    const double sigma = sched.values(3 * k + 2);
    const Vec w = t.x[k] + tau * (t.Mt_u[k] - inst.c);
    Vec xn(n);
    for (long i = 0; i < n; ++i) {
      xn(i) = std::min(std::max(w(i), inst.lower(i)), inst.upper(i));
    }
    t.x[k + 1] = xn;
    check_finite(xn, k + 1);
    t.sf[k] = (t.x[k] - xn) / tau + t.Mt_u[k];
    t.xbar[k] = xn + rho * (xn - t.x[k]);
    t.M_xbar[k] = inst.M_stack * t.xbar[k];
    const Vec v = t.u[k] + sigma * (t.q - t.M_xbar[k]);
    Vec un(m);
    for (long i = 0; i < m; ++i) {
      un(i) = (i < eq_rows) ? v(i) : std::max(0.0, v(i));
    }
    t.u[k + 1] = un;
    check_finite(un, k + 1);
    t.sg[k] = (t.u[k] - un) / sigma - t.M_xbar[k];
    t.Mt_u[k + 1] = inst.M_stack.transpose() * un;
    t.Mx[k + 1] = inst.M_stack * xn;
    t.cx[k + 1] = inst.c.dot(xn);

    if (want_jac) {
      for (long p = 0; p < np; ++p) {
        const bool is_tau = p == 3 * k;
        const bool is_rho = p == 3 * k + 1;
        const bool is_sigma = p == 3 * k + 2;
        Vec dw = j.dx[p][k] + tau * j.dMt_u[p][k];
        if (is_tau) dw += t.Mt_u[k] - inst.c;
        Vec dxn = Vec::Zero(n);
        for (long i = 0; i < n; ++i) {
          // Interior branch at the box boundary.
          if (w(i) >= inst.lower(i) && w(i) <= inst.upper(i)) dxn(i) = dw(i);
        }
        j.dx[p][k + 1] = dxn;
        Vec dsf = (j.dx[p][k] - dxn) / tau + j.dMt_u[p][k];
        if (is_tau) dsf -= (t.x[k] - xn) / (tau * tau);
        j.dsf[p][k] = dsf;
        Vec dxb = dxn + rho * (dxn - j.dx[p][k]);
        if (is_rho) dxb += xn - t.x[k];
        j.dxbar[p][k] = dxb;
        j.dM_xbar[p][k] = inst.M_stack * dxb;
        Vec dv = j.du[p][k] - sigma * j.dM_xbar[p][k];
        if (is_sigma) dv += t.q - t.M_xbar[k];
        Vec dun = Vec::Zero(m);
        for (long i = 0; i < m; ++i) {
          // Interior branch at the cone kink v_i = 0.
          if (i < eq_rows || v(i) >= 0.0) dun(i) = dv(i);
        }
        j.du[p][k + 1] = dun;
        Vec dsg = (j.du[p][k] - dun) / sigma - j.dM_xbar[p][k];
        if (is_sigma) dsg -= (t.u[k] - un) / (sigma * sigma);
        j.dsg[p][k] = dsg;
        j.dMt_u[p][k + 1] = inst.M_stack.transpose() * dun;
        j.dMx[p][k + 1] = inst.M_stack * dxn;
        j.dcx[p][k + 1] = inst.c.dot(dxn);
      }
    }
  }
  return {std::move(t), std::move(j)};
}

}  // namespace

long schedule_param_count(const StepSchedule& schedule) {
  return schedule.kind == AlgoKind::pdhg ? 3 * schedule.K : schedule.K;
}

void validate_schedule(const StepSchedule& schedule) {
  if (schedule.K < 0) {
    throw Error(ErrorCode::invalid_argument, "negative horizon");
  }
  if (!(schedule.theta_min > 0.0) || schedule.theta_max < schedule.theta_min) {
    throw Error(ErrorCode::invalid_argument, "invalid schedule bounds");
  }
  if (schedule.values.size() != schedule_param_count(schedule)) {
    throw Error(ErrorCode::invalid_argument, "schedule length mismatch");
  }
  for (long i = 0; i < schedule.values.size(); ++i) {
    if (schedule.values(i) < schedule.theta_min ||
        schedule.values(i) > schedule.theta_max) {
      throw Error(ErrorCode::invalid_argument,
                  "schedule entry outside the bound box");
    }
  }
}

Trajectory run_algorithm(const QuadraticInstance& instance,
                         const StepSchedule& schedule) {
  return run_gd(instance, schedule, false).first;
}
Trajectory run_algorithm(const LassoInstance& instance,
                         const StepSchedule& schedule) {
  return run_ista(instance, schedule, false).first;
}
Trajectory run_algorithm(const TvLpInstance& instance,
                         const StepSchedule& schedule) {
  return run_pdhg(instance, schedule, false).first;
}

std::pair<Trajectory, TrajectoryJacobian> run_with_jacobian(
    const QuadraticInstance& instance, const StepSchedule& schedule) {
  return run_gd(instance, schedule, true);
}
std::pair<Trajectory, TrajectoryJacobian> run_with_jacobian(
    const LassoInstance& instance, const StepSchedule& schedule) {
  return run_ista(instance, schedule, true);
}
std::pair<Trajectory, TrajectoryJacobian> run_with_jacobian(
    const TvLpInstance& instance, const StepSchedule& schedule) {
  return run_pdhg(instance, schedule, true);
}

TrajectoryJacobian trajectory_jacobian(const QuadraticInstance& instance,
                                       const StepSchedule& schedule) {
  return run_gd(instance, schedule, true).second;
}
TrajectoryJacobian trajectory_jacobian(const LassoInstance& instance,
                                       const StepSchedule& schedule) {
  return run_ista(instance, schedule, true).second;
}
TrajectoryJacobian trajectory_jacobian(const TvLpInstance& instance,
                                       const StepSchedule& schedule) {
  return run_pdhg(instance, schedule, true).second;
}

Vec eval_loss(const Trajectory& trajectory, const Optimum& reference,
              LossKind loss_kind) {
  const long K = trajectory.K;
  Vec losses(K + 1);
  if (trajectory.kind == AlgoKind::pdhg) {
    if (loss_kind != LossKind::saddle_gap) {
      throw Error(ErrorCode::invalid_argument,
                  "pdhg trajectories use the saddle-gap loss");
    }
    const Vec mx_star = trajectory.M * reference.x_star;
    for (long k = 0; k <= K; ++k) {
      const double l_x = trajectory.cx[k] +
                         reference.u_star.dot(trajectory.q - trajectory.Mx[k]);
      const double l_star =
          reference.f_star + trajectory.u[k].dot(trajectory.q - mx_star);
      losses(k) = l_x - l_star;
    }
  } else {
    if (loss_kind != LossKind::function_gap) {
      throw Error(ErrorCode::invalid_argument,
                  "gd/ista trajectories use the function-gap loss");
    }
    for (long k = 0; k <= K; ++k) {
      losses(k) = trajectory.fvals[k] - reference.f_star;
    }
  }
  for (long k = 0; k <= K; ++k) {
    if (losses(k) < -1e-9) {
      throw Error(ErrorCode::reference_inconsistency,
                  "negative loss " + std::to_string(losses(k)) + " at iterate " +
                      std::to_string(k));
    }
    losses(k) = std::max(losses(k), 0.0);
  }
  return losses;
}

void eval_loss_into(Trajectory& trajectory, const Optimum& reference,
                    LossKind loss_kind) {
  trajectory.losses = eval_loss(trajectory, reference, loss_kind);
  trajectory.reference = reference;
  trajectory.has_reference = true;
}

double weighted_training_loss(const Vec& per_iterate_losses, long K,
                              double base) {
  if (K < 1) {
    throw Error(ErrorCode::invalid_argument, "horizon must be at least 1");
  }
  long offset;
  if (per_iterate_losses.size() == K + 1) {
    offset = 1;
  } else if (per_iterate_losses.size() == K) {
    offset = 0;
  } else {
    throw Error(ErrorCode::invalid_argument, "loss vector length mismatch");
  }
  double total = 0.0;
  for (long k = 1; k <= K; ++k) {
    total += std::pow(base, double(K - k)) * per_iterate_losses(offset + k - 1);
  }
  return total;
}

}  // namespace stepcert
