#pragma once

#include <string>
#include <vector>

#include "stepcert/common.hpp"
#include "stepcert/unroll.hpp"

namespace stepcert {

// Frozen column and value orderings for one algorithm family at horizon K.
// Column roles name the basis vectors whose pairwise inner products form the
// Gram matrix; f roles name the entries of the value-gap vector F.
//
//   gd    columns: x0, g0..gK                 (x0 means x^0 - x*)
//   ista  columns: x0, gh*, gh0..ghK, s1..sK
//   pdhg  columns: x0, Mtu0..Mtu{K-1}, sf1..sfK   (primal side, R^n)
//                  u0, Mxbar1..MxbarK, sg1..sgK   (dual side, R^m)
//
// pdhg columns live in the product space R^n x R^m with the other side
// zero-padded, so cross inner products between the two sides vanish and the
// Gram matrix is block diagonal. primal_columns is the size of the first
// block (0 for the single-block families).
//
//   gd    f entries: f0..fK         (f(x^k) - f*)
//   ista  f entries: h0..hK, l1_1..l1_K
//   pdhg  f entries: phi1..phiK, gamma1..gammaK
//
// ista splits the objective into the smooth part h and the l1 part; pdhg
// splits the saddle gap into the tilted primal gap phi and the tilted dual
// gap gamma. Entries without a recorded subgradient at that iterate (l1_0,
// phi0, gamma0) are omitted: nothing in the lifted geometry bounds them from
// above.
struct BasisLayout {
  AlgoKind kind = AlgoKind::gd;
  long K = 0;
  long primal_columns = 0;
  std::vector<std::string> columns;
  std::vector<std::string> f_entries;

  long column_count() const { return static_cast<long>(columns.size()); }
  long f_count() const { return static_cast<long>(f_entries.size()); }
  long column_index(const std::string& role) const;
  long f_index(const std::string& name) const;
  bool operator==(const BasisLayout& other) const;
  bool operator!=(const BasisLayout& other) const { return !(*this == other); }
};

BasisLayout make_basis_layout(AlgoKind kind, long K);

// G is the symmetric Gram matrix of the layout columns; F holds the recorded
// value gaps in layout order.
struct LiftedSample {
  Mat G;
  Vec F;
  BasisLayout layout;
};

// Derivatives of (G, F) with respect to every schedule parameter. Each dG[p]
// is symmetric with the same block structure as G.
struct LiftedJacobian {
  AlgoKind kind = AlgoKind::gd;
  long K = 0;
  long n_params = 0;
  std::vector<Mat> dG;
  std::vector<Vec> dF;
  BasisLayout layout;
};

// Requires a trajectory with an attached reference (eval_loss_into).
LiftedSample lift(const Trajectory& trajectory);

// sqrt(|Ga - Gb|_F^2 + |Fa - Fb|^2); layouts must match exactly.
double lifted_norm(const LiftedSample& a, const LiftedSample& b);

// Pushes a trajectory jacobian through the lift. Star and tilt columns are
// schedule-independent, so their derivative columns are zero.
LiftedJacobian lift_jacobian(const Trajectory& trajectory,
                             const TrajectoryJacobian& jacobian);

}  // namespace stepcert
