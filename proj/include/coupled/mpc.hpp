#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "coupled/coupling.hpp"
#include "coupled/estimation.hpp"
#include "coupled/plant.hpp"
#include "coupled/qp.hpp"
#include "coupled/reference.hpp"

namespace coupled {

struct MpcConfig {
  double horizon = 0.1;  // s
  double dt = 0.01;      // s
  double Q = 1.0;        // per set-point-rate channel
  double R_tau = 1e-4;
  double R_lambda = 1e-3;
  /// Per motor angle, on the deviation from the reference. Keeps redundant
  /// robots from drifting along their self-motion, which the other terms
  /// leave free.
  double S_motor = 100.0;
  double P = 1e6;        // per output channel
  double terminal_scale = 10.0;
  /// When set, x_a is penalized about the reference's algebraic state under
  /// the nominal model (p = 0), i.e. the planned load split, instead of
  /// about zero.
  bool penalize_xa_about_reference = true;
  bool enforce_state_bounds = true;
  double start_time = 1.0;  // s, u = u_ref before
  bool one_step_delay = false;
  double fd_step = 1e-6;    // rad, for the linearization
  QpOptions qp;
  CouplingOptions coupling;

  int steps() const;  // horizon / dt, validated
  void validate() const;
};

/// Linear model at one collocation node, around (x_bar, xa_bar):
///   F xa + W xd = F xa_bar + W x_bar
///   xd_dot = f0 + A (xd - x_bar) + E (xa - xa_bar) + B u
/// With xa eliminated: xa = xa_bar + G (xd - x_bar), xd_dot slope A + E G.
struct LtvNode {
  double t = 0.0;
  VecX x_bar, xa_bar, f0;
  VecX xa_nominal;  // xa_bar with p = 0
  MatX A, E, F, W, G;
};

struct LtvModel {
  std::vector<LtvNode> nodes;  // N + 1
  MatX B;                      // input map, constant
  MatX C, Gy;                  // y = C xd + Gy xa
  /// Per interval, added to the trapezoid drift h/2 (f0_a + f0_b). Empty
  /// means none.
  std::vector<VecX> defects;
};

/// Trapezoid defect of the unperturbed reference over [k, k + 1] under the
/// nominal model (p = 0). The reference is a trajectory of the plant, so this
/// is pure discretization error; adding it back makes the collocation exact
/// on the reference.
VecX reference_defect(const CoupledSystem& sys, const PlantConfig& plant, const ReferenceTrajectory& ref,
                      std::size_t k, const MpcConfig& cfg);

/// y = q_m1 + K_J^-1 tau_m1.
VecX output_map(const CoupledSystem& sys, const VecX& x_d, const VecX& x_a);
MatX output_matrix_C(const CoupledSystem& sys);
MatX output_matrix_G(const CoupledSystem& sys);

/// `unperturbed` is the same sample before superposed disturbances, where the
/// planned load split (xa_nominal) is taken; defaults to `ref`.
LtvNode linearize_node(const CoupledSystem& sys, const PlantConfig& plant, const ReferenceSample& ref,
                       const KinematicParams& p_hat, const MpcConfig& cfg,
                       const ReferenceSample* unperturbed = nullptr);

/// Nodes along reference samples k0 .. k0 + N (clamped at the end).
LtvModel linearize_horizon(const CoupledSystem& sys, const PlantConfig& plant, const ReferenceTrajectory& ref,
                           std::size_t k0, const KinematicParams& p_hat, const MpcConfig& cfg);

struct MpcTargets {
  VecX x_d0;
  std::vector<VecX> y_ref;  // N + 1
  std::vector<VecX> u_ref;  // N
  VecX u_min, u_max;        // stacked over robots
  VecX x_min, x_max;        // stacked like x_d
};

MpcTargets horizon_targets(const CoupledSystem& sys, const ReferenceTrajectory& ref, std::size_t k0, int steps,
                           const VecX& x_d0);

/// Full-space trapezoidal collocation QP over {xd_k, xa_k} k = 0..N and
/// u_k k = 0..N-1, ordered [xd_0 xa_0 xd_1 xa_1 ... xd_N xa_N u_0 .. u_{N-1}].
/// Equalities: initial state, algebraic rows per node, dynamics defects.
struct CollocationQp {
  QpProblem qp;
  double constant = 0.0;  // objective offset dropped from the QP
  MatX C, Gy;             // output map, for unpacking
  int nx = 0, na = 0, nu = 0, steps = 0;
  int xd(int k) const { return k * (nx + na); }
  int xa(int k) const { return k * (nx + na) + nx; }
  int u(int k) const { return (steps + 1) * (nx + na) + k * nu; }
  int n_variables() const { return (steps + 1) * (nx + na) + steps * nu; }
  int n_equalities() const { return nx + (steps + 1) * na + steps * nx; }
};

CollocationQp build_collocation(const LtvModel& ltv, const MpcTargets& targets, const MpcConfig& cfg);

struct MpcSolution {
  std::vector<VecX> u, x_d, x_a, y;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  KktResiduals kkt;             // full-space problem
  double dynamics_defect = 0.0;
  double algebraic_defect = 0.0;
  int active_bounds = 0;
  double solve_time = 0.0;      // s, wall clock
  VecX w;                       // full-space primal vector
};

/// Condensed solve: xa and xd are eliminated, the interior point runs over u
/// only, and full-space multipliers are recovered by a backward recursion.
MpcSolution solve_mpc(const LtvModel& ltv, const MpcTargets& targets, const MpcConfig& cfg,
                      const VecX* warm_u = nullptr);

/// Same problem solved directly in the full space (dense KKT interior point).
MpcSolution solve_collocation_dense(const CollocationQp& cqp, const QpOptions& options = {});

/// MPC closed-loop log row.
struct ClosedLoopTick {
  TickRecord plant;
  VecX p_hat;
  double objective = 0.0;
  double kkt = 0.0;
  double defect = 0.0;
  int iterations = 0;
  bool mpc_active = false;
  bool degraded = false;
  double solve_time = 0.0;
};

struct ClosedLoopResult {
  std::vector<ClosedLoopTick> ticks;
  std::vector<EstimationRecord> estimation;
  bool aborted = false;
  std::string abort_reason;
};

/// Receding-horizon loop; the estimator (if `est` is non-null) updates p_hat
/// at its own rate and the MPC re-linearizes with the latest p_hat.
ClosedLoopResult mpc_loop(const CoupledSystem& sys, const PlantConfig& plant_cfg, const ReferenceTrajectory& ref,
                          const EstimatorConfig* est, const MpcConfig& cfg, std::uint64_t seed,
                          const KinematicParams* fixed_p_hat = nullptr);

}  // namespace coupled
