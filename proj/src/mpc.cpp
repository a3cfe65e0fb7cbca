#include "coupled/mpc.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "coupled/errors.hpp"

namespace coupled {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t clamp_index(const ReferenceTrajectory& ref, std::size_t k) { return std::min(k, ref.size() - 1); }

VecX stacked_x_bar(const ReferenceSample& s) {
  PlantState x;
  x.q_m = s.q_motor;
  x.q_sp = s.q_sp;
  return x.stacked();
}

MatX input_matrix(const CoupledSystem& sys, const PlantConfig& plant) {
  const std::vector<Mat6X> none(static_cast<std::size_t>(sys.n_robots()), Mat6X::Zero(6, sys.n_joints()));
  return ode_matrices(sys, plant, none).B;
}

}  // namespace

int MpcConfig::steps() const {
  const double n = horizon / dt;
  const int k = static_cast<int>(std::lround(n));
  if (k < 1 || std::abs(n - k) > 1e-9) throw ConfigError("mpc: horizon_s / dt_s must be a positive integer");
  return k;
}

void MpcConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("mpc.dt_s: must be > 0");
  steps();
  if (!(Q >= 0.0)) throw ConfigError("mpc.weights.Q: must be >= 0");
  if (!(R_tau >= 0.0) || !(R_lambda >= 0.0)) throw ConfigError("mpc.weights.R: must be >= 0");
  if (!(S_motor >= 0.0)) throw ConfigError("mpc.S_motor: must be >= 0");
  if (!(P > 0.0)) throw ConfigError("mpc.weights.P: must be > 0");
  if (!(terminal_scale >= 0.0)) throw ConfigError("mpc.terminal_scale: must be >= 0");
  if (!(fd_step > 0.0)) throw ConfigError("mpc.fd_step: must be > 0");
  if (qp.max_iterations < 1) throw ConfigError("mpc.max_iterations: must be >= 1");
}

// ---------------------------------------------------------------------------
// Output map

MatX output_matrix_C(const CoupledSystem& sys) {
  const int nj = sys.n_joints();
  MatX c = MatX::Zero(nj, sys.differential_size());
  c.leftCols(nj).setIdentity();
  return c;
}

MatX output_matrix_G(const CoupledSystem& sys) {
  const int nj = sys.n_joints();
  MatX g = MatX::Zero(nj, sys.algebraic_size());
  g.leftCols(nj) = sys.robots[0].joint_stiffness.cwiseInverse().asDiagonal();
  return g;
}

VecX output_map(const CoupledSystem& sys, const VecX& x_d, const VecX& x_a) {
  const int nj = sys.n_joints();
  return x_d.head(nj) + sys.robots[0].joint_stiffness.cwiseInverse().cwiseProduct(x_a.head(nj));
}

// ---------------------------------------------------------------------------
// Linearization

LtvNode linearize_node(const CoupledSystem& sys, const PlantConfig& plant, const ReferenceSample& ref,
                       const KinematicParams& p_hat, const MpcConfig& cfg, const ReferenceSample* unperturbed) {
  const int nr = sys.n_robots(), nj = sys.n_joints();
  const int nx = sys.differential_size(), na = sys.algebraic_size();
  const VecX u0 = VecX::Zero(sys.input_size());

  auto evaluate = [&](const std::vector<VecX>& q_m, VecX& xa, VecX& f) {
    AlgebraicSolution s = solve_coupled(sys, rbd_motions(q_m, ref.qd_link, ref.qdd_link), p_hat, plant.w_ext,
                                        cfg.coupling);
    PlantState x;
    x.q_m = q_m;
    x.q_sp = ref.q_sp;
    xa = s.x_a;
    f = ode_rhs(sys, plant, x, u0, s.state, s.system.jacobians);
    return s;
  };

  LtvNode n;
  n.t = ref.t;
  n.x_bar = stacked_x_bar(ref);
  const AlgebraicSolution nominal = evaluate(ref.q_motor, n.xa_bar, n.f0);
  n.F = nominal.system.F;
  const ReferenceSample& planned = unperturbed ? *unperturbed : ref;
  n.xa_nominal = n.xa_bar;
  if (!p_hat.values.isZero(0.0) || unperturbed)
    n.xa_nominal = solve_coupled(sys, rbd_motions(planned.q_motor, planned.qd_link, planned.qdd_link),
                                 KinematicParams::zeros(nr), plant.w_ext, cfg.coupling)
                       .x_a;

  // f is affine in q_sp with slope K_D^-1 K_P; x_a does not depend on q_sp.
  MatX A_full = MatX::Zero(nx, nx);  // d f / d xd with xa eliminated
  n.G = MatX::Zero(na, nx);
  const double h = cfg.fd_step;
  for (int i = 0; i < nr; ++i) {
    for (int j = 0; j < nj; ++j) {
      std::vector<VecX> qp = ref.q_motor, qm = ref.q_motor;
      qp[static_cast<std::size_t>(i)](j) += h;
      qm[static_cast<std::size_t>(i)](j) -= h;
      VecX xa_p, xa_m, f_p, f_m;
      evaluate(qp, xa_p, f_p);
      evaluate(qm, xa_m, f_m);
      const int col = i * nj + j;
      n.G.col(col) = (xa_p - xa_m) / (2.0 * h);
      A_full.col(col) = (f_p - f_m) / (2.0 * h);
    }
    for (int j = 0; j < nj; ++j) {
      const int r = i * nj + j;
      A_full(r, (nr + i) * nj + j) = plant.K_P(j) / plant.K_D(j);
    }
  }
  // Recover the explicit-x_a form; E is exact, A absorbs what is left.
  n.E = ode_matrices(sys, plant, nominal.system.jacobians).E;
  n.A = A_full - n.E * n.G;
  n.W = -n.F * n.G;
  return n;
}

LtvModel linearize_horizon(const CoupledSystem& sys, const PlantConfig& plant, const ReferenceTrajectory& ref,
                           std::size_t k0, const KinematicParams& p_hat, const MpcConfig& cfg) {
  LtvModel m;
  const int n = cfg.steps();
  for (int k = 0; k <= n; ++k) {
    const std::size_t idx = clamp_index(ref, k0 + static_cast<std::size_t>(k));
    try {
      m.nodes.push_back(linearize_node(sys, plant, ref[idx], p_hat, cfg, ref.unperturbed.empty() ? nullptr : &ref.unperturbed[idx]));
    } catch (const SingularSystemError& e) {
      std::ostringstream msg;
      msg << "linearization step " << k << " (t = " << ref[idx].t << " s): " << e.what();
      throw SingularSystemError(msg.str(), e.condition());
    }
  }
  m.B = input_matrix(sys, plant);
  m.C = output_matrix_C(sys);
  m.Gy = output_matrix_G(sys);
  for (int k = 0; k < n; ++k)
    m.defects.push_back(reference_defect(sys, plant, ref, clamp_index(ref, k0 + static_cast<std::size_t>(k)), cfg));
  return m;
}

VecX reference_defect(const CoupledSystem& sys, const PlantConfig& plant, const ReferenceTrajectory& ref,
                      std::size_t k, const MpcConfig& cfg) {
  const VecX zero = VecX::Zero(sys.differential_size());
  if (k + 1 >= ref.size()) return zero;
  const KinematicParams p0 = KinematicParams::zeros(sys.n_robots());
  auto rhs = [&](const ReferenceSample& s) {
    const AlgebraicSolution a = solve_coupled(sys, rbd_motions(s.q_motor, s.qd_link, s.qdd_link), p0, plant.w_ext,
                                              cfg.coupling);
    PlantState x;
    x.q_m = s.q_motor;
    x.q_sp = s.q_sp;
    return ode_rhs(sys, plant, x, VecX::Zero(sys.input_size()), a.state, a.system.jacobians);
  };
  const ReferenceSample& a = ref.consistent(k);
  const ReferenceSample& b = ref.consistent(k + 1);
  const double h = ref.dt;
  return stacked_x_bar(b) - stacked_x_bar(a) - h * (input_matrix(sys, plant) * stack(a.u)) - 0.5 * h * (rhs(a) + rhs(b));
}

MpcTargets horizon_targets(const CoupledSystem& sys, const ReferenceTrajectory& ref, std::size_t k0, int steps,
                           const VecX& x_d0) {
  MpcTargets t;
  t.x_d0 = x_d0;
  for (int k = 0; k <= steps; ++k) {
    const std::size_t idx = clamp_index(ref, k0 + static_cast<std::size_t>(k));
    t.y_ref.push_back(ref[idx].q_link[0]);
    if (k < steps) t.u_ref.push_back(ref.u_stacked(idx));
  }
  const int nr = sys.n_robots(), nj = sys.n_joints();
  t.u_min.resize(nr * nj);
  t.u_max.resize(nr * nj);
  t.x_min.resize(2 * nr * nj);
  t.x_max.resize(2 * nr * nj);
  for (int i = 0; i < nr; ++i) {
    const RobotModel& m = sys.robots[static_cast<std::size_t>(i)];
    t.u_min.segment(i * nj, nj) = m.qd_min;
    t.u_max.segment(i * nj, nj) = m.qd_max;
    t.x_min.segment(i * nj, nj) = m.q_min;
    t.x_max.segment(i * nj, nj) = m.q_max;
    t.x_min.segment((nr + i) * nj, nj) = m.q_min;
    t.x_max.segment((nr + i) * nj, nj) = m.q_max;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Full-space collocation QP

namespace {

struct CostWeights {
  VecX Q, R, P, S;  // S over x_d, zero on the set-points
  std::vector<double> node;  // quadrature weight per node, terminal included
  double h = 0.0;
};

VecX interval_drift(const LtvModel& m, std::size_t k, double h) {
  VecX d = 0.5 * h * (m.nodes[k].f0 + m.nodes[k + 1].f0);
  if (k < m.defects.size()) d += m.defects[k];
  return d;
}

CostWeights cost_weights(const LtvModel& ltv, const MpcConfig& cfg) {
  CostWeights w;
  const int n = static_cast<int>(ltv.nodes.size()) - 1;
  const int na = static_cast<int>(ltv.nodes.front().F.rows());
  const int nj = static_cast<int>(ltv.C.rows());
  const int nu = static_cast<int>(ltv.B.cols());
  const int nr = (na / (nj + 6));
  w.h = cfg.dt;
  w.Q = VecX::Constant(nu, cfg.Q);
  w.R.resize(na);
  w.R.head(nr * nj).setConstant(cfg.R_tau);
  w.R.tail(6 * nr).setConstant(cfg.R_lambda);
  w.P = VecX::Constant(nj, cfg.P);
  w.S = VecX::Zero(static_cast<int>(ltv.B.rows()));
  w.S.head(nr * nj).setConstant(cfg.S_motor);
  w.node.assign(static_cast<std::size_t>(n + 1), cfg.dt);
  w.node.front() = w.node.back() = 0.5 * cfg.dt;
  return w;
}

VecX xa_target(const LtvNode& node, const MpcConfig& cfg) {
  return cfg.penalize_xa_about_reference ? node.xa_nominal : VecX::Zero(node.xa_bar.size());
}

}  // namespace

CollocationQp build_collocation(const LtvModel& ltv, const MpcTargets& tg, const MpcConfig& cfg) {
  CollocationQp c;
  c.steps = static_cast<int>(ltv.nodes.size()) - 1;
  c.nx = static_cast<int>(ltv.B.rows());
  c.nu = static_cast<int>(ltv.B.cols());
  c.na = static_cast<int>(ltv.nodes.front().F.rows());
  const int n = c.steps, nx = c.nx, na = c.na, nu = c.nu;
  c.C = ltv.C;
  c.Gy = ltv.Gy;
  if (static_cast<int>(tg.y_ref.size()) != n + 1 || static_cast<int>(tg.u_ref.size()) != n)
    throw std::invalid_argument("build_collocation: targets do not match the horizon");
  for (Eigen::Index i = 0; i < tg.x_min.size(); ++i)
    if (tg.x_min(i) > tg.x_max(i)) throw ConfigError("build_collocation: q_min > q_max at state " + std::to_string(i));
  for (Eigen::Index i = 0; i < tg.u_min.size(); ++i)
    if (tg.u_min(i) > tg.u_max(i)) throw ConfigError("build_collocation: qd_min > qd_max at input " + std::to_string(i));

  const CostWeights w = cost_weights(ltv, cfg);
  const int nv = c.n_variables();
  QpProblem& qp = c.qp;
  qp.H = MatX::Zero(nv, nv);
  qp.g = VecX::Zero(nv);
  qp.A = MatX::Zero(c.n_equalities(), nv);
  qp.b = VecX::Zero(c.n_equalities());
  qp.lb = VecX::Constant(nv, -kInf);
  qp.ub = VecX::Constant(nv, kInf);

  const int nz = nx + na;
  MatX L(ltv.C.rows(), nz);
  L << ltv.C, ltv.Gy;
  for (int k = 0; k <= n; ++k) {
    const LtvNode& node = ltv.nodes[static_cast<std::size_t>(k)];
    double wy = w.node[static_cast<std::size_t>(k)];
    if (k == n) wy += cfg.terminal_scale;
    const double wa = w.node[static_cast<std::size_t>(k)];
    const int o = c.xd(k);
    qp.H.block(o, o, nz, nz) += 2.0 * wy * L.transpose() * w.P.asDiagonal() * L;
    qp.g.segment(o, nz) -= 2.0 * wy * L.transpose() * w.P.cwiseProduct(tg.y_ref[static_cast<std::size_t>(k)]);
    c.constant += wy * tg.y_ref[static_cast<std::size_t>(k)].dot(w.P.cwiseProduct(tg.y_ref[static_cast<std::size_t>(k)]));
    const VecX at = xa_target(node, cfg);
    qp.H.block(o, o, nx, nx).diagonal() += 2.0 * wa * w.S;
    qp.g.segment(o, nx) -= 2.0 * wa * w.S.cwiseProduct(node.x_bar);
    c.constant += wa * node.x_bar.dot(w.S.cwiseProduct(node.x_bar));
    qp.H.block(c.xa(k), c.xa(k), na, na).diagonal() += 2.0 * wa * w.R;
    qp.g.segment(c.xa(k), na) -= 2.0 * wa * w.R.cwiseProduct(at);
    c.constant += wa * at.dot(w.R.cwiseProduct(at));
    if (cfg.enforce_state_bounds) {
      qp.lb.segment(o, nx) = tg.x_min;
      qp.ub.segment(o, nx) = tg.x_max;
    }
  }
  for (int k = 0; k < n; ++k) {
    const int o = c.u(k);
    qp.H.block(o, o, nu, nu).diagonal() += 2.0 * w.h * w.Q;
    qp.g.segment(o, nu) -= 2.0 * w.h * w.Q.cwiseProduct(tg.u_ref[static_cast<std::size_t>(k)]);
    c.constant += w.h * tg.u_ref[static_cast<std::size_t>(k)].dot(w.Q.cwiseProduct(tg.u_ref[static_cast<std::size_t>(k)]));
    qp.lb.segment(o, nu) = tg.u_min;
    qp.ub.segment(o, nu) = tg.u_max;
  }

  // Equalities: initial state, algebraic rows, trapezoidal defects.
  int row = 0;
  qp.A.block(row, c.xd(0), nx, nx).setIdentity();
  qp.b.segment(row, nx) = tg.x_d0;
  row += nx;
  for (int k = 0; k <= n; ++k) {
    const LtvNode& node = ltv.nodes[static_cast<std::size_t>(k)];
    qp.A.block(row, c.xa(k), na, na) = node.F;
    qp.A.block(row, c.xd(k), na, nx) = node.W;
    qp.b.segment(row, na) = node.F * node.xa_bar + node.W * node.x_bar;
    row += na;
  }
  const double h = cfg.dt;
  const MatX I = MatX::Identity(nx, nx);
  for (int k = 0; k < n; ++k) {
    const LtvNode& a = ltv.nodes[static_cast<std::size_t>(k)];
    const LtvNode& b = ltv.nodes[static_cast<std::size_t>(k + 1)];
    qp.A.block(row, c.xd(k), nx, nx) = -(I + 0.5 * h * a.A);
    qp.A.block(row, c.xa(k), nx, na) = -0.5 * h * a.E;
    qp.A.block(row, c.xd(k + 1), nx, nx) = I - 0.5 * h * b.A;
    qp.A.block(row, c.xa(k + 1), nx, na) = -0.5 * h * b.E;
    qp.A.block(row, c.u(k), nx, nu) = -h * ltv.B;
    qp.b.segment(row, nx) = interval_drift(ltv, static_cast<std::size_t>(k), h) -
                            0.5 * h * (a.A * a.x_bar + a.E * a.xa_bar + b.A * b.x_bar + b.E * b.xa_bar);
    row += nx;
  }
  return c;
}

namespace {

// Splits a full-space vector into per-node pieces and fills derived outputs.
void unpack(const CollocationQp& c, const VecX& w, MpcSolution& s) {
  s.u.clear();
  s.x_d.clear();
  s.x_a.clear();
  s.y.clear();
  for (int k = 0; k <= c.steps; ++k) {
    s.x_d.emplace_back(w.segment(c.xd(k), c.nx));
    s.x_a.emplace_back(w.segment(c.xa(k), c.na));
    s.y.emplace_back(c.C * s.x_d.back() + c.Gy * s.x_a.back());
  }
  for (int k = 0; k < c.steps; ++k) s.u.emplace_back(w.segment(c.u(k), c.nu));
  s.w = w;
}

void equality_defects(const CollocationQp& c, const VecX& w, MpcSolution& s) {
  const VecX r = c.qp.A * w - c.qp.b;
  const int alg = c.nx + (c.steps + 1) * c.na;
  s.algebraic_defect = r.segment(c.nx, alg - c.nx).cwiseAbs().maxCoeff();
  s.dynamics_defect = std::max(r.head(c.nx).cwiseAbs().maxCoeff(), r.tail(c.steps * c.nx).cwiseAbs().maxCoeff());
}

int count_active(const QpProblem& qp, const VecX& w) {
  int active = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (std::isfinite(qp.lb(i)) && w(i) - qp.lb(i) < 1e-7) ++active;
    if (std::isfinite(qp.ub(i)) && qp.ub(i) - w(i) < 1e-7) ++active;
  }
  return active;
}

}  // namespace

MpcSolution solve_collocation_dense(const CollocationQp& cqp, const QpOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const QpResult r = solve_qp(cqp.qp, options);
  MpcSolution s;
  s.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  s.iterations = r.iterations;
  s.converged = r.converged;
  s.kkt = r.residuals;
  s.objective = r.objective + cqp.constant;
  unpack(cqp, r.x, s);
  equality_defects(cqp, r.x, s);
  s.active_bounds = count_active(cqp.qp, r.x);
  return s;
}

// ---------------------------------------------------------------------------
// Condensed solve

MpcSolution solve_mpc(const LtvModel& ltv, const MpcTargets& tg, const MpcConfig& cfg, const VecX* warm_u) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = static_cast<int>(ltv.nodes.size()) - 1;
  const int nx = static_cast<int>(ltv.B.rows());
  const int nu = static_cast<int>(ltv.B.cols());
  const int na = static_cast<int>(ltv.nodes.front().F.rows());
  const int nU = n * nu;
  const double h = cfg.dt;
  const CostWeights cw = cost_weights(ltv, cfg);
  const MatX I = MatX::Identity(nx, nx);

  std::vector<MatX> At(static_cast<std::size_t>(n + 1));
  std::vector<VecX> et(static_cast<std::size_t>(n + 1));
  for (int k = 0; k <= n; ++k) {
    const LtvNode& node = ltv.nodes[static_cast<std::size_t>(k)];
    At[static_cast<std::size_t>(k)] = node.A + node.E * node.G;
    et[static_cast<std::size_t>(k)] = At[static_cast<std::size_t>(k)] * node.x_bar;
  }

  // x_k = s_k + S_k U; only the first k input blocks of S_k are nonzero.
  std::vector<VecX> s(static_cast<std::size_t>(n + 1));
  std::vector<MatX> S(static_cast<std::size_t>(n + 1));
  s[0] = tg.x_d0;
  S[0] = MatX::Zero(nx, nU);
  for (int k = 0; k < n; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    Eigen::PartialPivLU<MatX> lu(I - 0.5 * h * At[uk + 1]);
    const MatX Phi = lu.solve(I + 0.5 * h * At[uk]);
    const MatX Gam = lu.solve(h * ltv.B);
    const VecX drift = interval_drift(ltv, uk, h);
    s[uk + 1] = Phi * s[uk] + lu.solve(drift - 0.5 * h * (et[uk] + et[uk + 1]));
    S[uk + 1] = MatX::Zero(nx, nU);
    if (k > 0) S[uk + 1].leftCols(k * nu).noalias() = Phi * S[uk].leftCols(k * nu);
    S[uk + 1].middleCols(k * nu, nu) = Gam;
  }

  QpProblem qp;
  qp.H = MatX::Zero(nU, nU);
  qp.g = VecX::Zero(nU);
  for (int k = 0; k <= n; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const LtvNode& node = ltv.nodes[uk];
    const int cols = k * nu;
    double wy = cw.node[uk];
    if (k == n) wy += cfg.terminal_scale;
    const double wa = cw.node[uk];
    const VecX a0 = node.xa_bar + node.G * (s[uk] - node.x_bar);
    const VecX y0 = ltv.C * s[uk] + ltv.Gy * a0;
    const VecX ey = y0 - tg.y_ref[uk];
    const VecX ea = a0 - xa_target(node, cfg);
    const VecX ex = s[uk] - node.x_bar;
    if (cols == 0) continue;
    const MatX dA = node.G * S[uk].leftCols(cols);
    const MatX dY = ltv.C * S[uk].leftCols(cols) + ltv.Gy * dA;
    qp.H.topLeftCorner(cols, cols).noalias() += 2.0 * wy * dY.transpose() * cw.P.asDiagonal() * dY;
    qp.H.topLeftCorner(cols, cols).noalias() += 2.0 * wa * dA.transpose() * cw.R.asDiagonal() * dA;
    qp.g.head(cols).noalias() += 2.0 * wy * dY.transpose() * cw.P.cwiseProduct(ey);
    qp.g.head(cols).noalias() += 2.0 * wa * dA.transpose() * cw.R.cwiseProduct(ea);
    const MatX& dX = S[uk];
    qp.H.topLeftCorner(cols, cols).noalias() +=
        2.0 * wa * dX.leftCols(cols).transpose() * cw.S.asDiagonal() * dX.leftCols(cols);
    qp.g.head(cols).noalias() += 2.0 * wa * dX.leftCols(cols).transpose() * cw.S.cwiseProduct(ex);
  }
  for (int k = 0; k < n; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    qp.H.block(k * nu, k * nu, nu, nu).diagonal() += 2.0 * h * cw.Q;
    qp.g.segment(k * nu, nu) -= 2.0 * h * cw.Q.cwiseProduct(tg.u_ref[uk]);
  }
  qp.H = 0.5 * (qp.H + qp.H.transpose());
  qp.lb.resize(nU);
  qp.ub.resize(nU);
  for (int k = 0; k < n; ++k) {
    qp.lb.segment(k * nu, nu) = tg.u_min;
    qp.ub.segment(k * nu, nu) = tg.u_max;
  }
  if (cfg.enforce_state_bounds) {
    qp.C = MatX(n * nx, nU);
    qp.cl.resize(n * nx);
    qp.cu.resize(n * nx);
    for (int k = 1; k <= n; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      qp.C.middleRows((k - 1) * nx, nx) = S[uk];
      qp.cl.segment((k - 1) * nx, nx) = tg.x_min - s[uk];
      qp.cu.segment((k - 1) * nx, nx) = tg.x_max - s[uk];
    }
  }

  VecX warm;
  if (warm_u && warm_u->size() == nU) warm = *warm_u;
  const QpResult r = solve_qp(qp, cfg.qp, warm.size() ? &warm : nullptr);

  // Full-space primal point.
  const CollocationQp full = build_collocation(ltv, tg, cfg);
  VecX w = VecX::Zero(full.n_variables());
  for (int k = 0; k <= n; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const LtvNode& node = ltv.nodes[uk];
    const VecX xk = s[uk] + S[uk] * r.x;
    w.segment(full.xd(k), nx) = xk;
    w.segment(full.xa(k), na) = node.xa_bar + node.G * (xk - node.x_bar);
  }
  for (int k = 0; k < n; ++k) w.segment(full.u(k), nu) = r.x.segment(k * nu, nu);

  // Full-space multipliers: bounds map one to one, equalities by recursion.
  QpResult fr;
  fr.x = w;
  fr.z_lower = VecX::Zero(w.size());
  fr.z_upper = VecX::Zero(w.size());
  for (int k = 0; k < n; ++k) {
    fr.z_lower.segment(full.u(k), nu) = r.z_lower.segment(k * nu, nu);
    fr.z_upper.segment(full.u(k), nu) = r.z_upper.segment(k * nu, nu);
  }
  if (cfg.enforce_state_bounds) {
    for (int k = 1; k <= n; ++k) {
      fr.z_lower.segment(full.xd(k), nx) = r.w_lower.segment((k - 1) * nx, nx);
      fr.z_upper.segment(full.xd(k), nx) = r.w_upper.segment((k - 1) * nx, nx);
    }
  }
  const VecX net = full.qp.H * w + full.qp.g - fr.z_lower + fr.z_upper;
  fr.y = VecX::Zero(full.n_equalities());
  auto pi = [&](int k) { return fr.y.segment(nx + k * na, na); };
  auto rho = [&](int k) { return fr.y.segment(nx + (n + 1) * na + k * nx, nx); };
  VecX rho_next = VecX::Zero(nx);  // rho_k while processing node k
  for (int k = n; k >= 1; --k) {
    const LtvNode& node = ltv.nodes[static_cast<std::size_t>(k)];
    MatX K(na + nx, na + nx);
    K << node.F.transpose(), -0.5 * h * node.E.transpose(), node.W.transpose(), (I - 0.5 * h * node.A).transpose();
    VecX rhs(na + nx);
    rhs.head(na) = -net.segment(full.xa(k), na) + 0.5 * h * node.E.transpose() * rho_next;
    rhs.tail(nx) = -net.segment(full.xd(k), nx) + (I + 0.5 * h * node.A).transpose() * rho_next;
    const VecX sol = K.partialPivLu().solve(rhs);
    pi(k) = sol.head(na);
    rho(k - 1) = sol.tail(nx);
    rho_next = sol.tail(nx);
  }
  {
    const LtvNode& node = ltv.nodes.front();
    const VecX rhs = -net.segment(full.xa(0), na) + 0.5 * h * node.E.transpose() * rho_next;
    pi(0) = node.F.transpose().partialPivLu().solve(rhs);
    fr.y.head(nx) = -net.segment(full.xd(0), nx) - node.W.transpose() * pi(0) +
                    (I + 0.5 * h * node.A).transpose() * rho_next;
  }
  fr.w_lower.resize(0);
  fr.w_upper.resize(0);

  MpcSolution out;
  out.iterations = r.iterations;
  out.converged = r.converged;
  out.kkt = kkt_residuals(full.qp, fr);
  out.objective = 0.5 * w.dot(full.qp.H * w) + full.qp.g.dot(w) + full.constant;
  unpack(full, w, out);
  equality_defects(full, w, out);
  out.active_bounds = count_active(qp, r.x);
  if (cfg.enforce_state_bounds) {
    for (Eigen::Index i = 0; i < qp.C.rows(); ++i) {
      const double v = qp.C.row(i).dot(r.x);
      if (v - qp.cl(i) < 1e-7 || qp.cu(i) - v < 1e-7) ++out.active_bounds;
    }
  }
  out.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Closed loop

ClosedLoopResult mpc_loop(const CoupledSystem& sys, const PlantConfig& plant_cfg, const ReferenceTrajectory& ref,
                          const EstimatorConfig* est_cfg, const MpcConfig& cfg, std::uint64_t seed,
                          const KinematicParams* fixed_p_hat) {
  cfg.validate();
  if (std::abs(cfg.dt - ref.dt) > 1e-12) throw ConfigError("mpc.dt_s must equal the reference sample period");
  const int n = cfg.steps();
  const int nr = sys.n_robots();
  Plant plant = make_plant(sys, plant_cfg, ref, seed);
  std::unique_ptr<Estimator> estimator;
  if (est_cfg) estimator = std::make_unique<Estimator>(sys, *est_cfg, plant_cfg.w_ext);
  KinematicParams p_hat = fixed_p_hat ? *fixed_p_hat : KinematicParams::zeros(nr);

  ClosedLoopResult out;
  out.ticks.reserve(ref.size());
  std::map<std::size_t, LtvNode> cache;
  std::map<std::size_t, VecX> defects;  // independent of p_hat
  VecX cached_for = p_hat.values;
  VecX warm;
  VecX u_prev = ref.u_stacked(0);
  VecX pending;  // one-step delay buffer
  int failures = 0;
  const MpcTargets limits = horizon_targets(sys, ref, 0, n, VecX::Zero(sys.differential_size()));

  SensorFrame frame = plant.measure(u_prev);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    ClosedLoopTick tick;
    if (estimator && estimator->observe(frame)) p_hat = estimator->p_hat();
    const VecX u_ref = ref.u_stacked(k);
    VecX u = u_ref;
    if (frame.t + 1e-9 >= cfg.start_time) {
      tick.mpc_active = true;
      if (p_hat.values != cached_for) {
        cache.clear();
        cached_for = p_hat.values;
      }
      try {
        LtvModel ltv;
        for (int j = 0; j <= n; ++j) {
          const std::size_t idx = std::min(k + static_cast<std::size_t>(j), ref.size() - 1);
          auto it = cache.find(idx);
          if (it == cache.end()) it = cache
                   .emplace(idx, linearize_node(sys, plant_cfg, ref[idx], p_hat, cfg,
                                                ref.unperturbed.empty() ? nullptr : &ref.unperturbed[idx]))
                   .first;
          ltv.nodes.push_back(it->second);
        }
        cache.erase(cache.begin(), cache.lower_bound(k));
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = std::min(k + static_cast<std::size_t>(j), ref.size() - 1);
          auto it = defects.find(idx);
          if (it == defects.end()) it = defects.emplace(idx, reference_defect(sys, plant_cfg, ref, idx, cfg)).first;
          ltv.defects.push_back(it->second);
        }
        defects.erase(defects.begin(), defects.lower_bound(k));
        ltv.B = input_matrix(sys, plant_cfg);
        ltv.C = output_matrix_C(sys);
        ltv.Gy = output_matrix_G(sys);
        PlantState x0;
        x0.q_m = frame.q_m;
        x0.q_sp = plant.state().q_sp;
        const MpcTargets tg = horizon_targets(sys, ref, k, n, x0.stacked());
        const MpcSolution sol = solve_mpc(ltv, tg, cfg, warm.size() ? &warm : nullptr);
        tick.objective = sol.objective;
        tick.kkt = sol.kkt.max();
        tick.defect = std::max(sol.dynamics_defect, sol.algebraic_defect);
        tick.iterations = sol.iterations;
        tick.solve_time = sol.solve_time;
        if (!sol.converged) throw ConvergenceError("QP did not converge", sol.kkt.max());
        failures = 0;
        u = sol.u.front();
        if (cfg.one_step_delay) {
          const VecX next = sol.u.size() > 1 ? sol.u[1] : sol.u.front();
          u = pending.size() ? pending : u_ref;
          pending = next;
        }
        warm.resize(n * sys.input_size());
        for (int j = 0; j < n; ++j)
          warm.segment(j * sys.input_size(), sys.input_size()) = sol.u[static_cast<std::size_t>(std::min(j + 1, n - 1))];
      } catch (const std::runtime_error& e) {
        tick.degraded = true;
        u = u_prev.cwiseMax(limits.u_min).cwiseMin(limits.u_max);
        if (++failures >= 3) {
          out.aborted = true;
          out.abort_reason = std::string("three consecutive MPC failures at t = ") + std::to_string(frame.t) +
                             " s: " + e.what();
        }
      }
    }
    tick.p_hat = p_hat.values;
    tick.plant = make_record(plant, frame, u);
    out.ticks.push_back(std::move(tick));
    if (out.aborted) break;
    u_prev = u;
    if (k + 1 == ref.size()) break;
    try {
      frame = plant.advance(u, ref.dt);
    } catch (const std::runtime_error& e) {
      out.aborted = true;
      out.abort_reason = std::string("plant failure after t = ") + std::to_string(frame.t) + " s: " + e.what();
      break;
    }
  }
  if (estimator) out.estimation = estimator->trace();
  return out;
}

}  // namespace coupled
