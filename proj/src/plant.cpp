#include "coupled/plant.hpp"

#include <cmath>
#include <sstream>

#include "coupled/errors.hpp"

namespace coupled {

VecX default_command_filter() {
  VecX k(7);
  k << 11.5, 11.4, 7.8, 13.1, 7.2, 6.8, 7.1;
  return k * 1e-3;
}

PlantConfig PlantConfig::defaults(int n_robots, int n_joints) {
  PlantConfig c;
  c.K_P = VecX::Constant(n_joints, 2000.0);
  c.K_D = VecX::Constant(n_joints, 10.0);
  c.K_C = n_joints == 7 ? default_command_filter() : VecX::Constant(n_joints, 0.01);
  c.tau_fri.assign(static_cast<std::size_t>(n_robots), VecX::Zero(n_joints));
  c.coulomb_friction = VecX::Zero(n_joints);
  c.true_params = KinematicParams::zeros(n_robots);
  return c;
}

void PlantConfig::validate(int n_robots, int n_joints) const {
  auto sized = [&](const VecX& v, const char* name) {
    if (v.size() != n_joints)
      throw ConfigError(std::string("plant.") + name + ": expected " + std::to_string(n_joints) + " entries");
  };
  sized(K_P, "K_P");
  sized(K_D, "K_D");
  sized(K_C, "K_C");
  sized(coulomb_friction, "coulomb_friction_nm");
  for (int j = 0; j < n_joints; ++j) {
    if (!(K_P(j) > 0.0)) throw ConfigError("plant.K_P: entries must be > 0");
    if (!(K_D(j) > 0.0)) throw ConfigError("plant.K_D: entries must be > 0");
    if (!(K_C(j) >= 0.0)) throw ConfigError("plant.K_C: entries must be >= 0");
    if (!(coulomb_friction(j) >= 0.0)) throw ConfigError("plant.coulomb_friction_nm: entries must be >= 0");
  }
  if (static_cast<int>(tau_fri.size()) != n_robots) throw ConfigError("plant.tau_fri: one vector per robot");
  for (const auto& t : tau_fri) sized(t, "tau_fri");
  if (!(torque_noise_std >= 0.0)) throw ConfigError("plant.torque_noise_std_nm: must be >= 0");
  if (true_params.values.size() != KinematicParams::kPerRobot * (n_robots - 1))
    throw ConfigError("plant.true_params: expected " + std::to_string(KinematicParams::kPerRobot * (n_robots - 1)) +
                      " entries");
  if (!(internal_step > 0.0 && internal_step <= kMaxStep))
    throw ConfigError("plant.internal_step_s: must be in (0, 0.005]");
}

VecX PlantState::stacked() const {
  const int nr = static_cast<int>(q_m.size());
  const int nj = nr ? static_cast<int>(q_m.front().size()) : 0;
  VecX x(2 * nr * nj);
  for (int i = 0; i < nr; ++i) {
    x.segment(i * nj, nj) = q_m[static_cast<std::size_t>(i)];
    x.segment((nr + i) * nj, nj) = q_sp[static_cast<std::size_t>(i)];
  }
  return x;
}

PlantState PlantState::from_stacked(const VecX& x, int nr, int nj, double t) {
  PlantState s;
  s.t = t;
  for (int i = 0; i < nr; ++i) {
    s.q_m.emplace_back(x.segment(i * nj, nj));
    s.q_sp.emplace_back(x.segment((nr + i) * nj, nj));
  }
  return s;
}

double SensorFrame::consistency_error(const CoupledSystem& sys) const {
  double e = 0.0;
  for (std::size_t i = 0; i < q_m.size(); ++i) {
    const VecX d = q_link[i] - q_m[i] - sys.robots[i].joint_stiffness.cwiseInverse().cwiseProduct(tau_m[i]);
    e = std::max(e, d.cwiseAbs().maxCoeff());
  }
  return e;
}

VecX command_filter(const VecX& q_sp, const VecX& qd_sp, const VecX& K_C) {
  return q_sp - K_C.cwiseProduct(qd_sp);
}

VecX ode_rhs(const CoupledSystem& sys, const PlantConfig& cfg, const PlantState& x, const VecX& u,
             const AlgebraicState& x_a, const std::vector<Mat6X>& jacobians) {
  const int nr = sys.n_robots();
  const int nj = sys.n_joints();
  VecX xd(2 * nr * nj);
  for (int i = 0; i < nr; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const VecX ui_rate = u.segment(i * nj, nj);
    const VecX q_cmd = command_filter(x.q_sp[ui], ui_rate, cfg.K_C);
    const VecX drive = cfg.K_P.cwiseProduct(q_cmd - x.q_m[ui]) + jacobians[ui].transpose() * x_a.lambda[ui] +
                       cfg.tau_fri[ui];
    xd.segment(i * nj, nj) = drive.cwiseQuotient(cfg.K_D);
    xd.segment((nr + i) * nj, nj) = ui_rate;
  }
  return xd;
}

OdeMatrices ode_matrices(const CoupledSystem& sys, const PlantConfig& cfg, const std::vector<Mat6X>& jacobians) {
  const int nr = sys.n_robots();
  const int nj = sys.n_joints();
  const int nx = sys.differential_size();
  OdeMatrices m;
  m.A = MatX::Zero(nx, nx);
  m.B = MatX::Zero(nx, sys.input_size());
  m.E = MatX::Zero(nx, sys.algebraic_size());
  m.c = VecX::Zero(nx);
  const VecX kd_inv = cfg.K_D.cwiseInverse();
  const VecX kp_over_kd = cfg.K_P.cwiseProduct(kd_inv);
  for (int i = 0; i < nr; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int r = i * nj;
    m.A.block(r, r, nj, nj) = (-kp_over_kd).asDiagonal();
    m.A.block(r, (nr + i) * nj, nj, nj) = kp_over_kd.asDiagonal();
    m.B.block(r, i * nj, nj, nj) = (-kp_over_kd.cwiseProduct(cfg.K_C)).asDiagonal();
    m.B.block((nr + i) * nj, i * nj, nj, nj) = MatX::Identity(nj, nj);
    m.E.block(r, sys.lambda_offset(i), nj, 6) = kd_inv.asDiagonal() * jacobians[ui].transpose();
    m.c.segment(r, nj) = kd_inv.cwiseProduct(cfg.tau_fri[ui]);
  }
  return m;
}

std::vector<RobotMotion> rbd_motions(const std::vector<VecX>& q, const std::vector<VecX>& qd,
                                     const std::vector<VecX>& qdd) {
  std::vector<RobotMotion> m(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) m[i] = {q[i], qd[i], qdd[i]};
  return m;
}

// ---------------------------------------------------------------------------

Plant::Plant(CoupledSystem sys, PlantConfig cfg, PlantState initial, std::uint64_t seed)
    : sys_(std::move(sys)), cfg_(std::move(cfg)), state_(std::move(initial)), rng_(seed) {
  sys_.validate();
  cfg_.validate(sys_.n_robots(), sys_.n_joints());
  if (static_cast<int>(state_.q_m.size()) != sys_.n_robots() || static_cast<int>(state_.q_sp.size()) != sys_.n_robots())
    throw std::invalid_argument("Plant: initial state must hold one q_m and q_sp per robot");
  rbd_qd_.assign(state_.q_m.size(), VecX::Zero(sys_.n_joints()));
  rbd_qdd_ = rbd_qd_;
}

void Plant::set_rbd_motion(std::vector<VecX> qd, std::vector<VecX> qdd) {
  if (qd.size() != rbd_qd_.size() || qdd.size() != rbd_qdd_.size())
    throw std::invalid_argument("Plant::set_rbd_motion: one vector per robot");
  rbd_qd_ = std::move(qd);
  rbd_qdd_ = std::move(qdd);
  next_qd_.clear();
  next_qdd_.clear();
}

AlgebraicSolution Plant::solve_now() const {
  return solve_coupled(sys_, rbd_motions(state_.q_m, rbd_qd_, rbd_qdd_), cfg_.true_params, cfg_.w_ext, cfg_.coupling);
}

AlgebraicSolution Plant::solve_at(const PlantState& x) {
  AlgebraicSolution s;
  try {
    s = solve_coupled(sys_, rbd_motions(x.q_m, rbd_qd_, rbd_qdd_), cfg_.true_params, cfg_.w_ext, cfg_.coupling);
  } catch (const SingularSystemError& e) {
    std::ostringstream msg;
    msg << "t = " << x.t << " s: " << e.what();
    throw SingularSystemError(msg.str(), e.condition());
  }
  stats_.max_block_residual = std::max(stats_.max_block_residual, block_residuals(sys_, s.system, s.state).max());
  stats_.max_condition = std::max(stats_.max_condition, s.condition);
  ++stats_.stages;
  return s;
}

VecX Plant::derivative(const PlantState& x, const VecX& u) {
  const AlgebraicSolution s = solve_at(x);
  return ode_rhs(sys_, cfg_, x, u, s.state, s.system.jacobians);
}

void Plant::step(const VecX& u, double dt) {
  if (!(dt > 0.0) || dt > PlantConfig::kMaxStep) {
    std::ostringstream msg;
    msg << "Plant::step: dt = " << dt << " s outside (0, " << PlantConfig::kMaxStep << "]";
    throw std::invalid_argument(msg.str());
  }
  if (u.size() != sys_.input_size()) throw std::invalid_argument("Plant::step: u has the wrong size");
  const int nr = sys_.n_robots(), nj = sys_.n_joints();
  const double t = state_.t;
  const VecX x0 = state_.stacked();
  auto at = [&](const VecX& x, double tt) { return PlantState::from_stacked(x, nr, nj, tt); };
  const VecX k1 = derivative(state_, u);
  const VecX k2 = derivative(at(x0 + 0.5 * dt * k1, t + 0.5 * dt), u);
  const VecX k3 = derivative(at(x0 + 0.5 * dt * k2, t + 0.5 * dt), u);
  const VecX k4 = derivative(at(x0 + dt * k3, t + dt), u);
  state_ = at(x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), t + dt);
}

SensorFrame Plant::measure(const VecX& u) {
  const AlgebraicSolution s = solve_at(state_);
  const VecX xd = ode_rhs(sys_, cfg_, state_, u, s.state, s.system.jacobians);
  const int nr = sys_.n_robots(), nj = sys_.n_joints();
  SensorFrame f;
  f.t = state_.t;
  f.q_m = state_.q_m;
  f.rbd_qd = rbd_qd_;
  f.rbd_qdd = rbd_qdd_;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < nr; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const VecX qd = xd.segment(i * nj, nj);
    VecX tau = s.state.tau_m[ui];
    for (int j = 0; j < nj; ++j) {
      const double fc = cfg_.coulomb_friction(j);
      if (fc > 0.0 && std::abs(qd(j)) > 1e-6) tau(j) += fc * (qd(j) > 0.0 ? 1.0 : -1.0);
      if (cfg_.torque_noise_std > 0.0) tau(j) += cfg_.torque_noise_std * noise(rng_);
    }
    f.qd_m.push_back(qd);
    f.q_link.push_back(state_.q_m[ui] + sys_.robots[ui].joint_stiffness.cwiseInverse().cwiseProduct(tau));
    f.tau_m.push_back(std::move(tau));
  }
  return f;
}

SensorFrame Plant::advance(const VecX& u, double period) {
  const int n = std::max(1, static_cast<int>(std::ceil(period / cfg_.internal_step - 1e-9)));
  const double h = period / n;
  // Inverse dynamics sees the previous tick's measurement, held over the
  // whole interval, so the state at its end is consistent with it.
  if (!next_qd_.empty()) {
    rbd_qd_ = std::move(next_qd_);
    rbd_qdd_ = std::move(next_qdd_);
    next_qd_.clear();
    next_qdd_.clear();
  }
  for (int k = 0; k < n; ++k) step(u, h);
  SensorFrame f = measure(u);
  next_qdd_.resize(f.qd_m.size());
  for (std::size_t i = 0; i < next_qdd_.size(); ++i) next_qdd_[i] = (f.qd_m[i] - rbd_qd_[i]) / period;
  next_qd_ = f.qd_m;
  return f;
}

// ---------------------------------------------------------------------------

TickRecord make_record(const Plant& plant, const SensorFrame& frame, const VecX& u) {
  const CoupledSystem& sys = plant.system();
  TickRecord r;
  r.t = frame.t;
  r.state = plant.state();
  r.frame = frame;
  r.u = u;
  const AlgebraicSolution s = plant.solve_now();
  r.tau_true = s.state.tau_m;
  r.lambda = s.state.lambda;
  for (std::size_t i = 0; i < r.tau_true.size(); ++i)
    r.q_link_true.push_back(r.state.q_m[i] + sys.robots[i].joint_stiffness.cwiseInverse().cwiseProduct(r.tau_true[i]));
  r.tcp = nominal_tcp_pose(sys, 0, r.q_link_true[0]);
  if (sys.n_robots() > 1) r.gap = s.system.gaps[1];
  return r;
}

Plant make_plant(const CoupledSystem& sys, const PlantConfig& cfg, const ReferenceTrajectory& ref, std::uint64_t seed) {
  if (ref.samples.empty()) throw std::invalid_argument("reference trajectory is empty");
  const ReferenceSample& s0 = ref.samples.front();
  PlantState x0;
  x0.q_m = s0.q_motor;
  x0.q_sp = s0.q_sp;
  x0.t = s0.t;
  Plant plant(sys, cfg, x0, seed);
  plant.set_rbd_motion(s0.qd_link, s0.qdd_link);
  return plant;
}

OpenLoopResult run_open_loop(const CoupledSystem& sys, const PlantConfig& cfg, const ReferenceTrajectory& ref,
                             std::uint64_t seed) {
  Plant plant = make_plant(sys, cfg, ref, seed);
  OpenLoopResult out;
  out.ticks.reserve(ref.size());
  VecX u = ref.u_stacked(0);
  SensorFrame frame = plant.measure(u);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    u = ref.u_stacked(k);
    out.ticks.push_back(make_record(plant, frame, u));
    if (k + 1 < ref.size()) frame = plant.advance(u, ref.dt);
  }
  return out;
}

}  // namespace coupled
