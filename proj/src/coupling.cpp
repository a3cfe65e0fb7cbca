#include "coupled/coupling.hpp"

#include <sstream>

#include "coupled/errors.hpp"

namespace coupled {

void CoupledSystem::validate() const {
  if (robots.size() < 2) throw ConfigError("coupled system: at least two robots are required");
  if (bases.size() != robots.size()) throw ConfigError("coupled system: one base pose per robot is required");
  if (coupler.attachments.size() != robots.size())
    throw ConfigError("coupled system: one coupler attachment per robot is required");
  const int n = robots.front().n_joints();
  for (std::size_t i = 0; i < robots.size(); ++i) {
    robots[i].validate();
    if (robots[i].n_joints() != n)
      throw ConfigError("coupled system: robot " + std::to_string(i + 1) + " has " +
                        std::to_string(robots[i].n_joints()) + " joints, expected " + std::to_string(n));
    if (!bases[i].is_valid(1e-9)) throw ConfigError("coupled system: invalid base pose for robot " + std::to_string(i + 1));
  }
  const Pose& b0 = bases.front();
  if ((b0.rotation - Mat3::Identity()).norm() > 1e-12 || b0.translation.norm() > 1e-12)
    throw ConfigError("coupled system: robot 1 base must coincide with the world frame");
  if (coupler.mass < 0.0) throw ConfigError("coupler: mass must be >= 0");
  if ((coupler.inertia - coupler.inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("coupler: inertia must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat3> es(coupler.inertia);
  if (es.eigenvalues().minCoeff() < -1e-12) throw ConfigError("coupler: inertia must be positive semidefinite");
}

// ---------------------------------------------------------------------------
// KinematicParams

KinematicParams KinematicParams::zeros(int n_robots) {
  KinematicParams p;
  p.n_followers = n_robots - 1;
  p.values = VecX::Zero(kPerRobot * p.n_followers);
  p.mask = default_mask(n_robots);
  return p;
}

std::vector<bool> KinematicParams::default_mask(int n_robots) {
  std::vector<bool> m(static_cast<std::size_t>(kPerRobot * (n_robots - 1)), false);
  for (int f = 0; f < n_robots - 1; ++f) {
    for (int idx : {3, 5, 6, 8, 11}) m[static_cast<std::size_t>(kPerRobot * f + idx)] = true;
  }
  return m;
}

TwistError KinematicParams::base_error(int robot) const {
  const int o = kPerRobot * (robot - 1);
  return {values.segment<3>(o), values.segment<3>(o + 3)};
}

TwistError KinematicParams::coupler_error(int robot) const {
  const int o = kPerRobot * (robot - 1);
  return {values.segment<3>(o + 6), values.segment<3>(o + 9)};
}

std::vector<int> KinematicParams::estimated_indices() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(static_cast<int>(i));
  return idx;
}

int KinematicParams::n_estimated() const { return static_cast<int>(estimated_indices().size()); }

VecX KinematicParams::estimated() const {
  const auto idx = estimated_indices();
  VecX v(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) v(static_cast<Eigen::Index>(k)) = values(idx[k]);
  return v;
}

void KinematicParams::set_estimated(const VecX& v) {
  const auto idx = estimated_indices();
  if (v.size() != static_cast<Eigen::Index>(idx.size()))
    throw std::invalid_argument("KinematicParams::set_estimated: size mismatch");
  for (std::size_t k = 0; k < idx.size(); ++k) values(idx[k]) = v(static_cast<Eigen::Index>(k));
}

void KinematicParams::apply_mask() {
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) values(static_cast<Eigen::Index>(i)) = 0.0;
}

std::string KinematicParams::label(int index) {
  static const char* kNames[kPerRobot] = {"base_rot_x",  "base_rot_y",  "base_rot_z",  "base_trans_x",
                                          "base_trans_y", "base_trans_z", "cp_rot_x",    "cp_rot_y",
                                          "cp_rot_z",    "cp_trans_x",  "cp_trans_y",  "cp_trans_z"};
  return "r" + std::to_string(index / kPerRobot + 2) + "_" + kNames[index % kPerRobot];
}

// ---------------------------------------------------------------------------
// AlgebraicState

VecX AlgebraicState::stacked() const {
  const int nr = static_cast<int>(tau_m.size());
  const int nj = nr ? static_cast<int>(tau_m.front().size()) : 0;
  VecX x(nr * nj + 6 * nr);
  for (int i = 0; i < nr; ++i) {
    x.segment(i * nj, nj) = tau_m[static_cast<std::size_t>(i)];
    x.segment<6>(nr * nj + 6 * i) = lambda[static_cast<std::size_t>(i)];
  }
  return x;
}

AlgebraicState AlgebraicState::from_stacked(const VecX& x, int nr, int nj) {
  if (x.size() != nr * nj + 6 * nr) throw std::invalid_argument("AlgebraicState: stacked size mismatch");
  AlgebraicState s;
  for (int i = 0; i < nr; ++i) {
    s.tau_m.emplace_back(x.segment(i * nj, nj));
    s.lambda.emplace_back(x.segment<6>(nr * nj + 6 * i));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Kinematics of the closed chain

Pose nominal_tcp_pose(const CoupledSystem& sys, int robot, const VecX& q) {
  const auto r = static_cast<std::size_t>(robot);
  return sys.bases[r] * forward_kinematics(sys.robots[r], q, sys.coupler.attachments[r]);
}

Pose tcp_pose_with_errors(const CoupledSystem& sys, int robot, const VecX& q, const KinematicParams& p) {
  if (robot == 0) return nominal_tcp_pose(sys, 0, q);
  const auto r = static_cast<std::size_t>(robot);
  const Pose kin = forward_kinematics(sys.robots[r], q, sys.coupler.attachments[r]);
  return sys.bases[r] * small_pose(p.base_error(robot)) * kin * small_pose(p.coupler_error(robot));
}

TwistError gap_vector(const CoupledSystem& sys, const VecX& q_ref_robot, const VecX& q_robot, int robot,
                      const KinematicParams& p) {
  return pose_diff(tcp_pose_with_errors(sys, robot, q_robot, p), nominal_tcp_pose(sys, 0, q_ref_robot));
}

Eigen::Matrix<double, 6, 12> gap_parameter_jacobian(const CoupledSystem& sys, const VecX& q_ref_robot,
                                                    const VecX& q_robot, int robot, const KinematicParams& p) {
  const auto r = static_cast<std::size_t>(robot);
  const Pose ref = nominal_tcp_pose(sys, 0, q_ref_robot);
  const Pose kin = forward_kinematics(sys.robots[r], q_robot, sys.coupler.attachments[r]);
  const TwistError db = p.base_error(robot);
  const TwistError dc = p.coupler_error(robot);
  const Pose base = sys.bases[r];
  const Mat3 rb = rot_x(db.rotational.x()) * rot_y(db.rotational.y()) * rot_z(db.rotational.z());
  const Mat3 rc = rot_x(dc.rotational.x()) * rot_y(dc.rotational.y()) * rot_z(dc.rotational.z());
  const auto drb = small_rotation_partials(db.rotational);
  const auto drc = small_rotation_partials(dc.rotational);
  const Mat3& r2 = ref.rotation;

  auto rot_part = [&](const Mat3& dr1) {
    const Mat3 s = 0.5 * (r2.transpose() * dr1 - dr1.transpose() * r2);
    return Vec3{0.5 * (s(2, 1) - s(1, 2)), 0.5 * (s(0, 2) - s(2, 0)), 0.5 * (s(1, 0) - s(0, 1))};
  };

  Eigen::Matrix<double, 6, 12> d = Eigen::Matrix<double, 6, 12>::Zero();
  const Vec3 inner = kin.rotation * dc.translational + kin.translation;  // point in the perturbed base frame
  for (int k = 0; k < 3; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    // base rotation
    const Mat3 dR_b = base.rotation * drb[uk] * kin.rotation * rc;
    d.block<3, 1>(0, k) = rot_part(dR_b);
    d.block<3, 1>(3, k) = base.rotation * drb[uk] * inner;
    // base translation
    d.block<3, 1>(3, 3 + k) = base.rotation.col(k);
    // coupler rotation
    const Mat3 dR_c = base.rotation * rb * kin.rotation * drc[uk];
    d.block<3, 1>(0, 6 + k) = rot_part(dR_c);
    // coupler translation
    d.block<3, 1>(3, 9 + k) = base.rotation * rb * kin.rotation.col(k);
  }
  return d;
}

Mat6X world_jacobian(const CoupledSystem& sys, int robot, const VecX& q) {
  const auto r = static_cast<std::size_t>(robot);
  return block_rotation(sys.bases[r].rotation) * jacobian(sys.robots[r], q, sys.coupler.attachments[r]);
}

TcpMotion tcp_motion(const CoupledSystem& sys, const RobotMotion& m) {
  TcpMotion out;
  out.pose = nominal_tcp_pose(sys, 0, m.q);
  const Mat6X jac = world_jacobian(sys, 0, m.q);
  out.velocity = jac * m.qd;
  out.acceleration = jac * m.qdd;
  if (m.qd.squaredNorm() > 0.0)
    out.acceleration += block_rotation(sys.bases[0].rotation) *
                        jacobian_dot_times_qd(sys.robots[0], m.q, m.qd, sys.coupler.attachments[0]);
  return out;
}

Vec6 coupler_wrench(const CouplerModel& c, const TcpMotion& m, const Vec3& gravity) {
  if (c.mass == 0.0 && c.inertia.isZero(0.0)) return Vec6::Zero();
  const Mat3& rot = m.pose.rotation;
  const Vec3 omega = m.velocity.head<3>();
  const Vec3 alpha = m.acceleration.head<3>();
  const Vec3 r = rot * c.com;
  const Vec3 a_com = m.acceleration.tail<3>() + alpha.cross(r) + omega.cross(omega.cross(r));
  const Vec3 force = c.mass * (a_com - gravity);
  const Mat3 inertia_w = rot * c.inertia * rot.transpose();
  Vec6 w;
  w.head<3>() = inertia_w * alpha + omega.cross(inertia_w * omega) + r.cross(force);
  w.tail<3>() = force;
  return w;
}

// ---------------------------------------------------------------------------
// Algebraic system

AlgebraicSystem assemble_algebraic(const CoupledSystem& sys, const std::vector<RobotMotion>& motions,
                                   const KinematicParams& p, const Vec6& w_ext_world) {
  const int nr = sys.n_robots();
  const int nj = sys.n_joints();
  if (static_cast<int>(motions.size()) != nr)
    throw std::invalid_argument("assemble_algebraic: one motion per robot is required");
  for (const auto& m : motions) {
    if (m.q.size() != nj || m.qd.size() != nj || m.qdd.size() != nj)
      throw std::invalid_argument("assemble_algebraic: motion dimension does not match the robot models");
  }
  if (p.values.size() != KinematicParams::kPerRobot * (nr - 1))
    throw std::invalid_argument("assemble_algebraic: parameter vector does not match the robot count");

  AlgebraicSystem a;
  const int n = sys.algebraic_size();
  a.F = MatX::Zero(n, n);
  a.b = VecX::Zero(n);

  const Pose ref = nominal_tcp_pose(sys, 0, motions[0].q);
  a.constraint_rotation = ref.rotation;
  Mat6 to_constraint = Mat6::Identity();
  to_constraint.topLeftCorner<3, 3>() = ref.rotation.transpose();

  a.jacobians.resize(static_cast<std::size_t>(nr));
  a.tau_rbd.resize(static_cast<std::size_t>(nr));
  a.gaps.assign(static_cast<std::size_t>(nr), Vec6::Zero());
  for (int i = 0; i < nr; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    a.jacobians[ui] = to_constraint * world_jacobian(sys, i, motions[ui].q);
    // Inverse dynamics runs in the robot's base frame.
    const Vec3 g_base = sys.bases[ui].rotation.transpose() * sys.gravity;
    a.tau_rbd[ui] = inverse_dynamics(sys.robots[ui], {motions[ui].q, motions[ui].qd, motions[ui].qdd}, g_base);
  }
  a.coupler_wrench = to_constraint * coupler_wrench(sys.coupler, tcp_motion(sys, motions[0]), sys.gravity);
  a.external_wrench = to_constraint * w_ext_world;

  const int row_cp = nr * nj;
  for (int i = 0; i < nr; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int r = i * nj;
    a.F.block(r, sys.tau_offset(i), nj, nj) = -MatX::Identity(nj, nj);
    a.F.block(r, sys.lambda_offset(i), nj, 6) = a.jacobians[ui].transpose();
    a.b.segment(r, nj) = a.tau_rbd[ui];
    a.F.block(row_cp, sys.lambda_offset(i), 6, 6) = -Mat6::Identity();
  }
  a.b.segment<6>(row_cp) = a.coupler_wrench - a.external_wrench;

  const VecX kinv0 = sys.robots[0].joint_stiffness.cwiseInverse();
  for (int i = 1; i < nr; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int r = row_cp + 6 * i;
    const VecX kinv = sys.robots[ui].joint_stiffness.cwiseInverse();
    a.F.block(r, sys.tau_offset(0), 6, nj) = a.jacobians[0] * kinv0.asDiagonal();
    a.F.block(r, sys.tau_offset(i), 6, nj) = -a.jacobians[ui] * kinv.asDiagonal();
    a.gaps[ui] = gap_vector(sys, motions[0].q, motions[ui].q, i, p).stacked();
    a.b.segment<6>(r) = a.gaps[ui];
  }
  return a;
}

LinearSolve solve_algebraic(const MatX& F, const VecX& b, double max_condition) {
  if (F.rows() != F.cols() || F.rows() != b.size())
    throw std::invalid_argument("solve_algebraic: F must be square and match b");
  Eigen::PartialPivLU<MatX> lu(F);
  const double rcond = lu.rcond();
  const double cond = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!(cond <= max_condition)) {
    std::ostringstream msg;
    msg << "algebraic system is singular or ill-conditioned (condition estimate " << cond << ")";
    throw SingularSystemError(msg.str(), cond);
  }
  LinearSolve out;
  out.x = lu.solve(b);
  // One step of iterative refinement keeps the residual at round-off level.
  out.x += lu.solve(b - F * out.x);
  out.condition = cond;
  return out;
}

AlgebraicSolution solve_coupled(const CoupledSystem& sys, const std::vector<RobotMotion>& motions,
                                const KinematicParams& p, const Vec6& w_ext_world, const CouplingOptions& options) {
  if (options.jacobian_passes < 1 || options.jacobian_passes > 2)
    throw std::invalid_argument("solve_coupled: jacobian_passes must be 1 or 2");
  AlgebraicSolution s;
  s.system = assemble_algebraic(sys, motions, p, w_ext_world);
  LinearSolve ls = solve_algebraic(s.system.F, s.system.b, options.max_condition);
  if (options.jacobian_passes == 2) {
    const AlgebraicState first = AlgebraicState::from_stacked(ls.x, sys.n_robots(), sys.n_joints());
    std::vector<RobotMotion> link = motions;
    for (std::size_t i = 0; i < link.size(); ++i)
      link[i].q = motions[i].q + sys.robots[i].joint_stiffness.cwiseInverse().cwiseProduct(first.tau_m[i]);
    s.system = assemble_algebraic(sys, link, p, w_ext_world);
    ls = solve_algebraic(s.system.F, s.system.b, options.max_condition);
  }
  s.x_a = ls.x;
  s.condition = ls.condition;
  s.state = AlgebraicState::from_stacked(ls.x, sys.n_robots(), sys.n_joints());
  return s;
}

BlockResiduals block_residuals(const CoupledSystem& sys, const AlgebraicSystem& a, const AlgebraicState& x) {
  BlockResiduals r;
  const int nr = sys.n_robots();
  Vec6 sum = Vec6::Zero();
  for (int i = 0; i < nr; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const VecX e = -x.tau_m[ui] + a.jacobians[ui].transpose() * x.lambda[ui] - a.tau_rbd[ui];
    r.robot_dynamics = std::max(r.robot_dynamics, e.cwiseAbs().maxCoeff());
    sum += x.lambda[ui];
  }
  r.coupler_balance = (-sum - (a.coupler_wrench - a.external_wrench)).cwiseAbs().maxCoeff();
  const VecX d0 = sys.robots[0].joint_stiffness.cwiseInverse().cwiseProduct(x.tau_m[0]);
  for (int i = 1; i < nr; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const VecX di = sys.robots[ui].joint_stiffness.cwiseInverse().cwiseProduct(x.tau_m[ui]);
    const Vec6 e = a.jacobians[0] * d0 - a.jacobians[ui] * di - a.gaps[ui];
    r.loop_closure = std::max(r.loop_closure, e.cwiseAbs().maxCoeff());
  }
  return r;
}

}  // namespace coupled
