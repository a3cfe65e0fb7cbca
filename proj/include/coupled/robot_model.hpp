#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coupled/spatial.hpp"

namespace coupled {

/// Fixed transform from the previous joint frame to this joint's frame at
/// q = 0, followed by a revolute rotation about `axis` (in the joint frame).
struct JointSpec {
  Vec3 origin_xyz = Vec3::Zero();
  Vec3 origin_rpy = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
};

/// Inertial parameters of the link driven by a joint, in that joint's frame.
struct LinkInertia {
  double mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about the COM
};

struct RobotModel {
  std::string name;
  std::vector<JointSpec> joints;
  std::vector<LinkInertia> links;
  Pose flange_offset;  // last joint frame -> flange
  Pose tcp_offset;     // flange -> nominal attachment frame {t_i}
  VecX joint_stiffness;  // K_J diagonal, N*m/rad
  VecX q_min, q_max;     // rad
  VecX qd_min, qd_max;   // rad/s

  int n_joints() const { return static_cast<int>(joints.size()); }

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct JointState {
  VecX q;
  VecX qd;
  VecX qdd;
};

/// Pose of {t_i} (optionally post-multiplied by `tool`) in the robot base frame.
Pose forward_kinematics(const RobotModel& model, const VecX& q, const Pose& tool = Pose::identity());

/// Geometric Jacobian of the {t_i}*tool frame in the base frame, rows
/// [angular; linear].
Mat6X jacobian(const RobotModel& model, const VecX& q, const Pose& tool = Pose::identity());

/// (d/dt J) * qd for the same frame, by central differences along qd.
Vec6 jacobian_dot_times_qd(const RobotModel& model, const VecX& q, const VecX& qd,
                           const Pose& tool = Pose::identity());

/// Recursive Newton-Euler: M(q) qdd + h(q, qd) + g(q). `gravity` is the
/// gravitational acceleration in the base frame (e.g. (0, 0, -9.81)).
VecX inverse_dynamics(const RobotModel& model, const JointState& s, const Vec3& gravity);

VecX gravity_torque(const RobotModel& model, const VecX& q, const Vec3& gravity);

MatX mass_matrix(const RobotModel& model, const VecX& q);

/// JSON model file I/O. Field names carry their units.
RobotModel load_robot_model(const std::filesystem::path& path);
RobotModel robot_model_from_json_text(const std::string& text);
std::string robot_model_to_json_text(const RobotModel& model);

}  // namespace coupled
