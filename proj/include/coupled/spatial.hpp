#pragma once

#include <array>

#include <Eigen/Dense>

namespace coupled {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Mat6X = Eigen::Matrix<double, 6, Eigen::Dynamic>;

/// Rigid transform. Rotation is kept orthonormal by construction; nothing in
/// this module re-orthonormalizes.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {}

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static Pose from_rotation(const Mat3& r) { return {r, Vec3::Zero()}; }

  Pose operator*(const Pose& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -rt * translation};
  }
  Eigen::Matrix4d matrix() const;
  bool is_valid(double tol = 1e-10) const;
};

/// Small pose error, rotational block first.
struct TwistError {
  Vec3 rotational = Vec3::Zero();
  Vec3 translational = Vec3::Zero();

  TwistError() = default;
  TwistError(const Vec3& rot, const Vec3& trans) : rotational(rot), translational(trans) {}

  Vec6 stacked() const;
  static TwistError from_stacked(const Vec6& v);
  double norm() const { return stacked().norm(); }
};

Mat3 hat(const Vec3& v);

/// Inverse of hat. Throws std::invalid_argument when ||S + S^T|| >= tol.
Vec3 vee(const Mat3& s, double tol = 1e-9);

Mat3 rot_x(double a);
Mat3 rot_y(double a);
Mat3 rot_z(double a);
/// Rotation about an arbitrary unit axis (Rodrigues).
Mat3 rot_axis(const Vec3& axis, double angle);
/// Fixed-axis roll-pitch-yaw: Rz(yaw) * Ry(pitch) * Rx(roll).
Mat3 rpy(const Vec3& roll_pitch_yaw);

/// diff(T1, T2) = [ (1/2 (R2^T R1 - R1^T R2))^vee ; t1 - t2 ].
TwistError pose_diff(const Pose& t1, const Pose& t2);

/// First-order pose perturbation. Rotation is Rx(d1) * Ry(d2) * Rz(d3),
/// translation is the translational block verbatim.
Pose small_pose(const TwistError& delta);

/// Partial derivatives of Rx(a1) Ry(a2) Rz(a3) with respect to a1, a2, a3.
std::array<Mat3, 3> small_rotation_partials(const Vec3& angles);

/// Block transform diag(R, R) acting on [rotational; translational] 6-vectors.
Mat6 block_rotation(const Mat3& r);

}  // namespace coupled
