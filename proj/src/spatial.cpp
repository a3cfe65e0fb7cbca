#include "coupled/spatial.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace coupled {

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(rotation.determinant() - 1.0) < tol;
}

Vec6 TwistError::stacked() const {
  Vec6 v;
  v << rotational, translational;
  return v;
}

TwistError TwistError::from_stacked(const Vec6& v) {
  return {v.head<3>(), v.tail<3>()};
}

Mat3 hat(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return s;
}

Vec3 vee(const Mat3& s, double tol) {
  const double asym = (s + s.transpose()).norm();
  if (!(asym < tol)) {
    std::ostringstream msg;
    msg << "vee: matrix is not skew-symmetric (||S + S^T|| = " << asym << ")";
    throw std::invalid_argument(msg.str());
  }
  // Average the redundant entries so round-off in S does not bias one side.
  return {0.5 * (s(2, 1) - s(1, 2)), 0.5 * (s(0, 2) - s(2, 0)), 0.5 * (s(1, 0) - s(0, 1))};
}

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

Mat3 rot_axis(const Vec3& axis, double angle) {
  const Mat3 k = hat(axis);
  return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

Mat3 rpy(const Vec3& a) { return rot_z(a.z()) * rot_y(a.y()) * rot_x(a.x()); }

TwistError pose_diff(const Pose& t1, const Pose& t2) {
  const Mat3& r1 = t1.rotation;
  const Mat3& r2 = t2.rotation;
  const Mat3 s = 0.5 * (r2.transpose() * r1 - r1.transpose() * r2);
  // s is skew by construction; read it off directly instead of going through
  // the checked vee so the operator stays total.
  const Vec3 rot{0.5 * (s(2, 1) - s(1, 2)), 0.5 * (s(0, 2) - s(2, 0)), 0.5 * (s(1, 0) - s(0, 1))};
  return {rot, t1.translation - t2.translation};
}

Pose small_pose(const TwistError& d) {
  const Vec3& a = d.rotational;
  return {rot_x(a.x()) * rot_y(a.y()) * rot_z(a.z()), d.translational};
}

std::array<Mat3, 3> small_rotation_partials(const Vec3& a) {
  const Mat3 rx = rot_x(a.x()), ry = rot_y(a.y()), rz = rot_z(a.z());
  // d/da R(a) = R(a) * hat(axis) for each elementary rotation.
  return {rx * hat(Vec3::UnitX()) * ry * rz,
          rx * ry * hat(Vec3::UnitY()) * rz,
          rx * ry * rz * hat(Vec3::UnitZ())};
}

Mat6 block_rotation(const Mat3& r) {
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = r;
  m.bottomRightCorner<3, 3>() = r;
  return m;
}

}  // namespace coupled
