#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "coupled/spatial.hpp"

using namespace coupled;

TEST_SUITE("spatial") {
  TEST_CASE("hat of zero and of (1,2,3)") {
    CHECK(hat(Vec3::Zero()).isZero(0.0));
    Mat3 expected;
    expected << 0, -3, 2, 3, 0, -1, -2, 1, 0;
    CHECK(hat(Vec3(1, 2, 3)) == expected);
  }

  TEST_CASE("hat is the cross product") {
    const Vec3 a(0.3, -1.2, 2.0), b(-0.7, 0.4, 1.1);
    CHECK((hat(a) * b - a.cross(b)).norm() < 1e-15);
  }

  TEST_CASE("vee inverts hat and rejects non-skew input") {
    CHECK(vee(Mat3::Zero()).isZero(0.0));
    CHECK(vee(hat(Vec3(1, 2, 3))) == Vec3(1, 2, 3));
    CHECK_THROWS_AS(vee(Mat3::Identity()), std::invalid_argument);
  }

  TEST_CASE("pose_diff basics") {
    const Pose t(rpy(Vec3(0.1, -0.2, 0.3)), Vec3(0.4, 0.5, 0.6));
    CHECK(pose_diff(t, t).norm() == doctest::Approx(0.0));

    const Pose shifted(t.rotation, t.translation + Vec3(0.01, 0, 0));
    const TwistError d = pose_diff(shifted, t);
    CHECK(d.rotational.norm() < 1e-15);
    CHECK((d.translational - Vec3(0.01, 0, 0)).norm() < 1e-15);
  }

  TEST_CASE("pose_diff small rotation about z") {
    const TwistError d = pose_diff(Pose::from_rotation(rot_z(0.002)), Pose::identity());
    // 1/2 (R - R^T) for a z rotation has vee (0, 0, sin a).
    CHECK(std::abs(d.rotational.z() - std::sin(0.002)) < 1e-15);
    CHECK(std::abs(d.rotational.z() - 0.002) < 1e-8);
    CHECK(d.rotational.head<2>().norm() < 1e-15);
  }

  TEST_CASE("small_pose") {
    const Pose id = small_pose(TwistError{});
    CHECK((id.rotation - Mat3::Identity()).norm() == 0.0);
    CHECK(id.translation.norm() == 0.0);

    const Pose tr = small_pose(TwistError(Vec3::Zero(), Vec3(1e-3, -2e-3, 3e-3)));
    CHECK((tr.rotation - Mat3::Identity()).norm() == 0.0);
    CHECK((tr.translation - Vec3(1e-3, -2e-3, 3e-3)).norm() == 0.0);

    // First-order consistency: the error shrinks like |delta|^2.
    const Vec3 dir_r(0.3, -0.5, 0.8), dir_t(1.0, 0.2, -0.4);
    double prev = 0.0;
    for (double s : {1e-2, 1e-3, 1e-4}) {
      const TwistError delta(s * dir_r, s * dir_t);
      const TwistError back = pose_diff(small_pose(delta), Pose::identity());
      const double err = (back.stacked() - delta.stacked()).norm();
      CHECK(err < 10 * s * s);
      if (prev > 0.0) CHECK(err < prev);
      prev = err;
    }
  }

  TEST_CASE("small rotation partials match finite differences") {
    const Vec3 a(0.02, -0.01, 0.03);
    const auto partials = small_rotation_partials(a);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Vec3 ap = a, am = a;
      ap(k) += h;
      am(k) -= h;
      const Mat3 fd = (small_pose(TwistError(ap, Vec3::Zero())).rotation -
                       small_pose(TwistError(am, Vec3::Zero())).rotation) / (2 * h);
      CHECK((fd - partials[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("rpy is fixed-axis z-y-x") {
    const Vec3 v(0.2, -0.4, 0.9);
    CHECK((rpy(v) - rot_z(v.z()) * rot_y(v.y()) * rot_x(v.x())).norm() < 1e-15);
    CHECK((rot_axis(Vec3::UnitY(), 0.7) - rot_y(0.7)).norm() < 1e-15);
  }

  TEST_CASE("pose algebra") {
    const Pose a(rpy(Vec3(0.3, 0.1, -0.2)), Vec3(1, 2, 3));
    const Pose b(rpy(Vec3(-0.5, 0.4, 0.6)), Vec3(-0.2, 0.1, 0.7));
    const Pose e = a * a.inverse();
    CHECK((e.rotation - Mat3::Identity()).norm() < 1e-15);
    CHECK(e.translation.norm() < 1e-15);
    const Vec3 p(0.3, -0.6, 0.9);
    CHECK(((a * b).apply(p) - a.apply(b.apply(p))).norm() < 1e-14);
    CHECK(a.is_valid());
  }

  TEST_CASE("block_rotation acts on both halves") {
    const Mat3 r = rpy(Vec3(0.1, 0.2, 0.3));
    Vec6 v;
    v << 1, 2, 3, 4, 5, 6;
    const Vec6 w = block_rotation(r) * v;
    CHECK((w.head<3>() - r * v.head<3>()).norm() < 1e-15);
    CHECK((w.tail<3>() - r * v.tail<3>()).norm() < 1e-15);
  }
}
