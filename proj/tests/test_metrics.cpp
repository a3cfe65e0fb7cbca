#include <doctest.h>

#include "coupled/metrics.hpp"

using namespace coupled;

namespace {

ReferenceTrajectory straight_reference() {
  ReferenceTrajectory ref;
  ref.dt = 0.01;
  for (int k = 0; k <= 400; ++k) {
    ReferenceSample s;
    s.t = 0.01 * k;
    s.tcp = Pose(rot_z(0.1 * s.t), Vec3(0.5, 0.1 * s.t, 0.3));
    ref.samples.push_back(s);
  }
  return ref;
}

std::vector<TickRecord> log_from(const ReferenceTrajectory& ref, const Vec3& offset) {
  std::vector<TickRecord> log;
  for (const auto& s : ref.samples) {
    TickRecord r;
    r.t = s.t;
    r.tcp = Pose(s.tcp.rotation, s.tcp.translation + offset);
    r.tau_true = {VecX::Constant(2, s.t), VecX::Constant(2, -2.0 * s.t)};
    r.frame.tau_m = {VecX::Constant(2, 100.0), VecX::Constant(2, 100.0)};  // reported values are not used
    log.push_back(r);
  }
  return log;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("a log identical to the reference has no error") {
    const ReferenceTrajectory ref = straight_reference();
    const Metrics m = compute_metrics(log_from(ref, Vec3::Zero()), ref, 0.0);
    CHECK(m.tcp.avg_translational == 0.0);
    CHECK(m.tcp.max_translational == 0.0);
    CHECK(m.tcp.avg_rotational == 0.0);
    CHECK(m.tcp.samples == 401);
    CHECK_FALSE(m.tcp.resampled);
  }

  TEST_CASE("a constant 1 mm offset") {
    const ReferenceTrajectory ref = straight_reference();
    const Metrics m = compute_metrics(log_from(ref, Vec3(1e-3, 0, 0)), ref, 3.0);
    CHECK(m.tcp.avg_translational == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(m.tcp.max_translational == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(m.tcp.samples == 101);  // window t >= 3 s
  }

  TEST_CASE("peak torques per robot and joint") {
    const ReferenceTrajectory ref = straight_reference();
    const Metrics m = compute_metrics(log_from(ref, Vec3::Zero()), ref, 3.0);
    REQUIRE(m.peak_tau.size() == 2);
    CHECK(m.peak_tau[0](0) == doctest::Approx(4.0));
    CHECK(m.max_peak_tau == doctest::Approx(8.0));
    CHECK(m.max_peak_robot == 1);
  }

  TEST_CASE("misaligned grids are interpolated and flagged") {
    const ReferenceTrajectory ref = straight_reference();
    std::vector<double> t;
    std::vector<Pose> poses;
    for (int k = 0; k < 300; ++k) {
      t.push_back(0.005 + 0.013 * k);
      poses.push_back(reference_pose_at(ref, t.back()));
    }
    const TcpErrorMetrics e = tcp_errors(t, poses, ref, 0.0);
    CHECK(e.resampled);
    CHECK(e.max_translational < 1e-15);
    bool interp = false;
    const Pose mid = reference_pose_at(ref, 1.005, &interp);
    CHECK(interp);
    CHECK((mid.translation - Vec3(0.5, 0.1005, 0.3)).norm() < 1e-14);
    CHECK(pose_diff(mid, Pose::from_rotation(rot_z(0.1005))).rotational.norm() < 1e-12);
  }

  TEST_CASE("reduction") {
    CHECK(*reduction(5e-3, 0.5e-3) == doctest::Approx(0.9));
    CHECK(*reduction(1.0, 2.0) == doctest::Approx(-1.0));
    CHECK_FALSE(reduction(0.0, 1.0).has_value());
  }

  TEST_CASE("parameter errors are relative, absolute where the truth is zero") {
    KinematicParams truth = KinematicParams::zeros(2);
    truth.values(3) = 0.002;
    VecX p = VecX::Zero(12);
    p(3) = 0.0021;
    p(5) = 1e-4;
    const VecX e = parameter_errors(p, truth, truth.mask);
    REQUIRE(e.size() == 5);
    CHECK(e(0) == doctest::Approx(0.05));
    CHECK(e(1) == doctest::Approx(1e-4));
  }

  TEST_CASE("comparison rows") {
    Metrics a, b;
    a.tcp.avg_translational = 2.0;
    b.tcp.avg_translational = 0.5;
    a.max_peak_tau = 10.0;
    b.max_peak_tau = 9.0;
    const auto rows = compare_metrics(a, b);
    REQUIRE_FALSE(rows.empty());
    CHECK(rows[0].metric == "avg_translational_m");
    CHECK(*rows[0].reduction == doctest::Approx(0.75));
  }
}
