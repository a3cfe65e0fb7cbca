#include <doctest.h>

#include <fstream>

#include "coupled/errors.hpp"
#include "coupled/scenario.hpp"
#include "support.hpp"

using namespace coupled;

namespace {

const Scenario& def() { return test_support::default_scenario(); }

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool in_vibration(const Scenario& sc, int segment) {
  for (int s : sc.vibration.segments)
    if (s == segment + 1) return true;
  return false;
}

}  // namespace

TEST_SUITE("scenario") {
  TEST_CASE("segment progress rests at both ends and cruises in between") {
    const double T = 2.0, rf = 0.3;
    CHECK(segment_progress(0.0, T, rf).s == 0.0);
    CHECK(segment_progress(T, T, rf).s == 1.0);
    CHECK(segment_progress(1e-9, T, rf).ds == doctest::Approx(0.0));
    const Progress a = segment_progress(0.8, T, rf), b = segment_progress(1.1, T, rf);
    CHECK(a.ds == doctest::Approx(b.ds));
    CHECK(a.dds == 0.0);
    CHECK(segment_progress(1.0, T, rf).s == doctest::Approx(0.5));
    // Derivatives are consistent.
    const double h = 1e-6;
    for (double t : {0.1, 0.5, 0.9, 1.5, 1.9}) {
      CHECK((segment_progress(t + h, T, rf).s - segment_progress(t - h, T, rf).s) / (2 * h) ==
            doctest::Approx(segment_progress(t, T, rf).ds).epsilon(1e-6));
      CHECK((segment_progress(t + h, T, rf).ds - segment_progress(t - h, T, rf).ds) / (2 * h) ==
            doctest::Approx(segment_progress(t, T, rf).dds).epsilon(1e-5));
    }
  }

  TEST_CASE("straight segment at cruise speed is linear in time") {
    PathSpec spec;
    spec.waypoints = {Pose::from_translation(Vec3(0.5, 0.0, 0.3)), Pose::from_translation(Vec3(0.5, 0.2, 0.5))};
    spec.durations = {2.0};
    spec.hold_before = 0.0;
    const ExcitationSpec none;
    const Vec3 a = path_pose(spec, none, 0.8).translation, b = path_pose(spec, none, 1.0).translation,
               c = path_pose(spec, none, 1.2).translation;
    CHECK(((a + c) / 2 - b).norm() < 1e-14);
    CHECK((b - Vec3(0.5, 0.1, 0.4)).norm() < 1e-14);
  }

  TEST_CASE("the loop closes and lasts 14.69 s") {
    const PathSpec& p = def().path;
    CHECK(p.n_segments() == 6);
    CHECK(p.motion_duration() == doctest::Approx(14.69).epsilon(1e-12));
    CHECK(p.total_duration() == doctest::Approx(p.hold_before + 14.69 + p.hold_after));
    const Pose start = path_pose(p, def().excitation, 0.0), end = path_pose(p, def().excitation, p.total_duration());
    CHECK(pose_diff(start, end).norm() < 1e-12);
    int seg = -7;
    path_pose(p, def().excitation, p.hold_before + 1.0, &seg);
    CHECK(seg == 0);
    path_pose(p, def().excitation, 1.0, &seg);
    CHECK(seg == -1);
  }

  TEST_CASE("excitation vanishes at rest") {
    CHECK(excitation_angles(def().excitation, 0.0).norm() < 1e-15);
    CHECK(excitation_angles(def().excitation, 1.0).norm() < 1e-12);
    CHECK(excitation_angles(def().excitation, 0.37).norm() > 1e-2);
  }

  TEST_CASE("inverse kinematics") {
    const RobotModel& m = def().system.robots[0];
    const VecX seed = def().ik_seeds[0];
    const Pose at_seed = forward_kinematics(m, seed);
    CHECK((inverse_kinematics(m, at_seed, seed) - seed).norm() < 1e-12);

    const Pose up(at_seed.rotation, at_seed.translation + Vec3(0, 0, 1e-3));
    const VecX q = inverse_kinematics(m, up, seed);
    CHECK(pose_diff(forward_kinematics(m, q), up).norm() < 1e-8);

    const Pose far = Pose::from_translation(Vec3(3.0, 0.0, 0.5));
    CHECK_THROWS_AS(inverse_kinematics(m, far, seed), ConvergenceError);
  }

  TEST_CASE("vibration profile") {
    const Scenario& sc = def();
    double peak = 0.0, outside = 0.0;
    for (double t = 0.0; t < sc.path.total_duration(); t += 1e-3) {
      int seg = -1;
      path_pose(sc.path, sc.excitation, t, &seg);
      const double a = vibration_offset(sc.vibration, sc.path, t).norm();
      if (seg >= 0 && in_vibration(sc, seg))
        peak = std::max(peak, a);
      else
        outside = std::max(outside, a);
    }
    CHECK(peak == doctest::Approx(2.4e-3).epsilon(0.02));
    CHECK(outside == 0.0);
    VibrationSpec off = sc.vibration;
    off.peak = 0.0;
    CHECK(vibration_offset(off, sc.path, 10.0).norm() == 0.0);
  }

  TEST_CASE("reference: grid, closed chain, path following, vibration size") {
    const Scenario& sc = def();
    const ReferenceTrajectory& ref = test_support::default_reference();
    const CoupledSystem& sys = sc.system;
    CHECK(ref.size() == static_cast<std::size_t>(std::lround(sc.path.total_duration() / ref.dt)) + 1);
    REQUIRE(ref.unperturbed.size() == ref.size());
    const KinematicParams p0 = KinematicParams::zeros(2);
    double gap_still = 0.0, tcp = 0.0, vib = 0.0, follower = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      const ReferenceSample& s = ref[k];
      const ReferenceSample& u = ref.unperturbed[k];
      const bool shaking = s.segment >= 0 && in_vibration(sc, s.segment);
      if (!shaking) gap_still = std::max(gap_still, gap_vector(sys, s.q_link[0], s.q_link[1], 1, p0).norm());
      tcp = std::max(tcp, pose_diff(nominal_tcp_pose(sys, 0, u.q_link[0]), u.tcp).translational.norm());
      vib = std::max(vib, (nominal_tcp_pose(sys, 0, s.q_link[0]).translation -
                           nominal_tcp_pose(sys, 0, u.q_link[0]).translation).norm());
      follower = std::max(follower, (s.q_link[1] - u.q_link[1]).cwiseAbs().maxCoeff());
    }
    // The reference is the plant's own replay, whose closure is linear in the
    // joint deflections (~1e-3 rad); what is left on the link side is second order.
    CHECK(gap_still < 5e-5);
    CHECK(tcp < 1e-5);
    CHECK(vib == doctest::Approx(2.4e-3).epsilon(0.02));
    CHECK(follower == 0.0);  // only the target robot is shaken
  }

  TEST_CASE("scenario files: shipped ones load, bad ones name the field") {
    CHECK(def().system.n_robots() == 2);
    CHECK(def().plant.true_params.values(3) == doctest::Approx(0.002));
    CHECK(test_support::nominal().plant.true_params.values.isZero(0.0));
    CHECK_FALSE(test_support::nominal().vibration_enabled);

    const std::string text = read_text(test_support::kData / "scenario_default.json");
    auto expect_error = [&](const std::string& from, const std::string& to, const std::string& field) {
      std::string t = text;
      const auto at = t.find(from);
      REQUIRE(at != std::string::npos);
      t.replace(at, from.size(), to);
      try {
        scenario_from_json_text(t, test_support::kData);
        FAIL("accepted: " << to);
      } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(field) != std::string::npos);
      }
    };
    expect_error("\"alpha\": 0.1", "\"alpha\": 0.0", "alpha");
    expect_error("\"K_P_nm_per_rad\": 2000.0", "\"K_P_nm_per_rad\": -5.0", "K_P");
    expect_error("\"r2_cp_trans_z\"]", "\"r2_cp_nonsense\"]", "r2_cp_nonsense");
    expect_error("\"horizon_s\": 0.1", "\"horizon_s\": 0.105", "horizon");
    expect_error("\"model\": \"iiwa14.json\"", "\"model\": \"missing.json\"", "missing.json");
    CHECK_THROWS_AS(load_scenario(test_support::kData / "no_such_scenario.json"), ConfigError);
  }

  TEST_CASE("load split sums to the required wrench") {
    std::mt19937_64 rng(9);
    const auto q = test_support::closed_configuration(test_support::nominal(), rng);
    std::vector<RobotMotion> m;
    for (const auto& qi : q) m.push_back({qi, VecX::Zero(7), VecX::Zero(7)});
    const AlgebraicSystem a = assemble_algebraic(def().system, m, KinematicParams::zeros(2), Vec6::Zero());
    for (const LoadWeights w : {LoadWeights{}, LoadWeights{0.0, 0.0}}) {
      const auto l = load_split(a, w);
      CHECK((l[0] + l[1] + (a.coupler_wrench - a.external_wrench)).norm() < 1e-9);
    }
    const auto equal = load_split(a, {0.0, 0.0});
    CHECK((equal[0] - equal[1]).norm() < 1e-9);
  }
}
