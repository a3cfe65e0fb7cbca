#pragma once

#include <filesystem>
#include <random>

#include "coupled/errors.hpp"
#include "coupled/scenario.hpp"

namespace test_support {

inline const std::filesystem::path kData = COUPLED_DATA_DIR;

inline const coupled::Scenario& nominal() {
  static const coupled::Scenario sc = coupled::load_scenario(kData / "scenario_nominal.json");
  return sc;
}

inline const coupled::Scenario& default_scenario() {
  static const coupled::Scenario sc = coupled::load_scenario(kData / "scenario_default.json");
  return sc;
}

// Built once per process; the reference takes several seconds.
inline const coupled::ReferenceTrajectory& nominal_reference() {
  static const coupled::ReferenceTrajectory ref = coupled::build_reference(nominal());
  return ref;
}

inline const coupled::ReferenceTrajectory& default_reference() {
  static const coupled::ReferenceTrajectory ref = coupled::build_reference(default_scenario());
  return ref;
}

inline coupled::VecX random_vector(std::mt19937_64& rng, int n, double scale) {
  std::uniform_real_distribution<double> d(-scale, scale);
  coupled::VecX v(n);
  for (int i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

// Robot 0 near its IK seed; the others placed by IK on the same TCP.
// Draws again when a follower cannot reach.
inline std::vector<coupled::VecX> closed_configuration(const coupled::Scenario& sc, std::mt19937_64& rng,
                                                        double spread = 0.25) {
  const coupled::CoupledSystem& sys = sc.system;
  for (;;) {
    std::vector<coupled::VecX> q(static_cast<std::size_t>(sys.n_robots()));
    q[0] = sc.ik_seeds[0] + random_vector(rng, sys.n_joints(), spread);
    const coupled::Pose tcp = coupled::nominal_tcp_pose(sys, 0, q[0]);
    try {
      for (int i = 1; i < sys.n_robots(); ++i) {
        const auto u = static_cast<std::size_t>(i);
        q[u] = coupled::inverse_kinematics(sys.robots[u], sys.bases[u].inverse() * tcp, sc.ik_seeds[u],
                                           sys.coupler.attachments[u]);
      }
    } catch (const coupled::ConvergenceError&) {
      continue;
    }
    return q;
  }
}

}  // namespace test_support
