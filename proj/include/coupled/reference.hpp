#pragma once

#include <vector>

#include "coupled/spatial.hpp"

namespace coupled {

/// One sample of the joint-space reference, all robots. `u` is the set-point
/// rate held over [t, t + dt).
struct ReferenceSample {
  double t = 0.0;
  std::vector<VecX> q_link;   // q_ref_i, link side
  std::vector<VecX> qd_link;
  std::vector<VecX> qdd_link;
  std::vector<VecX> q_motor;  // motor angles that realize q_link under load
  std::vector<VecX> q_sp;     // set-points that drive the built-in controllers onto q_motor
  std::vector<VecX> u;        // u_ref
  Pose tcp;                   // nominal TCP pose
  int segment = -1;           // path segment index, -1 during holds
};

struct ReferenceTrajectory {
  double dt = 0.01;
  std::vector<ReferenceSample> samples;
  /// The samples before any superposed disturbance; empty when there is none.
  /// Only these are guaranteed to be a trajectory of the nominal plant.
  std::vector<ReferenceSample> unperturbed;

  std::size_t size() const { return samples.size(); }
  const ReferenceSample& operator[](std::size_t k) const { return samples[k]; }
  /// Sample index for time t (clamped).
  std::size_t index_at(double t) const;
  /// Stacked u_ref over all robots at sample k.
  VecX u_stacked(std::size_t k) const;
  const ReferenceSample& consistent(std::size_t k) const { return unperturbed.empty() ? samples[k] : unperturbed[k]; }
};

}  // namespace coupled
