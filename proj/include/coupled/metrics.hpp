#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coupled/coupling.hpp"
#include "coupled/estimation.hpp"
#include "coupled/plant.hpp"
#include "coupled/reference.hpp"

namespace coupled {

struct TcpErrorMetrics {
  double avg_translational = 0.0;  // m
  double max_translational = 0.0;
  double t_max_translational = 0.0;
  double avg_rotational = 0.0;     // rad
  double max_rotational = 0.0;
  double t_max_rotational = 0.0;
  int samples = 0;
  bool resampled = false;  // reference interpolated onto the log's time grid
};

struct Metrics {
  TcpErrorMetrics tcp;
  std::vector<VecX> peak_tau;  // per robot, per joint, N*m
  double max_peak_tau = 0.0;
  int max_peak_robot = 0, max_peak_joint = 0;
};

/// Reference TCP pose at t, linear in translation and geodesic in rotation
/// between samples. Sets *interpolated when t is off the sample grid.
Pose reference_pose_at(const ReferenceTrajectory& ref, double t, bool* interpolated = nullptr);

/// Errors of `poses` against the reference TCP over samples with t >= window_start.
TcpErrorMetrics tcp_errors(const std::vector<double>& t, const std::vector<Pose>& poses,
                           const ReferenceTrajectory& ref, double window_start);

Metrics compute_metrics(const std::vector<TickRecord>& log, const ReferenceTrajectory& ref, double window_start);

/// (baseline - value) / baseline; empty unless baseline > 0.
std::optional<double> reduction(double baseline, double value);

/// |p_hat - p_true| / |p_true| per masked component (absolute error where p_true = 0).
VecX parameter_errors(const VecX& p_hat, const KinematicParams& truth, const std::vector<bool>& mask);

struct ComparisonRow {
  std::string metric;
  double baseline = 0.0;
  double value = 0.0;
  std::optional<double> reduction;
};

std::vector<ComparisonRow> compare_metrics(const Metrics& baseline, const Metrics& value);

}  // namespace coupled
