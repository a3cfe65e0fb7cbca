#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coupled/coupling.hpp"
#include "coupled/estimation.hpp"
#include "coupled/mpc.hpp"
#include "coupled/plant.hpp"
#include "coupled/reference.hpp"

namespace coupled {

/// Straight segments between TCP waypoints. Each segment starts and ends at
/// rest; speed ramps with half-cosine acceleration over `ramp_fraction` of the
/// segment at both ends and is constant in between.
struct PathSpec {
  std::vector<Pose> waypoints;
  std::vector<double> durations;  // s, one per segment
  double ramp_fraction = 0.3;
  double hold_before = 3.0;       // s at the first waypoint
  double hold_after = 0.5;        // s at the last waypoint

  int n_segments() const { return static_cast<int>(durations.size()); }
  double motion_duration() const;
  double total_duration() const { return hold_before + motion_duration() + hold_after; }
  void validate() const;
};

/// Coupler rotation superposed on the path, in TCP axes:
/// theta_j(s) = a_j sin(pi k_j s) sin(pi s), s = normalized motion time.
struct ExcitationSpec {
  Vec3 amplitudes = Vec3::Zero();  // rad
  Vec3 harmonics{3.0, 4.0, 5.0};
};

struct VibrationSpec {
  std::vector<int> segments{2, 4, 6};  // 1-based segment indices
  double peak = 2.4e-3;                // m
  double frequency = 2.0;              // Hz
  Vec3 direction{0.0, 0.6, 0.8};       // world, normalized on use
  int target_robot = 0;
  double ramp = 0.25;                  // s, half-cosine envelope at segment ends
};

struct PathSample {
  double t = 0.0;
  Pose pose;
  int segment = -1;
};

/// Normalized progress along one segment in [0, 1] and its two derivatives
/// (per second and per second squared).
struct Progress {
  double s = 0.0, ds = 0.0, dds = 0.0;
};
Progress segment_progress(double t, double duration, double ramp_fraction);

Vec3 excitation_angles(const ExcitationSpec& exc, double s);

Pose path_pose(const PathSpec& spec, const ExcitationSpec& exc, double t, int* segment = nullptr);

std::vector<PathSample> build_path(const PathSpec& spec, const ExcitationSpec& exc, double dt);

struct IkOptions {
  int max_iterations = 200;
  double tolerance = 1e-8;  // on the pose_diff norm
  double damping = 1e-9;
  /// Null-space pull toward `posture` (first iteration only, so repeated calls
  /// along a path stay smooth). Empty: pure minimal-norm steps from the seed.
  VecX posture;
  double posture_gain = 0.0;
};

/// Damped least squares from `seed`; target is the pose of {t_i} * tool in
/// the robot base frame. Throws ConvergenceError with the best residual.
VecX inverse_kinematics(const RobotModel& model, const Pose& target, const VecX& seed, const Pose& tool = {},
                        const IkOptions& options = {});

/// Joint references for all robots tracking the sampled TCP path with p = 0,
/// plus the motor angles and set-points that realize them under the built-in
/// controllers (static load, coupler inertia, command-filter lead).
/// Weights of the joint-torque and internal-wrench terms of the load split.
struct LoadWeights {
  double tau = 1e-4;
  double lambda = 1e-3;
};

/// Wrenches l_i with sum l_i = -(w_cp - w_ext) minimizing
/// sum tau |J_i^T l_i - tau_rbd_i|^2 + lambda |l_i|^2. Zero weights: equal split.
std::vector<Vec6> load_split(const AlgebraicSystem& a, const LoadWeights& weights);

/// Each robot's posture is held near its first IK solution via `ik.posture_gain`.
ReferenceTrajectory generate_reference(const CoupledSystem& sys, const PlantConfig& plant,
                                       const std::vector<PathSample>& path, const std::vector<VecX>& seeds,
                                       double dt, const IkOptions& ik = {}, const LoadWeights& weights = {});

/// Cartesian vibration offset (world, m) at time t.
Vec3 vibration_offset(const VibrationSpec& vib, const PathSpec& path, double t);

/// Adds the vibration to the target robot's link, motor, and set-point
/// references through the damped Jacobian pseudoinverse; u is recomputed.
void superpose_vibration(ReferenceTrajectory& ref, const CoupledSystem& sys, const VibrationSpec& vib,
                         const PathSpec& path);

struct MetricsConfig {
  double window_start = 3.0;  // s
};

struct Scenario {
  std::string name;
  std::filesystem::path source;
  CoupledSystem system;
  std::vector<VecX> ik_seeds;
  IkOptions ik;
  PathSpec path;
  ExcitationSpec excitation;
  VibrationSpec vibration;
  bool vibration_enabled = true;
  double sample_dt = 0.01;
  PlantConfig plant;
  EstimatorConfig estimator;
  bool estimator_enabled = true;
  MpcConfig mpc;
  MetricsConfig metrics;
  std::uint64_t seed = 0;
};

/// Parses and validates a scenario file; model paths resolve relative to it.
/// Throws ConfigError with the offending field.
Scenario load_scenario(const std::filesystem::path& path);
Scenario scenario_from_json_text(const std::string& text, const std::filesystem::path& base_dir);

CouplerModel load_coupler(const std::filesystem::path& path);

/// Path sampling, reference generation and vibration for a scenario.
ReferenceTrajectory build_reference(const Scenario& sc);

}  // namespace coupled
