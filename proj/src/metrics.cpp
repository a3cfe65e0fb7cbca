#include "coupled/metrics.hpp"

#include <cmath>

#include "coupled/errors.hpp"

namespace coupled {

Pose reference_pose_at(const ReferenceTrajectory& ref, double t, bool* interpolated) {
  if (ref.size() == 0) throw ConfigError("metrics: empty reference");
  const double x = (t - ref[0].t) / ref.dt;
  const double k = std::floor(x);
  if (interpolated) *interpolated = false;
  if (x <= 0.0) return ref[0].tcp;
  if (k >= static_cast<double>(ref.size() - 1)) return ref.samples.back().tcp;
  const double frac = x - k;
  const auto i = static_cast<std::size_t>(k);
  if (frac < 1e-9) return ref[i].tcp;
  if (frac > 1.0 - 1e-9) return ref[i + 1].tcp;
  if (interpolated) *interpolated = true;
  const Pose& a = ref[i].tcp;
  const Pose& b = ref[i + 1].tcp;
  const Eigen::AngleAxisd rel(Mat3(a.rotation.transpose() * b.rotation));
  return {a.rotation * Eigen::AngleAxisd(frac * rel.angle(), rel.axis()).toRotationMatrix(),
          a.translation + frac * (b.translation - a.translation)};
}

TcpErrorMetrics tcp_errors(const std::vector<double>& t, const std::vector<Pose>& poses,
                           const ReferenceTrajectory& ref, double window_start) {
  if (t.size() != poses.size()) throw ConfigError("metrics: time and pose counts differ");
  TcpErrorMetrics m;
  double sum_t = 0.0, sum_r = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] < window_start - 1e-9) continue;
    bool interp = false;
    const TwistError d = pose_diff(poses[k], reference_pose_at(ref, t[k], &interp));
    m.resampled = m.resampled || interp;
    const double et = d.translational.norm(), er = d.rotational.norm();
    sum_t += et;
    sum_r += er;
    if (et > m.max_translational) {
      m.max_translational = et;
      m.t_max_translational = t[k];
    }
    if (er > m.max_rotational) {
      m.max_rotational = er;
      m.t_max_rotational = t[k];
    }
    ++m.samples;
  }
  if (m.samples > 0) {
    m.avg_translational = sum_t / m.samples;
    m.avg_rotational = sum_r / m.samples;
  }
  return m;
}

Metrics compute_metrics(const std::vector<TickRecord>& log, const ReferenceTrajectory& ref, double window_start) {
  Metrics m;
  std::vector<double> t;
  std::vector<Pose> poses;
  t.reserve(log.size());
  poses.reserve(log.size());
  for (const TickRecord& r : log) {
    t.push_back(r.t);
    poses.push_back(r.tcp);
  }
  m.tcp = tcp_errors(t, poses, ref, window_start);
  for (const TickRecord& r : log) {
    if (r.t < window_start - 1e-9) continue;
    if (m.peak_tau.empty())
      for (const VecX& tau : r.tau_true) m.peak_tau.push_back(VecX::Zero(tau.size()));
    for (std::size_t i = 0; i < r.tau_true.size(); ++i)
      m.peak_tau[i] = m.peak_tau[i].cwiseMax(r.tau_true[i].cwiseAbs());
  }
  for (std::size_t i = 0; i < m.peak_tau.size(); ++i)
    for (Eigen::Index j = 0; j < m.peak_tau[i].size(); ++j)
      if (m.peak_tau[i](j) > m.max_peak_tau) {
        m.max_peak_tau = m.peak_tau[i](j);
        m.max_peak_robot = static_cast<int>(i);
        m.max_peak_joint = static_cast<int>(j);
      }
  return m;
}

std::optional<double> reduction(double baseline, double value) {
  if (!(baseline > 0.0)) return std::nullopt;
  return (baseline - value) / baseline;
}

VecX parameter_errors(const VecX& p_hat, const KinematicParams& truth, const std::vector<bool>& mask) {
  std::vector<double> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const auto k = static_cast<Eigen::Index>(i);
    const double err = std::abs(p_hat(k) - truth.values(k));
    out.push_back(truth.values(k) != 0.0 ? err / std::abs(truth.values(k)) : err);
  }
  return Eigen::Map<VecX>(out.data(), static_cast<Eigen::Index>(out.size()));
}

std::vector<ComparisonRow> compare_metrics(const Metrics& b, const Metrics& v) {
  auto row = [](std::string name, double x, double y) { return ComparisonRow{std::move(name), x, y, reduction(x, y)}; };
  return {row("avg_translational_m", b.tcp.avg_translational, v.tcp.avg_translational),
          row("avg_rotational_rad", b.tcp.avg_rotational, v.tcp.avg_rotational),
          row("max_translational_m", b.tcp.max_translational, v.tcp.max_translational),
          row("max_rotational_rad", b.tcp.max_rotational, v.tcp.max_rotational),
          row("max_peak_tau_nm", b.max_peak_tau, v.max_peak_tau)};
}

}  // namespace coupled
