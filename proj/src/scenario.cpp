#include "coupled/scenario.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "coupled/errors.hpp"

namespace coupled {

std::size_t ReferenceTrajectory::index_at(double t) const {
  if (samples.empty()) return 0;
  const double k = std::round((t - samples.front().t) / dt);
  if (k <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(k), samples.size() - 1);
}

VecX ReferenceTrajectory::u_stacked(std::size_t k) const { return stack(samples.at(k).u); }

// ---------------------------------------------------------------------------
// Path

double PathSpec::motion_duration() const {
  double d = 0.0;
  for (double x : durations) d += x;
  return d;
}

void PathSpec::validate() const {
  if (durations.empty()) throw ConfigError("path.durations_s: at least one segment is required");
  if (waypoints.size() != durations.size() + 1)
    throw ConfigError("path: waypoint count (" + std::to_string(waypoints.size()) + ") must equal segment count + 1 (" +
                      std::to_string(durations.size() + 1) + ")");
  for (std::size_t i = 0; i < durations.size(); ++i)
    if (!(durations[i] > 0.0)) throw ConfigError("path.durations_s[" + std::to_string(i) + "]: must be > 0");
  if (!(ramp_fraction > 0.0 && ramp_fraction <= 0.5)) throw ConfigError("path.ramp_fraction: must be in (0, 0.5]");
  if (!(hold_before >= 0.0) || !(hold_after >= 0.0)) throw ConfigError("path: holds must be >= 0");
  for (std::size_t i = 0; i < waypoints.size(); ++i)
    if (!waypoints[i].is_valid(1e-9)) throw ConfigError("path.waypoints[" + std::to_string(i) + "]: invalid rotation");
}

Progress segment_progress(double t, double T, double rf) {
  const double ta = rf * T;
  const double v = 1.0 / (T - ta);
  const double pi = std::numbers::pi;
  Progress p;
  if (t <= 0.0) return p;
  if (t >= T) {
    p.s = 1.0;
    return p;
  }
  if (t < ta) {
    p.s = v * (0.5 * t - ta / (2.0 * pi) * std::sin(pi * t / ta));
    p.ds = 0.5 * v * (1.0 - std::cos(pi * t / ta));
    p.dds = v * pi / (2.0 * ta) * std::sin(pi * t / ta);
  } else if (t <= T - ta) {
    p.s = v * (0.5 * ta + (t - ta));
    p.ds = v;
  } else {
    const double r = T - t;
    p.s = 1.0 - v * (0.5 * r - ta / (2.0 * pi) * std::sin(pi * r / ta));
    p.ds = 0.5 * v * (1.0 - std::cos(pi * r / ta));
    p.dds = -v * pi / (2.0 * ta) * std::sin(pi * r / ta);
  }
  return p;
}

Vec3 excitation_angles(const ExcitationSpec& exc, double s) {
  s = std::clamp(s, 0.0, 1.0);
  const double pi = std::numbers::pi;
  Vec3 th;
  for (int j = 0; j < 3; ++j) th(j) = exc.amplitudes(j) * std::sin(pi * exc.harmonics(j) * s) * std::sin(pi * s);
  return th;
}

Pose path_pose(const PathSpec& spec, const ExcitationSpec& exc, double t, int* segment) {
  const double tm = t - spec.hold_before;
  const double total = spec.motion_duration();
  int seg = -1;
  Pose pose;
  if (tm <= 0.0) {
    pose = spec.waypoints.front();
  } else if (tm >= total) {
    pose = spec.waypoints.back();
  } else {
    double start = 0.0;
    seg = spec.n_segments() - 1;
    for (int i = 0; i < spec.n_segments(); ++i) {
      if (tm < start + spec.durations[static_cast<std::size_t>(i)]) {
        seg = i;
        break;
      }
      start += spec.durations[static_cast<std::size_t>(i)];
    }
    const auto us = static_cast<std::size_t>(seg);
    const Progress p = segment_progress(tm - start, spec.durations[us], spec.ramp_fraction);
    const Pose& a = spec.waypoints[us];
    const Pose& b = spec.waypoints[us + 1];
    const Eigen::AngleAxisd rel(Mat3(a.rotation.transpose() * b.rotation));
    pose.translation = a.translation + p.s * (b.translation - a.translation);
    pose.rotation = a.rotation * Eigen::AngleAxisd(p.s * rel.angle(), rel.axis()).toRotationMatrix();
  }
  const Vec3 th = excitation_angles(exc, tm / total);
  pose.rotation = pose.rotation * rot_x(th.x()) * rot_y(th.y()) * rot_z(th.z());
  if (segment) *segment = seg;
  return pose;
}

std::vector<PathSample> build_path(const PathSpec& spec, const ExcitationSpec& exc, double dt) {
  spec.validate();
  if (!(dt > 0.0)) throw ConfigError("path.sample_dt_s: must be > 0");
  const double n = spec.total_duration() / dt;
  const long k_end = std::lround(n);
  if (std::abs(n - static_cast<double>(k_end)) > 1e-6)
    throw ConfigError("path: total duration must be a multiple of the sample period");
  std::vector<PathSample> out;
  out.reserve(static_cast<std::size_t>(k_end + 1));
  for (long k = 0; k <= k_end; ++k) {
    PathSample s;
    s.t = static_cast<double>(k) * dt;
    s.pose = path_pose(spec, exc, s.t, &s.segment);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inverse kinematics

VecX inverse_kinematics(const RobotModel& model, const Pose& target, const VecX& seed, const Pose& tool,
                        const IkOptions& opt) {
  VecX q = seed;
  double best = std::numeric_limits<double>::infinity();
  VecX best_q = q;
  for (int it = 0; it <= opt.max_iterations; ++it) {
    const Pose cur = forward_kinematics(model, q, tool);
    const TwistError d = pose_diff(target, cur);
    const double err = d.norm();
    if (err < best) {
      best = err;
      best_q = q;
    }
    // Stop once round-off dominates.
    if (err < 1e-3 * opt.tolerance) break;
    if (it == opt.max_iterations) break;
    Vec6 e;
    e.head<3>() = cur.rotation * d.rotational;
    e.tail<3>() = d.translational;
    const Mat6X jac = jacobian(model, q, tool);
    const Mat6 jj = jac * jac.transpose() + opt.damping * Mat6::Identity();
    VecX dq = jac.transpose() * jj.ldlt().solve(e);
    if (it == 0 && opt.posture.size() == q.size() && opt.posture_gain > 0.0) {
      const MatX pinv = jac.transpose() * jj.inverse();
      dq += (MatX::Identity(q.size(), q.size()) - pinv * jac) * (opt.posture_gain * (opt.posture - q));
    }
    const double step = dq.cwiseAbs().maxCoeff();
    if (step > 0.2) dq *= 0.2 / step;
    q += dq;
  }
  if (best > opt.tolerance) {
    std::ostringstream msg;
    msg << "inverse kinematics for '" << model.name << "' did not converge (best pose error " << best << ")";
    throw ConvergenceError(msg.str(), best);
  }
  return best_q;
}

// ---------------------------------------------------------------------------
// Reference generation

namespace {

std::vector<VecX> central_difference(const std::vector<VecX>& x, double dt, int order) {
  const std::size_t n = x.size();
  std::vector<VecX> d(n, VecX::Zero(x.front().size()));
  if (n < 3) return d;
  for (std::size_t k = 1; k + 1 < n; ++k)
    d[k] = order == 1 ? VecX((x[k + 1] - x[k - 1]) / (2.0 * dt)) : VecX((x[k + 1] - 2.0 * x[k] + x[k - 1]) / (dt * dt));
  d.front() = order == 1 ? VecX((x[1] - x[0]) / dt) : d[1];
  d.back() = order == 1 ? VecX((x[n - 1] - x[n - 2]) / dt) : d[n - 2];
  return d;
}

// Set-points whose filtered command reproduces c under zero-order-hold rates:
// exact backward solution of K_C qd_sp = q_sp - c for piecewise-linear c.
std::vector<VecX> anticausal_setpoints(const std::vector<VecX>& c, const VecX& K_C, double h) {
  const std::size_t n = c.size();
  std::vector<VecX> sp(n);
  sp.back() = c.back();
  for (std::size_t k = n - 1; k-- > 0;) {
    sp[k].resize(c[k].size());
    for (Eigen::Index j = 0; j < c[k].size(); ++j) {
      const double kc = K_C(j);
      if (kc <= 0.0) {
        sp[k](j) = c[k](j);
        continue;
      }
      const double e = std::exp(-h / kc);
      const double m = kc * (1.0 - e) - h * e;
      sp[k](j) = e * sp[k + 1](j) + (1.0 - e) * c[k](j) + (c[k + 1](j) - c[k](j)) * m / h;
    }
  }
  return sp;
}

}  // namespace

std::vector<Vec6> load_split(const AlgebraicSystem& a, const LoadWeights& w) {
  const std::size_t nr = a.jacobians.size();
  const Vec6 total = -(a.coupler_wrench - a.external_wrench);
  std::vector<Vec6> out(nr, Vec6(total / static_cast<double>(nr)));
  if (w.tau <= 0.0 && w.lambda <= 0.0) return out;
  // Per robot: minimize w.tau |J^T l - tau_rbd|^2 + w.lambda |l|^2, with the
  // wrenches summing to `total`.
  std::vector<Mat6> hinv(nr);
  std::vector<Vec6> g(nr);
  Mat6 sum_hinv = Mat6::Zero();
  Vec6 sum_hg = Vec6::Zero();
  for (std::size_t i = 0; i < nr; ++i) {
    const Mat6X& jac = a.jacobians[i];
    const Mat6 h = w.tau * jac * jac.transpose() + w.lambda * Mat6::Identity();
    hinv[i] = h.ldlt().solve(Mat6::Identity());
    g[i] = -w.tau * jac * a.tau_rbd[i];
    sum_hinv += hinv[i];
    sum_hg += hinv[i] * g[i];
  }
  const Vec6 nu = -sum_hinv.ldlt().solve(total + sum_hg);
  for (std::size_t i = 0; i < nr; ++i) out[i] = -hinv[i] * (g[i] + nu);
  return out;
}

namespace {

void refresh_rates(ReferenceTrajectory& ref) {
  const std::size_t n = ref.size();
  for (std::size_t k = 0; k < n; ++k) {
    ReferenceSample& s = ref.samples[k];
    for (std::size_t i = 0; i < s.q_sp.size(); ++i)
      s.u[i] = k + 1 < n ? VecX((ref.samples[k + 1].q_sp[i] - s.q_sp[i]) / ref.dt) : VecX::Zero(s.q_sp[i].size());
  }
}

}  // namespace

namespace {

// Noise-free nominal plant driven by the reference rates. Returns the frame
// at every sample.
std::vector<SensorFrame> replay(const ReferenceTrajectory& ref, const CoupledSystem& sys, const PlantConfig& plant_cfg,
                                std::vector<PlantState>* states) {
  PlantConfig cfg = plant_cfg;
  cfg.torque_noise_std = 0.0;
  cfg.coulomb_friction.setZero();
  cfg.true_params = KinematicParams::zeros(sys.n_robots());
  Plant plant = make_plant(sys, cfg, ref, 0);
  std::vector<SensorFrame> frames;
  frames.reserve(ref.size());
  frames.push_back(plant.measure(ref.u_stacked(0)));
  states->assign(1, plant.state());
  for (std::size_t k = 0; k + 1 < ref.size(); ++k) {
    frames.push_back(plant.advance(ref.u_stacked(k), ref.dt));
    states->push_back(plant.state());
  }
  return frames;
}

}  // namespace

ReferenceTrajectory generate_reference(const CoupledSystem& sys, const PlantConfig& plant,
                                       const std::vector<PathSample>& path, const std::vector<VecX>& seeds,
                                       double dt, const IkOptions& ik, const LoadWeights& weights) {
  sys.validate();
  const int nr = sys.n_robots(), nj = sys.n_joints();
  const auto unr = static_cast<std::size_t>(nr);
  if (seeds.size() != unr) throw ConfigError("scenario: one IK seed per robot is required");
  const std::size_t n = path.size();
  if (n < 2) throw ConfigError("reference: at least two path samples are required");

  ReferenceTrajectory ref;
  ref.dt = dt;
  ref.samples.resize(n);

  // Link side by IK, each robot seeded from its previous sample.
  std::vector<std::vector<VecX>> q_link(unr, std::vector<VecX>(n));
  for (std::size_t i = 0; i < unr; ++i) {
    VecX q = seeds[i];
    const Pose base_inv = sys.bases[i].inverse();
    IkOptions opt = ik;
    opt.posture.resize(0);
    for (std::size_t k = 0; k < n; ++k) {
      try {
        q = inverse_kinematics(sys.robots[i], base_inv * path[k].pose, q, sys.coupler.attachments[i], opt);
        if (k == 0) opt.posture = q;
      } catch (const ConvergenceError& e) {
        std::ostringstream msg;
        msg << "reference at t = " << path[k].t << " s, robot " << i + 1 << ": " << e.what();
        throw ConvergenceError(msg.str(), e.residual());
      }
      q_link[i][k] = q;
    }
  }
  std::vector<std::vector<VecX>> qd(unr), qdd(unr);
  for (std::size_t i = 0; i < unr; ++i) {
    qd[i] = central_difference(q_link[i], dt, 1);
    qdd[i] = central_difference(q_link[i], dt, 2);
  }

  // Motor side: internal wrenches chosen as the load split that minimizes the
  // weighted algebraic state, evaluated where the model evaluates it (motor
  // side). Newton on robot 1's motor angles then puts its link side exactly
  // on the reference.
  const KinematicParams p0 = KinematicParams::zeros(nr);
  std::vector<std::vector<VecX>> q_motor(unr, std::vector<VecX>(n));
  std::vector<AlgebraicSolution> sols(n);
  const VecX kinv0 = sys.robots[0].joint_stiffness.cwiseInverse();
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<RobotMotion> link(unr);
    for (std::size_t i = 0; i < unr; ++i) link[i] = {q_link[i][k], qd[i][k], qdd[i][k]};
    std::vector<RobotMotion> motor = link;
    for (int pass = 0; pass < 3; ++pass) {
      const AlgebraicSystem a = assemble_algebraic(sys, motor, p0, plant.w_ext);
      const std::vector<Vec6> lambda = load_split(a, weights);
      for (std::size_t i = 0; i < unr; ++i) {
        const VecX tau = a.jacobians[i].transpose() * lambda[i] - a.tau_rbd[i];
        motor[i].q = q_link[i][k] - sys.robots[i].joint_stiffness.cwiseInverse().cwiseProduct(tau);
      }
    }
    auto residual = [&](const VecX& qm0, AlgebraicSolution* out) {
      std::vector<RobotMotion> m = motor;
      m[0].q = qm0;
      AlgebraicSolution s = solve_coupled(sys, m, p0, plant.w_ext, plant.coupling);
      const VecX r = qm0 + kinv0.cwiseProduct(s.state.tau_m[0]) - q_link[0][k];
      if (out) *out = std::move(s);
      return r;
    };
    VecX qm0 = motor[0].q;
    MatX jac(nj, nj);
    // F amplifies round-off by its condition number; the step keeps that
    // noise out of the difference quotient.
    const double h = 1e-5;
    for (int j = 0; j < nj; ++j) {
      VecX a_p = qm0, a_m = qm0;
      a_p(j) += h;
      a_m(j) -= h;
      jac.col(j) = (residual(a_p, nullptr) - residual(a_m, nullptr)) / (2.0 * h);
    }
    const Eigen::PartialPivLU<MatX> lu(jac);
    AlgebraicSolution sol;
    VecX r = residual(qm0, &sol);
    for (int it = 0; it < 30 && r.cwiseAbs().maxCoeff() > 1e-13; ++it) {
      qm0 -= lu.solve(r);
      r = residual(qm0, &sol);
    }
    if (r.cwiseAbs().maxCoeff() > 1e-10) {
      std::ostringstream msg;
      msg << "reference at t = " << path[k].t << " s: motor-side solve did not converge";
      throw ConvergenceError(msg.str(), r.cwiseAbs().maxCoeff());
    }
    motor[0].q = qm0;
    for (std::size_t i = 0; i < unr; ++i) q_motor[i][k] = motor[i].q;
    sols[k] = std::move(sol);
  }

  for (std::size_t k = 0; k < n; ++k) {
    ReferenceSample& s = ref.samples[k];
    s.t = path[k].t;
    s.tcp = path[k].pose;
    s.segment = path[k].segment;
    s.q_link.resize(unr);
    s.qd_link.resize(unr);
    s.qdd_link.resize(unr);
    s.q_motor.resize(unr);
    s.q_sp.resize(unr);
    s.u.resize(unr);
    for (std::size_t i = 0; i < unr; ++i) {
      s.q_link[i] = q_link[i][k];
      s.qd_link[i] = qd[i][k];
      s.qdd_link[i] = qdd[i][k];
    }
  }

  // Commands from the controller law for a motor-side design, then
  // set-points through the inverse command filter.
  auto commands = [&](const std::vector<std::vector<VecX>>& design) {
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<VecX> q(unr);
      for (std::size_t i = 0; i < unr; ++i) q[i] = design[i][k];
      sols[k] = solve_coupled(sys, rbd_motions(q, ref.samples[k].qd_link, ref.samples[k].qdd_link), p0, plant.w_ext,
                              plant.coupling);
    }
    for (std::size_t i = 0; i < unr; ++i) {
      const std::vector<VecX> qd_m = central_difference(design[i], dt, 1);
      std::vector<VecX> cmd(n);
      for (std::size_t k = 0; k < n; ++k) {
        const VecX drive = plant.K_D.cwiseProduct(qd_m[k]) -
                           sols[k].system.jacobians[i].transpose() * sols[k].state.lambda[i] - plant.tau_fri[i];
        cmd[k] = design[i][k] + drive.cwiseQuotient(plant.K_P);
      }
      const std::vector<VecX> sp = anticausal_setpoints(cmd, plant.K_C, dt);
      for (std::size_t k = 0; k < n; ++k) {
        ref.samples[k].q_motor[i] = design[i][k];
        ref.samples[k].q_sp[i] = sp[k];
      }
    }
    refresh_rates(ref);
  };

  // The design above is a collocation of the continuous plant and uses
  // link-side rates for inverse dynamics, while the plant sees lagged motor
  // measurements. One replay of the plant, shifting the design by the
  // observed error, brings that mismatch down by an order of magnitude; the
  // second replay then becomes the reference, so the nominal plant
  // reproduces it exactly. Further passes stall near 1e-6 rad: sample-rate
  // content in the error is not reproducible through the command filter.
  std::vector<std::vector<VecX>> design = q_motor;
  commands(design);
  std::vector<PlantState> states;
  std::vector<SensorFrame> frames = replay(ref, sys, plant, &states);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < unr; ++i)
      design[i][k] += i == 0 ? VecX(q_link[0][k] - frames[k].q_link[0]) : VecX(q_motor[i][k] - frames[k].q_m[i]);
  commands(design);
  frames = replay(ref, sys, plant, &states);
  for (std::size_t k = 0; k < n; ++k) {
    ReferenceSample& s = ref.samples[k];
    s.q_link = frames[k].q_link;
    s.q_motor = states[k].q_m;
    s.q_sp = states[k].q_sp;
    s.qd_link = frames[k].rbd_qd;
    s.qdd_link = frames[k].rbd_qdd;
  }
  return ref;
}

// ---------------------------------------------------------------------------
// Vibration

Vec3 vibration_offset(const VibrationSpec& vib, const PathSpec& path, double t) {
  if (vib.peak <= 0.0) return Vec3::Zero();
  double start = path.hold_before;
  for (int i = 0; i < path.n_segments(); ++i) {
    const double dur = path.durations[static_cast<std::size_t>(i)];
    if (t >= start && t <= start + dur) {
      bool active = false;
      for (int s : vib.segments) active = active || s == i + 1;
      if (!active) return Vec3::Zero();
      const double pi = std::numbers::pi;
      const double tau = t - start;
      auto ramp = [&](double x) {
        if (x <= 0.0) return 0.0;
        return x >= vib.ramp ? 1.0 : 0.5 * (1.0 - std::cos(pi * x / vib.ramp));
      };
      const double env = ramp(tau) * ramp(dur - tau);
      return vib.peak * env * std::sin(2.0 * pi * vib.frequency * tau) * vib.direction.normalized();
    }
    start += dur;
  }
  return Vec3::Zero();
}

void superpose_vibration(ReferenceTrajectory& ref, const CoupledSystem& sys, const VibrationSpec& vib,
                         const PathSpec& path) {
  if (vib.peak <= 0.0) return;
  if (vib.target_robot < 0 || vib.target_robot >= sys.n_robots())
    throw ConfigError("vibration.target_robot: out of range");
  const auto r = static_cast<std::size_t>(vib.target_robot);
  if (ref.unperturbed.empty()) ref.unperturbed = ref.samples;
  std::vector<VecX> offsets(ref.size(), VecX::Zero(sys.n_joints()));
  for (std::size_t k = 0; k < ref.size(); ++k) {
    ReferenceSample& s = ref.samples[k];
    const Vec3 d = vibration_offset(vib, path, s.t);
    if (!d.isZero(0.0)) {
      const Mat6X jac = world_jacobian(sys, vib.target_robot, s.q_link[r]);
      Vec6 e = Vec6::Zero();
      e.tail<3>() = d;
      const Mat6 jj = jac * jac.transpose() + 1e-10 * Mat6::Identity();
      offsets[k] = jac.transpose() * jj.ldlt().solve(e);
      s.q_link[r] += offsets[k];
      s.q_motor[r] += offsets[k];
      s.q_sp[r] += offsets[k];
    }
  }
  const std::vector<VecX> qd = central_difference(offsets, ref.dt, 1);
  const std::vector<VecX> qdd = central_difference(offsets, ref.dt, 2);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    ReferenceSample& s = ref.samples[k];
    s.qd_link[r] += qd[k];
    s.qdd_link[r] += qdd[k];
    if (r == 0) s.tcp = nominal_tcp_pose(sys, 0, s.q_link[0]);
  }
  refresh_rates(ref);
}

ReferenceTrajectory build_reference(const Scenario& sc) {
  const std::vector<PathSample> path = build_path(sc.path, sc.excitation, sc.sample_dt);
  ReferenceTrajectory ref = generate_reference(sc.system, sc.plant, path, sc.ik_seeds, sc.sample_dt, sc.ik,
                                             LoadWeights{sc.mpc.R_tau, sc.mpc.R_lambda});
  if (sc.vibration_enabled) superpose_vibration(ref, sc.system, sc.vibration, sc.path);
  return ref;
}

}  // namespace coupled
