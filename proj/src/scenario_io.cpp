// Scenario and coupler file loaders.

#include <fstream>
#include <set>
#include <sstream>

#include "coupled/errors.hpp"
#include "coupled/scenario.hpp"
#include "json_io.hpp"

namespace coupled {

using jsonio::json;

namespace {

constexpr const char* kScenarioSchema = "coupled-scenario/1";
constexpr const char* kCouplerSchema = "coupled-coupler/1";

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) throw ConfigError(where + ": unknown field '" + key + "'");
  }
}

bool boolean_or(const json& j, const std::string& key, bool fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
  return j.at(key).get<bool>();
}

int integer_or(const json& j, const std::string& key, int fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
  return v.get<int>();
}

std::string string_or(const json& j, const std::string& key, const std::string& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

const json empty_object = json::object();

const json& section(const json& j, const std::string& key) { return j.contains(key) ? j.at(key) : empty_object; }

int param_index(const std::string& label, int n_robots, const std::string& where) {
  const int n = KinematicParams::kPerRobot * (n_robots - 1);
  for (int i = 0; i < n; ++i)
    if (KinematicParams::label(i) == label) return i;
  throw ConfigError(where + ": unknown parameter '" + label + "'");
}

// Either {"r2_base_trans_x": 0.002, ...} or a full array.
VecX parameter_values(const json& v, int n_robots, const std::string& where) {
  const int n = KinematicParams::kPerRobot * (n_robots - 1);
  if (v.is_array()) {
    VecX out = jsonio::vector(v, where);
    if (out.size() != n) throw ConfigError(where + ": expected " + std::to_string(n) + " entries");
    return out;
  }
  if (!v.is_object()) throw ConfigError(where + ": expected an object of named parameters or an array");
  VecX out = VecX::Zero(n);
  for (const auto& [key, value] : v.items()) {
    if (!value.is_number()) throw ConfigError(where + "." + key + ": expected a number");
    out(param_index(key, n_robots, where)) = value.get<double>();
  }
  return out;
}

CouplerModel coupler_from_json(const json& j, const std::string& where) {
  check_keys(j, {"schema", "name", "mass_kg", "com_m", "inertia_kgm2"}, where);
  if (j.contains("schema") && j.at("schema") != kCouplerSchema)
    throw ConfigError(where + ".schema: expected '" + std::string(kCouplerSchema) + "'");
  CouplerModel c;
  c.mass = jsonio::number(j, "mass_kg", where);
  if (!(c.mass >= 0.0)) throw ConfigError(where + ".mass_kg: must be >= 0");
  c.com = jsonio::vec3_or(j, "com_m", Vec3::Zero(), where);
  c.inertia = j.contains("inertia_kgm2") ? jsonio::mat3(j, "inertia_kgm2", where) : Mat3::Zero();
  return c;
}

void load_plant(const json& j, int nr, int nj, PlantConfig& p) {
  const std::string w = "plant";
  check_keys(j,
             {"K_P_nm_per_rad", "K_D_nms_per_rad", "K_C_s", "coulomb_friction_nm", "torque_noise_std_nm",
              "tau_fri_nm", "w_ext", "true_params", "internal_step_s", "jacobian_passes", "max_condition"},
             w);
  if (j.contains("K_P_nm_per_rad")) p.K_P = jsonio::vector_n(j, "K_P_nm_per_rad", nj, w);
  if (j.contains("K_D_nms_per_rad")) p.K_D = jsonio::vector_n(j, "K_D_nms_per_rad", nj, w);
  if (j.contains("K_C_s")) p.K_C = jsonio::vector_n(j, "K_C_s", nj, w);
  if (j.contains("coulomb_friction_nm")) p.coulomb_friction = jsonio::vector_n(j, "coulomb_friction_nm", nj, w);
  p.torque_noise_std = jsonio::number_or(j, "torque_noise_std_nm", p.torque_noise_std, w);
  if (j.contains("tau_fri_nm")) {
    const json& t = j.at("tau_fri_nm");
    if (!t.is_array() || static_cast<int>(t.size()) != nr)
      throw ConfigError(w + ".tau_fri_nm: expected one entry per robot");
    for (int i = 0; i < nr; ++i) {
      const json& e = t[static_cast<std::size_t>(i)];
      const std::string wi = w + ".tau_fri_nm[" + std::to_string(i) + "]";
      p.tau_fri[static_cast<std::size_t>(i)] = e.is_number() ? VecX::Constant(nj, e.get<double>()) : jsonio::vector(e, wi);
    }
  }
  if (j.contains("w_ext")) {
    const json& e = j.at("w_ext");
    check_keys(e, {"moment_nm", "force_n"}, w + ".w_ext");
    p.w_ext.head<3>() = jsonio::vec3_or(e, "moment_nm", Vec3::Zero(), w + ".w_ext");
    p.w_ext.tail<3>() = jsonio::vec3_or(e, "force_n", Vec3::Zero(), w + ".w_ext");
  }
  if (j.contains("true_params")) {
    p.true_params.values = parameter_values(j.at("true_params"), nr, w + ".true_params");
    for (int i = 0; i < p.true_params.values.size(); ++i)
      p.true_params.mask[static_cast<std::size_t>(i)] = p.true_params.values(i) != 0.0;
  }
  p.internal_step = jsonio::number_or(j, "internal_step_s", p.internal_step, w);
  p.coupling.jacobian_passes = integer_or(j, "jacobian_passes", p.coupling.jacobian_passes, w);
  p.coupling.max_condition = jsonio::number_or(j, "max_condition", p.coupling.max_condition, w);
}

void load_estimator(const json& j, int nr, Scenario& sc) {
  const std::string w = "estimator";
  check_keys(j,
             {"enabled", "alpha", "rate_hz", "damping", "start_time_s", "mask", "sensitivity", "fd_step",
              "jacobian_passes"},
             w);
  EstimatorConfig& e = sc.estimator;
  sc.estimator_enabled = boolean_or(j, "enabled", sc.estimator_enabled, w);
  e.alpha = jsonio::number_or(j, "alpha", e.alpha, w);
  e.rate_hz = jsonio::number_or(j, "rate_hz", e.rate_hz, w);
  e.damping = jsonio::number_or(j, "damping", e.damping, w);
  e.start_time = jsonio::number_or(j, "start_time_s", e.start_time, w);
  e.fd_step = jsonio::number_or(j, "fd_step", e.fd_step, w);
  e.coupling.jacobian_passes = integer_or(j, "jacobian_passes", e.coupling.jacobian_passes, w);
  const std::string method = string_or(j, "sensitivity", "analytic", w);
  if (method == "analytic")
    e.method = SensitivityMethod::Analytic;
  else if (method == "finite_difference")
    e.method = SensitivityMethod::FiniteDifference;
  else
    throw ConfigError(w + ".sensitivity: expected 'analytic' or 'finite_difference'");
  if (j.contains("mask")) {
    const json& m = j.at("mask");
    if (!m.is_array()) throw ConfigError(w + ".mask: expected an array of parameter names");
    e.mask.assign(static_cast<std::size_t>(KinematicParams::kPerRobot * (nr - 1)), false);
    for (const json& name : m) {
      if (!name.is_string()) throw ConfigError(w + ".mask: expected parameter names");
      e.mask[static_cast<std::size_t>(param_index(name.get<std::string>(), nr, w + ".mask"))] = true;
    }
  }
}

void load_mpc(const json& j, MpcConfig& m) {
  const std::string w = "mpc";
  check_keys(j,
             {"horizon_s", "dt_s", "Q", "R_tau", "R_lambda", "S_motor", "P", "terminal_scale", "penalize_xa_about_reference",
              "enforce_state_bounds", "start_time_s", "one_step_delay", "fd_step", "qp_max_iterations",
              "qp_tolerance", "jacobian_passes"},
             w);
  m.horizon = jsonio::number_or(j, "horizon_s", m.horizon, w);
  m.dt = jsonio::number_or(j, "dt_s", m.dt, w);
  m.Q = jsonio::number_or(j, "Q", m.Q, w);
  m.R_tau = jsonio::number_or(j, "R_tau", m.R_tau, w);
  m.R_lambda = jsonio::number_or(j, "R_lambda", m.R_lambda, w);
  m.S_motor = jsonio::number_or(j, "S_motor", m.S_motor, w);
  m.P = jsonio::number_or(j, "P", m.P, w);
  m.terminal_scale = jsonio::number_or(j, "terminal_scale", m.terminal_scale, w);
  m.penalize_xa_about_reference = boolean_or(j, "penalize_xa_about_reference", m.penalize_xa_about_reference, w);
  m.enforce_state_bounds = boolean_or(j, "enforce_state_bounds", m.enforce_state_bounds, w);
  m.start_time = jsonio::number_or(j, "start_time_s", m.start_time, w);
  m.one_step_delay = boolean_or(j, "one_step_delay", m.one_step_delay, w);
  m.fd_step = jsonio::number_or(j, "fd_step", m.fd_step, w);
  m.qp.max_iterations = integer_or(j, "qp_max_iterations", m.qp.max_iterations, w);
  m.qp.tolerance = jsonio::number_or(j, "qp_tolerance", m.qp.tolerance, w);
  m.coupling.jacobian_passes = integer_or(j, "jacobian_passes", m.coupling.jacobian_passes, w);
}

void load_path(const json& j, Scenario& sc) {
  const std::string w = "path";
  check_keys(j, {"waypoints", "durations_s", "ramp_fraction", "hold_before_s", "hold_after_s"}, w);
  const json& wp = jsonio::require(j, "waypoints", w);
  if (!wp.is_array()) throw ConfigError(w + ".waypoints: expected an array of poses");
  sc.path.waypoints.clear();
  for (std::size_t i = 0; i < wp.size(); ++i)
    sc.path.waypoints.push_back(jsonio::pose(wp[i], w + ".waypoints[" + std::to_string(i) + "]"));
  const VecX d = jsonio::vector(j, "durations_s", w);
  sc.path.durations.assign(d.data(), d.data() + d.size());
  sc.path.ramp_fraction = jsonio::number_or(j, "ramp_fraction", sc.path.ramp_fraction, w);
  sc.path.hold_before = jsonio::number_or(j, "hold_before_s", sc.path.hold_before, w);
  sc.path.hold_after = jsonio::number_or(j, "hold_after_s", sc.path.hold_after, w);
}

void load_vibration(const json& j, int nr, Scenario& sc) {
  const std::string w = "vibration";
  check_keys(j, {"enabled", "segments", "peak_m", "frequency_hz", "direction", "target_robot", "ramp_s"}, w);
  VibrationSpec& v = sc.vibration;
  sc.vibration_enabled = boolean_or(j, "enabled", sc.vibration_enabled, w);
  if (j.contains("segments")) {
    const VecX s = jsonio::vector(j, "segments", w);
    v.segments.clear();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const int seg = static_cast<int>(s(i));
      if (seg < 1 || seg > sc.path.n_segments() || seg != s(i))
        throw ConfigError(w + ".segments[" + std::to_string(i) + "]: must be a segment number in 1.." +
                          std::to_string(sc.path.n_segments()));
      v.segments.push_back(seg);
    }
  }
  v.peak = jsonio::number_or(j, "peak_m", v.peak, w);
  v.frequency = jsonio::number_or(j, "frequency_hz", v.frequency, w);
  v.direction = jsonio::vec3_or(j, "direction", v.direction, w);
  v.ramp = jsonio::number_or(j, "ramp_s", v.ramp, w);
  const int target = integer_or(j, "target_robot", v.target_robot + 1, w);
  if (target < 1 || target > nr) throw ConfigError(w + ".target_robot: must be in 1.." + std::to_string(nr));
  v.target_robot = target - 1;
  if (!(v.peak >= 0.0)) throw ConfigError(w + ".peak_m: must be >= 0");
  if (!(v.frequency > 0.0)) throw ConfigError(w + ".frequency_hz: must be > 0");
  if (!(v.ramp > 0.0)) throw ConfigError(w + ".ramp_s: must be > 0");
  if (v.direction.norm() < 1e-12) throw ConfigError(w + ".direction: must be nonzero");
}

}  // namespace

CouplerModel load_coupler(const std::filesystem::path& path) {
  return coupler_from_json(jsonio::parse_file(path), path.filename().string());
}

Scenario scenario_from_json_text(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  check_keys(j,
             {"schema", "name", "seed", "sample_dt_s", "gravity_mps2", "robots", "coupler", "path", "excitation",
              "vibration", "plant", "estimator", "mpc", "metrics", "ik"},
             "scenario");
  if (!j.contains("schema") || j.at("schema") != kScenarioSchema)
    throw ConfigError("scenario.schema: expected '" + std::string(kScenarioSchema) + "'");

  Scenario sc;
  sc.name = string_or(j, "name", "scenario", "scenario");
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("scenario.seed: expected a non-negative integer");
    sc.seed = j.at("seed").get<std::uint64_t>();
  }
  sc.sample_dt = jsonio::number_or(j, "sample_dt_s", sc.sample_dt, "scenario");
  if (!(sc.sample_dt > 0.0)) throw ConfigError("scenario.sample_dt_s: must be > 0");

  CoupledSystem& sys = sc.system;
  sys.gravity = jsonio::vec3_or(j, "gravity_mps2", sys.gravity, "scenario");

  const json& coupler = jsonio::require(j, "coupler", "scenario");
  if (coupler.is_string())
    sys.coupler = load_coupler(base_dir / coupler.get<std::string>());
  else
    sys.coupler = coupler_from_json(coupler, "coupler");

  const json& robots = jsonio::require(j, "robots", "scenario");
  if (!robots.is_array() || robots.size() < 2) throw ConfigError("scenario.robots: at least two robots are required");
  for (std::size_t i = 0; i < robots.size(); ++i) {
    const json& r = robots[i];
    const std::string w = "robots[" + std::to_string(i) + "]";
    check_keys(r, {"model", "base", "attachment", "ik_seed_rad"}, w);
    const json& model = jsonio::require(r, "model", w);
    if (!model.is_string()) throw ConfigError(w + ".model: expected a file name");
    sys.robots.push_back(load_robot_model(base_dir / model.get<std::string>()));
    sys.bases.push_back(jsonio::pose_or_identity(r, "base", w));
    sys.coupler.attachments.push_back(jsonio::pose_or_identity(r, "attachment", w));
    const int nj = sys.robots.back().n_joints();
    sc.ik_seeds.push_back(r.contains("ik_seed_rad") ? jsonio::vector_n(r, "ik_seed_rad", nj, w) : VecX::Zero(nj));
  }
  sys.validate();
  const int nr = sys.n_robots(), nj = sys.n_joints();

  const json& ik = section(j, "ik");
  check_keys(ik, {"posture_gain", "tolerance", "max_iterations", "damping"}, "ik");
  sc.ik.posture_gain = jsonio::number_or(ik, "posture_gain", 0.05, "ik");
  sc.ik.tolerance = jsonio::number_or(ik, "tolerance", sc.ik.tolerance, "ik");
  sc.ik.damping = jsonio::number_or(ik, "damping", sc.ik.damping, "ik");
  sc.ik.max_iterations = integer_or(ik, "max_iterations", sc.ik.max_iterations, "ik");
  if (!(sc.ik.posture_gain >= 0.0 && sc.ik.posture_gain < 1.0)) throw ConfigError("ik.posture_gain: must be in [0, 1)");
  if (!(sc.ik.tolerance > 0.0)) throw ConfigError("ik.tolerance: must be > 0");

  load_path(jsonio::require(j, "path", "scenario"), sc);
  sc.path.validate();

  const json& exc = section(j, "excitation");
  check_keys(exc, {"amplitudes_rad", "harmonics"}, "excitation");
  sc.excitation.amplitudes = jsonio::vec3_or(exc, "amplitudes_rad", sc.excitation.amplitudes, "excitation");
  sc.excitation.harmonics = jsonio::vec3_or(exc, "harmonics", sc.excitation.harmonics, "excitation");

  load_vibration(section(j, "vibration"), nr, sc);

  sc.plant = PlantConfig::defaults(nr, nj);
  load_plant(section(j, "plant"), nr, nj, sc.plant);
  sc.plant.validate(nr, nj);

  sc.estimator.start_time = 1.0;
  load_estimator(section(j, "estimator"), nr, sc);
  sc.estimator.validate();

  load_mpc(section(j, "mpc"), sc.mpc);
  sc.mpc.validate();
  if (std::abs(sc.mpc.dt - sc.sample_dt) > 1e-12) throw ConfigError("mpc.dt_s: must equal scenario.sample_dt_s");

  const json& met = section(j, "metrics");
  check_keys(met, {"window_start_s"}, "metrics");
  sc.metrics.window_start = jsonio::number_or(met, "window_start_s", sc.metrics.window_start, "metrics");
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Scenario sc = scenario_from_json_text(buf.str(), path.parent_path());
  sc.source = path;
  return sc;
}

}  // namespace coupled
