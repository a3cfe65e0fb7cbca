#include "coupled/robot_model.hpp"

#include <fstream>
#include <sstream>

#include "coupled/errors.hpp"
#include "json_io.hpp"

namespace coupled {

namespace {

struct ChainFrames {
  std::vector<Pose> joint;  // world pose of each joint frame (after its rotation)
  Pose tip;
};

ChainFrames chain(const RobotModel& m, const VecX& q, const Pose& tool) {
  ChainFrames out;
  out.joint.reserve(m.joints.size());
  Pose t;
  for (int j = 0; j < m.n_joints(); ++j) {
    const JointSpec& js = m.joints[static_cast<std::size_t>(j)];
    t = t * Pose(rpy(js.origin_rpy), js.origin_xyz) * Pose::from_rotation(rot_axis(js.axis, q(j)));
    out.joint.push_back(t);
  }
  out.tip = t * m.flange_offset * m.tcp_offset * tool;
  return out;
}

void check_dim(const RobotModel& m, const VecX& v, const char* what) {
  if (v.size() != m.n_joints()) {
    std::ostringstream msg;
    msg << m.name << ": " << what << " has " << v.size() << " entries, expected " << m.n_joints();
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

void RobotModel::validate() const {
  const int n = n_joints();
  const std::string where = "robot model '" + name + "'";
  if (n == 0) throw ConfigError(where + ": no joints");
  if (static_cast<int>(links.size()) != n) throw ConfigError(where + ": links count differs from joints count");
  auto sized = [&](const VecX& v, const char* field) {
    if (v.size() != n) throw ConfigError(where + ": " + field + " must have " + std::to_string(n) + " entries");
  };
  sized(joint_stiffness, "joint_stiffness_nm_per_rad");
  sized(q_min, "position_min_rad");
  sized(q_max, "position_max_rad");
  sized(qd_min, "velocity_min_rad_per_s");
  sized(qd_max, "velocity_max_rad_per_s");
  for (int j = 0; j < n; ++j) {
    const std::string jw = where + " joint " + std::to_string(j + 1);
    if (!(joint_stiffness(j) > 0.0)) throw ConfigError(jw + ": joint stiffness must be > 0");
    if (!(q_min(j) < q_max(j))) throw ConfigError(jw + ": position_min_rad must be < position_max_rad");
    if (!(qd_min(j) < qd_max(j))) throw ConfigError(jw + ": velocity_min must be < velocity_max");
    const JointSpec& js = joints[static_cast<std::size_t>(j)];
    if (std::abs(js.axis.norm() - 1.0) > 1e-9) throw ConfigError(jw + ": axis must be a unit vector");
    const LinkInertia& li = links[static_cast<std::size_t>(j)];
    if (!(li.mass > 0.0)) throw ConfigError(jw + ": link mass must be > 0");
    if ((li.inertia - li.inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ConfigError(jw + ": inertia must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> es(li.inertia);
    if (!(es.eigenvalues().minCoeff() > 0.0)) throw ConfigError(jw + ": inertia must be positive definite");
  }
  if (!flange_offset.is_valid(1e-9) || !tcp_offset.is_valid(1e-9))
    throw ConfigError(where + ": flange/tcp offset rotation is not orthonormal");
}

Pose forward_kinematics(const RobotModel& model, const VecX& q, const Pose& tool) {
  check_dim(model, q, "q");
  return chain(model, q, tool).tip;
}

Mat6X jacobian(const RobotModel& model, const VecX& q, const Pose& tool) {
  check_dim(model, q, "q");
  const ChainFrames f = chain(model, q, tool);
  const int n = model.n_joints();
  Mat6X jac(6, n);
  const Vec3& p_tip = f.tip.translation;
  for (int j = 0; j < n; ++j) {
    const Pose& fj = f.joint[static_cast<std::size_t>(j)];
    const Vec3 z = fj.rotation * model.joints[static_cast<std::size_t>(j)].axis;
    jac.block<3, 1>(0, j) = z;
    jac.block<3, 1>(3, j) = z.cross(p_tip - fj.translation);
  }
  return jac;
}

Vec6 jacobian_dot_times_qd(const RobotModel& model, const VecX& q, const VecX& qd, const Pose& tool) {
  const double scale = std::max(qd.norm(), 1e-12);
  const double h = 1e-6 / scale;
  const Mat6X jp = jacobian(model, q + h * qd, tool);
  const Mat6X jm = jacobian(model, q - h * qd, tool);
  return (jp - jm) * qd / (2.0 * h);
}

VecX inverse_dynamics(const RobotModel& model, const JointState& s, const Vec3& gravity) {
  check_dim(model, s.q, "q");
  check_dim(model, s.qd, "qd");
  check_dim(model, s.qdd, "qdd");
  const int n = model.n_joints();
  const ChainFrames f = chain(model, s.q, Pose::identity());

  std::vector<Vec3> z(n), p(n), com(n), force(n), moment(n);
  // Forward sweep in base coordinates. Gravity enters as a base acceleration.
  Vec3 omega = Vec3::Zero(), alpha = Vec3::Zero(), acc = -gravity;
  Vec3 p_prev = Vec3::Zero();
  for (int j = 0; j < n; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const Pose& fj = f.joint[uj];
    p[uj] = fj.translation;
    z[uj] = fj.rotation * model.joints[uj].axis;
    const Vec3 d = p[uj] - p_prev;
    acc = acc + alpha.cross(d) + omega.cross(omega.cross(d));
    const Vec3 omega_next = omega + z[uj] * s.qd(j);
    alpha = alpha + z[uj] * s.qdd(j) + omega.cross(z[uj] * s.qd(j));
    omega = omega_next;
    p_prev = p[uj];

    const LinkInertia& li = model.links[uj];
    const Vec3 r = fj.rotation * li.com;
    com[uj] = r;
    const Vec3 acc_com = acc + alpha.cross(r) + omega.cross(omega.cross(r));
    const Mat3 inertia_w = fj.rotation * li.inertia * fj.rotation.transpose();
    force[uj] = li.mass * acc_com;
    moment[uj] = inertia_w * alpha + omega.cross(inertia_w * omega);
  }

  // Backward sweep: wrench transmitted through each joint, moments about p_j.
  VecX tau(n);
  Vec3 f_next = Vec3::Zero(), n_next = Vec3::Zero();
  for (int j = n - 1; j >= 0; --j) {
    const auto uj = static_cast<std::size_t>(j);
    Vec3 fj = force[uj] + f_next;
    Vec3 nj = moment[uj] + com[uj].cross(force[uj]) + n_next;
    if (j + 1 < n) nj += (p[uj + 1] - p[uj]).cross(f_next);
    tau(j) = z[uj].dot(nj);
    f_next = fj;
    n_next = nj;
  }
  return tau;
}

VecX gravity_torque(const RobotModel& model, const VecX& q, const Vec3& gravity) {
  const VecX zero = VecX::Zero(model.n_joints());
  return inverse_dynamics(model, {q, zero, zero}, gravity);
}

MatX mass_matrix(const RobotModel& model, const VecX& q) {
  const int n = model.n_joints();
  MatX m(n, n);
  const VecX zero = VecX::Zero(n);
  for (int k = 0; k < n; ++k) {
    m.col(k) = inverse_dynamics(model, {q, zero, VecX::Unit(n, k)}, Vec3::Zero());
  }
  // Symmetrize round-off only.
  return 0.5 * (m + m.transpose());
}

namespace jsonio {

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RobotModel robot_model_from_json(const json& j, const std::string& where) {
  RobotModel m;
  m.name = j.value("name", std::string("robot"));
  const json& joints = require(j, "joints", where);
  if (!joints.is_array() || joints.empty()) throw ConfigError(where + ".joints: expected a non-empty array");
  const int n = static_cast<int>(joints.size());
  for (int k = 0; k < n; ++k) {
    const json& jj = joints[static_cast<std::size_t>(k)];
    const std::string w = where + ".joints[" + std::to_string(k) + "]";
    JointSpec js;
    js.origin_xyz = vec3_or(jj, "origin_xyz_m", Vec3::Zero(), w);
    js.origin_rpy = vec3_or(jj, "origin_rpy_rad", Vec3::Zero(), w);
    js.axis = vec3(jj, "axis", w);
    LinkInertia li;
    const json& link = require(jj, "link", w);
    li.mass = number(link, "mass_kg", w + ".link");
    li.com = vec3(link, "com_m", w + ".link");
    li.inertia = mat3(link, "inertia_kgm2", w + ".link");
    m.joints.push_back(js);
    m.links.push_back(li);
  }
  m.flange_offset = pose_or_identity(j, "flange_offset", where);
  m.tcp_offset = pose_or_identity(j, "tcp_offset", where);
  m.joint_stiffness = vector_n(j, "joint_stiffness_nm_per_rad", n, where);
  m.q_min = vector_n(j, "position_min_rad", n, where);
  m.q_max = vector_n(j, "position_max_rad", n, where);
  m.qd_max = vector_n(j, "velocity_max_rad_per_s", n, where);
  m.qd_min = j.contains("velocity_min_rad_per_s") ? vector_n(j, "velocity_min_rad_per_s", n, where) : VecX(-m.qd_max);
  m.validate();
  return m;
}

json robot_model_to_json(const RobotModel& m) {
  json joints = json::array();
  for (int k = 0; k < m.n_joints(); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const JointSpec& js = m.joints[uk];
    const LinkInertia& li = m.links[uk];
    joints.push_back(json{{"origin_xyz_m", to_json(VecX(js.origin_xyz))},
                          {"origin_rpy_rad", to_json(VecX(js.origin_rpy))},
                          {"axis", to_json(VecX(js.axis))},
                          {"link", json{{"mass_kg", li.mass},
                                        {"com_m", to_json(VecX(li.com))},
                                        {"inertia_kgm2", to_json(li.inertia)}}}});
  }
  json out{{"schema", "coupled-robot/1"},
           {"name", m.name},
           {"joints", joints},
           {"joint_stiffness_nm_per_rad", to_json(m.joint_stiffness)},
           {"position_min_rad", to_json(m.q_min)},
           {"position_max_rad", to_json(m.q_max)},
           {"velocity_min_rad_per_s", to_json(m.qd_min)},
           {"velocity_max_rad_per_s", to_json(m.qd_max)}};
  out["flange_offset"] = to_json(m.flange_offset);
  out["tcp_offset"] = to_json(m.tcp_offset);
  return out;
}

}  // namespace jsonio

RobotModel robot_model_from_json_text(const std::string& text) {
  try {
    return jsonio::robot_model_from_json(nlohmann::json::parse(text), "robot model");
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("robot model: ") + e.what());
  }
}

RobotModel load_robot_model(const std::filesystem::path& path) {
  return jsonio::robot_model_from_json(jsonio::parse_file(path), path.filename().string());
}

std::string robot_model_to_json_text(const RobotModel& model) {
  return jsonio::robot_model_to_json(model).dump(2);
}

}  // namespace coupled
