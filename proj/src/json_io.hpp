#pragma once

// Internal JSON helpers shared by the model, coupler and scenario loaders.

#include <string>
#include <vector>

#include <json.hpp>

#include "coupled/errors.hpp"
#include "coupled/robot_model.hpp"
#include "coupled/spatial.hpp"

namespace coupled::jsonio {

using nlohmann::json;

inline const json& require(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
  return j.at(key);
}

inline double number(const json& j, const std::string& key, const std::string& where) {
  const json& v = require(j, key, where);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return v.get<double>();
}

inline double number_or(const json& j, const std::string& key, double fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return number(j, key, where);
}

inline VecX vector(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
  VecX out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(where + "[" + std::to_string(i) + "]: expected a number");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

inline VecX vector(const json& j, const std::string& key, const std::string& where) {
  return vector(require(j, key, where), where + "." + key);
}

/// Accepts either a scalar (broadcast to n entries) or an array of length n.
inline VecX vector_n(const json& j, const std::string& key, int n, const std::string& where) {
  const json& v = require(j, key, where);
  if (v.is_number()) return VecX::Constant(n, v.get<double>());
  VecX out = vector(v, where + "." + key);
  if (out.size() != n)
    throw ConfigError(where + "." + key + ": expected " + std::to_string(n) + " entries, got " +
                      std::to_string(out.size()));
  return out;
}

inline Vec3 vec3(const json& j, const std::string& key, const std::string& where) {
  VecX v = vector(j, key, where);
  if (v.size() != 3) throw ConfigError(where + "." + key + ": expected 3 entries");
  return v;
}

inline Vec3 vec3_or(const json& j, const std::string& key, const Vec3& fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return vec3(j, key, where);
}

inline Mat3 mat3(const json& j, const std::string& key, const std::string& where) {
  const json& v = require(j, key, where);
  VecX flat;
  if (v.is_array() && v.size() == 3 && v[0].is_array()) {
    flat.resize(9);
    for (int r = 0; r < 3; ++r) {
      VecX row = vector(v[static_cast<std::size_t>(r)], where + "." + key);
      if (row.size() != 3) throw ConfigError(where + "." + key + ": expected 3x3");
      flat.segment<3>(3 * r) = row;
    }
  } else {
    flat = vector(v, where + "." + key);
    if (flat.size() == 3) {  // principal moments
      return flat.asDiagonal();
    }
    if (flat.size() == 6) {  // ixx, ixy, ixz, iyy, iyz, izz
      Mat3 m;
      m << flat(0), flat(1), flat(2), flat(1), flat(3), flat(4), flat(2), flat(4), flat(5);
      return m;
    }
    if (flat.size() != 9) throw ConfigError(where + "." + key + ": expected 3, 6 or 9 entries");
  }
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = flat(3 * r + c);
  return m;
}

inline json to_json(const VecX& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) a.push_back(to_json(VecX(m.row(r).transpose())));
  return a;
}

/// {"xyz_m": [...], "rpy_rad": [...]}; both optional.
inline Pose pose(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object with xyz_m / rpy_rad");
  return {rpy(vec3_or(j, "rpy_rad", Vec3::Zero(), where)), vec3_or(j, "xyz_m", Vec3::Zero(), where)};
}

inline Pose pose_or_identity(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) return Pose::identity();
  return pose(j.at(key), where + "." + key);
}

/// Inverse of rpy() for serialization; exact for pitch away from +-pi/2.
inline Vec3 rpy_of(const Mat3& r) {
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return {roll, pitch, yaw};
}

inline json to_json(const Pose& p) {
  return json{{"xyz_m", to_json(VecX(p.translation))}, {"rpy_rad", to_json(VecX(rpy_of(p.rotation)))}};
}

json parse_file(const std::filesystem::path& path);

RobotModel robot_model_from_json(const json& j, const std::string& where);
json robot_model_to_json(const RobotModel& model);

}  // namespace coupled::jsonio
