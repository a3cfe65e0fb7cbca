#include "coupled/io.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace coupled {

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& kind,
                     const std::vector<std::string>& columns)
    : columns_(columns.size()) {
  f_ = std::fopen(path.string().c_str(), "w");
  if (!f_) throw std::runtime_error("cannot write " + path.string() + ": " + std::strerror(errno));
  std::fprintf(f_, "# %s %s\n", kCsvSchema, kind.c_str());
  for (std::size_t i = 0; i < columns.size(); ++i) std::fprintf(f_, i ? ",%s" : "%s", columns[i].c_str());
  std::fputc('\n', f_);
}

CsvWriter::~CsvWriter() {
  if (f_) std::fclose(f_);
}

CsvWriter& CsvWriter::operator<<(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12e", v == 0.0 ? 0.0 : v);
  std::fprintf(f_, in_row_ ? ",%s" : "%s", buf);
  ++in_row_;
  return *this;
}

CsvWriter& CsvWriter::operator<<(const VecX& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) *this << v(i);
  return *this;
}

void CsvWriter::end_row() {
  if (in_row_ != columns_)
    throw std::logic_error("csv row has " + std::to_string(in_row_) + " values, expected " + std::to_string(columns_));
  std::fputc('\n', f_);
  in_row_ = 0;
}

std::vector<std::string> joint_columns(const std::string& prefix, int n_robots, int n_joints) {
  std::vector<std::string> out;
  for (int i = 0; i < n_robots; ++i)
    for (int j = 0; j < n_joints; ++j) out.push_back(prefix + "_r" + std::to_string(i + 1) + "_j" + std::to_string(j + 1));
  return out;
}

namespace {

void append(std::vector<std::string>& a, const std::vector<std::string>& b) { a.insert(a.end(), b.begin(), b.end()); }

std::vector<std::string> wrench_columns(const std::string& prefix, int n_robots) {
  static const char* kAxes[6] = {"mx", "my", "mz", "fx", "fy", "fz"};
  std::vector<std::string> out;
  for (int i = 0; i < n_robots; ++i)
    for (const char* a : kAxes) out.push_back(prefix + "_r" + std::to_string(i + 1) + "_" + a);
  return out;
}

std::vector<std::string> plant_columns(int nr, int nj) {
  std::vector<std::string> c{"t"};
  append(c, joint_columns("q_m", nr, nj));
  append(c, joint_columns("q_sp", nr, nj));
  append(c, joint_columns("tau_m", nr, nj));
  append(c, joint_columns("tau_true", nr, nj));
  append(c, joint_columns("q_link", nr, nj));
  append(c, wrench_columns("lambda", nr));
  append(c, {"tcp_x", "tcp_y", "tcp_z", "tcp_rot_x", "tcp_rot_y", "tcp_rot_z"});
  append(c, {"gap_rot_x", "gap_rot_y", "gap_rot_z", "gap_trans_x", "gap_trans_y", "gap_trans_z"});
  append(c, joint_columns("u", nr, nj));
  return c;
}

// Rotation logged as the axis-angle vector, unique and continuous away from pi.
Vec3 rotation_vector(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

void plant_row(CsvWriter& w, const TickRecord& r) {
  w << r.t;
  for (const auto& v : r.state.q_m) w << v;
  for (const auto& v : r.state.q_sp) w << v;
  for (const auto& v : r.frame.tau_m) w << v;
  for (const auto& v : r.tau_true) w << v;
  for (const auto& v : r.q_link_true) w << v;
  for (const auto& v : r.lambda) w << VecX(v);
  w << VecX(r.tcp.translation) << VecX(rotation_vector(r.tcp.rotation));
  w << VecX(r.gap) << r.u;
}

std::vector<std::string> parameter_columns(const std::string& prefix, int n_robots) {
  std::vector<std::string> out;
  for (int i = 0; i < KinematicParams::kPerRobot * (n_robots - 1); ++i)
    out.push_back(prefix + KinematicParams::label(i));
  return out;
}

}  // namespace

void write_plant_log(const std::filesystem::path& path, const CoupledSystem& sys, const std::vector<TickRecord>& log) {
  CsvWriter w(path, "plant-log", plant_columns(sys.n_robots(), sys.n_joints()));
  for (const TickRecord& r : log) {
    plant_row(w, r);
    w.end_row();
  }
}

void write_closed_loop_log(const std::filesystem::path& path, const CoupledSystem& sys, const ClosedLoopResult& res) {
  std::vector<std::string> c = plant_columns(sys.n_robots(), sys.n_joints());
  append(c, parameter_columns("p_hat_", sys.n_robots()));
  append(c, {"objective", "kkt_residual", "collocation_defect", "qp_iterations", "mpc_active", "degraded"});
  CsvWriter w(path, "closed-loop-log", c);
  for (const ClosedLoopTick& r : res.ticks) {
    plant_row(w, r.plant);
    w << r.p_hat << r.objective << r.kkt << r.defect << static_cast<double>(r.iterations)
      << (r.mpc_active ? 1.0 : 0.0) << (r.degraded ? 1.0 : 0.0);
    w.end_row();
  }
}

void write_estimation_trace(const std::filesystem::path& path, const std::vector<EstimationRecord>& trace,
                            int n_robots) {
  std::vector<std::string> c{"t"};
  append(c, parameter_columns("", n_robots));
  append(c, {"residual_norm", "min_singular_value"});
  CsvWriter w(path, "estimation-trace", c);
  for (const EstimationRecord& r : trace) {
    w << r.t << r.p_hat << r.residual << r.min_sv;
    w.end_row();
  }
}

void write_reference(const std::filesystem::path& path, const CoupledSystem& sys, const ReferenceTrajectory& ref) {
  const int nr = sys.n_robots(), nj = sys.n_joints();
  std::vector<std::string> c{"t", "segment"};
  append(c, joint_columns("q_ref", nr, nj));
  append(c, joint_columns("q_motor", nr, nj));
  append(c, joint_columns("q_sp", nr, nj));
  append(c, joint_columns("u_ref", nr, nj));
  append(c, {"tcp_x", "tcp_y", "tcp_z", "tcp_rot_x", "tcp_rot_y", "tcp_rot_z"});
  CsvWriter w(path, "reference", c);
  for (const ReferenceSample& s : ref.samples) {
    w << s.t << static_cast<double>(s.segment + 1);
    for (const auto& v : s.q_link) w << v;
    for (const auto& v : s.q_motor) w << v;
    for (const auto& v : s.q_sp) w << v;
    for (const auto& v : s.u) w << v;
    w << VecX(s.tcp.translation) << VecX(rotation_vector(s.tcp.rotation));
    w.end_row();
  }
}

void write_timing(const std::filesystem::path& path, const ClosedLoopResult& res) {
  CsvWriter w(path, "solve-timing", {"t", "solve_time_s", "qp_iterations"});
  for (const ClosedLoopTick& r : res.ticks) {
    if (!r.mpc_active) continue;
    w << r.plant.t << r.solve_time << static_cast<double>(r.iterations);
    w.end_row();
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void add_metrics(Summary& s, const std::string& prefix, const Metrics& m) {
  s.emplace_back(prefix + "avg_translational_m", format_number(m.tcp.avg_translational));
  s.emplace_back(prefix + "max_translational_m", format_number(m.tcp.max_translational));
  s.emplace_back(prefix + "t_max_translational_s", format_number(m.tcp.t_max_translational));
  s.emplace_back(prefix + "avg_rotational_rad", format_number(m.tcp.avg_rotational));
  s.emplace_back(prefix + "max_rotational_rad", format_number(m.tcp.max_rotational));
  s.emplace_back(prefix + "t_max_rotational_s", format_number(m.tcp.t_max_rotational));
  s.emplace_back(prefix + "samples", std::to_string(m.tcp.samples));
  s.emplace_back(prefix + "resampled", m.tcp.resampled ? "true" : "false");
  for (std::size_t i = 0; i < m.peak_tau.size(); ++i)
    for (Eigen::Index j = 0; j < m.peak_tau[i].size(); ++j)
      s.emplace_back(prefix + "peak_tau_r" + std::to_string(i + 1) + "_j" + std::to_string(j + 1) + "_nm",
                     format_number(m.peak_tau[i](j)));
  s.emplace_back(prefix + "max_peak_tau_nm", format_number(m.max_peak_tau));
}

void write_summary(const std::filesystem::path& path, const Summary& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# " << kCsvSchema << " summary\n";
  for (const auto& [k, v] : s) out << k << " = " << v << '\n';
}

std::string summary_text(const std::string& title, const Summary& s) {
  std::size_t width = 0;
  for (const auto& kv : s) width = std::max(width, kv.first.size());
  std::ostringstream out;
  out << title << '\n';
  for (const auto& [k, v] : s) out << "  " << std::left << std::setw(static_cast<int>(width)) << k << "  " << v << '\n';
  return out.str();
}

}  // namespace coupled
