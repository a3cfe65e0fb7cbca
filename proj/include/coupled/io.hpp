#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "coupled/estimation.hpp"
#include "coupled/metrics.hpp"
#include "coupled/mpc.hpp"
#include "coupled/plant.hpp"
#include "coupled/reference.hpp"

namespace coupled {

inline constexpr const char* kCsvSchema = "coupled-csv/1";

/// Numeric CSV with a `# coupled-csv/1 <kind>` first line and a column header.
/// Values are printed with a fixed format so identical inputs give identical bytes.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& kind, const std::vector<std::string>& columns);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  CsvWriter& operator<<(double v);
  CsvWriter& operator<<(const VecX& v);
  void end_row();

 private:
  std::FILE* f_ = nullptr;
  std::size_t columns_ = 0, in_row_ = 0;
};

std::vector<std::string> joint_columns(const std::string& prefix, int n_robots, int n_joints);

void write_plant_log(const std::filesystem::path& path, const CoupledSystem& sys, const std::vector<TickRecord>& log);
void write_closed_loop_log(const std::filesystem::path& path, const CoupledSystem& sys, const ClosedLoopResult& r);
void write_estimation_trace(const std::filesystem::path& path, const std::vector<EstimationRecord>& trace,
                            int n_robots);
void write_reference(const std::filesystem::path& path, const CoupledSystem& sys, const ReferenceTrajectory& ref);
/// Wall-clock solve times; kept apart from the deterministic logs.
void write_timing(const std::filesystem::path& path, const ClosedLoopResult& r);

using Summary = std::vector<std::pair<std::string, std::string>>;

void add_metrics(Summary& s, const std::string& prefix, const Metrics& m);
std::string format_number(double v);

/// `key = value` lines, one per entry.
void write_summary(const std::filesystem::path& path, const Summary& s);
/// Aligned table for humans.
std::string summary_text(const std::string& title, const Summary& s);

}  // namespace coupled
