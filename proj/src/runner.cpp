#include "coupled/runner.hpp"

#include <chrono>
#include <fstream>
#include <iostream>

#include "coupled/errors.hpp"
#include "coupled/metrics.hpp"

namespace coupled {

RunMode parse_mode(const std::string& name) {
  if (name == "open-loop") return RunMode::OpenLoop;
  if (name == "estimate") return RunMode::Estimate;
  if (name == "closed-loop") return RunMode::ClosedLoop;
  if (name == "compare") return RunMode::Compare;
  throw ConfigError("unknown mode '" + name + "' (expected open-loop, estimate, closed-loop or compare)");
}

std::string mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::OpenLoop: return "open-loop";
    case RunMode::Estimate: return "estimate";
    case RunMode::ClosedLoop: return "closed-loop";
    case RunMode::Compare: return "compare";
  }
  return "?";
}

namespace {

std::vector<TickRecord> plant_ticks(const ClosedLoopResult& r) {
  std::vector<TickRecord> out;
  out.reserve(r.ticks.size());
  for (const auto& t : r.ticks) out.push_back(t.plant);
  return out;
}

void add_estimation(Summary& s, const std::string& prefix, const std::vector<EstimationRecord>& trace,
                    const KinematicParams& truth, const std::vector<bool>& mask_cfg) {
  s.emplace_back(prefix + "updates", std::to_string(trace.size()));
  if (trace.empty()) return;
  const std::vector<bool> mask = mask_cfg.empty() ? KinematicParams::default_mask(truth.n_followers + 1) : mask_cfg;
  const VecX& p = trace.back().p_hat;
  const VecX err = parameter_errors(p, truth, mask);
  Eigen::Index e = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const std::string label = KinematicParams::label(static_cast<int>(i));
    s.emplace_back(prefix + "final_" + label, format_number(p(static_cast<Eigen::Index>(i))));
    s.emplace_back(prefix + "true_" + label, format_number(truth.values(static_cast<Eigen::Index>(i))));
    s.emplace_back(prefix + "error_" + label, format_number(err(e++)));
  }
  s.emplace_back(prefix + "final_residual_nm", format_number(trace.back().residual));
  s.emplace_back(prefix + "final_min_singular_value", format_number(trace.back().min_sv));
}

void add_closed_loop(Summary& s, const ClosedLoopResult& r) {
  double max_kkt = 0.0, max_defect = 0.0;
  int active = 0, degraded = 0;
  for (const auto& t : r.ticks) {
    if (!t.mpc_active) continue;
    ++active;
    degraded += t.degraded ? 1 : 0;
    max_kkt = std::max(max_kkt, t.kkt);
    max_defect = std::max(max_defect, t.defect);
  }
  s.emplace_back("mpc_ticks", std::to_string(active));
  s.emplace_back("mpc_degraded_ticks", std::to_string(degraded));
  s.emplace_back("mpc_max_kkt_residual", format_number(max_kkt));
  s.emplace_back("mpc_max_collocation_defect", format_number(max_defect));
  s.emplace_back("aborted", r.aborted ? "true" : "false");
  if (r.aborted) s.emplace_back("abort_reason", r.abort_reason);
}

std::string percent(const std::optional<double>& r) {
  if (!r) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * *r);
  return buf;
}

void write_comparison(const std::filesystem::path& dir, const std::vector<ComparisonRow>& rows, Summary& s) {
  std::ofstream out(dir / "comparison.csv");
  if (!out) throw std::runtime_error("cannot write " + (dir / "comparison.csv").string());
  out << "# " << kCsvSchema << " comparison\nmetric,open_loop,closed_loop,reduction\n";
  for (const auto& r : rows) {
    out << r.metric << ',' << format_number(r.baseline) << ',' << format_number(r.value) << ','
        << (r.reduction ? format_number(*r.reduction) : std::string("nan")) << '\n';
    s.emplace_back("reduction_" + r.metric, r.reduction ? format_number(*r.reduction) : "n/a");
  }
}

void finish(RunOutcome& o, const RunOptions& opt, const std::string& title) {
  write_summary(opt.out_dir / "summary.txt", o.summary);
  std::ofstream(opt.out_dir / "report.txt") << summary_text(title, o.summary);
}

RunOutcome execute(const RunOptions& opt, Scenario sc) {
  RunOutcome o;
  if (opt.seed) sc.seed = *opt.seed;
  std::filesystem::create_directories(opt.out_dir);
  Summary& s = o.summary;
  s.emplace_back("scenario", sc.name);
  s.emplace_back("mode", mode_name(opt.mode));
  s.emplace_back("seed", std::to_string(sc.seed));
  s.emplace_back("window_start_s", format_number(sc.metrics.window_start));

  const ReferenceTrajectory ref = build_reference(sc);
  write_reference(opt.out_dir / "reference.csv", sc.system, ref);
  const EstimatorConfig* est = sc.estimator_enabled ? &sc.estimator : nullptr;

  Metrics open_metrics, closed_metrics;
  if (opt.mode == RunMode::OpenLoop || opt.mode == RunMode::Estimate || opt.mode == RunMode::Compare) {
    const OpenLoopResult ol = run_open_loop(sc.system, sc.plant, ref, sc.seed);
    write_plant_log(opt.out_dir / "open_loop.csv", sc.system, ol.ticks);
    open_metrics = compute_metrics(ol.ticks, ref, sc.metrics.window_start);
    add_metrics(s, "open_loop_", open_metrics);
    if (opt.mode == RunMode::Estimate) {
      std::vector<SensorFrame> frames;
      frames.reserve(ol.ticks.size());
      for (const auto& t : ol.ticks) frames.push_back(t.frame);
      const auto trace = run_estimation(sc.system, frames, sc.estimator, sc.plant.w_ext);
      write_estimation_trace(opt.out_dir / "estimation.csv", trace, sc.system.n_robots());
      add_estimation(s, "estimation_", trace, sc.plant.true_params, sc.estimator.mask);
    }
  }
  if (opt.mode == RunMode::ClosedLoop || opt.mode == RunMode::Compare) {
    const ClosedLoopResult cl = mpc_loop(sc.system, sc.plant, ref, est, sc.mpc, sc.seed);
    write_closed_loop_log(opt.out_dir / "closed_loop.csv", sc.system, cl);
    write_timing(opt.out_dir / "timing.csv", cl);
    if (est) {
      write_estimation_trace(opt.out_dir / "estimation.csv", cl.estimation, sc.system.n_robots());
      add_estimation(s, "estimation_", cl.estimation, sc.plant.true_params, sc.estimator.mask);
    }
    closed_metrics = compute_metrics(plant_ticks(cl), ref, sc.metrics.window_start);
    add_metrics(s, "closed_loop_", closed_metrics);
    add_closed_loop(s, cl);
    if (opt.mode == RunMode::Compare) write_comparison(opt.out_dir, compare_metrics(open_metrics, closed_metrics), s);
    if (cl.aborted) {
      o.status = exit_code::kRuntime;
      o.message = cl.abort_reason;
    }
  }
  finish(o, opt, sc.name + " (" + mode_name(opt.mode) + ")");
  if (opt.mode == RunMode::Compare) {
    const auto rows = compare_metrics(open_metrics, closed_metrics);
    std::string table = "metric                 open-loop      closed-loop    reduction\n";
    for (const auto& r : rows) {
      char line[160];
      std::snprintf(line, sizeof line, "%-22s %-14.6g %-14.6g %s\n", r.metric.c_str(), r.baseline, r.value,
                    percent(r.reduction).c_str());
      table += line;
    }
    std::ofstream(opt.out_dir / "report.txt", std::ios::app) << '\n' << table;
    if (o.message.empty()) o.message = table;
  }
  return o;
}

}  // namespace

RunOutcome run(const RunOptions& opt, const Scenario* preloaded) {
  RunOutcome o;
  try {
    return execute(opt, preloaded ? *preloaded : load_scenario(opt.scenario));
  } catch (const ConfigError& e) {
    o.status = exit_code::kConfig;
    o.message = std::string("config error: ") + e.what();
  } catch (const std::exception& e) {
    o.status = exit_code::kRuntime;
    o.message = std::string("runtime failure: ") + e.what();
  }
  return o;
}

}  // namespace coupled
