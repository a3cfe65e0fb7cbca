#include "coupled/estimation.hpp"

#include <cmath>

#include "coupled/errors.hpp"

namespace coupled {

void EstimatorConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("estimator.alpha: must satisfy 0 < alpha <= 1");
  if (!(rate_hz > 0.0)) throw ConfigError("estimator.rate_hz: must be > 0");
  if (!(damping >= 0.0)) throw ConfigError("estimator.damping: must be >= 0");
  if (!(fd_step > 0.0)) throw ConfigError("estimator.fd_step: must be > 0");
}

VecX stack(const std::vector<VecX>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.size();
  VecX out(n);
  Eigen::Index o = 0;
  for (const auto& b : blocks) {
    out.segment(o, b.size()) = b;
    o += b.size();
  }
  return out;
}

double min_singular_value(const MatX& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatX> svd(m);
  return svd.singularValues().minCoeff();
}

namespace {

std::vector<RobotMotion> frame_motions(const SensorFrame& f) { return rbd_motions(f.q_m, f.rbd_qd, f.rbd_qdd); }

int tau_rows(const CoupledSystem& sys) { return sys.n_robots() * sys.n_joints(); }

}  // namespace

VecX predict_torques(const CoupledSystem& sys, const SensorFrame& frame, const KinematicParams& p_hat,
                     const Vec6& w_ext, const CouplingOptions& options) {
  const AlgebraicSolution s = solve_coupled(sys, frame_motions(frame), p_hat, w_ext, options);
  return s.x_a.head(tau_rows(sys));
}

MatX sensitivity(const CoupledSystem& sys, const SensorFrame& frame, const KinematicParams& p_hat, const Vec6& w_ext,
                 const CouplingOptions& options) {
  if (options.jacobian_passes != 1)  // link-side re-evaluation makes F depend on p
    return sensitivity_fd(sys, frame, p_hat, w_ext, 1e-7, options);
  const std::vector<RobotMotion> motions = frame_motions(frame);
  const AlgebraicSystem a = assemble_algebraic(sys, motions, p_hat, w_ext);
  Eigen::PartialPivLU<MatX> lu(a.F);
  const double cond = 1.0 / lu.rcond();
  if (!(cond <= options.max_condition)) throw SingularSystemError("sensitivity: F is singular", cond);

  const std::vector<int> idx = p_hat.estimated_indices();
  const int na = sys.algebraic_size();
  MatX db = MatX::Zero(na, static_cast<Eigen::Index>(idx.size()));
  std::vector<Eigen::Matrix<double, 6, 12>> dgap(static_cast<std::size_t>(sys.n_robots()));
  for (int i = 1; i < sys.n_robots(); ++i)
    dgap[static_cast<std::size_t>(i)] = gap_parameter_jacobian(sys, motions[0].q, motions[static_cast<std::size_t>(i)].q, i, p_hat);
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const int robot = idx[c] / KinematicParams::kPerRobot + 1;
    const int comp = idx[c] % KinematicParams::kPerRobot;
    const int row = sys.n_robots() * sys.n_joints() + 6 * robot;
    db.block<6, 1>(row, static_cast<Eigen::Index>(c)) = dgap[static_cast<std::size_t>(robot)].col(comp);
  }
  const MatX dx = lu.solve(db);
  return dx.topRows(tau_rows(sys));
}

MatX sensitivity_fd(const CoupledSystem& sys, const SensorFrame& frame, const KinematicParams& p_hat,
                    const Vec6& w_ext, double h, const CouplingOptions& options) {
  const std::vector<int> idx = p_hat.estimated_indices();
  MatX s(tau_rows(sys), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    KinematicParams plus = p_hat, minus = p_hat;
    plus.values(idx[c]) += h;
    minus.values(idx[c]) -= h;
    s.col(static_cast<Eigen::Index>(c)) =
        (predict_torques(sys, frame, plus, w_ext, options) - predict_torques(sys, frame, minus, w_ext, options)) /
        (2.0 * h);
  }
  return s;
}

EstimatorState update(const EstimatorState& est, const VecX& tau_pred, const VecX& tau_meas, const MatX& S,
                      const EstimatorConfig& cfg) {
  EstimatorState next = est;
  const VecX r = tau_pred - tau_meas;
  next.residual_history.push_back(r.norm());
  ++next.k;
  if (r.isZero(0.0)) return next;
  const int n = static_cast<int>(S.cols());
  const MatX normal = S.transpose() * S + cfg.damping * MatX::Identity(n, n);
  const VecX step = normal.ldlt().solve(S.transpose() * r);
  next.p_hat.set_estimated(est.p_hat.estimated() - cfg.alpha * step);
  return next;
}

// ---------------------------------------------------------------------------

Estimator::Estimator(const CoupledSystem& sys, EstimatorConfig cfg, Vec6 w_ext)
    : sys_(&sys), cfg_(std::move(cfg)), w_ext_(w_ext) {
  cfg_.validate();
  state_.p_hat = KinematicParams::zeros(sys.n_robots());
  if (!cfg_.mask.empty()) {
    if (cfg_.mask.size() != state_.p_hat.mask.size())
      throw ConfigError("estimator.mask: expected " + std::to_string(state_.p_hat.mask.size()) + " entries");
    state_.p_hat.mask = cfg_.mask;
  }
  next_update_ = cfg_.start_time;
}

bool Estimator::observe(const SensorFrame& frame) {
  // Small slack absorbs accumulated round-off in t.
  if (frame.t + 1e-9 < next_update_) return false;
  const double period = 1.0 / cfg_.rate_hz;
  while (next_update_ <= frame.t + 1e-9) next_update_ += period;

  const VecX tau_meas = stack(frame.tau_m);
  const VecX tau_pred = predict_torques(*sys_, frame, state_.p_hat, w_ext_, cfg_.coupling);
  const MatX S = cfg_.method == SensitivityMethod::Analytic
                     ? sensitivity(*sys_, frame, state_.p_hat, w_ext_, cfg_.coupling)
                     : sensitivity_fd(*sys_, frame, state_.p_hat, w_ext_, cfg_.fd_step, cfg_.coupling);
  state_ = update(state_, tau_pred, tau_meas, S, cfg_);
  EstimationRecord rec;
  rec.t = frame.t;
  rec.p_hat = state_.p_hat.values;
  rec.residual = state_.residual_history.back();
  rec.min_sv = min_singular_value(S);
  trace_.push_back(std::move(rec));
  return true;
}

std::vector<EstimationRecord> run_estimation(const CoupledSystem& sys, const std::vector<SensorFrame>& frames,
                                             const EstimatorConfig& cfg, const Vec6& w_ext) {
  Estimator est(sys, cfg, w_ext);
  for (const auto& f : frames) est.observe(f);
  return est.trace();
}

}  // namespace coupled
