#pragma once

#include <vector>

#include "coupled/coupling.hpp"
#include "coupled/plant.hpp"

namespace coupled {

enum class SensitivityMethod { Analytic, FiniteDifference };

struct EstimatorConfig {
  double alpha = 0.1;
  double rate_hz = 10.0;
  double damping = 1e-6;
  std::vector<bool> mask;  // empty: default five components
  double start_time = 0.0;  // s, no updates before
  SensitivityMethod method = SensitivityMethod::Analytic;
  double fd_step = 1e-7;
  CouplingOptions coupling;

  void validate() const;
};

struct EstimatorState {
  KinematicParams p_hat;
  int k = 0;
  std::vector<double> residual_history;
};

/// Model torques at the measured configuration under hypothesis p_hat.
VecX predict_torques(const CoupledSystem& sys, const SensorFrame& frame, const KinematicParams& p_hat,
                     const Vec6& w_ext, const CouplingOptions& options = {});

/// d tau_m / d p over the estimated components: (n_R n_J) x n_estimated.
MatX sensitivity(const CoupledSystem& sys, const SensorFrame& frame, const KinematicParams& p_hat, const Vec6& w_ext,
                 const CouplingOptions& options = {});

/// Same matrix by central differences of predict_torques.
MatX sensitivity_fd(const CoupledSystem& sys, const SensorFrame& frame, const KinematicParams& p_hat,
                    const Vec6& w_ext, double h = 1e-7, const CouplingOptions& options = {});

/// p <- p - alpha (S^T S + damping I)^-1 S^T (tau_pred - tau_meas).
EstimatorState update(const EstimatorState& est, const VecX& tau_pred, const VecX& tau_meas, const MatX& S,
                      const EstimatorConfig& cfg);

VecX stack(const std::vector<VecX>& blocks);
double min_singular_value(const MatX& m);

struct EstimationRecord {
  double t = 0.0;
  VecX p_hat;      // full parameter vector after the update
  double residual = 0.0;   // before the update
  double min_sv = 0.0;
};

/// Stateful wrapper that applies the update at its configured rate.
class Estimator {
 public:
  Estimator(const CoupledSystem& sys, EstimatorConfig cfg, Vec6 w_ext);

  /// Returns true when an update was applied for this frame.
  bool observe(const SensorFrame& frame);

  const EstimatorState& state() const { return state_; }
  const KinematicParams& p_hat() const { return state_.p_hat; }
  const std::vector<EstimationRecord>& trace() const { return trace_; }

 private:
  const CoupledSystem* sys_;
  EstimatorConfig cfg_;
  Vec6 w_ext_;
  EstimatorState state_;
  std::vector<EstimationRecord> trace_;
  double next_update_ = 0.0;
};

/// Estimation against a recorded frame stream.
std::vector<EstimationRecord> run_estimation(const CoupledSystem& sys, const std::vector<SensorFrame>& frames,
                                             const EstimatorConfig& cfg, const Vec6& w_ext);

}  // namespace coupled
