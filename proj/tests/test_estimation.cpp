#include <doctest.h>

#include <cmath>
#include <random>

#include "coupled/errors.hpp"
#include "coupled/estimation.hpp"
#include "coupled/metrics.hpp"
#include "support.hpp"

using namespace coupled;
using test_support::random_vector;

namespace {

const Scenario& def() { return test_support::default_scenario(); }

std::vector<SensorFrame> open_loop_frames(const PlantConfig& cfg) {
  const OpenLoopResult r = run_open_loop(def().system, cfg, test_support::default_reference(), def().seed);
  std::vector<SensorFrame> f;
  for (const auto& t : r.ticks) f.push_back(t.frame);
  return f;
}

const std::vector<SensorFrame>& clean_frames() {
  static const std::vector<SensorFrame> f = open_loop_frames(def().plant);
  return f;
}

double spread(const std::vector<EstimationRecord>& trace, int index, double from) {
  double mean = 0.0, var = 0.0;
  int n = 0;
  for (const auto& r : trace)
    if (r.t >= from) mean += r.p_hat(index), ++n;
  mean /= n;
  for (const auto& r : trace)
    if (r.t >= from) var += (r.p_hat(index) - mean) * (r.p_hat(index) - mean);
  return std::sqrt(var / n);
}

}  // namespace

TEST_SUITE("estimation") {
  TEST_CASE("true parameters predict the noise-free measurement") {
    const SensorFrame& f = clean_frames()[800];
    const VecX pred = predict_torques(def().system, f, def().plant.true_params, def().plant.w_ext);
    CHECK((pred - stack(f.tau_m)).cwiseAbs().maxCoeff() < 1e-8);
    const VecX wrong = predict_torques(def().system, f, KinematicParams::zeros(2), def().plant.w_ext);
    CHECK((wrong - stack(f.tau_m)).norm() > 1.0);
  }

  TEST_CASE("analytic sensitivity matches central differences") {
    std::mt19937_64 rng(1);
    for (int c = 0; c < 10; ++c) {
      const SensorFrame& f = clean_frames()[static_cast<std::size_t>(300 + 130 * c)];
      KinematicParams p = KinematicParams::zeros(2);
      p.set_estimated(random_vector(rng, 5, 3e-3));
      const MatX S = sensitivity(def().system, f, p, def().plant.w_ext);
      const MatX Sfd = sensitivity_fd(def().system, f, p, def().plant.w_ext, 1e-6);
      REQUIRE(S.rows() == 14);
      REQUIRE(S.cols() == 5);
      for (Eigen::Index i = 0; i < S.size(); ++i)
        if (std::abs(Sfd.data()[i]) > 1e-3) CHECK(std::abs(S.data()[i] - Sfd.data()[i]) < 1e-4 * std::abs(Sfd.data()[i]));
    }
  }

  TEST_CASE("masked-out components have no column") {
    const SensorFrame& f = clean_frames()[900];
    KinematicParams full = KinematicParams::zeros(2);
    KinematicParams one = full;
    one.mask.assign(12, false);
    one.mask[5] = true;
    const MatX S5 = sensitivity(def().system, f, full, def().plant.w_ext);
    const MatX S1 = sensitivity(def().system, f, one, def().plant.w_ext);
    REQUIRE(S1.cols() == 1);
    CHECK((S1.col(0) - S5.col(1)).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("update: zero residual keeps p, linear case contracts by 1 - alpha") {
    EstimatorConfig cfg;
    cfg.alpha = 0.3;
    cfg.damping = 0.0;
    EstimatorState s;
    s.p_hat = KinematicParams::zeros(2);
    std::mt19937_64 rng(2);
    const MatX S = MatX::NullaryExpr(14, 5, [&] { return std::normal_distribution<double>()(rng); });
    const VecX tau = random_vector(rng, 14, 5.0);
    CHECK(update(s, tau, tau, S, cfg).p_hat.values.isZero(0.0));

    KinematicParams truth = KinematicParams::zeros(2);
    truth.set_estimated(random_vector(rng, 5, 1e-3));
    auto residual = [&](const KinematicParams& p) { return VecX(S * (p.estimated() - truth.estimated())); };
    const VecX r0 = residual(s.p_hat);
    const EstimatorState n = update(s, r0, VecX::Zero(14), S, cfg);
    CHECK(std::abs(residual(n.p_hat).norm() - (1 - cfg.alpha) * r0.norm()) < 1e-8 * r0.norm());
    CHECK(n.k == 1);
    for (int i : {0, 1, 2, 4, 7, 9, 10}) CHECK(n.p_hat.values(i) == 0.0);
  }

  TEST_CASE("noise-free convergence from zero") {
    const auto trace = run_estimation(def().system, clean_frames(), def().estimator, def().plant.w_ext);
    REQUIRE(!trace.empty());
    CHECK(trace.front().t == doctest::Approx(def().estimator.start_time));
    CHECK(trace[1].t - trace[0].t == doctest::Approx(0.1));
    const KinematicParams& truth = def().plant.true_params;
    const VecX e_start = parameter_errors(trace.front().p_hat, truth, def().estimator.mask);
    const VecX e_end = parameter_errors(trace.back().p_hat, truth, def().estimator.mask);
    CHECK(e_end.maxCoeff() < 0.05);
    CHECK(e_end.norm() < e_start.norm());
    CHECK(trace.back().residual < 1e-3 * trace.front().residual);
  }

  TEST_CASE("halving alpha converges more slowly and fluctuates less") {
    EstimatorConfig slow = def().estimator;
    slow.alpha *= 0.5;
    const KinematicParams& truth = def().plant.true_params;
    auto error_at = [&](const std::vector<EstimationRecord>& tr, double t) {
      for (const auto& r : tr)
        if (r.t >= t) return parameter_errors(r.p_hat, truth, def().estimator.mask).norm();
      return 0.0;
    };
    const auto fast_tr = run_estimation(def().system, clean_frames(), def().estimator, def().plant.w_ext);
    const auto slow_tr = run_estimation(def().system, clean_frames(), slow, def().plant.w_ext);
    CHECK(error_at(slow_tr, 3.0) > error_at(fast_tr, 3.0));

    PlantConfig rough = def().plant;
    rough.coulomb_friction = VecX::Constant(7, 0.5);
    const auto frames = open_loop_frames(rough);
    const auto fast_f = run_estimation(def().system, frames, def().estimator, def().plant.w_ext);
    const auto slow_f = run_estimation(def().system, frames, slow, def().plant.w_ext);
    double fast_spread = 0.0, slow_spread = 0.0;
    for (int i : truth.estimated_indices()) {
      fast_spread += spread(fast_f, i, 10.0) / std::abs(truth.values(i));
      slow_spread += spread(slow_f, i, 10.0) / std::abs(truth.values(i));
    }
    CHECK(slow_spread < fast_spread);
  }

  TEST_CASE("configuration checks") {
    EstimatorConfig c;
    c.alpha = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.alpha = 1.0;
    c.rate_hz = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.rate_hz = 10.0;
    c.damping = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.damping = 0.0;
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("smallest singular value") {
    MatX m = MatX::Zero(4, 2);
    m(0, 0) = 3.0;
    m(1, 1) = 0.5;
    CHECK(min_singular_value(m) == doctest::Approx(0.5));
  }
}
