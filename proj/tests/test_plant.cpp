#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "coupled/io.hpp"
#include "coupled/plant.hpp"
#include "support.hpp"

using namespace coupled;
using test_support::random_vector;

namespace {

const Scenario& nominal() { return test_support::nominal(); }

AlgebraicState zero_load(const CoupledSystem& sys) {
  return AlgebraicState::from_stacked(VecX::Zero(sys.algebraic_size()), sys.n_robots(), sys.n_joints());
}

std::vector<Mat6X> jacobians_at(const CoupledSystem& sys, const std::vector<VecX>& q) {
  std::vector<Mat6X> j;
  for (int i = 0; i < sys.n_robots(); ++i) j.push_back(world_jacobian(sys, i, q[static_cast<std::size_t>(i)]));
  return j;
}

PlantState rest_state(const Scenario& sc) {
  PlantState x;
  x.q_m = sc.ik_seeds;
  x.q_sp = sc.ik_seeds;
  return x;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("plant") {
  TEST_CASE("command filter leads the set-point") {
    const VecX kc = default_command_filter();
    const VecX q_sp = VecX::LinSpaced(7, -0.3, 0.3);
    CHECK(command_filter(q_sp, VecX::Zero(7), kc) == q_sp);
    VecX rate = VecX::Zero(7);
    rate(0) = 1.0;
    rate(5) = -2.0;
    const VecX q_cmd = command_filter(q_sp, rate, kc);
    CHECK(q_cmd(0) == doctest::Approx(q_sp(0) - 0.0115).epsilon(1e-12));
    CHECK(q_cmd(5) == doctest::Approx(q_sp(5) + 0.0136).epsilon(1e-12));
    CHECK(q_cmd(3) == q_sp(3));
  }

  TEST_CASE("rest is an equilibrium") {
    const Scenario& sc = nominal();
    const PlantState x = rest_state(sc);
    const VecX xd = ode_rhs(sc.system, sc.plant, x, VecX::Zero(sc.system.input_size()), zero_load(sc.system),
                            jacobians_at(sc.system, x.q_m));
    CHECK(xd.isZero(0.0));
  }

  TEST_CASE("uncoupled step response is first order with tau = K_D / K_P") {
    const Scenario& sc = nominal();
    const CoupledSystem& sys = sc.system;
    const double tau = sc.plant.K_D(0) / sc.plant.K_P(0);
    CHECK(tau == doctest::Approx(0.005));
    PlantState x = rest_state(sc);
    const VecX delta = VecX::LinSpaced(7, -0.01, 0.02);
    for (auto& q : x.q_sp) q += delta;
    const VecX u = VecX::Zero(sys.input_size());
    const AlgebraicState load = zero_load(sys);
    const auto J = jacobians_at(sys, x.q_m);
    VecX s = x.stacked();
    auto f = [&](const VecX& v) {
      return ode_rhs(sys, sc.plant, PlantState::from_stacked(v, 2, 7, 0.0), u, load, J);
    };
    const double h = 1e-5;
    for (int k = 0; k < 2000; ++k) {  // 0.02 s
      const VecX k1 = f(s), k2 = f(s + 0.5 * h * k1), k3 = f(s + 0.5 * h * k2), k4 = f(s + h * k3);
      s += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    const PlantState end = PlantState::from_stacked(s, 2, 7, 0.02);
    for (int i = 0; i < 2; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const VecX expected = x.q_sp[ui] - delta * std::exp(-0.02 / tau);
      CHECK((end.q_m[ui] - expected).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(end.q_sp[ui] == x.q_sp[ui]);
    }
  }

  TEST_CASE("affine form matches the right-hand side") {
    std::mt19937_64 rng(1);
    const Scenario& sc = nominal();
    const CoupledSystem& sys = sc.system;
    PlantConfig cfg = sc.plant;
    cfg.tau_fri = {random_vector(rng, 7, 0.5), random_vector(rng, 7, 0.5)};
    PlantState x = rest_state(sc);
    for (auto& q : x.q_m) q += random_vector(rng, 7, 0.05);
    for (auto& q : x.q_sp) q += random_vector(rng, 7, 0.05);
    const VecX u = random_vector(rng, sys.input_size(), 0.3);
    const VecX xa = random_vector(rng, sys.algebraic_size(), 20.0);
    const auto J = jacobians_at(sys, x.q_m);
    const OdeMatrices m = ode_matrices(sys, cfg, J);
    const VecX direct = ode_rhs(sys, cfg, x, u, AlgebraicState::from_stacked(xa, 2, 7), J);
    const VecX affine = m.A * x.stacked() + m.B * u + m.E * xa + m.c;
    CHECK((direct - affine).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("RK4 converges at fourth order and halving is below 1e-8") {
    std::mt19937_64 rng(2);
    const Scenario& sc = nominal();
    const auto q = test_support::closed_configuration(sc, rng);
    PlantState x0;
    x0.q_m = q;
    x0.q_sp = q;
    for (auto& s : x0.q_sp) s += random_vector(rng, 7, 0.01);
    const VecX u = random_vector(rng, sc.system.input_size(), 0.05);
    auto run = [&](double h, double T) {
      Plant p(sc.system, sc.plant, x0, 0);
      const int n = static_cast<int>(std::lround(T / h));
      for (int k = 0; k < n; ++k) p.step(u, h);
      return p.state().stacked();
    };
    const double e1 = (run(1e-3, 0.2) - run(5e-4, 0.2)).cwiseAbs().maxCoeff();
    const double e2 = (run(5e-4, 0.2) - run(2.5e-4, 0.2)).cwiseAbs().maxCoeff();
    CHECK(e1 / e2 > 10.0);
    CHECK(e1 / e2 < 24.0);
    CHECK((run(1e-3, 1.0) - run(5e-4, 1.0)).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("step size outside (0, 5 ms] is rejected") {
    const Scenario& sc = nominal();
    Plant p(sc.system, sc.plant, rest_state(sc), 0);
    const VecX u = VecX::Zero(sc.system.input_size());
    CHECK_THROWS_AS(p.step(u, 0.006), std::invalid_argument);
    CHECK_THROWS_AS(p.step(u, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(p.step(VecX::Zero(3), 0.001), std::invalid_argument);
  }

  TEST_CASE("nominal open loop tracks the reference") {
    const Scenario& sc = nominal();
    const ReferenceTrajectory& ref = test_support::nominal_reference();
    const OpenLoopResult r = run_open_loop(sc.system, sc.plant, ref, sc.seed);
    REQUIRE(r.ticks.size() == ref.size());
    double tcp = 0.0, consistency = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      tcp = std::max(tcp, pose_diff(r.ticks[k].tcp, ref[k].tcp).translational.norm());
      consistency = std::max(consistency, r.ticks[k].frame.consistency_error(sc.system));
    }
    CHECK(tcp < 1e-5);
    CHECK(consistency < 1e-12);
  }

  TEST_CASE("parameter errors cause internal stress") {
    const Scenario& sc = nominal();
    const ReferenceTrajectory& ref = test_support::nominal_reference();
    PlantConfig wrong = sc.plant;
    wrong.true_params = test_support::default_scenario().plant.true_params;
    const OpenLoopResult a = run_open_loop(sc.system, sc.plant, ref, 0);
    const OpenLoopResult b = run_open_loop(sc.system, wrong, ref, 0);
    double internal = 0.0;
    for (std::size_t k = 0; k < ref.size(); k += 10)
      internal = std::max(internal, (b.ticks[k].lambda[0] - a.ticks[k].lambda[0]).norm());
    CHECK(internal > 10.0);  // N, N*m
  }

  TEST_CASE("the vibration shows up in the joint torques at its frequency") {
    const Scenario& sc = test_support::default_scenario();
    const ReferenceTrajectory& ref = test_support::default_reference();
    ReferenceTrajectory still = ref;
    still.samples = ref.unperturbed;
    PlantConfig cfg = sc.plant;
    cfg.true_params = KinematicParams::zeros(2);
    const OpenLoopResult a = run_open_loop(sc.system, cfg, ref, 0);
    const OpenLoopResult b = run_open_loop(sc.system, cfg, still, 0);
    // Fourth segment; the torque difference, robot 1, joint with the largest swing.
    const std::size_t k0 = ref.index_at(9.75), k1 = ref.index_at(11.75);
    int joint = 0;
    double swing = 0.0;
    for (int j = 0; j < 7; ++j)
      for (std::size_t k = k0; k < k1; ++k) {
        const double d = std::abs(a.ticks[k].frame.tau_m[0](j) - b.ticks[k].frame.tau_m[0](j));
        if (d > swing) swing = d, joint = j;
      }
    CHECK(swing > 0.1);
    double best_f = 0.0, best = 0.0;
    for (double f = 0.5; f <= 10.0; f += 0.25) {
      std::complex<double> acc = 0.0;
      for (std::size_t k = k0; k < k1; ++k) {
        const double d = a.ticks[k].frame.tau_m[0](joint) - b.ticks[k].frame.tau_m[0](joint);
        acc += d * std::polar(1.0, -2.0 * M_PI * f * a.ticks[k].t);
      }
      if (std::abs(acc) > best) best = std::abs(acc), best_f = f;
    }
    CHECK(best_f == doctest::Approx(2.0));
  }

  TEST_CASE("seeded noise is reproducible") {
    const Scenario& sc = nominal();
    const ReferenceTrajectory& ref = test_support::nominal_reference();
    PlantConfig cfg = sc.plant;
    cfg.torque_noise_std = 0.1;
    cfg.coulomb_friction = VecX::Constant(7, 0.5);
    const auto dir = std::filesystem::temp_directory_path() / "coupled_plant_determinism";
    std::filesystem::create_directories(dir);
    write_plant_log(dir / "a.csv", sc.system, run_open_loop(sc.system, cfg, ref, 42).ticks);
    write_plant_log(dir / "b.csv", sc.system, run_open_loop(sc.system, cfg, ref, 42).ticks);
    write_plant_log(dir / "c.csv", sc.system, run_open_loop(sc.system, cfg, ref, 43).ticks);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));
    std::filesystem::remove_all(dir);
  }
}
