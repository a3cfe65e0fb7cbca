#include <doctest.h>

#include <limits>
#include <random>

#include "coupled/qp.hpp"

using namespace coupled;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

MatX random_spd(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d;
  const MatX a = MatX::NullaryExpr(n, n, [&] { return d(rng); });
  return a * a.transpose() + 0.1 * MatX::Identity(n, n);
}

VecX randn(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d;
  return VecX::NullaryExpr(n, [&] { return d(rng); });
}

}  // namespace

TEST_SUITE("qp") {
  TEST_CASE("scalar toy problem hits its bound") {
    // min (x - 2)^2  s.t.  x <= 1
    QpProblem qp;
    qp.H = MatX::Constant(1, 1, 2.0);
    qp.g = VecX::Constant(1, -4.0);
    qp.ub = VecX::Constant(1, 1.0);
    const QpResult r = solve_qp(qp);
    CHECK(r.converged);
    CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(r.z_upper(0) == doctest::Approx(2.0).epsilon(1e-6));
  }

  TEST_CASE("unconstrained problem is the Newton step") {
    std::mt19937_64 rng(1);
    QpProblem qp;
    qp.H = random_spd(rng, 6);
    qp.g = randn(rng, 6);
    const QpResult r = solve_qp(qp);
    CHECK((r.x + qp.H.ldlt().solve(qp.g)).norm() < 1e-9);
  }

  TEST_CASE("equality-only problems agree with a direct KKT solve") {
    std::mt19937_64 rng(2);
    for (int c = 0; c < 10; ++c) {
      QpProblem qp;
      qp.H = random_spd(rng, 12);
      qp.g = randn(rng, 12);
      qp.A = MatX::NullaryExpr(5, 12, [&] { return std::normal_distribution<double>()(rng); });
      qp.b = randn(rng, 5);
      VecX y;
      const VecX x = solve_equality_qp(qp.H, qp.g, qp.A, qp.b, &y);
      MatX K = MatX::Zero(17, 17);
      K.topLeftCorner(12, 12) = qp.H;
      K.topRightCorner(12, 5) = qp.A.transpose();
      K.bottomLeftCorner(5, 12) = qp.A;
      VecX rhs(17);
      rhs << -qp.g, qp.b;
      const VecX sol = K.fullPivLu().solve(rhs);
      CHECK((x - sol.head(12)).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((y - sol.tail(5)).cwiseAbs().maxCoeff() < 1e-8);
      const QpResult r = solve_qp(qp);
      CHECK(r.converged);
      CHECK((r.x - x).cwiseAbs().maxCoeff() < 1e-8);
    }
  }

  TEST_CASE("KKT residuals on random bounded problems") {
    std::mt19937_64 rng(3);
    for (int c = 0; c < 30; ++c) {
      const int n = 10;
      QpProblem qp;
      qp.H = random_spd(rng, n);
      qp.g = 3.0 * randn(rng, n);
      qp.A = MatX::NullaryExpr(2, n, [&] { return std::normal_distribution<double>()(rng); });
      qp.b = 0.1 * randn(rng, 2);
      qp.lb = VecX::Constant(n, -0.5);
      qp.ub = VecX::Constant(n, 0.5);
      qp.lb(0) = -kInf;  // one side open
      qp.C = MatX::NullaryExpr(3, n, [&] { return std::normal_distribution<double>()(rng); });
      qp.cl = VecX::Constant(3, -0.4);
      qp.cu = VecX::Constant(3, 0.4);
      qp.cu(2) = kInf;
      const QpResult r = solve_qp(qp);
      CHECK(r.converged);
      const KktResiduals k = kkt_residuals(qp, r);
      CHECK(k.max() < 1e-6);
      CHECK(r.residuals.max() < 1e-6);
      CHECK(k.primal_inequality < 1e-9);
    }
  }

  TEST_CASE("iteration limit is reported, not thrown") {
    std::mt19937_64 rng(4);
    QpProblem qp;
    qp.H = random_spd(rng, 8);
    qp.g = 5.0 * randn(rng, 8);
    qp.lb = VecX::Constant(8, -0.1);
    qp.ub = VecX::Constant(8, 0.1);
    QpOptions o;
    o.max_iterations = 1;
    QpResult r;
    CHECK_NOTHROW(r = solve_qp(qp, o));
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 1);
  }

  TEST_CASE("malformed problems are rejected") {
    QpProblem qp;
    qp.H = MatX::Identity(2, 2);
    qp.g = VecX::Zero(3);
    CHECK_THROWS_AS(solve_qp(qp), std::invalid_argument);
    qp.g = VecX::Zero(2);
    qp.lb = VecX::Constant(2, 1.0);
    qp.ub = VecX::Constant(2, 0.0);
    CHECK_THROWS_AS(solve_qp(qp), std::invalid_argument);
  }
}
