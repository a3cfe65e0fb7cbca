#pragma once

#include "coupled/spatial.hpp"

namespace coupled {

/// min 1/2 x^T H x + g^T x  s.t.  A x = b,  lb <= x <= ub,  cl <= C x <= cu.
/// Infinite entries in lb/ub/cl/cu disable that side. Empty A or C is allowed.
struct QpProblem {
  MatX H;
  VecX g;
  MatX A;
  VecX b;
  VecX lb, ub;
  MatX C;
  VecX cl, cu;

  int n() const { return static_cast<int>(g.size()); }
  /// Fills missing pieces (empty A/C, infinite bounds) and checks sizes.
  void normalize();
};

struct QpOptions {
  int max_iterations = 50;
  double tolerance = 1e-9;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal_equality = 0.0;
  double primal_inequality = 0.0;  // max violation of any bound or row
  double dual_feasibility = 0.0;   // most negative inequality multiplier
  double complementarity = 0.0;    // max |multiplier * slack|
  double max() const;
};

struct QpResult {
  VecX x;
  VecX y;        // equality multipliers (grad L = Hx + g + A^T y - z_l + z_u + C^T (w_u - w_l))
  VecX z_lower, z_upper;  // variable bound multipliers, >= 0
  VecX w_lower, w_upper;  // row multipliers, >= 0
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;
  KktResiduals residuals;
};

/// Mehrotra predictor-corrector primal-dual interior point. The Newton system
/// is reduced to the primal block; with equalities the dense KKT matrix is
/// factorized by LU, otherwise by Cholesky. Does not throw on iteration limit;
/// check `converged`.
QpResult solve_qp(QpProblem qp, const QpOptions& options = {}, const VecX* warm_start = nullptr);

KktResiduals kkt_residuals(const QpProblem& qp, const QpResult& r);

/// Equality-only QP by one dense KKT solve. Returns x; y receives multipliers.
VecX solve_equality_qp(const MatX& H, const VecX& g, const MatX& A, const VecX& b, VecX* y = nullptr);

}  // namespace coupled
