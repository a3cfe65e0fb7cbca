#include "coupled/qp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace coupled {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const VecX& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// One side of a bound or row: c(x) = sign * (a^T x) - beta >= 0.
struct Side {
  std::vector<int> index;   // variable or row index
  std::vector<double> beta;
  double sign = 1.0;
  VecX s, z;

  int size() const { return static_cast<int>(index.size()); }
};

Side make_side(const VecX& limit, double sign) {
  Side side;
  side.sign = sign;
  for (Eigen::Index i = 0; i < limit.size(); ++i) {
    if (std::isfinite(limit(i))) {
      side.index.push_back(static_cast<int>(i));
      side.beta.push_back(sign * limit(i));
    }
  }
  return side;
}

// Values a^T x for every entry of a side, given the full vector ax (x or Cx).
VecX side_constraint(const Side& side, const VecX& ax) {
  VecX c(side.size());
  for (int k = 0; k < side.size(); ++k) c(k) = side.sign * ax(side.index[static_cast<std::size_t>(k)]) - side.beta[static_cast<std::size_t>(k)];
  return c;
}

// Accumulates -sign * z into a vector indexed like the side's targets.
void scatter(const Side& side, const VecX& values, VecX& out) {
  for (int k = 0; k < side.size(); ++k) out(side.index[static_cast<std::size_t>(k)]) -= side.sign * values(k);
}

double max_step(const VecX& v, const VecX& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
  return a;
}

}  // namespace

void QpProblem::normalize() {
  const int nv = static_cast<int>(g.size());
  if (H.rows() != nv || H.cols() != nv) throw std::invalid_argument("QpProblem: H must be n x n");
  if (A.size() == 0) A.resize(0, nv);
  if (b.size() == 0) b.resize(A.rows());
  if (A.cols() != nv || A.rows() != b.size()) throw std::invalid_argument("QpProblem: A/b size mismatch");
  if (lb.size() == 0) lb = VecX::Constant(nv, -kInf);
  if (ub.size() == 0) ub = VecX::Constant(nv, kInf);
  if (lb.size() != nv || ub.size() != nv) throw std::invalid_argument("QpProblem: bound size mismatch");
  if (C.size() == 0) C.resize(0, nv);
  if (cl.size() == 0) cl = VecX::Constant(C.rows(), -kInf);
  if (cu.size() == 0) cu = VecX::Constant(C.rows(), kInf);
  if (C.cols() != nv || cl.size() != C.rows() || cu.size() != C.rows())
    throw std::invalid_argument("QpProblem: C/cl/cu size mismatch");
  for (int i = 0; i < nv; ++i)
    if (lb(i) > ub(i)) throw std::invalid_argument("QpProblem: lb > ub at variable " + std::to_string(i));
  for (Eigen::Index r = 0; r < C.rows(); ++r)
    if (cl(r) > cu(r)) throw std::invalid_argument("QpProblem: cl > cu at row " + std::to_string(r));
}

double KktResiduals::max() const {
  return std::max({stationarity, primal_equality, primal_inequality, dual_feasibility, complementarity});
}

QpResult solve_qp(QpProblem qp, const QpOptions& options, const VecX* warm_start) {
  qp.normalize();
  const int nv = qp.n();
  const int ne = static_cast<int>(qp.A.rows());
  const int nc = static_cast<int>(qp.C.rows());

  Side bl = make_side(qp.lb, 1.0), bu = make_side(qp.ub, -1.0);
  Side rl = make_side(qp.cl, 1.0), ru = make_side(qp.cu, -1.0);
  Side* sides[4] = {&bl, &bu, &rl, &ru};
  int m = 0;
  for (Side* s : sides) m += s->size();

  VecX x = warm_start && warm_start->size() == nv ? *warm_start : VecX::Zero(nv);
  for (int i = 0; i < nv; ++i) {
    // Start strictly inside two-sided boxes.
    const double lo = qp.lb(i), hi = qp.ub(i);
    if (std::isfinite(lo) && std::isfinite(hi)) {
      const double margin = 0.01 * (hi - lo);
      x(i) = std::clamp(x(i), lo + margin, hi - margin);
    }
  }
  VecX y = VecX::Zero(ne);
  {
    const VecX cx = qp.C * x;
    for (Side* s : sides) {
      const VecX c = side_constraint(*s, (s == &rl || s == &ru) ? cx : x);
      s->s = c.cwiseMax(1.0);
      s->z = VecX::Ones(s->size());
    }
  }

  const double scale_d = 1.0 + inf_norm(qp.g);
  const double scale_p = 1.0 + std::max(inf_norm(qp.b), 0.0);
  QpResult res;

  auto complementarity_mean = [&]() {
    if (m == 0) return 0.0;
    double sum = 0.0;
    for (Side* s : sides) sum += s->s.dot(s->z);
    return sum / m;
  };

  for (int it = 0; it <= options.max_iterations; ++it) {
    const VecX cx = qp.C * x;
    // Residuals.
    VecX rd = qp.H * x + qp.g;
    if (ne) rd += qp.A.transpose() * y;
    VecX row_mult = VecX::Zero(nc);
    scatter(bl, bl.z, rd);
    scatter(bu, bu.z, rd);
    scatter(rl, rl.z, row_mult);
    scatter(ru, ru.z, row_mult);
    if (nc) rd += qp.C.transpose() * row_mult;
    const VecX re = ne ? VecX(qp.A * x - qp.b) : VecX();
    VecX ri[4];
    double rp = inf_norm(re);
    for (int k = 0; k < 4; ++k) {
      ri[k] = side_constraint(*sides[k], k >= 2 ? cx : x) - sides[k]->s;
      rp = std::max(rp, inf_norm(ri[k]));
    }
    const double mu = complementarity_mean();
    res.iterations = it;
    if (inf_norm(rd) <= options.tolerance * scale_d && rp <= options.tolerance * scale_p && mu <= options.tolerance) {
      res.converged = true;
      break;
    }
    if (it == options.max_iterations) break;

    // Reduced matrix H + sum (z/s) a a^T.
    MatX K = qp.H;
    VecX wb = VecX::Zero(nv), wr = VecX::Zero(nc);
    for (int k = 0; k < 4; ++k) {
      const Side& s = *sides[k];
      VecX& w = k < 2 ? wb : wr;
      for (int e = 0; e < s.size(); ++e) w(s.index[static_cast<std::size_t>(e)]) += s.z(e) / s.s(e);
    }
    K.diagonal() += wb;
    if (nc) K.noalias() += qp.C.transpose() * wr.asDiagonal() * qp.C;

    Eigen::LLT<MatX> llt;
    Eigen::PartialPivLU<MatX> lu;
    if (ne == 0) {
      llt.compute(K);
      if (llt.info() != Eigen::Success) break;
    } else {
      MatX kkt = MatX::Zero(nv + ne, nv + ne);
      kkt.topLeftCorner(nv, nv) = K;
      kkt.topRightCorner(nv, ne) = qp.A.transpose();
      kkt.bottomLeftCorner(ne, nv) = qp.A;
      lu.compute(kkt);
    }

    // Solves for (dx, dy, ds, dz) given complementarity targets rc = s z - target.
    auto newton = [&](const VecX rc[4], VecX& dx, VecX& dy, VecX ds[4], VecX dz[4]) {
      VecX rhs = -rd;
      VecX rhs_rows = VecX::Zero(nc);
      for (int k = 0; k < 4; ++k) {
        const Side& s = *sides[k];
        VecX& target = k < 2 ? rhs : rhs_rows;
        for (int e = 0; e < s.size(); ++e)
          target(s.index[static_cast<std::size_t>(e)]) -= s.sign * (rc[k](e) + s.z(e) * ri[k](e)) / s.s(e);
      }
      if (nc) rhs += qp.C.transpose() * rhs_rows;
      if (ne == 0) {
        dx = llt.solve(rhs);
        dy.resize(0);
      } else {
        VecX full(nv + ne);
        full << rhs, -re;
        const VecX sol = lu.solve(full);
        dx = sol.head(nv);
        dy = sol.tail(ne);
      }
      const VecX cdx = qp.C * dx;
      for (int k = 0; k < 4; ++k) {
        const Side& s = *sides[k];
        const VecX& adx = k >= 2 ? cdx : dx;
        ds[k].resize(s.size());
        dz[k].resize(s.size());
        for (int e = 0; e < s.size(); ++e) {
          ds[k](e) = ri[k](e) + s.sign * adx(s.index[static_cast<std::size_t>(e)]);
          dz[k](e) = (-rc[k](e) - s.z(e) * ds[k](e)) / s.s(e);
        }
      }
    };

    auto step_length = [&](const VecX ds[4], const VecX dz[4]) {
      double a = 1.0;
      for (int k = 0; k < 4; ++k) {
        a = std::min(a, max_step(sides[k]->s, ds[k]));
        a = std::min(a, max_step(sides[k]->z, dz[k]));
      }
      return a;
    };

    VecX rc[4], dx, dy, ds[4], dz[4];
    for (int k = 0; k < 4; ++k) rc[k] = sides[k]->s.cwiseProduct(sides[k]->z);
    newton(rc, dx, dy, ds, dz);
    if (m > 0) {
      const double a_aff = step_length(ds, dz);
      double mu_aff = 0.0;
      for (int k = 0; k < 4; ++k)
        mu_aff += (sides[k]->s + a_aff * ds[k]).dot(sides[k]->z + a_aff * dz[k]);
      mu_aff /= m;
      const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
      for (int k = 0; k < 4; ++k)
        rc[k] = sides[k]->s.cwiseProduct(sides[k]->z) + ds[k].cwiseProduct(dz[k]) -
                VecX::Constant(sides[k]->size(), sigma * mu);
      newton(rc, dx, dy, ds, dz);
    }
    const double alpha = m > 0 ? std::min(1.0, 0.995 * step_length(ds, dz)) : 1.0;
    x += alpha * dx;
    if (ne) y += alpha * dy;
    for (int k = 0; k < 4; ++k) {
      sides[k]->s += alpha * ds[k];
      sides[k]->z += alpha * dz[k];
    }
  }

  res.x = x;
  res.y = y;
  res.z_lower = VecX::Zero(nv);
  res.z_upper = VecX::Zero(nv);
  res.w_lower = VecX::Zero(nc);
  res.w_upper = VecX::Zero(nc);
  auto gather = [](const Side& s, VecX& out) {
    for (int e = 0; e < s.size(); ++e) out(s.index[static_cast<std::size_t>(e)]) = s.z(e);
  };
  gather(bl, res.z_lower);
  gather(bu, res.z_upper);
  gather(rl, res.w_lower);
  gather(ru, res.w_upper);
  res.objective = 0.5 * x.dot(qp.H * x) + qp.g.dot(x);
  res.residuals = kkt_residuals(qp, res);
  return res;
}

KktResiduals kkt_residuals(const QpProblem& qp_in, const QpResult& r) {
  QpProblem qp = qp_in;
  qp.normalize();
  KktResiduals k;
  const VecX& x = r.x;
  VecX grad = qp.H * x + qp.g - r.z_lower + r.z_upper;
  if (qp.A.rows()) grad += qp.A.transpose() * r.y;
  if (qp.C.rows()) grad += qp.C.transpose() * (r.w_upper - r.w_lower);
  k.stationarity = inf_norm(grad);
  if (qp.A.rows()) k.primal_equality = inf_norm(qp.A * x - qp.b);
  const VecX cx = qp.C * x;
  auto side = [&](const VecX& value, const VecX& lo, const VecX& hi, const VecX& zl, const VecX& zu) {
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      if (std::isfinite(lo(i))) {
        const double s = value(i) - lo(i);
        k.primal_inequality = std::max(k.primal_inequality, -s);
        k.complementarity = std::max(k.complementarity, std::abs(zl(i) * s));
      }
      if (std::isfinite(hi(i))) {
        const double s = hi(i) - value(i);
        k.primal_inequality = std::max(k.primal_inequality, -s);
        k.complementarity = std::max(k.complementarity, std::abs(zu(i) * s));
      }
      k.dual_feasibility = std::max({k.dual_feasibility, -zl(i), -zu(i)});
    }
  };
  side(x, qp.lb, qp.ub, r.z_lower, r.z_upper);
  side(cx, qp.cl, qp.cu, r.w_lower, r.w_upper);
  return k;
}

VecX solve_equality_qp(const MatX& H, const VecX& g, const MatX& A, const VecX& b, VecX* y) {
  const Eigen::Index n = g.size(), m = b.size();
  if (H.rows() != n || H.cols() != n || A.rows() != m || A.cols() != n)
    throw std::invalid_argument("solve_equality_qp: size mismatch");
  MatX kkt = MatX::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = H;
  kkt.topRightCorner(n, m) = A.transpose();
  kkt.bottomLeftCorner(m, n) = A;
  VecX rhs(n + m);
  rhs << -g, b;
  const VecX sol = kkt.fullPivLu().solve(rhs);
  if (y) *y = sol.tail(m);
  return sol.head(n);
}

}  // namespace coupled
