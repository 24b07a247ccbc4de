#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>
#include <fmt/format.h>

#include "fedkm/trust_region.hpp"

namespace fedkm {

double TrustRegionProblem::model_value(const Vector& x) const {
  double v = std::numeric_limits<double>::infinity();
  if (quadratic) {
    v = std::min(v, 0.5 * x.dot(quadratic->hessian * x) + quadratic->gradient.dot(x) +
                        quadratic->constant);
  }
  for (const auto& cut : cuts) v = std::min(v, cut.normal.dot(x) + cut.offset);
  return v;
}

void TrustRegionProblem::validate() const {
  const Eigen::Index n = center.size();
  if (n < 1) throw std::invalid_argument("trust region: empty center");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("trust region: alpha must be positive and finite");
  }
  if (!quadratic && cuts.empty()) throw std::invalid_argument("trust region: no model pieces");
  if (quadratic) {
    if (quadratic->hessian.rows() != n || quadratic->hessian.cols() != n ||
        quadratic->gradient.size() != n) {
      throw std::invalid_argument("trust region: quadratic piece has wrong dimension");
    }
  }
  for (const auto& cut : cuts) {
    if (cut.normal.size() != n) throw std::invalid_argument("trust region: cut has wrong dimension");
  }
}

namespace {

// Constraint set in z = (x, v), all of the form f_i(z) <= 0:
//   quadratic:  v - (½xᵀQx + qᵀx + q0)
//   cut l:      v - (a_lᵀx + b_l)
//   ball:       ||x - c||² - alpha
class Epigraph {
 public:
  explicit Epigraph(const TrustRegionProblem& p)
      : p_(p), n_(p.center.size()), has_q_(p.quadratic.has_value()) {
    m_ = (has_q_ ? 1 : 0) + static_cast<Eigen::Index>(p.cuts.size()) + 1;
  }

  Eigen::Index num_constraints() const { return m_; }
  Eigen::Index num_vars() const { return n_ + 1; }

  Vector values(const Vector& z) const {
    Vector f(m_);
    const auto x = z.head(n_);
    const double v = z[n_];
    Eigen::Index i = 0;
    if (has_q_) {
      const auto& q = *p_.quadratic;
      f[i++] = v - (0.5 * x.dot(q.hessian * x) + q.gradient.dot(x) + q.constant);
    }
    for (const auto& cut : p_.cuts) f[i++] = v - (cut.normal.dot(x) + cut.offset);
    f[i] = (x - p_.center).squaredNorm() - p_.alpha;
    return f;
  }

  // Rows are ∇f_i.
  Matrix jacobian(const Vector& z) const {
    Matrix J = Matrix::Zero(m_, n_ + 1);
    const auto x = z.head(n_);
    Eigen::Index i = 0;
    if (has_q_) {
      const auto& q = *p_.quadratic;
      J.row(i).head(n_) = -(q.hessian * x + q.gradient).transpose();
      J(i, n_) = 1.0;
      ++i;
    }
    for (const auto& cut : p_.cuts) {
      J.row(i).head(n_) = -cut.normal.transpose();
      J(i, n_) = 1.0;
      ++i;
    }
    J.row(i).head(n_) = 2.0 * (x - p_.center).transpose();
    return J;
  }

  // Σ λ_i ∇²f_i.
  Matrix hessian(const Vector& lambda) const {
    Matrix H = Matrix::Zero(n_ + 1, n_ + 1);
    if (has_q_) H.topLeftCorner(n_, n_) -= lambda[0] * p_.quadratic->hessian;
    H.topLeftCorner(n_, n_).diagonal().array() += 2.0 * lambda[m_ - 1];
    return H;
  }

  // Gradient of the objective -v.
  Vector objective_gradient() const {
    Vector g = Vector::Zero(n_ + 1);
    g[n_] = -1.0;
    return g;
  }

 private:
  const TrustRegionProblem& p_;
  Eigen::Index n_;
  bool has_q_;
  Eigen::Index m_;
};

struct Residuals {
  Vector dual;
  Vector cent;
  double norm() const { return std::sqrt(dual.squaredNorm() + cent.squaredNorm()); }
};

Residuals residuals(const Epigraph& e, const Vector& z, const Vector& lambda, double t) {
  const Vector f = e.values(z);
  Residuals r;
  r.dual = e.objective_gradient() + e.jacobian(z).transpose() * lambda;
  r.cent = -(lambda.array() * f.array()).matrix() - Vector::Constant(f.size(), 1.0 / t);
  return r;
}

double kkt_residual(const Epigraph& e, const Vector& z, const Vector& lambda) {
  const Vector f = e.values(z);
  const Vector rd = e.objective_gradient() + e.jacobian(z).transpose() * lambda;
  double r = rd.lpNorm<Eigen::Infinity>();
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    r = std::max(r, std::abs(lambda[i] * f[i]));
    r = std::max(r, std::max(0.0, f[i]));
  }
  return r;
}

constexpr double kMu = 10.0;
constexpr double kArmijo = 0.01;
constexpr double kBacktrack = 0.5;

struct Iterate {
  Vector z;
  Vector lambda;
  int iterations = 0;
};

Vector initial_point(const TrustRegionProblem& problem) {
  const Eigen::Index n = problem.center.size();
  Vector z(n + 1);
  z.head(n) = problem.center;
  z[n] = problem.model_value(problem.center) - 1.0;
  return z;
}

double gap_target(const TrustRegionOptions& options) { return std::min(1e-11, 1e-3 * options.kkt_tolerance); }

// One primal-dual Newton step on the perturbed KKT system in (z, lambda) for
// barrier parameter t, with the residual-norm line search. The unreduced
// system avoids dividing by f_i on active constraints. Returns false when no
// step of representable length reduces the residual.
bool primal_dual_step(const Epigraph& e, const Residuals& r, double t, Vector& z, Vector& lambda) {
  const Eigen::Index nz = e.num_vars();
  const Eigen::Index m = e.num_constraints();
  const Vector f = e.values(z);
  const Matrix J = e.jacobian(z);
  Matrix K = Matrix::Zero(nz + m, nz + m);
  K.topLeftCorner(nz, nz) = e.hessian(lambda);
  K.topRightCorner(nz, m) = J.transpose();
  K.bottomLeftCorner(m, nz) = -(lambda.asDiagonal() * J);
  K.bottomRightCorner(m, m).diagonal() = -f;
  Vector rhs(nz + m);
  rhs.head(nz) = -r.dual;
  rhs.tail(m) = -r.cent;
  const Vector d = K.partialPivLu().solve(rhs);
  if (!d.allFinite()) return false;
  const Vector dz = d.head(nz);
  const Vector dlambda = d.tail(m);

  double s_max = 1.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (dlambda[i] < 0.0) s_max = std::min(s_max, -lambda[i] / dlambda[i]);
  }
  double s = 0.99 * s_max;
  while (s > 1e-16 && (e.values(z + s * dz).array() >= 0.0).any()) s *= kBacktrack;
  const double r_norm = r.norm();
  while (s > 1e-16 &&
         residuals(e, z + s * dz, lambda + s * dlambda, t).norm() > (1.0 - kArmijo * s) * r_norm) {
    s *= kBacktrack;
  }
  if (s <= 1e-16) return false;
  z += s * dz;
  lambda += s * dlambda;
  return true;
}

// Primal-dual interior point with t = kMu m / surrogate gap at every step.
Iterate solve_primal_dual(const Epigraph& e, const TrustRegionProblem& problem,
                          const TrustRegionOptions& options) {
  const double md = static_cast<double>(e.num_constraints());
  const double target = gap_target(options);
  Iterate it{initial_point(problem), Vector::Ones(e.num_constraints())};
  for (; it.iterations < options.max_iterations; ++it.iterations) {
    const double surrogate_gap = -e.values(it.z).dot(it.lambda);
    const double t = kMu * md / surrogate_gap;
    const Residuals r = residuals(e, it.z, it.lambda, t);
    if (r.dual.lpNorm<Eigen::Infinity>() <= target && surrogate_gap <= target) break;
    if (!primal_dual_step(e, r, t, it.z, it.lambda)) break;
  }
  return it;
}

// Log-barrier method: damped Newton centering on
//   phi_t(z) = -t v - sum log(-f_i(z))
// followed by t <- kMu t, then primal-dual polishing at the final t.
// Backtracking on phi_t copes with strongly curved quadratic pieces, where
// the residual line search above stalls. No step may shrink a slack below
// kSlackFraction of its value, which keeps iterates off curved boundaries.
// The Newton system is solved through a QR factorization of the square root
// of the barrier Hessian, since forming it squares the conditioning.
Iterate solve_barrier(const Epigraph& e, const TrustRegionProblem& problem,
                      const TrustRegionOptions& options) {
  constexpr double kCentered = 1e-9;
  constexpr int kMaxCentering = 20;
  constexpr double kSlackFraction = 0.1;
  const Eigen::Index n = e.num_vars() - 1;
  const Eigen::Index m = e.num_constraints();
  const double md = static_cast<double>(m);
  const double target = gap_target(options);
  double t = 1.0;
  Iterate it{initial_point(problem), Vector()};

  Vector f_ref;
  auto barrier = [&](const Vector& zz, double& phi) {
    const Vector f = e.values(zz);
    if (!(f.array() <= kSlackFraction * f_ref.array()).all()) return false;
    phi = -t * zz[n] - (-f.array()).log().sum();
    return std::isfinite(phi);
  };

  int stage_steps = 0;
  for (; it.iterations < options.max_iterations; ++it.iterations) {
    const Vector f = e.values(it.z);
    const Vector w = (-f.array()).inverse().matrix();
    const Matrix J = e.jacobian(it.z);
    const Vector grad = t * e.objective_gradient() + J.transpose() * w;
    // H = MᵀM with M = [diag(w) J; U], UᵀU = Σ w_i ∇²f_i on the x block.
    Matrix M = Matrix::Zero(m + n, n + 1);
    M.topRows(m) = w.asDiagonal() * J;
    M.bottomLeftCorner(n, n) = Eigen::LLT<Matrix>(e.hessian(w).topLeftCorner(n, n)).matrixU();
    const Eigen::HouseholderQR<Matrix> qr(M);
    const auto R = qr.matrixQR().topRows(n + 1).triangularView<Eigen::Upper>();
    const Vector dz = R.solve(R.transpose().solve(-grad));
    const double decrement = -grad.dot(dz);

    bool centered = !dz.allFinite() || decrement <= kCentered || ++stage_steps > kMaxCentering;
    if (!centered) {
      f_ref = Vector::Zero(m);
      double phi0 = 0.0;
      barrier(it.z, phi0);
      f_ref = f;
      double s = 1.0;
      double phi = 0.0;
      while (s > 1e-16 && !(barrier(it.z + s * dz, phi) && phi <= phi0 - kArmijo * s * decrement)) {
        s *= kBacktrack;
      }
      if (s > 1e-16) {
        it.z += s * dz;
      } else {
        centered = true;
      }
    }
    if (centered) {
      if (md / t <= target) break;
      t *= kMu;
      stage_steps = 0;
    }
  }

  // At large t the multipliers 1/(-t f_i) lose relative accuracy on the
  // active constraints; Newton on (z, lambda) at fixed t recovers it.
  it.lambda = (-e.values(it.z).array()).inverse().matrix() / t;
  for (; it.iterations < options.max_iterations; ++it.iterations) {
    const Residuals r = residuals(e, it.z, it.lambda, t);
    if (r.dual.lpNorm<Eigen::Infinity>() <= target && r.cent.lpNorm<Eigen::Infinity>() <= 0.1 / t) break;
    if (!primal_dual_step(e, r, t, it.z, it.lambda)) break;
  }
  return it;
}

}  // namespace

MasterSolution solve_trust_region_qp(const TrustRegionProblem& problem,
                                     const TrustRegionOptions& options) {
  problem.validate();
  const Epigraph e(problem);
  const Eigen::Index n = problem.center.size();

  MasterSolution out;
  auto accept = [&](const Iterate& it) {
    out.argmax = it.z.head(n);
    out.model_value = problem.model_value(out.argmax);
    out.kkt_residual = kkt_residual(e, it.z, it.lambda);
    out.feasibility_violation =
        std::max(0.0, (out.argmax - problem.center).squaredNorm() - problem.alpha);
    out.multipliers = it.lambda;
    return out.kkt_residual <= options.kkt_tolerance &&
           out.feasibility_violation <= options.feasibility_tolerance && out.argmax.allFinite();
  };

  // The primal-dual method is tried first; the barrier method is the retry.
  const Iterate pd = solve_primal_dual(e, problem, options);
  bool ok = accept(pd);
  out.iterations = pd.iterations;
  if (!ok) {
    const double pd_kkt = out.kkt_residual;
    const Iterate lb = solve_barrier(e, problem, options);
    ok = accept(lb);
    out.iterations = pd.iterations + lb.iterations;
    if (!ok) {
      throw MasterSolverError(
          fmt::format("trust-region master did not converge: kkt residual {:.3e} (primal-dual {:.3e}), "
                      "feasibility violation {:.3e} after {} + {} iterations",
                      out.kkt_residual, pd_kkt, out.feasibility_violation, pd.iterations, lb.iterations),
          out.kkt_residual, out.iterations);
    }
  }

  const double scale = std::max(1.0, std::abs(out.model_value));
  const double active_tol = 1e-7 * scale;
  if (problem.quadratic) {
    const auto& q = *problem.quadratic;
    const double qv = 0.5 * out.argmax.dot(q.hessian * out.argmax) + q.gradient.dot(out.argmax) +
                      q.constant;
    out.quadratic_active = qv - out.model_value <= active_tol;
  }
  for (std::size_t l = 0; l < problem.cuts.size(); ++l) {
    const auto& cut = problem.cuts[l];
    if (cut.normal.dot(out.argmax) + cut.offset - out.model_value <= active_tol) {
      out.active_cuts.push_back(static_cast<int>(l));
    }
  }
  out.ball_active =
      problem.alpha - (out.argmax - problem.center).squaredNorm() <= 1e-7 * problem.alpha;
  return out;
}

}  // namespace fedkm
