#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "fedkm/master.hpp"

namespace fedkm {

double step_size(double alpha0, int t) {
  if (t < 1) throw std::invalid_argument("step_size: t must be >= 1");
  if (!(alpha0 > 0.0)) throw std::invalid_argument("step_size: alpha0 must be positive");
  return alpha0 / std::sqrt(static_cast<double>(t));
}

DualVector sg_update(const DualVector& lambda, const Vector& subgradient, double alpha) {
  if (lambda.size() != subgradient.size()) {
    throw std::invalid_argument("sg_update: dimension mismatch");
  }
  return lambda + alpha * subgradient;
}

Bundle::Bundle(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("bundle capacity must be >= 1");
}

void Bundle::push(BundleEntry entry) {
  if (!entries_.empty() && entry.point.size() != entries_.front().point.size()) {
    throw std::invalid_argument("bundle entry has a different dual dimension");
  }
  if (entry.point.size() != entry.subgradient.size()) {
    throw std::invalid_argument("bundle entry: point and subgradient dimensions differ");
  }
  const int oldest = entry.iteration - capacity_ + 1;
  entries_.push_back(std::move(entry));
  while (!entries_.empty() && entries_.front().iteration < oldest) entries_.pop_front();
  while (entries_.size() > static_cast<std::size_t>(capacity_)) entries_.pop_front();
}

std::vector<double> linearization_errors(const Bundle& bundle, const DualVector& lambda_t,
                                         double d_t) {
  if (bundle.empty()) throw std::invalid_argument("linearization_errors: empty bundle");
  std::vector<double> beta;
  beta.reserve(bundle.size());
  for (const auto& e : bundle.entries()) {
    beta.push_back(d_t - e.value - e.subgradient.dot(lambda_t - e.point));
  }
  return beta;
}

double cutting_plane_model(const Bundle& bundle, const DualVector& lambda) {
  if (bundle.empty()) throw std::invalid_argument("cutting_plane_model: empty bundle");
  double v = std::numeric_limits<double>::infinity();
  for (const auto& e : bundle.entries()) {
    v = std::min(v, e.value + e.subgradient.dot(lambda - e.point));
  }
  return v;
}

double cutting_plane_model_around(const Bundle& bundle, const DualVector& lambda_t, double d_t,
                                  const DualVector& lambda) {
  const auto beta = linearization_errors(bundle, lambda_t, d_t);
  const Vector s = lambda - lambda_t;
  double v = std::numeric_limits<double>::infinity();
  std::size_t l = 0;
  for (const auto& e : bundle.entries()) v = std::min(v, e.subgradient.dot(s) - beta[l++]);
  return d_t + v;
}

BtmStep btm_direction(const Bundle& bundle, const DualVector& lambda_t, double d_t, double alpha,
                      const TrustRegionOptions& options) {
  const auto beta = linearization_errors(bundle, lambda_t, d_t);
  TrustRegionProblem p;
  p.center = Vector::Zero(lambda_t.size());
  p.alpha = alpha;
  std::size_t l = 0;
  for (const auto& e : bundle.entries()) p.cuts.push_back({e.subgradient, -beta[l++]});
  BtmStep out;
  out.master = solve_trust_region_qp(p, options);
  out.step = out.master.argmax;
  out.model_gain = out.master.model_value;
  return out;
}

BfgsResult bfgs_update(const Matrix& hessian, const Vector& s, const Vector& y, double skip_tol) {
  const double ys = y.dot(s);
  if (ys >= -skip_tol * y.norm() * s.norm()) return {hessian, true};
  const Vector bs = hessian * s;
  const double sbs = s.dot(bs);
  if (!(sbs < 0.0)) return {hessian, true};
  Matrix out = hessian + (y * y.transpose()) / ys - (bs * bs.transpose()) / sbs;
  out = 0.5 * (out + out.transpose()).eval();
  return {std::move(out), false};
}

QndaStep qnda_update(const Matrix& hessian, const Bundle& bundle, const DualVector& lambda_t,
                     const Vector& g_t, double d_t, double alpha,
                     const TrustRegionOptions& options) {
  const Eigen::Index n = lambda_t.size();
  if (hessian.rows() != n || hessian.cols() != n || g_t.size() != n) {
    throw std::invalid_argument("qnda_update: dimension mismatch");
  }
  // Work in δ = λ - λ_t with all pieces shifted by -d_t; the cut for entry l
  // is then g_lᵀδ - β_l.
  TrustRegionProblem p;
  p.center = Vector::Zero(n);
  p.alpha = alpha;
  p.quadratic = QuadraticPiece{hessian, g_t, 0.0};
  if (!bundle.empty()) {
    const auto beta = linearization_errors(bundle, lambda_t, d_t);
    std::size_t l = 0;
    for (const auto& e : bundle.entries()) p.cuts.push_back({e.subgradient, -beta[l++]});
  }
  QndaStep out;
  try {
    out.master = solve_trust_region_qp(p, options);
    out.next = lambda_t + out.master.argmax;
  } catch (const MasterSolverError& e) {
    if (bundle.empty()) throw;
    const BtmStep fallback = btm_direction(bundle, lambda_t, d_t, alpha, options);
    out.master = fallback.master;
    out.next = lambda_t + fallback.step;
    out.fell_back = true;
    out.fallback_reason = e.what();
  }
  return out;
}

const char* algorithm_name(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kSubgradient:
      return "SG";
    case Algorithm::kBundleTrust:
      return "BTM";
    case Algorithm::kQuasiNewton:
      return "QNDA";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  std::string up = name;
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  if (up == "SG") return Algorithm::kSubgradient;
  if (up == "BTM") return Algorithm::kBundleTrust;
  if (up == "QNDA") return Algorithm::kQuasiNewton;
  throw std::invalid_argument("unknown algorithm '" + name + "' (expected SG, BTM or QNDA)");
}

DualState::DualState(DualVector initial, MasterConfig config)
    : config_(config), lambda_(std::move(initial)), bundle_(config.bundle_capacity) {
  if (!(config_.alpha0 > 0.0)) throw std::invalid_argument("alpha0 must be positive");
  if (!(config_.initial_hessian_scale < 0.0)) {
    throw std::invalid_argument("initial Hessian scale must be negative");
  }
  hessian_ = config_.initial_hessian_scale * Matrix::Identity(lambda_.size(), lambda_.size());
}

UpdateDiagnostics DualState::update(int t, double dual_value, const Vector& subgradient) {
  if (subgradient.size() != lambda_.size()) {
    throw std::invalid_argument("DualState::update: subgradient dimension mismatch");
  }
  UpdateDiagnostics diag;
  diag.alpha = step_size(config_.alpha0, t);
  bundle_.push({lambda_, subgradient, dual_value, t});

  DualVector next;
  switch (config_.algorithm) {
    case Algorithm::kSubgradient:
      next = sg_update(lambda_, subgradient, diag.alpha);
      break;
    case Algorithm::kBundleTrust: {
      const BtmStep step = btm_direction(bundle_, lambda_, dual_value, diag.alpha,
                                         config_.trust_region);
      next = lambda_ + step.step;
      diag.master_kkt_residual = step.master.kkt_residual;
      diag.master_iterations = step.master.iterations;
      break;
    }
    case Algorithm::kQuasiNewton: {
      if (has_previous_) {
        const BfgsResult b =
            bfgs_update(hessian_, lambda_ - previous_lambda_, subgradient - previous_subgradient_);
        hessian_ = b.hessian;
        diag.bfgs_skipped = b.skipped;
      }
      const QndaStep step = qnda_update(hessian_, bundle_, lambda_, subgradient, dual_value,
                                        diag.alpha, config_.trust_region);
      next = step.next;
      diag.qnda_fallback = step.fell_back;
      diag.master_kkt_residual = step.master.kkt_residual;
      diag.master_iterations = step.master.iterations;
      break;
    }
  }
  previous_lambda_ = lambda_;
  previous_subgradient_ = subgradient;
  has_previous_ = true;
  diag.step_norm = (next - lambda_).norm();
  lambda_ = std::move(next);
  return diag;
}

}  // namespace fedkm
