#pragma once

#include <deque>
#include <string>
#include <vector>

#include "fedkm/trust_region.hpp"
#include "fedkm/types.hpp"

namespace fedkm {

/// α0 / √t.
double step_size(double alpha0, int t);

/// λ + α g.
DualVector sg_update(const DualVector& lambda, const Vector& subgradient, double alpha);

struct BundleEntry {
  DualVector point;
  Vector subgradient;
  double value = 0.0;
  int iteration = 0;
};

/// Sliding window of the most recent oracle evaluations.
class Bundle {
 public:
  explicit Bundle(int capacity);

  int capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<BundleEntry>& entries() const { return entries_; }

  /// Appends and evicts entries with iteration < entry.iteration - capacity + 1.
  void push(BundleEntry entry);

 private:
  int capacity_;
  std::deque<BundleEntry> entries_;
};

/// β_l = d_t - d_l - g_lᵀ(λ_t - λ_l), one per entry in bundle order.
std::vector<double> linearization_errors(const Bundle& bundle, const DualVector& lambda_t,
                                         double d_t);

/// min_l d_l + g_lᵀ(λ - λ_l).
double cutting_plane_model(const Bundle& bundle, const DualVector& lambda);

/// Same model written around λ_t: d_t + min_l (g_lᵀ(λ - λ_t) - β_l).
double cutting_plane_model_around(const Bundle& bundle, const DualVector& lambda_t, double d_t,
                                  const DualVector& lambda);

struct BtmStep {
  Vector step;
  double model_gain = 0.0;  // v
  MasterSolution master;
};

/// Maximises v s.t. ||s||² <= α and g_lᵀs - β_l >= v for every entry.
BtmStep btm_direction(const Bundle& bundle, const DualVector& lambda_t, double d_t, double alpha,
                      const TrustRegionOptions& options = {});

struct BfgsResult {
  Matrix hessian;
  bool skipped = false;
};

/// B + yyᵀ/(yᵀs) - BssᵀB/(sᵀBs), skipped when yᵀs >= -skip_tol·||y||·||s||.
BfgsResult bfgs_update(const Matrix& hessian, const Vector& s, const Vector& y,
                       double skip_tol = 1e-12);

struct QndaStep {
  DualVector next;
  bool fell_back = false;
  std::string fallback_reason;
  MasterSolution master;
};

/// Maximises the quadratic model d_t + g_tᵀδ + ½δᵀBδ, δ = λ - λ_t, over the
/// ball ||δ||² <= α, additionally bounded by the bundle linearisations.
/// Falls back to a BTM step when the master solve fails.
QndaStep qnda_update(const Matrix& hessian, const Bundle& bundle, const DualVector& lambda_t,
                     const Vector& g_t, double d_t, double alpha,
                     const TrustRegionOptions& options = {});

enum class Algorithm { kSubgradient, kBundleTrust, kQuasiNewton };

const char* algorithm_name(Algorithm algorithm);
/// Accepts "SG", "BTM", "QNDA" (case-insensitive). Throws std::invalid_argument.
Algorithm parse_algorithm(const std::string& name);

struct MasterConfig {
  Algorithm algorithm = Algorithm::kQuasiNewton;
  double alpha0 = 0.5;
  int bundle_capacity = 50;
  /// B0 = scale · I.
  double initial_hessian_scale = -1.0;
  TrustRegionOptions trust_region;
};

struct UpdateDiagnostics {
  double alpha = 0.0;
  double step_norm = 0.0;
  bool bfgs_skipped = false;
  bool qnda_fallback = false;
  double master_kkt_residual = 0.0;
  int master_iterations = 0;
};

/// λ, bundle and Hessian approximation of one run.
class DualState {
 public:
  DualState(DualVector initial, MasterConfig config);

  const DualVector& lambda() const { return lambda_; }
  const Bundle& bundle() const { return bundle_; }
  const Matrix& hessian() const { return hessian_; }
  const MasterConfig& config() const { return config_; }

  /// Records the oracle answer (d, g) at the current λ for iteration t and
  /// moves λ to the next iterate.
  UpdateDiagnostics update(int t, double dual_value, const Vector& subgradient);

 private:
  MasterConfig config_;
  DualVector lambda_;
  Bundle bundle_;
  Matrix hessian_;
  bool has_previous_ = false;
  DualVector previous_lambda_;
  Vector previous_subgradient_;
};

}  // namespace fedkm
