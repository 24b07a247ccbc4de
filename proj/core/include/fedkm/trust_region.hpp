#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedkm/types.hpp"

namespace fedkm {

/// Concave quadratic piece  ½ xᵀQx + qᵀx + q0  with Q negative semidefinite.
struct QuadraticPiece {
  Matrix hessian;
  Vector gradient;
  double constant = 0.0;
};

/// Affine piece  aᵀx + b.
struct LinearCut {
  Vector normal;
  double offset = 0.0;
};

/// Trust-region master problem of the dual-update methods:
///
///   maximise   v
///   subject to v <= ½ xᵀQx + qᵀx + q0        (if quadratic is set)
///              v <= a_lᵀx + b_l               for every cut l
///              ||x - center||² <= alpha
///
/// i.e. the maximum over the ball of the pointwise minimum of the pieces.
/// Note that alpha bounds the squared distance.
struct TrustRegionProblem {
  std::optional<QuadraticPiece> quadratic;
  std::vector<LinearCut> cuts;
  Vector center;
  double alpha = 0.0;

  int dimension() const { return static_cast<int>(center.size()); }
  /// min over all pieces at x.
  double model_value(const Vector& x) const;
  void validate() const;
};

struct TrustRegionOptions {
  double kkt_tolerance = 1e-8;
  double feasibility_tolerance = 1e-8;
  int max_iterations = 200;
};

struct MasterSolution {
  Vector argmax;
  double model_value = 0.0;
  double kkt_residual = 0.0;
  double feasibility_violation = 0.0;
  /// Indices into cuts whose piece attains the minimum at argmax.
  std::vector<int> active_cuts;
  bool quadratic_active = false;
  bool ball_active = false;
  /// Multipliers in constraint order: quadratic (if any), cuts, ball.
  Vector multipliers;
  int iterations = 0;
};

class MasterSolverError : public std::runtime_error {
 public:
  MasterSolverError(const std::string& what, double kkt_residual, int iterations)
      : std::runtime_error(what), kkt_residual_(kkt_residual), iterations_(iterations) {}
  double kkt_residual() const { return kkt_residual_; }
  int iterations() const { return iterations_; }

 private:
  double kkt_residual_;
  int iterations_;
};

/// Interior-point solve of the epigraph form in (x, v): a primal-dual method,
/// retried with a log-barrier method when it misses the tolerances. Each
/// attempt has its own iteration cap; MasterSolution::iterations is the
/// total. Throws MasterSolverError when neither attempt meets the KKT and
/// feasibility tolerances.
MasterSolution solve_trust_region_qp(const TrustRegionProblem& problem,
                                     const TrustRegionOptions& options = {});

}  // namespace fedkm
