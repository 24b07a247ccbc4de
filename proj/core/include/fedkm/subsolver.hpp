#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedkm/types.hpp"

namespace fedkm {

/// One node's Lagrangian clustering problem
///
///   min  Σ_j Σ_k d_jk + c^T m̂     s.t. each y_j in exactly one cluster,
///                                  d_jk >= ||y_j - m_k||² when assigned,
///                                  m_k in box,
///
/// where c = A_i^T λ. For a fixed assignment the centroid part is a
/// separable convex quadratic, so it is eliminated in closed form and the
/// search runs over assignments only.
struct LagrangianSubproblem {
  NodeDataset data;
  int num_clusters = 0;
  BoundingBox box;
  /// Stacked c_k blocks, length K * n_y.
  Vector linear_coefficients;
  /// When set, solve_subproblem relabels its result against it.
  std::optional<CentroidSet> reference;

  int dimension() const { return box.dimension(); }
  /// All c_k blocks equal, which makes the objective label-invariant.
  bool label_symmetric() const;
  void validate() const;
};

struct Assignment {
  std::vector<int> cluster_of;  // 0-based cluster index per observation
};

struct SolveStats {
  std::int64_t explored_nodes = 0;
  std::int64_t suffix_nodes = 0;  // spent on the cached unlabelled suffix bounds
};

struct SubproblemSolution {
  Assignment assignment;
  CentroidSet centroids;
  /// d_ijk for the assigned cluster of each observation.
  std::vector<double> distances;
  double lagrangian_value = 0.0;
  double cluster_cost = 0.0;
  double proof_gap = 0.0;
  SolveStats stats;
};

struct CentroidFit {
  Vector centroid;
  double objective = 0.0;  // Σ ||y - m||² + c_k^T m
};

/// Minimiser of Σ_{y in points} ||y - m||² + c_k^T m over the box. Non-empty
/// clusters take the clipped shifted mean; empty ones minimise the linear
/// term coordinate-wise (lo for c > 0, hi for c < 0, midpoint for c = 0).
CentroidFit closed_form_centroid(std::span<const Observation> points, const Vector& c_k,
                                 const BoundingBox& box);

SubproblemSolution evaluate_assignment(const LagrangianSubproblem& problem,
                                       const Assignment& assignment);

inline constexpr int kUnassigned = -1;

/// Valid lower bound for every completion of a partial assignment
/// (kUnassigned entries are free): assigned points are charged exactly,
/// free points contribute nothing.
double assignment_lower_bound(const LagrangianSubproblem& problem,
                              std::span<const int> partial_assignment);

/// Multi-start Lloyd iteration used as an upper-bound incumbent.
SubproblemSolution lloyd_incumbent(const LagrangianSubproblem& problem, int num_starts,
                                   std::uint64_t seed);

struct SubsolverOptions {
  double rel_tol = 1e-9;
  std::int64_t max_nodes = 5'000'000;
  int lloyd_starts = 8;
  std::uint64_t seed = 0;
};

class NodeLimitExceeded : public std::runtime_error {
 public:
  NodeLimitExceeded(SubproblemSolution incumbent, double lower_bound);

  const SubproblemSolution& incumbent() const { return incumbent_; }
  double lower_bound() const { return lower_bound_; }

 private:
  SubproblemSolution incumbent_;
  double lower_bound_;
};

/// Exact branch-and-bound. Throws NodeLimitExceeded when the node budget
/// runs out before the gap closes.
SubproblemSolution solve_subproblem(const LagrangianSubproblem& problem,
                                    const SubsolverOptions& options = {});

/// Enumerates all K^n assignments. Refuses instances with K^n > 10^7.
SubproblemSolution brute_force_subproblem(const LagrangianSubproblem& problem);

struct RelabelResult {
  SubproblemSolution solution;
  /// permutation[k] is the old label that now carries label k.
  std::vector<int> permutation;
  /// Whether each relabelled centroid is the closest one to its reference.
  bool dominance_satisfied = true;
};

/// Permutation π minimising Σ_k ||m_π(k) - ref_k||² by exhaustive search;
/// the identity wins ties.
std::vector<int> closest_label_permutation(const CentroidSet& centroids, const CentroidSet& reference);

/// Centroid k of the result is centroid permutation[k] of the input.
CentroidSet permute_labels(const CentroidSet& centroids, const std::vector<int>& permutation);

/// Applies the label permutation minimising Σ_k ||m_π(k) - ref_k||² and
/// recomputes the Lagrangian under the new labels.
RelabelResult relabel_to_reference(const LagrangianSubproblem& problem,
                                   const SubproblemSolution& solution,
                                   const CentroidSet& reference);

/// Σ_j min_k ||y_j - m_k||², the node's primal objective z_i under shared
/// centroids.
double node_objective(std::span<const Observation> points, const CentroidSet& centroids);

struct BnbProgress {
  double elapsed_s = 0.0;
  double incumbent = 0.0;
  double lower_bound = 0.0;
  std::int64_t explored_nodes = 0;
};

struct BoundedSolve {
  SubproblemSolution best;
  double lower_bound = 0.0;
  bool proven = false;
};

/// Stateful solver for one node. Caches the branching order and the
/// optimal unlabelled (c = 0) costs of every suffix of that order, which
/// are independent of λ and strengthen the bound of every later solve. The
/// previous optimum is reused as a starting incumbent.
class NodeSolver {
 public:
  NodeSolver(NodeDataset data, int num_clusters, BoundingBox box, SubsolverOptions options = {});

  const NodeDataset& data() const { return data_; }
  int num_clusters() const { return num_clusters_; }
  const BoundingBox& box() const { return box_; }
  const SubsolverOptions& options() const { return options_; }

  /// Observations by decreasing distance from the data mean, ties by index.
  const std::vector<int>& branch_order() const { return order_; }

  /// Proven-optimal Lagrangian minimiser; relabelled against `reference`
  /// when given. Throws NodeLimitExceeded.
  SubproblemSolution solve(const Vector& linear_coefficients,
                           const std::optional<CentroidSet>& reference = std::nullopt);

  /// Like solve() but stops at the node or time budget and reports the
  /// best incumbent with its proven bound instead of throwing.
  BoundedSolve solve_bounded(const Vector& linear_coefficients, std::int64_t max_nodes,
                             double time_budget_s,
                             const std::function<void(const BnbProgress&)>& on_progress = {});

 private:
  LagrangianSubproblem make_problem(const Vector& c) const;
  struct Budget;
  void ensure_suffix_bounds(Budget& budget,
                            const std::function<void(const BnbProgress&)>& on_progress);

  NodeDataset data_;
  int num_clusters_;
  BoundingBox box_;
  SubsolverOptions options_;
  std::vector<int> order_;
  std::vector<Observation> ordered_points_;
  /// suffix_bound_[s]: lower bound on the c = 0 cost of the last s points
  /// of the branch order (exact once the stage completed).
  std::vector<double> suffix_bound_;
  std::vector<std::vector<int>> suffix_labels_;
  int suffix_done_ = 0;
  std::int64_t suffix_nodes_ = 0;
  std::optional<Assignment> previous_;
};

}  // namespace fedkm
