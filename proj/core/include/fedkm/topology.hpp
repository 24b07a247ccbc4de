#pragma once

#include <span>

#include "fedkm/types.hpp"

namespace fedkm {

/// Linear-chain consensus structure m̂_i - m̂_{i+1} = 0, i = 0..N_s-2.
///
/// The stacked coupling matrix A = [A_0 ... A_{N_s-1}] is never
/// materialised; A_i is applied block-wise. Node i carries +I in coupling
/// block i (if it has a right neighbour) and -I in block i-1 (if it has a
/// left neighbour).
class ConsensusTopology {
 public:
  /// Throws std::invalid_argument unless num_nodes >= 2, num_clusters >= 1
  /// and dimension >= 1.
  ConsensusTopology(int num_nodes, int num_clusters, int dimension);

  int num_nodes() const { return num_nodes_; }
  int num_clusters() const { return num_clusters_; }
  int dimension() const { return dimension_; }

  /// K * n_y, the length of one stacked centroid vector.
  int block_size() const { return num_clusters_ * dimension_; }
  int num_coupling_blocks() const { return num_nodes_ - 1; }
  /// K * n_y * (N_s - 1).
  int dual_dimension() const { return block_size() * num_coupling_blocks(); }

  /// Dense A, for tests and diagnostics only.
  Matrix dense_matrix() const;

 private:
  int num_nodes_;
  int num_clusters_;
  int dimension_;
};

ConsensusTopology build_consensus_topology(int num_nodes, int num_clusters, int dimension);

/// A_i m̂_i.
Vector apply_coupling(const ConsensusTopology& topology, int node, const Vector& stacked_centroids);

/// c_i = A_i^T λ, the linear coefficients of node i's Lagrangian.
Vector apply_coupling_adjoint(const ConsensusTopology& topology, int node, const DualVector& lambda);

/// M_j = max over the box of ||y_j - χ||². Throws std::invalid_argument if
/// y lies outside the box.
double compute_big_m(const Observation& y, const BoundingBox& box);

struct PrimalResidual {
  Vector residual;  // w_p = Σ_i A_i m̂_i
  double norm = 0.0;
};

PrimalResidual primal_residual(const ConsensusTopology& topology,
                               std::span<const CentroidSet> centroids);

}  // namespace fedkm
