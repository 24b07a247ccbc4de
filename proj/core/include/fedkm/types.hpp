#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fedkm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A single data point y_j in feature space.
using Observation = Vector;

/// The observations J_i held by one node. Order is significant: it is the
/// index set the node's assignment refers to.
struct NodeDataset {
  int node_id = 0;
  std::vector<Observation> observations;

  std::size_t size() const { return observations.size(); }
  int dimension() const {
    return observations.empty() ? 0 : static_cast<int>(observations.front().size());
  }
};

/// Axis-aligned box Y = [lo, hi]. Centroids are constrained to lie in it and
/// the big-M constants are computed against it.
struct BoundingBox {
  Vector lo;
  Vector hi;

  int dimension() const { return static_cast<int>(lo.size()); }
  bool contains(const Vector& y, double slack = 0.0) const;
  Vector midpoint() const { return 0.5 * (lo + hi); }
  Vector clip(const Vector& y) const;

  /// Component-wise envelope of two boxes.
  static BoundingBox envelope(const BoundingBox& a, const BoundingBox& b);
  /// Tight box around a non-empty point set.
  static BoundingBox around(const std::vector<Observation>& points);
};

/// K centroids of dimension n_y stored stacked, cluster-major:
/// entry (k, l) lives at index k * n_y + l.
class CentroidSet {
 public:
  CentroidSet() = default;
  CentroidSet(int num_clusters, int dimension);
  CentroidSet(int num_clusters, int dimension, Vector stacked);

  int num_clusters() const { return num_clusters_; }
  int dimension() const { return dimension_; }

  auto centroid(int k) { return stacked_.segment(k * dimension_, dimension_); }
  auto centroid(int k) const { return stacked_.segment(k * dimension_, dimension_); }

  const Vector& stacked() const { return stacked_; }
  Vector& stacked() { return stacked_; }

  bool operator==(const CentroidSet& other) const;

 private:
  int num_clusters_ = 0;
  int dimension_ = 0;
  Vector stacked_;
};

/// Multipliers of the chain consensus constraints. Layout is
/// (coupling block b = node b -> b+1, cluster k, dimension l), row-major.
using DualVector = Vector;

struct ProblemInstance {
  std::string name;
  int num_clusters = 0;  // K
  int dimension = 0;     // n_y
  std::vector<NodeDataset> nodes;
  BoundingBox box;
  /// big_m[i][j] is M_j for observation j of nodes[i].
  std::vector<std::vector<double>> big_m;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  std::size_t num_observations() const;

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

/// Fills in the global box (envelope of all node data) and every M_j.
void finalize_instance(ProblemInstance& instance);

}  // namespace fedkm
