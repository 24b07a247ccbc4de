#include "fedkm/topology.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedkm {

bool BoundingBox::contains(const Vector& y, double slack) const {
  if (y.size() != lo.size()) return false;
  for (Eigen::Index l = 0; l < y.size(); ++l) {
    if (y[l] < lo[l] - slack || y[l] > hi[l] + slack) return false;
  }
  return true;
}

Vector BoundingBox::clip(const Vector& y) const { return y.cwiseMax(lo).cwiseMin(hi); }

BoundingBox BoundingBox::envelope(const BoundingBox& a, const BoundingBox& b) {
  if (a.lo.size() != b.lo.size()) {
    throw std::invalid_argument("box envelope: dimension mismatch");
  }
  return BoundingBox{a.lo.cwiseMin(b.lo), a.hi.cwiseMax(b.hi)};
}

BoundingBox BoundingBox::around(const std::vector<Observation>& points) {
  if (points.empty()) throw std::invalid_argument("box around an empty point set");
  BoundingBox box{points.front(), points.front()};
  for (const auto& y : points) {
    box.lo = box.lo.cwiseMin(y);
    box.hi = box.hi.cwiseMax(y);
  }
  return box;
}

CentroidSet::CentroidSet(int num_clusters, int dimension)
    : num_clusters_(num_clusters), dimension_(dimension),
      stacked_(Vector::Zero(static_cast<Eigen::Index>(num_clusters) * dimension)) {}

CentroidSet::CentroidSet(int num_clusters, int dimension, Vector stacked)
    : num_clusters_(num_clusters), dimension_(dimension), stacked_(std::move(stacked)) {
  if (stacked_.size() != static_cast<Eigen::Index>(num_clusters) * dimension) {
    throw std::invalid_argument("centroid set: stacked vector has length " +
                                std::to_string(stacked_.size()) + ", expected " +
                                std::to_string(num_clusters * dimension));
  }
}

bool CentroidSet::operator==(const CentroidSet& other) const {
  return num_clusters_ == other.num_clusters_ && dimension_ == other.dimension_ &&
         stacked_ == other.stacked_;
}

ConsensusTopology::ConsensusTopology(int num_nodes, int num_clusters, int dimension)
    : num_nodes_(num_nodes), num_clusters_(num_clusters), dimension_(dimension) {
  if (num_nodes < 2) throw std::invalid_argument("consensus topology needs at least 2 nodes");
  if (num_clusters < 1) throw std::invalid_argument("consensus topology needs K >= 1");
  if (dimension < 1) throw std::invalid_argument("consensus topology needs n_y >= 1");
}

Matrix ConsensusTopology::dense_matrix() const {
  const int b = block_size();
  Matrix a = Matrix::Zero(dual_dimension(), static_cast<Eigen::Index>(b) * num_nodes_);
  for (int row_block = 0; row_block < num_coupling_blocks(); ++row_block) {
    a.block(row_block * b, row_block * b, b, b).setIdentity();
    a.block(row_block * b, (row_block + 1) * b, b, b) = -Matrix::Identity(b, b);
  }
  return a;
}

ConsensusTopology build_consensus_topology(int num_nodes, int num_clusters, int dimension) {
  return ConsensusTopology(num_nodes, num_clusters, dimension);
}

namespace {

void check_node(const ConsensusTopology& topology, int node) {
  if (node < 0 || node >= topology.num_nodes()) {
    throw std::invalid_argument("node index " + std::to_string(node) + " out of range");
  }
}

}  // namespace

Vector apply_coupling(const ConsensusTopology& topology, int node, const Vector& stacked_centroids) {
  check_node(topology, node);
  const int b = topology.block_size();
  if (stacked_centroids.size() != b) {
    throw std::invalid_argument("apply_coupling: centroid vector has wrong length");
  }
  Vector out = Vector::Zero(topology.dual_dimension());
  if (node < topology.num_coupling_blocks()) out.segment(node * b, b) += stacked_centroids;
  if (node > 0) out.segment((node - 1) * b, b) -= stacked_centroids;
  return out;
}

Vector apply_coupling_adjoint(const ConsensusTopology& topology, int node, const DualVector& lambda) {
  check_node(topology, node);
  const int b = topology.block_size();
  if (lambda.size() != topology.dual_dimension()) {
    throw std::invalid_argument("apply_coupling_adjoint: dual vector has wrong length");
  }
  Vector c = Vector::Zero(b);
  if (node < topology.num_coupling_blocks()) c += lambda.segment(node * b, b);
  if (node > 0) c -= lambda.segment((node - 1) * b, b);
  return c;
}

double compute_big_m(const Observation& y, const BoundingBox& box) {
  if (!box.contains(y)) throw std::invalid_argument("compute_big_m: observation outside box");
  double m = 0.0;
  for (Eigen::Index l = 0; l < y.size(); ++l) {
    const double to_lo = y[l] - box.lo[l];
    const double to_hi = y[l] - box.hi[l];
    m += std::max(to_lo * to_lo, to_hi * to_hi);
  }
  return m;
}

PrimalResidual primal_residual(const ConsensusTopology& topology,
                               std::span<const CentroidSet> centroids) {
  if (static_cast<int>(centroids.size()) != topology.num_nodes()) {
    throw std::invalid_argument("primal_residual: need one centroid set per node");
  }
  const int b = topology.block_size();
  PrimalResidual out;
  out.residual = Vector::Zero(topology.dual_dimension());
  for (int i = 0; i < topology.num_coupling_blocks(); ++i) {
    if (centroids[i].stacked().size() != b || centroids[i + 1].stacked().size() != b) {
      throw std::invalid_argument("primal_residual: centroid vector has wrong length");
    }
    out.residual.segment(i * b, b) = centroids[i].stacked() - centroids[i + 1].stacked();
  }
  out.norm = out.residual.norm();
  return out;
}

}  // namespace fedkm
