#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedkm/types.hpp"

namespace fedkm {

struct BenchmarkSpec {
  int num_nodes = 2;
  int dimension = 2;
  int num_clusters = 3;
  int replicate = 1;
  std::uint64_t seed = 0;
  int points_per_cluster = 5;
  double radius = 0.5;
  /// false: every node draws points_per_cluster points per cluster.
  /// true: points_per_cluster points per cluster in total, point p going to
  /// node p mod N_s.
  bool split_points = false;

  /// "{N_s}N{n_y}D{K}K_{r}".
  std::string name() const;
  void validate() const;
};

struct GeneratedInstance {
  ProblemInstance instance;
  CentroidSet true_centroids;
  /// generating_cluster[i][j]: cluster whose centroid produced point j of node i.
  std::vector<std::vector<int>> generating_cluster;
};

GeneratedInstance generate_instance(const BenchmarkSpec& spec);

/// Seed of one grid cell, derived from the base seed and the cell's shape.
std::uint64_t grid_seed(std::uint64_t base_seed, int num_nodes, int dimension, int num_clusters,
                        int replicate);

/// The 90 grid cells: N_s in {2,3,4}, n_y in {2,3,4}, K in {3,4}, r in 1..5.
std::vector<BenchmarkSpec> grid_specs(std::uint64_t base_seed);

struct ManifestRow {
  std::string name;
  std::uint64_t seed = 0;
  int num_nodes = 0;
  int dimension = 0;
  int num_clusters = 0;
  int replicate = 0;
};

/// Writes one "<name>.json" per grid cell plus manifest.csv.
std::vector<ManifestRow> generate_grid(std::uint64_t base_seed, const std::filesystem::path& out_dir);

}  // namespace fedkm
