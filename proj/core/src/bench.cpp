#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "fedkm/bench.hpp"
#include "fedkm/instance_io.hpp"
#include "fedkm/rng.hpp"

namespace fedkm {

namespace {

constexpr std::uint64_t kCentroidStream = 0xc3;
constexpr std::uint64_t kPointStream = 0x9a;
constexpr std::uint64_t kSplitNode = ~std::uint64_t{0};

// Uniform in the ball: Gaussian direction, radius r U^{1/n}.
Vector sample_in_ball(Engine& engine, const Vector& center, double radius) {
  const Eigen::Index n = center.size();
  for (;;) {
    Vector dir(n);
    for (Eigen::Index l = 0; l < n; ++l) dir[l] = standard_normal(engine);
    const double norm = dir.norm();
    if (!(norm > 0.0)) continue;
    const double r = radius * std::pow(uniform01(engine), 1.0 / static_cast<double>(n));
    Vector y = center + (r / norm) * dir;
    if ((y - center).norm() <= radius) return y;
  }
}

}  // namespace

std::string BenchmarkSpec::name() const {
  return fmt::format("{}N{}D{}K_{}", num_nodes, dimension, num_clusters, replicate);
}

void BenchmarkSpec::validate() const {
  if (num_nodes < 2) throw std::invalid_argument("benchmark: N_s must be >= 2");
  if (dimension < 1) throw std::invalid_argument("benchmark: n_y must be >= 1");
  if (num_clusters < 1) throw std::invalid_argument("benchmark: K must be >= 1");
  if (replicate < 1) throw std::invalid_argument("benchmark: replicate must be >= 1");
  if (points_per_cluster < 1) throw std::invalid_argument("benchmark: points per cluster must be >= 1");
  if (!(radius > 0.0)) throw std::invalid_argument("benchmark: radius must be positive");
  if (split_points && points_per_cluster < num_nodes) {
    throw std::invalid_argument("benchmark: split mode needs at least N_s points per cluster");
  }
}

GeneratedInstance generate_instance(const BenchmarkSpec& spec) {
  spec.validate();
  GeneratedInstance out;
  out.true_centroids = CentroidSet(spec.num_clusters, spec.dimension);
  for (int k = 0; k < spec.num_clusters; ++k) {
    Engine engine(derive_seed(spec.seed, {kCentroidStream, static_cast<std::uint64_t>(k)}));
    for (int l = 0; l < spec.dimension; ++l) out.true_centroids.centroid(k)[l] = uniform(engine, -1.0, 1.0);
  }

  auto& inst = out.instance;
  inst.name = spec.name();
  inst.num_clusters = spec.num_clusters;
  inst.dimension = spec.dimension;
  inst.nodes.resize(spec.num_nodes);
  out.generating_cluster.resize(spec.num_nodes);
  for (int i = 0; i < spec.num_nodes; ++i) inst.nodes[i].node_id = i;

  for (int k = 0; k < spec.num_clusters; ++k) {
    const Vector center = out.true_centroids.centroid(k);
    if (spec.split_points) {
      for (int p = 0; p < spec.points_per_cluster; ++p) {
        Engine engine(derive_seed(spec.seed, {kPointStream, kSplitNode, static_cast<std::uint64_t>(k),
                                              static_cast<std::uint64_t>(p)}));
        const int node = p % spec.num_nodes;
        inst.nodes[node].observations.push_back(sample_in_ball(engine, center, spec.radius));
        out.generating_cluster[node].push_back(k);
      }
      continue;
    }
    for (int i = 0; i < spec.num_nodes; ++i) {
      for (int p = 0; p < spec.points_per_cluster; ++p) {
        Engine engine(derive_seed(spec.seed, {kPointStream, static_cast<std::uint64_t>(i),
                                              static_cast<std::uint64_t>(k),
                                              static_cast<std::uint64_t>(p)}));
        inst.nodes[i].observations.push_back(sample_in_ball(engine, center, spec.radius));
        out.generating_cluster[i].push_back(k);
      }
    }
  }
  finalize_instance(inst);
  inst.validate();
  return out;
}

std::uint64_t grid_seed(std::uint64_t base_seed, int num_nodes, int dimension, int num_clusters,
                        int replicate) {
  return derive_seed(base_seed, {static_cast<std::uint64_t>(num_nodes),
                                 static_cast<std::uint64_t>(dimension),
                                 static_cast<std::uint64_t>(num_clusters),
                                 static_cast<std::uint64_t>(replicate)});
}

std::vector<BenchmarkSpec> grid_specs(std::uint64_t base_seed) {
  std::vector<BenchmarkSpec> specs;
  for (int n_s : {2, 3, 4}) {
    for (int n_y : {2, 3, 4}) {
      for (int k : {3, 4}) {
        for (int r = 1; r <= 5; ++r) {
          BenchmarkSpec s;
          s.num_nodes = n_s;
          s.dimension = n_y;
          s.num_clusters = k;
          s.replicate = r;
          s.seed = grid_seed(base_seed, n_s, n_y, k, r);
          specs.push_back(s);
        }
      }
    }
  }
  return specs;
}

std::vector<ManifestRow> generate_grid(std::uint64_t base_seed, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestRow> rows;
  for (const auto& spec : grid_specs(base_seed)) {
    const GeneratedInstance g = generate_instance(spec);
    write_instance(g.instance, out_dir / (spec.name() + ".json"));
    rows.push_back({spec.name(), spec.seed, spec.num_nodes, spec.dimension, spec.num_clusters,
                    spec.replicate});
  }
  std::ofstream manifest(out_dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + (out_dir / "manifest.csv").string());
  manifest << "name,seed,N_s,n_y,K,r\n";
  for (const auto& r : rows) {
    fmt::print(manifest, "{},{},{},{},{},{}\n", r.name, r.seed, r.num_nodes, r.dimension,
               r.num_clusters, r.replicate);
  }
  if (!manifest) throw std::runtime_error("failed writing manifest");
  return rows;
}

}  // namespace fedkm
