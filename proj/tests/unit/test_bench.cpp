#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "fedkm/bench.hpp"
#include "fedkm/instance_io.hpp"
#include "test_support.hpp"

namespace fedkm {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void expect_recipe(const BenchmarkSpec& spec, const GeneratedInstance& g) {
  const auto& inst = g.instance;
  EXPECT_EQ(inst.name, spec.name());
  EXPECT_EQ(inst.num_nodes(), spec.num_nodes);
  EXPECT_EQ(inst.num_clusters, spec.num_clusters);
  EXPECT_EQ(inst.dimension, spec.dimension);
  for (int k = 0; k < spec.num_clusters; ++k) {
    const auto c = g.true_centroids.centroid(k);
    EXPECT_GE(c.minCoeff(), -1.0);
    EXPECT_LE(c.maxCoeff(), 1.0);
  }
  for (int i = 0; i < inst.num_nodes(); ++i) {
    const auto& obs = inst.nodes[i].observations;
    if (!spec.split_points) {
      EXPECT_EQ(obs.size(), static_cast<std::size_t>(spec.points_per_cluster * spec.num_clusters));
    }
    ASSERT_EQ(g.generating_cluster[i].size(), obs.size());
    for (std::size_t j = 0; j < obs.size(); ++j) {
      EXPECT_LE((obs[j] - g.true_centroids.centroid(g.generating_cluster[i][j])).norm(), spec.radius);
    }
  }
  EXPECT_NO_THROW(inst.validate());
}

TEST(Generator, SingleInstanceFollowsRecipe) {
  BenchmarkSpec spec;
  spec.seed = 17;
  const auto g = generate_instance(spec);
  EXPECT_EQ(g.instance.name, "2N2D3K_1");
  EXPECT_EQ(g.instance.nodes[0].size(), 15u);
  EXPECT_EQ(g.instance.nodes[1].size(), 15u);
  expect_recipe(spec, g);
}

TEST(Generator, SplitModeDealsPointsToNodes) {
  BenchmarkSpec spec;
  spec.seed = 4;
  spec.num_nodes = 3;
  spec.points_per_cluster = 7;
  spec.split_points = true;
  const auto g = generate_instance(spec);
  std::size_t total = 0;
  for (const auto& n : g.instance.nodes) total += n.size();
  EXPECT_EQ(total, 21u);
  EXPECT_EQ(g.instance.nodes[0].size(), 9u);  // points 0, 3, 6 of each cluster
  expect_recipe(spec, g);
}

TEST(Generator, BallSamplingCoversTheBall) {
  // Uniform in a 2-D ball: P(r <= R/√2) = 1/2.
  BenchmarkSpec spec;
  spec.seed = 5;
  spec.num_clusters = 1;
  spec.points_per_cluster = 2000;
  const auto g = generate_instance(spec);
  int inner = 0, total = 0;
  for (const auto& n : g.instance.nodes) {
    for (const auto& y : n.observations) {
      inner += (y - g.true_centroids.centroid(0)).norm() <= 0.5 / std::sqrt(2.0);
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(inner) / total, 0.5, 0.03);
}

TEST(Generator, DeterministicPerSeed) {
  BenchmarkSpec spec;
  spec.seed = 99;
  const std::string a = instance_to_json(generate_instance(spec).instance);
  EXPECT_EQ(a, instance_to_json(generate_instance(spec).instance));
  spec.seed = 100;
  EXPECT_NE(a, instance_to_json(generate_instance(spec).instance));
}

TEST(Generator, RejectsInvalidSpecs) {
  BenchmarkSpec spec;
  spec.num_nodes = 1;
  EXPECT_THROW(generate_instance(spec), std::invalid_argument);
  spec = BenchmarkSpec{};
  spec.radius = 0.0;
  EXPECT_THROW(generate_instance(spec), std::invalid_argument);
  spec = BenchmarkSpec{};
  spec.split_points = true;
  spec.points_per_cluster = 1;
  EXPECT_THROW(generate_instance(spec), std::invalid_argument);
}

TEST(Grid, NinetyNamedCells) {
  const auto specs = grid_specs(1);
  ASSERT_EQ(specs.size(), 90u);
  const std::regex pattern(R"([234]N[234]D[34]K_[1-5])");
  std::set<std::string> names;
  for (const auto& s : specs) {
    EXPECT_TRUE(std::regex_match(s.name(), pattern)) << s.name();
    names.insert(s.name());
  }
  EXPECT_EQ(names.size(), 90u);
  EXPECT_TRUE(names.count("3N2D4K_5"));
}

TEST(Grid, CellSeedsAreDistinct) {
  std::set<std::uint64_t> seeds;
  for (const auto& s : grid_specs(1)) seeds.insert(s.seed);
  EXPECT_EQ(seeds.size(), 90u);
  EXPECT_NE(grid_seed(1, 2, 2, 3, 1), grid_seed(2, 2, 2, 3, 1));
}

TEST(Grid, WritesFilesAndManifestDeterministically) {
  const auto base = std::filesystem::temp_directory_path() / "fedkm_grid_test";
  std::filesystem::remove_all(base);
  const auto rows_a = generate_grid(7, base / "a");
  const auto rows_b = generate_grid(7, base / "b");
  ASSERT_EQ(rows_a.size(), 90u);
  for (const auto& row : rows_a) {
    const auto fa = base / "a" / (row.name + ".json");
    ASSERT_TRUE(std::filesystem::exists(fa));
    EXPECT_EQ(slurp(fa), slurp(base / "b" / (row.name + ".json")));
    const auto inst = read_instance(fa);
    EXPECT_EQ(inst.name, row.name);
    EXPECT_EQ(inst.num_nodes(), row.num_nodes);
  }
  const std::string manifest = slurp(base / "a" / "manifest.csv");
  EXPECT_EQ(manifest, slurp(base / "b" / "manifest.csv"));
  EXPECT_EQ(manifest.substr(0, manifest.find('\n')), "name,seed,N_s,n_y,K,r");
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 91);
  std::filesystem::remove_all(base);
}

TEST(Grid, EveryCellFollowsRecipe) {
  for (const auto& spec : grid_specs(3)) expect_recipe(spec, generate_instance(spec));
}

}  // namespace
}  // namespace fedkm
