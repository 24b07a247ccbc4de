#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "fedkm/instance_io.hpp"
#include "test_support.hpp"

namespace fedkm {
namespace {

bool bit_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

ProblemInstance random_instance(std::uint64_t seed) {
  Engine engine(seed);
  std::vector<std::vector<Observation>> nodes;
  for (int i = 0; i < 3; ++i) nodes.push_back(testing::random_points(engine, 4 + i, 3, -1e3, 1e-3));
  auto inst = testing::make_instance(std::move(nodes), 2);
  inst.name = "round-trip";
  return inst;
}

void expect_identical(const ProblemInstance& a, const ProblemInstance& b) {
  EXPECT_EQ(a.name, b.name);
  EXPECT_EQ(a.num_clusters, b.num_clusters);
  EXPECT_EQ(a.dimension, b.dimension);
  ASSERT_EQ(a.nodes.size(), b.nodes.size());
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    EXPECT_EQ(a.nodes[i].node_id, b.nodes[i].node_id);
    ASSERT_EQ(a.nodes[i].size(), b.nodes[i].size());
    for (std::size_t j = 0; j < a.nodes[i].size(); ++j) {
      EXPECT_TRUE(bit_equal(a.nodes[i].observations[j], b.nodes[i].observations[j]));
    }
    ASSERT_EQ(a.big_m[i].size(), b.big_m[i].size());
    for (std::size_t j = 0; j < a.big_m[i].size(); ++j) {
      EXPECT_EQ(std::memcmp(&a.big_m[i][j], &b.big_m[i][j], sizeof(double)), 0);
    }
  }
  EXPECT_TRUE(bit_equal(a.box.lo, b.box.lo));
  EXPECT_TRUE(bit_equal(a.box.hi, b.box.hi));
}

TEST(InstanceIo, RoundTripIsBitExact) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto inst = random_instance(seed);
    expect_identical(inst, instance_from_json(instance_to_json(inst)));
  }
}

TEST(InstanceIo, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "fedkm_instance_io";
  std::filesystem::create_directories(dir);
  const auto inst = random_instance(99);
  write_instance(inst, dir / "x.json");
  expect_identical(inst, read_instance(dir / "x.json"));
  std::filesystem::remove_all(dir);
}

TEST(InstanceIo, SerializationIsStable) {
  const auto inst = random_instance(3);
  const std::string once = instance_to_json(inst);
  EXPECT_EQ(once, instance_to_json(instance_from_json(once)));
}

TEST(InstanceIo, FinalizeComputesEnvelopeAndBigM) {
  auto inst = testing::make_instance({{Vector{{0.0, 0.0}}, Vector{{1.0, 0.5}}}, {Vector{{-1.0, 2.0}}}}, 1);
  EXPECT_EQ(inst.box.lo, (Vector{{-1.0, 0.0}}));
  EXPECT_EQ(inst.box.hi, (Vector{{1.0, 2.0}}));
  EXPECT_DOUBLE_EQ(inst.big_m[0][0], 1.0 + 4.0);
  EXPECT_DOUBLE_EQ(inst.big_m[1][0], 4.0 + 4.0);
  EXPECT_NO_THROW(inst.validate());
}

TEST(InstanceIo, RejectsMalformedJson) {
  EXPECT_THROW(instance_from_json("{"), InstanceFormatError);
  EXPECT_THROW(instance_from_json("[]"), InstanceFormatError);
  EXPECT_THROW(instance_from_json(R"({"name":"x","K":1})"), InstanceFormatError);
}

TEST(InstanceIo, RejectsDimensionInconsistency) {
  const auto inst = random_instance(4);
  std::string text = instance_to_json(inst);
  const auto pos = text.find("\"n_y\": 3");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 8, "\"n_y\": 2");
  EXPECT_THROW(instance_from_json(text), InstanceFormatError);
}

TEST(InstanceIo, RejectsNonFiniteCoordinates) {
  auto inst = random_instance(5);
  std::string text = instance_to_json(inst);
  // JSON has no NaN literal; nlohmann writes null for it.
  inst.nodes[0].observations[0][0] = std::nan("");
  EXPECT_THROW(instance_from_json(instance_to_json(inst)), InstanceFormatError);
  const auto pos = text.find("\"observations\": [");
  ASSERT_NE(pos, std::string::npos);
  const auto num = text.find_first_of("-0123456789", pos + 17);
  text.insert(num, "NaN, ");
  EXPECT_THROW(instance_from_json(text), InstanceFormatError);
}

TEST(InstanceIo, RejectsInconsistentBigM) {
  auto inst = random_instance(6);
  inst.big_m[1][0] += 1.0;
  EXPECT_THROW(inst.validate(), std::invalid_argument);
  EXPECT_THROW(instance_from_json(instance_to_json(inst)), InstanceFormatError);
}

TEST(InstanceIo, MissingFileIsFormatError) {
  EXPECT_THROW(read_instance("/nonexistent/fedkm.json"), InstanceFormatError);
}

}  // namespace
}  // namespace fedkm
