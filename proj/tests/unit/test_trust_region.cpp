#include <gtest/gtest.h>

#include <fstream>
#include <limits>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "fedkm/trust_region.hpp"
#include "grid_oracle.hpp"
#include "test_support.hpp"

namespace fedkm {
namespace {

TrustRegionProblem random_problem(Engine& engine, bool with_quadratic, int num_cuts) {
  TrustRegionProblem p;
  p.center = testing::random_vector(engine, 2, -1, 1);
  p.alpha = uniform(engine, 0.01, 0.25);
  if (with_quadratic) {
    const Matrix m = Matrix::NullaryExpr(2, 2, [&]() { return uniform(engine, -1, 1); });
    p.quadratic = QuadraticPiece{-(m.transpose() * m + 0.1 * Matrix::Identity(2, 2)),
                                 testing::random_vector(engine, 2, -2, 2), uniform(engine, -1, 1)};
  }
  for (int l = 0; l < num_cuts; ++l) {
    p.cuts.push_back({testing::random_vector(engine, 2, -2, 2), uniform(engine, -0.5, 0.5)});
  }
  return p;
}

void expect_matches_grid(const TrustRegionProblem& p, const std::string& label) {
  const auto sol = solve_trust_region_qp(p);
  const auto grid = testing::trust_region_grid_max(p);
  EXPECT_NEAR(sol.model_value, grid.value, 1e-5) << label;
  EXPECT_LE(sol.kkt_residual, 1e-8) << label;
  EXPECT_LE(sol.feasibility_violation, 1e-8) << label;
  EXPECT_LE((sol.argmax - p.center).squaredNorm(), p.alpha + 1e-8) << label;
  EXPECT_NEAR(sol.model_value, p.model_value(sol.argmax), 1e-7) << label;
}

TEST(TrustRegion, SingleCutGoesToBoundary) {
  TrustRegionProblem p;
  p.center = Vector::Zero(2);
  p.alpha = 1.0;
  p.cuts.push_back({Vector{{1.0, 0.0}}, 0.0});
  const auto sol = solve_trust_region_qp(p);
  EXPECT_NEAR(sol.argmax[0], 1.0, 1e-7);
  EXPECT_NEAR(sol.argmax[1], 0.0, 1e-7);
  EXPECT_NEAR(sol.model_value, 1.0, 1e-7);
  EXPECT_TRUE(sol.ball_active);
  EXPECT_EQ(sol.active_cuts, (std::vector<int>{0}));
}

TEST(TrustRegion, OpposingCutsPinAxis) {
  TrustRegionProblem p;
  p.center = Vector::Zero(2);
  p.alpha = 1.0;
  p.cuts.push_back({Vector{{1.0, 0.0}}, 0.0});
  p.cuts.push_back({Vector{{-1.0, 0.0}}, 0.0});
  const auto sol = solve_trust_region_qp(p);
  EXPECT_NEAR(sol.argmax[0], 0.0, 1e-7);
  EXPECT_NEAR(sol.model_value, 0.0, 1e-7);
}

TEST(TrustRegion, InteriorQuadraticMaximum) {
  TrustRegionProblem p;
  p.center = Vector::Zero(2);
  p.alpha = 4.0;
  p.quadratic = QuadraticPiece{-Matrix::Identity(2, 2), Vector{{0.5, -0.25}}, 1.0};
  const auto sol = solve_trust_region_qp(p);
  EXPECT_NEAR(sol.argmax[0], 0.5, 1e-7);
  EXPECT_NEAR(sol.argmax[1], -0.25, 1e-7);
  EXPECT_NEAR(sol.model_value, 1.0 + 0.5 * (0.25 + 0.0625), 1e-8);
  EXPECT_FALSE(sol.ball_active);
  EXPECT_TRUE(sol.quadratic_active);
}

TEST(TrustRegion, ClippedQuadraticMaximum) {
  TrustRegionProblem p;
  p.center = Vector{{1.0, 1.0}};
  p.alpha = 0.25;
  p.quadratic = QuadraticPiece{-Matrix::Identity(2, 2), Vector{{4.0, 1.0}}, 0.0};
  const auto sol = solve_trust_region_qp(p);
  // Unconstrained maximiser (4,1) lies outside; spherical model => radial clip.
  const Vector dir = (Vector{{3.0, 0.0}}).normalized();
  EXPECT_LT((sol.argmax - (p.center + 0.5 * dir)).norm(), 1e-7);
  EXPECT_TRUE(sol.ball_active);
}

TEST(TrustRegion, MatchesGridOracleCutsOnly) {
  Engine engine(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_problem(engine, false, 1 + static_cast<int>(uniform_index(engine, 5)));
    expect_matches_grid(p, "cuts trial " + std::to_string(trial));
  }
}

TEST(TrustRegion, MatchesGridOracleWithQuadratic) {
  Engine engine(32);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_problem(engine, true, static_cast<int>(uniform_index(engine, 5)));
    expect_matches_grid(p, "quadratic trial " + std::to_string(trial));
  }
}

TEST(TrustRegion, HigherDimensionKkt) {
  Engine engine(33);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(engine, 30));
    TrustRegionProblem p;
    p.center = testing::random_vector(engine, n, -1, 1);
    p.alpha = uniform(engine, 0.01, 2.0);
    if (trial % 2 == 0) {
      p.quadratic = QuadraticPiece{-Matrix::Identity(n, n), testing::random_vector(engine, n, -1, 1), 0.0};
    }
    for (int l = 0; l < 50; ++l) p.cuts.push_back({testing::random_vector(engine, n, -1, 1), uniform(engine, -1, 1)});
    const auto sol = solve_trust_region_qp(p);
    EXPECT_LE(sol.kkt_residual, 1e-8);
    EXPECT_LE(sol.feasibility_violation, 1e-8);
    // Random feasible points never beat the reported maximum.
    for (int s = 0; s < 200; ++s) {
      Vector d = testing::random_vector(engine, n, -1, 1);
      d *= std::sqrt(p.alpha) * std::pow(uniform01(engine), 1.0 / n) / d.norm();
      EXPECT_LE(p.model_value(p.center + d), sol.model_value + 1e-9);
    }
  }
}

Vector json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Master problems captured from runs, centered at the origin.
TrustRegionProblem load_master_fixture(const std::string& file) {
  std::ifstream in(std::string(FEDKM_TEST_DATA_DIR) + "/" + file);
  EXPECT_TRUE(in.good()) << file;
  const auto doc = nlohmann::json::parse(in);
  TrustRegionProblem p;
  p.alpha = doc["alpha"].get<double>();
  for (const auto& c : doc["cuts"]) p.cuts.push_back({json_vector(c["normal"]), c["offset"].get<double>()});
  p.center = Vector::Zero(p.cuts.front().normal.size());
  if (doc.contains("hessian")) {
    const Eigen::Index n = p.center.size();
    Matrix h(n, n);
    for (Eigen::Index i = 0; i < n; ++i) h.row(i) = json_vector(doc["hessian"][i]).transpose();
    p.quadratic = QuadraticPiece{h, json_vector(doc["gradient"]), 0.0};
  }
  return p;
}

TEST(TrustRegion, NearlyParallelCutsFromStalledBundle) {
  // Bundle masters captured from long runs on a dual plateau: the
  // subgradients alternate between a few opposing directions with offsets
  // near 1e-13, so the problems are degenerate up to roundoff.
  for (const char* file : {"degenerate_bundle_master.json", "degenerate_bundle_master_2.json"}) {
    const auto p = load_master_fixture(file);
    const auto sol = solve_trust_region_qp(p);
    EXPECT_LE(sol.kkt_residual, 1e-8) << file;
    EXPECT_LE((sol.argmax - p.center).squaredNorm(), p.alpha + 1e-8) << file;
    double max_offset = -std::numeric_limits<double>::infinity();
    for (const auto& c : p.cuts) max_offset = std::max(max_offset, c.offset);
    // The solve stops at a surrogate duality gap near 1e-11.
    EXPECT_GE(sol.model_value, p.model_value(p.center) - 1e-10) << file;
    EXPECT_LE(sol.model_value, max_offset + 1e-12) << file;
  }
}

TEST(TrustRegion, StronglyCurvedQuadraticPiece) {
  // Quasi-Newton masters captured after many short steps: the BFGS matrix
  // has norm 6e4 and 1e10 and is negative semidefinite only up to roundoff.
  // The primal-dual method alone stalls on both.
  Engine engine(35);
  for (const char* file : {"curved_quadratic_master.json", "curved_quadratic_master_2.json"}) {
    const auto p = load_master_fixture(file);
    ASSERT_TRUE(p.quadratic.has_value()) << file;
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(p.quadratic->hessian);
    const double norm = eig.eigenvalues().cwiseAbs().maxCoeff();
    const double n = static_cast<double>(p.center.size());
    ASSERT_GT(norm, 1e4) << file;
    ASSERT_LE(eig.eigenvalues().maxCoeff(), 64.0 * n * std::numeric_limits<double>::epsilon() * norm) << file;

    const auto sol = solve_trust_region_qp(p);
    EXPECT_LE(sol.kkt_residual, 1e-8) << file;
    EXPECT_LE(sol.feasibility_violation, 1e-8) << file;
    EXPECT_GE(sol.model_value, p.model_value(p.center) - 1e-10) << file;
    // Random feasible points never beat the reported maximum.
    for (int s = 0; s < 2000; ++s) {
      Vector d = testing::random_vector(engine, static_cast<int>(n), -1, 1);
      d *= std::sqrt(p.alpha) * std::pow(uniform01(engine), 1.0 / n) / d.norm();
      EXPECT_LE(p.model_value(p.center + d), sol.model_value + 1e-9) << file;
    }
  }
}

TEST(TrustRegion, IterationCapRaisesSolverError) {
  Engine engine(34);
  const auto p = random_problem(engine, true, 4);
  TrustRegionOptions opts;
  opts.max_iterations = 1;
  try {
    solve_trust_region_qp(p, opts);
    FAIL() << "expected MasterSolverError";
  } catch (const MasterSolverError& e) {
    EXPECT_GT(e.kkt_residual(), 0.0);
    EXPECT_GE(e.iterations(), 1);
  }
}

TEST(TrustRegion, ValidateRejectsIllPosedProblems) {
  TrustRegionProblem p;
  p.center = Vector::Zero(2);
  p.alpha = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);  // no pieces
  p.cuts.push_back({Vector::Zero(3), 0.0});
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.cuts.front().normal = Vector::Zero(2);
  p.alpha = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.alpha = 1.0;
  EXPECT_NO_THROW(p.validate());
}

}  // namespace
}  // namespace fedkm
