#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <limits>

#include "fedkm/master.hpp"
#include "grid_oracle.hpp"
#include "test_support.hpp"

namespace fedkm {
namespace {

// Concave piecewise-linear toy dual d(λ) = min_j a_jᵀλ + b_j with an exact
// supergradient.
struct ToyDual {
  std::vector<Vector> slopes;
  std::vector<double> offsets;

  static ToyDual random(Engine& engine, int n, int pieces) {
    ToyDual d;
    for (int j = 0; j < pieces; ++j) {
      d.slopes.push_back(testing::random_vector(engine, n, -2, 2));
      d.offsets.push_back(uniform(engine, -1, 1));
    }
    return d;
  }
  std::pair<double, Vector> operator()(const Vector& lambda) const {
    std::size_t arg = 0;
    double best = INFINITY;
    for (std::size_t j = 0; j < slopes.size(); ++j) {
      const double v = slopes[j].dot(lambda) + offsets[j];
      if (v < best) {
        best = v;
        arg = j;
      }
    }
    return {best, slopes[arg]};
  }
};

Bundle toy_bundle(const ToyDual& d, Engine& engine, int n, int count) {
  Bundle b(50);
  for (int l = 1; l <= count; ++l) {
    const Vector p = testing::random_vector(engine, n, -1, 1);
    const auto [v, g] = d(p);
    b.push({p, g, v, l});
  }
  return b;
}

TEST(StepSize, Examples) {
  EXPECT_DOUBLE_EQ(step_size(0.5, 1), 0.5);
  EXPECT_DOUBLE_EQ(step_size(0.5, 4), 0.25);
  EXPECT_DOUBLE_EQ(step_size(0.5, 100), 0.05);
  EXPECT_THROW(step_size(0.5, 0), std::invalid_argument);
  EXPECT_THROW(step_size(0.0, 1), std::invalid_argument);
}

TEST(SubgradientUpdate, Examples) {
  EXPECT_EQ(sg_update(Vector::Zero(2), Vector{{1.0, 0.0}}, 0.5), (Vector{{0.5, 0.0}}));
  const Vector lambda{{0.3, -0.7}};
  EXPECT_EQ(sg_update(lambda, Vector::Zero(2), 0.5), lambda);
  Engine engine(41);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector l = testing::random_vector(engine, 6, -1, 1);
    const Vector g = testing::random_vector(engine, 6, -1, 1);
    const double a = uniform(engine, 0.01, 1);
    EXPECT_NEAR((sg_update(l, g, a) - l).norm(), a * g.norm(), 1e-14);
  }
  EXPECT_THROW(sg_update(Vector::Zero(2), Vector::Zero(3), 0.5), std::invalid_argument);
}

TEST(BundleWindow, SixtyPushesKeepFifty) {
  Bundle b(50);
  for (int l = 1; l <= 60; ++l) b.push({Vector::Constant(2, l), Vector::Zero(2), 0.0, l});
  ASSERT_EQ(b.size(), 50u);
  EXPECT_EQ(b.entries().front().iteration, 11);
  EXPECT_EQ(b.entries().back().iteration, 60);
  int expect = 11;
  for (const auto& e : b.entries()) EXPECT_EQ(e.iteration, expect++);
}

TEST(BundleWindow, CapacityOneKeepsNewest) {
  Bundle b(1);
  for (int l = 1; l <= 5; ++l) b.push({Vector::Zero(1), Vector::Zero(1), static_cast<double>(l), l});
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b.entries().front().iteration, 5);
}

TEST(BundleWindow, RejectsMismatchedDimensions) {
  Bundle b(3);
  b.push({Vector::Zero(2), Vector::Zero(2), 0.0, 1});
  EXPECT_THROW(b.push({Vector::Zero(3), Vector::Zero(3), 0.0, 2}), std::invalid_argument);
  EXPECT_THROW(b.push({Vector::Zero(2), Vector::Zero(3), 0.0, 2}), std::invalid_argument);
  EXPECT_THROW(Bundle(0), std::invalid_argument);
}

TEST(LinearizationErrors, SelfTermVanishes) {
  Engine engine(42);
  const auto d = ToyDual::random(engine, 3, 5);
  auto b = toy_bundle(d, engine, 3, 6);
  const auto& last = b.entries().back();
  EXPECT_EQ(linearization_errors(b, last.point, last.value).back(), 0.0);
}

TEST(LinearizationErrors, LinearDualHasNoError) {
  const Vector a{{1.0, -2.0}};
  Bundle b(10);
  Engine engine(43);
  for (int l = 1; l <= 5; ++l) {
    const Vector p = testing::random_vector(engine, 2, -1, 1);
    b.push({p, a, a.dot(p) + 0.5, l});
  }
  const Vector lt{{0.2, 0.1}};
  for (double beta : linearization_errors(b, lt, a.dot(lt) + 0.5)) EXPECT_NEAR(beta, 0.0, 1e-15);
}

TEST(LinearizationErrors, NonPositiveForConcaveDual) {
  Engine engine(44);
  for (int trial = 0; trial < 30; ++trial) {
    const auto d = ToyDual::random(engine, 4, 6);
    const auto b = toy_bundle(d, engine, 4, 10);
    const Vector lt = testing::random_vector(engine, 4, -1, 1);
    for (double beta : linearization_errors(b, lt, d(lt).first)) EXPECT_LE(beta, 1e-12);
  }
}

TEST(CuttingPlaneModel, OverApproximatesConcaveDual) {
  Engine engine(45);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = ToyDual::random(engine, 3, 6);
    const auto b = toy_bundle(d, engine, 3, 8);
    for (const auto& e : b.entries()) EXPECT_GE(cutting_plane_model(b, e.point), e.value - 1e-9);
    for (int s = 0; s < 50; ++s) {
      const Vector x = testing::random_vector(engine, 3, -2, 2);
      EXPECT_GE(cutting_plane_model(b, x), d(x).first - 1e-9);
    }
  }
}

TEST(CuttingPlaneModel, BothFormsAgree) {
  Engine engine(46);
  const auto d = ToyDual::random(engine, 4, 6);
  const auto b = toy_bundle(d, engine, 4, 12);
  const Vector lt = testing::random_vector(engine, 4, -1, 1);
  const double dt = d(lt).first;
  for (int s = 0; s < 100; ++s) {
    const Vector x = testing::random_vector(engine, 4, -3, 3);
    EXPECT_NEAR(cutting_plane_model(b, x), cutting_plane_model_around(b, lt, dt, x), 1e-10);
  }
}

TEST(BundleTrust, SingleCutMovesAlongGradient) {
  Bundle b(5);
  b.push({Vector::Zero(2), Vector{{1.0, 0.0}}, 0.0, 1});
  const auto step = btm_direction(b, Vector::Zero(2), 0.0, 1.0);
  EXPECT_NEAR(step.step[0], 1.0, 1e-7);
  EXPECT_NEAR(step.step[1], 0.0, 1e-7);
  EXPECT_NEAR(step.model_gain, 1.0, 1e-7);
}

TEST(BundleTrust, OpposingCutsGiveZeroStep) {
  Bundle b(5);
  b.push({Vector::Zero(2), Vector{{1.0, 0.0}}, 0.0, 1});
  b.push({Vector::Zero(2), Vector{{-1.0, 0.0}}, 0.0, 2});
  const auto step = btm_direction(b, Vector::Zero(2), 0.0, 1.0);
  EXPECT_NEAR(step.step[0], 0.0, 1e-7);
  EXPECT_NEAR(step.model_gain, 0.0, 1e-7);
}

TEST(BundleTrust, MatchesGridOracle) {
  Engine engine(47);
  for (int trial = 0; trial < 8; ++trial) {
    const auto d = ToyDual::random(engine, 2, 4);
    const auto b = toy_bundle(d, engine, 2, 5);
    const Vector lt = testing::random_vector(engine, 2, -1, 1);
    const double dt = d(lt).first;
    const double alpha = uniform(engine, 0.01, 0.2);
    const auto step = btm_direction(b, lt, dt, alpha);
    EXPECT_LE(step.step.squaredNorm(), alpha + 1e-8);
    // Oracle over s: min_l d_l + g_lᵀ(λ_t + s - λ_l) - d_t.
    TrustRegionProblem p;
    p.center = Vector::Zero(2);
    p.alpha = alpha;
    for (const auto& e : b.entries()) p.cuts.push_back({e.subgradient, e.value + e.subgradient.dot(lt - e.point) - dt});
    EXPECT_NEAR(step.model_gain, testing::trust_region_grid_max(p).value, 1e-5) << trial;
  }
}

TEST(Bfgs, CancellationLeavesHessianUnchanged) {
  Engine engine(48);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(engine, 8));
    const Vector s = testing::random_vector(engine, n, -1, 1);
    const Matrix b = -Matrix::Identity(n, n);
    const auto r = bfgs_update(b, s, -s);
    EXPECT_FALSE(r.skipped);
    EXPECT_LE((r.hessian - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Bfgs, SkipsWithoutCurvature) {
  const Matrix b = -Matrix::Identity(2, 2);
  const auto orth = bfgs_update(b, Vector{{1.0, 0.0}}, Vector{{0.0, 1.0}});
  EXPECT_TRUE(orth.skipped);
  EXPECT_EQ(orth.hessian, b);
  const auto wrong_sign = bfgs_update(b, Vector{{1.0, 0.0}}, Vector{{1.0, 0.0}});
  EXPECT_TRUE(wrong_sign.skipped);
  EXPECT_EQ(wrong_sign.hessian, b);
}

TEST(Bfgs, SequenceStaysSymmetricNegativeDefinite) {
  // Curvature pairs of a fixed concave quadratic plus noise; every few steps
  // a pair with the wrong curvature sign that must be skipped.
  Engine engine(49);
  for (int run = 0; run < 10; ++run) {
    const int n = 2 + static_cast<int>(uniform_index(engine, 10));
    const Matrix m = Matrix::NullaryExpr(n, n, [&]() { return uniform(engine, -1, 1); });
    const Matrix h = -(m.transpose() * m + 0.05 * Matrix::Identity(n, n));
    Matrix b = -Matrix::Identity(n, n);
    int accepted = 0;
    for (int k = 0; k < 100; ++k) {
      const Vector s = testing::random_vector(engine, n, -1, 1);
      const Vector y = k % 7 == 6 ? Vector(-h * s) : Vector(h * s + 0.01 * testing::random_vector(engine, n, -1, 1));
      const auto r = bfgs_update(b, s, y);
      if (r.skipped) {
        EXPECT_GE(y.dot(s), -1e-12 * y.norm() * s.norm());
        EXPECT_EQ(r.hessian, b);
      } else {
        ++accepted;
      }
      b = r.hessian;
      EXPECT_LE((b - b.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(b);
      EXPECT_LT(eig.eigenvalues().maxCoeff(), 0.0);
    }
    EXPECT_GT(accepted, 50);
  }
}

TEST(Bfgs, UncorrelatedPairsStayNegativeUpToRoundoff) {
  // Unrelated random (s, y) pairs flatten B along some direction; after many
  // updates the exact top eigenvalue drops below double resolution of ||B||,
  // so only its sign up to roundoff can be checked.
  Engine engine(51);
  for (int run = 0; run < 10; ++run) {
    const int n = 2 + static_cast<int>(uniform_index(engine, 10));
    Matrix b = -Matrix::Identity(n, n);
    for (int k = 0; k < 100; ++k) {
      const Vector s = testing::random_vector(engine, n, -1, 1);
      const Vector y = testing::random_vector(engine, n, -1, 1);
      const auto r = bfgs_update(b, s, y);
      if (r.skipped) {
        EXPECT_EQ(r.hessian, b);
      }
      b = r.hessian;
      EXPECT_LE((b - b.transpose()).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, b.norm()));
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(b);
      EXPECT_LE(eig.eigenvalues().maxCoeff(), 64 * n * std::numeric_limits<double>::epsilon() * b.norm());
    }
  }
}

TEST(Bfgs, SecantConditionHolds) {
  Engine engine(50);
  const Matrix b = -2.0 * Matrix::Identity(3, 3);
  const Vector s = testing::random_vector(engine, 3, -1, 1);
  const Vector y = -s + 0.1 * testing::random_vector(engine, 3, -1, 1);
  const auto r = bfgs_update(b, s, y);
  ASSERT_FALSE(r.skipped);
  EXPECT_LT((r.hessian * s - y).norm(), 1e-12);
}

TEST(QuasiNewton, NewtonStepInsideBall) {
  const Vector g{{0.3, -0.2}};
  const auto step = qnda_update(-Matrix::Identity(2, 2), Bundle(5), Vector{{1.0, 1.0}}, g, 0.0, 0.5);
  EXPECT_LT((step.next - Vector{{1.3, 0.8}}).norm(), 1e-7);
  EXPECT_FALSE(step.fell_back);
}

TEST(QuasiNewton, ClippedStepOutsideBall) {
  const Vector g{{3.0, 4.0}};
  const double alpha = 0.25;
  const auto step = qnda_update(-Matrix::Identity(2, 2), Bundle(5), Vector::Zero(2), g, 0.0, alpha);
  EXPECT_LT((step.next - std::sqrt(alpha) * g / g.norm()).norm(), 1e-7);
}

TEST(QuasiNewton, OwnCutNeverBinds) {
  // With only the current point in the bundle its cut lies above the model.
  Bundle b(5);
  const Vector lt{{0.5, -0.5}};
  const Vector g{{0.2, 0.1}};
  b.push({lt, g, 1.0, 1});
  const auto step = qnda_update(-Matrix::Identity(2, 2), b, lt, g, 1.0, 0.5);
  EXPECT_LT((step.next - (lt + g)).norm(), 1e-7);
}

TEST(QuasiNewton, MatchesGridOracle) {
  Engine engine(51);
  for (int trial = 0; trial < 8; ++trial) {
    const auto d = ToyDual::random(engine, 2, 4);
    const auto b = toy_bundle(d, engine, 2, 5);
    const Vector lt = testing::random_vector(engine, 2, -1, 1);
    const auto [dt, gt] = d(lt);
    const Matrix m = Matrix::NullaryExpr(2, 2, [&]() { return uniform(engine, -1, 1); });
    const Matrix hess = -(m.transpose() * m + 0.2 * Matrix::Identity(2, 2));
    const double alpha = uniform(engine, 0.01, 0.2);
    const auto step = qnda_update(hess, b, lt, gt, dt, alpha);
    EXPECT_LE((step.next - lt).squaredNorm(), alpha + 1e-8);
    // Oracle in λ: min(d_t + g_tᵀδ + ½δᵀBδ, d_l + g_lᵀ(λ - λ_l)) over the ball.
    TrustRegionProblem p;
    p.center = lt;
    p.alpha = alpha;
    p.quadratic = QuadraticPiece{hess, gt - hess * lt, dt - gt.dot(lt) + 0.5 * lt.dot(hess * lt)};
    for (const auto& e : b.entries()) p.cuts.push_back({e.subgradient, e.value - e.subgradient.dot(e.point)});
    const auto grid = testing::trust_region_grid_max(p);
    EXPECT_NEAR(p.model_value(step.next), grid.value, 1e-5) << trial;
  }
}

TEST(QuasiNewton, SolverFailureWithoutBundleIsReported) {
  TrustRegionOptions opts;
  opts.max_iterations = 1;
  EXPECT_THROW(qnda_update(-Matrix::Identity(2, 2), Bundle(5), Vector::Zero(2), Vector{{3.0, 4.0}}, 0.0,
                           0.25, opts),
               MasterSolverError);
}

TEST(Algorithms, NamesRoundTrip) {
  for (auto a : {Algorithm::kSubgradient, Algorithm::kBundleTrust, Algorithm::kQuasiNewton}) {
    EXPECT_EQ(parse_algorithm(algorithm_name(a)), a);
  }
  EXPECT_EQ(parse_algorithm("qnda"), Algorithm::kQuasiNewton);
  EXPECT_EQ(parse_algorithm("Btm"), Algorithm::kBundleTrust);
  EXPECT_THROW(parse_algorithm("newton"), std::invalid_argument);
}

TEST(DualStateUpdate, SubgradientFollowsStepRule) {
  MasterConfig cfg;
  cfg.algorithm = Algorithm::kSubgradient;
  DualState st(Vector::Zero(2), cfg);
  st.update(1, 0.0, Vector{{1.0, 0.0}});
  EXPECT_EQ(st.lambda(), (Vector{{0.5, 0.0}}));
  st.update(4, 0.0, Vector{{0.0, 2.0}});
  EXPECT_EQ(st.lambda(), (Vector{{0.5, 0.5}}));
  EXPECT_EQ(st.bundle().size(), 2u);
}

TEST(DualStateUpdate, BundleTrustFirstStepIsClippedGradient) {
  MasterConfig cfg;
  cfg.algorithm = Algorithm::kBundleTrust;
  DualState st(Vector::Zero(2), cfg);
  const auto diag = st.update(1, 0.0, Vector{{3.0, 4.0}});
  EXPECT_LT((st.lambda() - std::sqrt(0.5) * Vector{{0.6, 0.8}}).norm(), 1e-7);
  EXPECT_NEAR(diag.step_norm, std::sqrt(0.5), 1e-7);
  EXPECT_LE(diag.master_kkt_residual, 1e-8);
}

TEST(DualStateUpdate, QuasiNewtonUpdatesHessianFromSecondIterate) {
  MasterConfig cfg;
  DualState st(Vector::Zero(2), cfg);
  EXPECT_EQ(st.hessian(), -Matrix::Identity(2, 2));
  st.update(1, 0.0, Vector{{0.2, 0.1}});
  EXPECT_LT((st.lambda() - Vector{{0.2, 0.1}}).norm(), 1e-7);
  EXPECT_EQ(st.hessian(), -Matrix::Identity(2, 2));
  // s = (0.2, 0.1), y = (-0.3, -0.1): yᵀs < 0, so the update is accepted.
  const auto diag = st.update(2, 0.05, Vector{{-0.1, 0.0}});
  EXPECT_FALSE(diag.bfgs_skipped);
  EXPECT_NE(st.hessian(), -Matrix::Identity(2, 2));
}

TEST(DualStateUpdate, RejectsBadConfiguration) {
  MasterConfig cfg;
  cfg.alpha0 = 0.0;
  EXPECT_THROW(DualState(Vector::Zero(2), cfg), std::invalid_argument);
  cfg.alpha0 = 0.5;
  cfg.initial_hessian_scale = 1.0;
  EXPECT_THROW(DualState(Vector::Zero(2), cfg), std::invalid_argument);
}

}  // namespace
}  // namespace fedkm
