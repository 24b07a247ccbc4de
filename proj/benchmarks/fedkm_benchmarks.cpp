#include <benchmark/benchmark.h>

#include "fedkm/bench.hpp"
#include "fedkm/coordinator.hpp"
#include "fedkm/master.hpp"
#include "fedkm/rng.hpp"
#include "fedkm/subsolver.hpp"
#include "fedkm/trust_region.hpp"

namespace {

using namespace fedkm;

Vector random_vector(Engine& engine, int n, double lo, double hi) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform(engine, lo, hi);
  return v;
}

ProblemInstance bench_instance(int num_nodes, int num_clusters, int points_per_cluster) {
  BenchmarkSpec spec;
  spec.num_nodes = num_nodes;
  spec.num_clusters = num_clusters;
  spec.points_per_cluster = points_per_cluster;
  spec.seed = 11;
  return generate_instance(spec).instance;
}

// Exact Lagrangian subproblem with random coefficients; arg = points per cluster.
void BM_SubproblemBranchAndBound(benchmark::State& state) {
  const auto inst = bench_instance(2, 3, static_cast<int>(state.range(0)));
  Engine engine(3);
  std::vector<Vector> coefficients;
  for (int i = 0; i < 16; ++i) coefficients.push_back(random_vector(engine, 6, -0.5, 0.5));
  std::size_t i = 0;
  for (auto _ : state) {
    LagrangianSubproblem p{inst.nodes[0], inst.num_clusters, inst.box, coefficients[i++ % coefficients.size()], {}};
    benchmark::DoNotOptimize(solve_subproblem(p).lagrangian_value);
  }
}
BENCHMARK(BM_SubproblemBranchAndBound)->Arg(2)->Arg(3)->Arg(4)->Unit(benchmark::kMillisecond);

// Warm NodeSolver with cached suffix bounds.
void BM_NodeSolverWarm(benchmark::State& state) {
  const auto inst = bench_instance(2, 3, static_cast<int>(state.range(0)));
  NodeSolver solver(inst.nodes[0], inst.num_clusters, inst.box);
  Engine engine(4);
  solver.solve(Vector::Zero(6));
  for (auto _ : state) {
    benchmark::DoNotOptimize(solver.solve(random_vector(engine, 6, -0.5, 0.5)).lagrangian_value);
  }
}
BENCHMARK(BM_NodeSolverWarm)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

// Trust-region master with a concave quadratic and `arg` cuts in 24 dimensions.
void BM_TrustRegionQp(benchmark::State& state) {
  const int n = 24;
  Engine engine(5);
  TrustRegionProblem p;
  p.center = Vector::Zero(n);
  p.alpha = 0.25;
  const Matrix m = Matrix::NullaryExpr(n, n, [&]() { return uniform(engine, -1, 1); });
  p.quadratic = QuadraticPiece{-(m.transpose() * m / n + 0.1 * Matrix::Identity(n, n)),
                               random_vector(engine, n, -1, 1), 0.0};
  for (int l = 0; l < state.range(0); ++l) p.cuts.push_back({random_vector(engine, n, -1, 1), uniform(engine, 0, 1)});
  for (auto _ : state) benchmark::DoNotOptimize(solve_trust_region_qp(p).model_value);
}
BENCHMARK(BM_TrustRegionQp)->Arg(5)->Arg(20)->Arg(50)->Unit(benchmark::kMicrosecond);

void BM_BfgsUpdate(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Engine engine(6);
  const Matrix b = -Matrix::Identity(n, n);
  const Vector s = random_vector(engine, n, -1, 1);
  const Vector y = -2.0 * s + 0.1 * random_vector(engine, n, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(bfgs_update(b, s, y).hessian.data());
}
BENCHMARK(BM_BfgsUpdate)->Arg(12)->Arg(48)->Arg(96);

// Full coordinator runs of a fixed length on a small instance.
void BM_CoordinatorRun(benchmark::State& state) {
  const auto inst = bench_instance(3, 3, 3);
  RunConfig cfg;
  cfg.master.algorithm = static_cast<Algorithm>(state.range(0));
  cfg.max_iterations = 20;
  cfg.residual_tolerance = 1e-12;
  cfg.gap_tolerance_percent = 1e-12;
  for (auto _ : state) {
    auto backend = make_in_process_backend(inst);
    benchmark::DoNotOptimize(run(inst, cfg, *backend).final_dual);
  }
  state.SetLabel(algorithm_name(cfg.master.algorithm));
}
BENCHMARK(BM_CoordinatorRun)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
