#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "fedkm/coordinator.hpp"

namespace fedkm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool blocks_equal(const Vector& c, int num_clusters, int dimension) {
  for (int k = 1; k < num_clusters; ++k) {
    if (c.segment(k * dimension, dimension) != c.segment(0, dimension)) return false;
  }
  return true;
}

class InProcessBackend final : public NodeBackend {
 public:
  InProcessBackend(const ProblemInstance& instance, bool parallel)
      : instance_(instance), parallel_(parallel) {}

  int num_nodes() const override { return instance_.num_nodes(); }

  std::vector<NodeHello> hello() override {
    std::vector<NodeHello> out;
    for (const auto& node : instance_.nodes) {
      out.push_back({node.node_id, instance_.num_clusters, instance_.dimension,
                     BoundingBox::around(node.observations)});
    }
    return out;
  }

  void configure(const NodeSetup& setup) override {
    solvers_.clear();
    for (const auto& node : instance_.nodes) {
      solvers_.emplace_back(node, instance_.num_clusters, setup.box, setup.subsolver);
    }
  }

  std::vector<NodeSolveReply> solve(int, std::span<const NodeSolveRequest> requests) override {
    if (solvers_.empty()) throw std::logic_error("in-process backend used before configure()");
    std::vector<NodeSolveReply> replies(requests.size());
    std::vector<std::exception_ptr> errors(requests.size());
    auto work = [&](std::size_t r) {
      try {
        const auto& req = requests[r];
        const auto start = Clock::now();
        SubproblemSolution sol = solvers_.at(req.node).solve(req.coefficients, req.reference);
        replies[r] = {std::move(sol.centroids), sol.lagrangian_value, seconds_since(start),
                      sol.stats.explored_nodes};
      } catch (...) {
        errors[r] = std::current_exception();
      }
    };
    if (parallel_ && requests.size() > 1) {
      std::vector<std::thread> threads;
      for (std::size_t r = 0; r < requests.size(); ++r) threads.emplace_back(work, r);
      for (auto& th : threads) th.join();
    } else {
      for (std::size_t r = 0; r < requests.size(); ++r) work(r);
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    return replies;
  }

  std::vector<double> objectives(int, const CentroidSet& average) override {
    std::vector<double> z;
    for (const auto& node : instance_.nodes) z.push_back(node_objective(node.observations, average));
    return z;
  }

  void terminate(const std::string&) override {}

 private:
  const ProblemInstance& instance_;
  bool parallel_;
  std::vector<NodeSolver> solvers_;
};

}  // namespace

std::unique_ptr<NodeBackend> make_in_process_backend(const ProblemInstance& instance,
                                                     bool parallel_nodes) {
  instance.validate();
  return std::make_unique<InProcessBackend>(instance, parallel_nodes);
}

void RunConfig::validate() const {
  if (max_iterations < 1) throw std::invalid_argument("t_max must be >= 1");
  if (!(residual_tolerance > 0.0)) throw std::invalid_argument("residual tolerance must be positive");
  if (!(gap_tolerance_percent > 0.0)) throw std::invalid_argument("gap tolerance must be positive");
  if (!(comm_time_s >= 0.0)) throw std::invalid_argument("T_comm must be non-negative");
  if (!(master.alpha0 > 0.0)) throw std::invalid_argument("alpha0 must be positive");
  if (master.bundle_capacity < 1) throw std::invalid_argument("tau must be >= 1");
  if (!(master.initial_hessian_scale < 0.0)) {
    throw std::invalid_argument("B0 scale must be negative");
  }
  if (!(subsolver.rel_tol >= 0.0)) throw std::invalid_argument("subsolver rel_tol must be >= 0");
  if (subsolver.max_nodes < 1) throw std::invalid_argument("subsolver max_nodes must be >= 1");
}

const char* termination_name(Termination reason) {
  switch (reason) {
    case Termination::kResidual:
      return "residual";
    case Termination::kDualityGap:
      return "duality_gap";
    case Termination::kMaxIterations:
      return "max_iter";
  }
  return "?";
}

double relative_duality_gap(double dual_value, double primal_value) {
  if (!(primal_value > 0.0)) {
    throw std::invalid_argument("relative_duality_gap: primal value must be positive");
  }
  return 100.0 * (1.0 - dual_value / primal_value);
}

double modeled_computation_time(std::span<const IterationRecord> records, double comm_time_s) {
  if (records.empty()) throw std::invalid_argument("modeled_computation_time: no records");
  double total = static_cast<double>(records.size()) * comm_time_s;
  for (const auto& r : records) total += r.t_update_s + r.t_sub_max_s;
  return total;
}

std::uint64_t hash_dual(const DualVector& lambda) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    unsigned char bytes[sizeof(double)];
    const double v = lambda[i];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

RunResult run(const RunConfig& config, NodeBackend& backend, const IterationCallback& on_iteration) {
  config.validate();
  const auto run_start = Clock::now();
  RunResult result;
  auto abort = [&](FailureKind kind, const std::string& what) -> RunAborted {
    try {
      backend.terminate("aborted");
    } catch (const std::exception&) {
      // Best effort: the nodes may already be gone.
    }
    if (!result.records.empty()) {
      result.modeled_time_s = modeled_computation_time(result.records, config.comm_time_s);
    }
    result.wall_time_s = seconds_since(run_start);
    return RunAborted(kind, what, result);
  };

  std::vector<NodeHello> hellos;
  try {
    hellos = backend.hello();
  } catch (const BackendError& e) {
    throw abort(e.kind(), e.what());
  }
  const int num_nodes = backend.num_nodes();
  if (num_nodes < 2 || static_cast<int>(hellos.size()) != num_nodes) {
    throw std::invalid_argument("run: need at least 2 nodes");
  }
  const int num_clusters = hellos.front().num_clusters;
  const int dimension = hellos.front().dimension;
  BoundingBox box = hellos.front().local_bounds;
  for (const auto& h : hellos) {
    if (h.num_clusters != num_clusters || h.dimension != dimension) {
      throw std::invalid_argument("run: nodes disagree on K or n_y");
    }
    box = BoundingBox::envelope(box, h.local_bounds);
  }
  const ConsensusTopology topology(num_nodes, num_clusters, dimension);

  DualVector lambda0 = config.initial_lambda.value_or(Vector::Zero(topology.dual_dimension()));
  if (lambda0.size() != topology.dual_dimension()) {
    throw std::invalid_argument(fmt::format("run: lambda0 has length {}, expected {}",
                                            lambda0.size(), topology.dual_dimension()));
  }
  if (!lambda0.allFinite()) throw std::invalid_argument("run: lambda0 is not finite");
  DualState state(std::move(lambda0), config.master);

  try {
    backend.configure({config.run_id, box, config.subsolver});
  } catch (const BackendError& e) {
    throw abort(e.kind(), e.what());
  }

  result.best_primal = std::numeric_limits<double>::infinity();
  result.final_dual = -std::numeric_limits<double>::infinity();

  for (int t = 1; t <= config.max_iterations; ++t) {
    IterationRecord rec;
    rec.t = t;
    rec.lambda = state.lambda();
    rec.lambda_hash = hash_dual(rec.lambda);

    std::vector<Vector> coefficients;
    bool symmetric = true;
    for (int i = 0; i < num_nodes; ++i) {
      coefficients.push_back(apply_coupling_adjoint(topology, i, rec.lambda));
      symmetric = symmetric && blocks_equal(coefficients.back(), num_clusters, dimension);
    }

    std::vector<NodeSolveReply> replies;
    try {
      if (t == 1 && symmetric) {
        // Label-invariant objectives: fix labels against node 0's solution.
        const NodeSolveRequest first{0, coefficients[0], std::nullopt};
        replies = backend.solve(t, std::span(&first, 1));
        std::vector<NodeSolveRequest> rest;
        for (int i = 1; i < num_nodes; ++i) rest.push_back({i, coefficients[i], replies[0].centroids});
        auto more = backend.solve(t, rest);
        for (auto& r : more) replies.push_back(std::move(r));
      } else {
        std::vector<NodeSolveRequest> requests;
        for (int i = 0; i < num_nodes; ++i) requests.push_back({i, coefficients[i], std::nullopt});
        replies = backend.solve(t, requests);
      }
    } catch (const NodeLimitExceeded& e) {
      throw abort(FailureKind::kSolver,
                  fmt::format("iteration {}: subproblem not solved to optimality (lower bound {}, "
                              "incumbent {})",
                              t, e.lower_bound(), e.incumbent().lagrangian_value));
    } catch (const BackendError& e) {
      throw abort(e.kind(), fmt::format("iteration {}: {}", t, e.what()));
    }

    rec.dual_value = 0.0;
    for (const auto& r : replies) {
      rec.node_lagrangians.push_back(r.lagrangian_value);
      rec.dual_value += r.lagrangian_value;
      rec.node_centroids.push_back(r.centroids);
      rec.t_sub_max_s = std::max(rec.t_sub_max_s, r.solve_time_s);
    }
    const PrimalResidual w = primal_residual(topology, rec.node_centroids);
    rec.subgradient = w.residual;
    rec.subgradient_norm = w.norm;
    rec.residual_norm = w.norm;

    Vector avg = rec.node_centroids.front().stacked();
    for (int i = 1; i < num_nodes; ++i) {
      const CentroidSet& m = rec.node_centroids[i];
      if (config.align_average) {
        avg += permute_labels(m, closest_label_permutation(m, rec.node_centroids.front())).stacked();
      } else {
        avg += m.stacked();
      }
    }
    avg /= static_cast<double>(num_nodes);
    rec.average = CentroidSet(num_clusters, dimension, std::move(avg));

    try {
      rec.node_objectives = backend.objectives(t, rec.average);
    } catch (const BackendError& e) {
      throw abort(e.kind(), fmt::format("iteration {}: {}", t, e.what()));
    }
    rec.primal_value = 0.0;
    for (double z : rec.node_objectives) rec.primal_value += z;
    if (rec.primal_value > 0.0) {
      rec.rel_dg_percent = relative_duality_gap(rec.dual_value, rec.primal_value);
    } else {
      rec.rel_dg_percent = rec.dual_value >= 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }

    if (rec.primal_value < result.best_primal) {
      result.best_primal = rec.primal_value;
      result.best_centroids = rec.average;
    }
    result.final_dual = std::max(result.final_dual, rec.dual_value);

    std::optional<Termination> stop;
    if (rec.residual_norm < config.residual_tolerance) {
      stop = Termination::kResidual;
    } else if (rec.rel_dg_percent <= config.gap_tolerance_percent) {
      stop = Termination::kDualityGap;
    } else if (t == config.max_iterations) {
      stop = Termination::kMaxIterations;
    }

    if (!stop) {
      const auto start = Clock::now();
      try {
        rec.update = state.update(t, rec.dual_value, rec.subgradient);
      } catch (const MasterSolverError& e) {
        rec.t_update_s = seconds_since(start);
        result.records.push_back(std::move(rec));
        throw abort(FailureKind::kSolver, fmt::format("iteration {}: {}", t, e.what()));
      }
      rec.t_update_s = seconds_since(start);
    }
    rec.t_model_increment_s = config.comm_time_s + rec.t_update_s + rec.t_sub_max_s;
    result.records.push_back(std::move(rec));
    if (on_iteration) on_iteration(result.records.back());

    if (stop) {
      result.termination = *stop;
      break;
    }
  }

  try {
    backend.terminate(termination_name(result.termination));
  } catch (const BackendError&) {
    // The run itself is complete; a node that already left is harmless.
  }
  result.modeled_time_s = modeled_computation_time(result.records, config.comm_time_s);
  result.wall_time_s = seconds_since(run_start);
  return result;
}

RunResult run(const ProblemInstance& instance, const RunConfig& config, NodeBackend& backend,
              const IterationCallback& on_iteration) {
  instance.validate();
  if (backend.num_nodes() != instance.num_nodes()) {
    throw std::invalid_argument("run: backend node count differs from the instance");
  }
  return run(config, backend, on_iteration);
}

void write_iteration_csv_header(std::ostream& out) { out << kIterationCsvHeader << '\n'; }

void write_iteration_csv_row(std::ostream& out, const IterationRecord& r, double model_cum_s) {
  fmt::print(out, "{},{},{},{},{},{},{},{}\n", r.t, r.dual_value, r.primal_value, r.rel_dg_percent,
             r.residual_norm, r.t_update_s, r.t_sub_max_s, model_cum_s);
}

void write_iteration_csv(std::ostream& out, std::span<const IterationRecord> records) {
  write_iteration_csv_header(out);
  double cum = 0.0;
  for (const auto& r : records) {
    cum += r.t_model_increment_s;
    write_iteration_csv_row(out, r, cum);
  }
}

CentralResult central_solve(const ProblemInstance& instance, double time_budget_s,
                            const SubsolverOptions& options) {
  instance.validate();
  NodeDataset merged;
  merged.node_id = 0;
  for (const auto& node : instance.nodes) {
    merged.observations.insert(merged.observations.end(), node.observations.begin(),
                               node.observations.end());
  }
  NodeSolver solver(std::move(merged), instance.num_clusters, instance.box, options);

  CentralResult out;
  auto gap_of = [](double inc, double lb) {
    if (!std::isfinite(inc)) return std::numeric_limits<double>::infinity();
    if (inc <= 0.0) return 0.0;
    return std::max(0.0, 100.0 * (inc - lb) / inc);
  };
  // B&B progress is monotone per search, but the suffix stages report no
  // incumbent; keep the trace monotone across stages.
  double best_inc = std::numeric_limits<double>::infinity();
  double best_lb = -std::numeric_limits<double>::infinity();
  auto record = [&](double elapsed, double inc, double lb) {
    best_inc = std::min(best_inc, inc);
    best_lb = std::max(best_lb, std::min(lb, best_inc));
    out.trace.push_back({elapsed, best_inc, best_lb, gap_of(best_inc, best_lb)});
  };

  const auto start = Clock::now();
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(instance.num_clusters) * instance.dimension);
  const BoundedSolve r = solver.solve_bounded(
      zero, options.max_nodes, time_budget_s,
      [&](const BnbProgress& p) { record(p.elapsed_s, p.incumbent, p.lower_bound); });
  record(seconds_since(start), r.best.lagrangian_value, r.lower_bound);

  out.incumbent = best_inc;
  out.lower_bound = r.proven ? best_inc : best_lb;
  out.proven = r.proven;
  out.centroids = r.best.centroids;
  if (r.proven) {
    // Bounds summed in another order may exceed the optimum by an ulp.
    for (auto& p : out.trace) {
      p.lower_bound = std::min(p.lower_bound, best_inc);
      p.rel_gap_percent = gap_of(p.incumbent, p.lower_bound);
    }
    out.trace.back().lower_bound = out.lower_bound;
    out.trace.back().rel_gap_percent = 0.0;
  }
  return out;
}

void write_central_csv(std::ostream& out, const CentralResult& result) {
  out << "wall_time_s,incumbent,lower_bound,rel_gap_percent\n";
  for (const auto& p : result.trace) {
    fmt::print(out, "{},{},{},{}\n", p.wall_time_s, p.incumbent, p.lower_bound, p.rel_gap_percent);
  }
}

}  // namespace fedkm
