#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedkm/master.hpp"
#include "fedkm/subsolver.hpp"
#include "fedkm/topology.hpp"
#include "fedkm/types.hpp"

namespace fedkm {

struct RunConfig {
  MasterConfig master;
  /// λ0; zero when unset.
  std::optional<DualVector> initial_lambda;
  int max_iterations = 150;
  double residual_tolerance = 1e-2;
  double gap_tolerance_percent = 0.25;
  double comm_time_s = 0.8;
  SubsolverOptions subsolver;
  /// Match every node's labels to node 0's before averaging. The dual value
  /// and subgradient always use the unpermuted solutions.
  bool align_average = true;
  std::string run_id = "run";

  void validate() const;
};

/// Node metadata announced in the first handshake round.
struct NodeHello {
  int node_id = 0;
  int num_clusters = 0;
  int dimension = 0;
  BoundingBox local_bounds;
};

/// Second handshake round: global box and solver settings.
struct NodeSetup {
  std::string run_id;
  BoundingBox box;
  SubsolverOptions subsolver;
};

struct NodeSolveRequest {
  int node = 0;  // position in the backend's node list
  Vector coefficients;
  std::optional<CentroidSet> reference;
};

struct NodeSolveReply {
  CentroidSet centroids;
  double lagrangian_value = 0.0;
  double solve_time_s = 0.0;
  std::int64_t explored_nodes = 0;
};

enum class FailureKind { kSolver, kNetwork };

class BackendError : public std::runtime_error {
 public:
  BackendError(FailureKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  FailureKind kind() const { return kind_; }

 private:
  FailureKind kind_;
};

/// Solve and objective services of the nodes, in-process or remote.
/// Replies are always returned in request order.
class NodeBackend {
 public:
  virtual ~NodeBackend() = default;
  virtual int num_nodes() const = 0;
  virtual std::vector<NodeHello> hello() = 0;
  virtual void configure(const NodeSetup& setup) = 0;
  virtual std::vector<NodeSolveReply> solve(int t, std::span<const NodeSolveRequest> requests) = 0;
  virtual std::vector<double> objectives(int t, const CentroidSet& average) = 0;
  virtual void terminate(const std::string& reason) = 0;
};

/// Runs every node's solver inside this process, optionally one thread per
/// node within an iteration.
std::unique_ptr<NodeBackend> make_in_process_backend(const ProblemInstance& instance,
                                                     bool parallel_nodes = false);

enum class Termination { kResidual, kDualityGap, kMaxIterations };

const char* termination_name(Termination reason);

struct IterationRecord {
  int t = 0;
  std::uint64_t lambda_hash = 0;
  DualVector lambda;
  double dual_value = 0.0;
  std::vector<double> node_lagrangians;
  Vector subgradient;
  double subgradient_norm = 0.0;
  std::vector<CentroidSet> node_centroids;
  CentroidSet average;
  std::vector<double> node_objectives;
  double primal_value = 0.0;
  double rel_dg_percent = 0.0;
  double residual_norm = 0.0;
  double t_update_s = 0.0;
  double t_sub_max_s = 0.0;
  double t_model_increment_s = 0.0;
  UpdateDiagnostics update;
};

struct RunResult {
  std::vector<IterationRecord> records;
  Termination termination = Termination::kMaxIterations;
  double best_primal = 0.0;
  CentroidSet best_centroids;
  double final_dual = 0.0;
  double modeled_time_s = 0.0;
  double wall_time_s = 0.0;
};

/// Raised when a run cannot continue; carries the records gathered so far.
class RunAborted : public std::runtime_error {
 public:
  RunAborted(FailureKind kind, const std::string& what, RunResult partial)
      : std::runtime_error(what), kind_(kind), partial_(std::move(partial)) {}
  FailureKind kind() const { return kind_; }
  const RunResult& partial() const { return partial_; }

 private:
  FailureKind kind_;
  RunResult partial_;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Dual decomposition loop over the backend's nodes.
RunResult run(const RunConfig& config, NodeBackend& backend, const IterationCallback& on_iteration = {});

/// Same, checking that the backend serves the given instance's shape.
RunResult run(const ProblemInstance& instance, const RunConfig& config, NodeBackend& backend,
              const IterationCallback& on_iteration = {});

/// 100 (1 - d / primal). Throws std::invalid_argument unless primal > 0.
double relative_duality_gap(double dual_value, double primal_value);

/// N T_comm + Σ_t (T_update + max_i T_sub,i).
double modeled_computation_time(std::span<const IterationRecord> records, double comm_time_s);

/// FNV-1a over the IEEE bytes of λ.
std::uint64_t hash_dual(const DualVector& lambda);

inline constexpr const char* kIterationCsvHeader =
    "t,dual,primal,rel_dg_percent,residual_norm,t_update_s,t_sub_max_s,t_model_cum_s";

void write_iteration_csv_header(std::ostream& out);
void write_iteration_csv_row(std::ostream& out, const IterationRecord& record, double model_cum_s);
void write_iteration_csv(std::ostream& out, std::span<const IterationRecord> records);

struct CentralTracePoint {
  double wall_time_s = 0.0;
  double incumbent = 0.0;
  double lower_bound = 0.0;
  double rel_gap_percent = 0.0;
};

struct CentralResult {
  std::vector<CentralTracePoint> trace;
  double incumbent = 0.0;
  double lower_bound = 0.0;
  bool proven = false;
  CentroidSet centroids;
};

/// Branch-and-bound on the union of all node data with c = 0.
CentralResult central_solve(const ProblemInstance& instance, double time_budget_s,
                            const SubsolverOptions& options = {});

void write_central_csv(std::ostream& out, const CentralResult& result);

}  // namespace fedkm
