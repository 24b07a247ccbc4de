// fedkmeans: instance generation, distributed and central runs, node
// serving and report aggregation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "fedkm/bench.hpp"
#include "fedkm/coordinator.hpp"
#include "fedkm/instance_io.hpp"
#include "fedkm/net.hpp"
#include "fedkm/report.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitArgument = 2;
constexpr int kExitSolver = 3;
constexpr int kExitNetwork = 4;

struct RunFlags {
  std::string algorithm = "qnda";
  double lambda0 = 0.0;
  double alpha0 = 0.5;
  int t_max = 150;
  double eps_p = 1e-2;
  double eps_dg = 0.25;
  int tau = 50;
  double b0_scale = -1.0;
  double t_comm_ms = 800.0;
  double rel_tol = 1e-9;
  std::int64_t max_nodes = 5'000'000;
  std::uint64_t seed = 0;
  std::string csv;
  std::string summary;
  std::string run_id = "run";
  bool literal_average = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--algorithm", f.algorithm, "Dual update: sg, btm or qnda")
      ->check(CLI::IsMember({"sg", "btm", "qnda", "SG", "BTM", "QNDA"}))
      ->envname("FEDKMEANS_ALGORITHM")
      ->capture_default_str();
  cmd->add_option("--lambda0", f.lambda0, "Initial value of every dual variable (lambda0 = 0)")
      ->envname("FEDKMEANS_LAMBDA0")
      ->capture_default_str();
  cmd->add_option("--alpha0", f.alpha0, "Initial step size / trust-region parameter alpha0")
      ->envname("FEDKMEANS_ALPHA0")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--t-max", f.t_max, "Maximum number of iterations t_max")
      ->envname("FEDKMEANS_T_MAX")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--eps-p", f.eps_p, "Primal residual threshold eps_p")
      ->envname("FEDKMEANS_EPS_P")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--eps-dg", f.eps_dg, "Relative duality gap threshold eps_DG in percent")
      ->envname("FEDKMEANS_EPS_DG")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--tau", f.tau, "Allowed age of bundle entries tau")
      ->envname("FEDKMEANS_TAU")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--b0-scale", f.b0_scale, "Initial Hessian approximation B0 = scale * I (B0 = -I)")
      ->envname("FEDKMEANS_B0_SCALE")
      ->capture_default_str();
  cmd->add_option("--t-comm-ms", f.t_comm_ms, "Modeled communication time per iteration T_comm [ms]")
      ->envname("FEDKMEANS_T_COMM_MS")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--rel-tol", f.rel_tol, "Subproblem branch-and-bound relative optimality tolerance")
      ->envname("FEDKMEANS_REL_TOL")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--max-nodes", f.max_nodes, "Subproblem branch-and-bound node limit")
      ->envname("FEDKMEANS_MAX_NODES")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "Seed of the subproblem incumbent heuristics")
      ->envname("FEDKMEANS_SEED")
      ->capture_default_str();
  cmd->add_option("--csv", f.csv, "Per-iteration CSV output")->envname("FEDKMEANS_CSV")->required();
  cmd->add_option("--summary", f.summary, "JSON run summary (default: CSV path with .json)")
      ->envname("FEDKMEANS_SUMMARY");
  cmd->add_flag("--literal-average", f.literal_average,
               "Average node centroids without matching their labels to node 0 first")
      ->envname("FEDKMEANS_LITERAL_AVERAGE");
  cmd->add_option("--run-id", f.run_id, "Run identifier sent with every message")
      ->envname("FEDKMEANS_RUN_ID")
      ->capture_default_str();
}

fedkm::RunConfig make_config(const RunFlags& f) {
  fedkm::RunConfig c;
  c.master.algorithm = fedkm::parse_algorithm(f.algorithm);
  c.master.alpha0 = f.alpha0;
  c.master.bundle_capacity = f.tau;
  c.master.initial_hessian_scale = f.b0_scale;
  c.max_iterations = f.t_max;
  c.residual_tolerance = f.eps_p;
  c.gap_tolerance_percent = f.eps_dg;
  c.comm_time_s = f.t_comm_ms / 1000.0;
  c.subsolver.rel_tol = f.rel_tol;
  c.subsolver.max_nodes = f.max_nodes;
  c.subsolver.seed = f.seed;
  c.run_id = f.run_id;
  c.align_average = !f.literal_average;
  return c;
}

std::ofstream open_output(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::invalid_argument("cannot open output file " + path);
  return out;
}

int execute_run(const RunFlags& flags, fedkm::NodeBackend& backend, const std::string& instance_name,
                const fedkm::ProblemInstance* instance) {
  fedkm::RunConfig config = make_config(flags);
  std::ofstream csv = open_output(flags.csv);
  fedkm::write_iteration_csv_header(csv);
  csv.flush();
  double cum = 0.0;
  auto on_iter = [&](const fedkm::IterationRecord& r) {
    cum += r.t_model_increment_s;
    fedkm::write_iteration_csv_row(csv, r, cum);
    csv.flush();
    std::cerr << fmt::format("t={:4d} dual={:.10g} primal={:.10g} dg={:.4f}% residual={:.3e}\n", r.t,
                             r.dual_value, r.primal_value, r.rel_dg_percent, r.residual_norm);
  };

  fedkm::RunResult result;
  if (flags.lambda0 != 0.0) {
    // The dual dimension is only known once the nodes announce K and n_y.
    const auto hellos = backend.hello();
    const int n = backend.num_nodes();
    const int dim = hellos.front().num_clusters * hellos.front().dimension * (n - 1);
    config.initial_lambda = fedkm::Vector::Constant(dim, flags.lambda0);
  }
  result = instance ? fedkm::run(*instance, config, backend, on_iter) : fedkm::run(config, backend, on_iter);

  const auto& last = result.records.back();
  const int k = last.average.num_clusters();
  const int n_y = last.average.dimension();
  const auto summary = fedkm::summarize_run(instance_name, static_cast<int>(last.node_centroids.size()), n_y, k,
                                            config.master.algorithm, result);
  const std::string summary_path =
      flags.summary.empty() ? fs::path(flags.csv).replace_extension(".json").string() : flags.summary;
  open_output(summary_path) << fedkm::run_summary_to_json(summary);
  std::cout << fmt::format(
      "{} {}: {} after {} iterations, best primal {:.10g}, dual {:.10g}, final DG {:.4f}%, modeled time "
      "{:.2f} s\n",
      instance_name, summary.algorithm, summary.termination, summary.iterations, summary.best_primal,
      summary.final_dual, summary.final_rel_dg_percent, summary.modeled_time_s);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated K-means by dual decomposition"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate benchmark instances");
  bool grid = false;
  fedkm::BenchmarkSpec spec;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_flag("--grid", grid, "Generate the full 90-instance grid and manifest.csv");
  gen->add_option("--nodes", spec.num_nodes, "N_s for a single instance")->capture_default_str();
  gen->add_option("--dim", spec.dimension, "n_y for a single instance")->capture_default_str();
  gen->add_option("--clusters", spec.num_clusters, "K for a single instance")->capture_default_str();
  gen->add_option("--replicate", spec.replicate, "Replicate index r")->capture_default_str();
  gen->add_option("--points-per-cluster", spec.points_per_cluster, "Points per cluster (per node unless --split)")
      ->capture_default_str();
  gen->add_option("--radius", spec.radius, "Sampling radius around each true centroid")->capture_default_str();
  gen->add_flag("--split", spec.split_points, "Draw points per cluster globally and deal them to nodes");
  gen->add_option("--seed", gen_seed, "Base seed")->envname("FEDKMEANS_SEED")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  // run
  auto* run_cmd = app.add_subcommand("run", "Distributed run with in-process nodes");
  RunFlags run_flags;
  std::string run_instance;
  bool parallel_nodes = false;
  run_cmd->add_option("--instance", run_instance, "Instance JSON file")->required()->check(CLI::ExistingFile);
  run_cmd->add_flag("--parallel-nodes", parallel_nodes, "Solve node subproblems concurrently");
  add_run_flags(run_cmd, run_flags);

  // central
  auto* central = app.add_subcommand("central", "Central branch-and-bound baseline on the merged data");
  std::string central_instance;
  std::string central_csv;
  double time_budget = 600.0;
  std::int64_t central_nodes = 5'000'000'000LL;
  central->add_option("--instance", central_instance, "Instance JSON file")->required()->check(CLI::ExistingFile);
  central->add_option("--time-budget", time_budget, "Wall-clock budget [s]")
      ->envname("FEDKMEANS_TIME_BUDGET")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  central->add_option("--max-nodes", central_nodes, "Branch-and-bound node limit")->capture_default_str();
  central->add_option("--csv", central_csv, "Trace CSV output")->required();

  // node
  auto* node = app.add_subcommand("node", "Serve one node of an instance over TCP");
  std::string node_instance;
  int node_id = 0;
  std::string bind = "127.0.0.1:7000";
  double node_timeout = fedkm::default_net_timeout_s();
  node->add_option("--instance", node_instance, "Instance JSON file holding the node's data")
      ->required()
      ->check(CLI::ExistingFile);
  node->add_option("--node-id", node_id, "node_id to serve")->required();
  node->add_option("--bind", bind, "Listen address host:port")->envname("FEDKMEANS_BIND")->capture_default_str();
  node->add_option("--timeout", node_timeout, "Idle timeout per connection [s]")
      ->envname("FEDKMEANS_NET_TIMEOUT_S")
      ->capture_default_str();

  // run-remote
  auto* remote = app.add_subcommand("run-remote", "Distributed run against remote node services");
  RunFlags remote_flags;
  std::vector<std::string> node_addresses;
  double remote_timeout = fedkm::default_net_timeout_s();
  std::string remote_name = "remote";
  remote->add_option("--nodes", node_addresses, "Node addresses host:port, in chain order")
      ->required()
      ->delimiter(',');
  remote->add_option("--timeout", remote_timeout, "Reply timeout [s]")
      ->envname("FEDKMEANS_NET_TIMEOUT_S")
      ->capture_default_str();
  remote->add_option("--name", remote_name, "Instance name recorded in the summary")->capture_default_str();
  add_run_flags(remote, remote_flags);

  // report
  auto* report = app.add_subcommand("report", "Aggregate run summaries per (N_s, n_y, K) group");
  std::string runs_dir;
  std::string report_out;
  report->add_option("--runs", runs_dir, "Directory of run summary JSON files")->required();
  report->add_option("--out", report_out, "Report CSV output (a .txt table is written next to it)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitArgument;
  }

  try {
    if (*gen) {
      if (grid) {
        const auto rows = fedkm::generate_grid(gen_seed, gen_out);
        std::cout << fmt::format("wrote {} instances and manifest.csv to {}\n", rows.size(), gen_out);
      } else {
        spec.seed = fedkm::grid_seed(gen_seed, spec.num_nodes, spec.dimension, spec.num_clusters, spec.replicate);
        const auto g = fedkm::generate_instance(spec);
        fs::create_directories(gen_out);
        const fs::path path = fs::path(gen_out) / (spec.name() + ".json");
        fedkm::write_instance(g.instance, path);
        std::cout << "wrote " << path.string() << "\n";
      }
      return kExitOk;
    }
    if (*run_cmd) {
      const auto instance = fedkm::read_instance(run_instance);
      auto backend = fedkm::make_in_process_backend(instance, parallel_nodes);
      return execute_run(run_flags, *backend, instance.name, &instance);
    }
    if (*central) {
      const auto instance = fedkm::read_instance(central_instance);
      fedkm::SubsolverOptions opts;
      opts.max_nodes = central_nodes;
      const auto result = fedkm::central_solve(instance, time_budget, opts);
      std::ofstream csv = open_output(central_csv);
      fedkm::write_central_csv(csv, result);
      std::cout << fmt::format("{}: incumbent {:.10g}, lower bound {:.10g}, {}\n", instance.name,
                               result.incumbent, result.lower_bound,
                               result.proven ? "proven optimal" : "budget exhausted");
      return kExitOk;
    }
    if (*node) {
      const auto instance = fedkm::read_instance(node_instance);
      const fedkm::NodeDataset* data = nullptr;
      for (const auto& n : instance.nodes) {
        if (n.node_id == node_id) data = &n;
      }
      if (!data) throw std::invalid_argument(fmt::format("instance has no node_id {}", node_id));
      fedkm::ServeOptions opts;
      opts.timeout_s = node_timeout;
      opts.on_listening = [&](std::uint16_t port) {
        std::cerr << fmt::format("node {} listening on port {}\n", node_id, port);
      };
      fedkm::serve_node(*data, instance.num_clusters, fedkm::Endpoint::parse(bind), opts);
      return kExitOk;
    }
    if (*remote) {
      std::vector<fedkm::Endpoint> endpoints;
      for (const auto& a : node_addresses) endpoints.push_back(fedkm::Endpoint::parse(a));
      fedkm::NetOptions opts;
      opts.timeout_s = remote_timeout;
      auto backend = fedkm::make_networked_backend(endpoints, opts);
      return execute_run(remote_flags, *backend, remote_name, nullptr);
    }
    if (*report) {
      const auto runs = fedkm::load_run_summaries(runs_dir);
      const auto rows = fedkm::aggregate_runs(runs);
      const std::string table = fedkm::format_report_table(rows);
      {
        std::ofstream csv = open_output(report_out);
        fedkm::write_report_csv(csv, rows);
      }
      open_output(fs::path(report_out).replace_extension(".txt").string()) << table;
      std::cout << table;
      return kExitOk;
    }
  } catch (const fedkm::RunAborted& e) {
    std::cerr << "run aborted: " << e.what() << "\n";
    return e.kind() == fedkm::FailureKind::kNetwork ? kExitNetwork : kExitSolver;
  } catch (const fedkm::BackendError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == fedkm::FailureKind::kNetwork ? kExitNetwork : kExitSolver;
  } catch (const fedkm::NodeLimitExceeded& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const fedkm::MasterSolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const fedkm::ReportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgument;
  } catch (const fedkm::InstanceFormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgument;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgument;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}
