#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedkm/coordinator.hpp"

namespace fedkm {

/// Per-run JSON written next to the iteration CSV.
struct RunSummary {
  std::string instance;
  std::string algorithm;
  int num_nodes = 0;
  int dimension = 0;
  int num_clusters = 0;
  int iterations = 0;
  double final_rel_dg_percent = 0.0;
  double modeled_time_s = 0.0;
  double wall_time_s = 0.0;
  std::string termination;
  double best_primal = 0.0;
  double final_dual = 0.0;

  /// "{N_s}N{n_y}D{K}K".
  std::string group() const;
};

RunSummary summarize_run(const std::string& instance_name, int num_nodes, int dimension,
                         int num_clusters, Algorithm algorithm, const RunResult& result);

std::string run_summary_to_json(const RunSummary& summary);
/// Throws std::invalid_argument on malformed input.
RunSummary run_summary_from_json(const std::string& text);

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every *.json run summary directly inside `dir`, sorted by file name.
/// Throws ReportError when there are none.
std::vector<RunSummary> load_run_summaries(const std::filesystem::path& dir);

struct ReportRow {
  std::string group;  // "2N2D3K" or "all"
  std::string algorithm;
  int runs = 0;
  double mean_iterations = 0.0;
  double mean_rel_dg_percent = 0.0;
  double mean_modeled_time_s = 0.0;
};

/// Means per (group, algorithm), groups ordered by (N_s, n_y, K) and
/// algorithms SG, BTM, QNDA; followed by one "all" row per algorithm.
std::vector<ReportRow> aggregate_runs(std::span<const RunSummary> runs);

void write_report_csv(std::ostream& out, std::span<const ReportRow> rows);
std::string format_report_table(std::span<const ReportRow> rows);

}  // namespace fedkm
