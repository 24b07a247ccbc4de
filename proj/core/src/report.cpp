#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "fedkm/report.hpp"

namespace fedkm {

using nlohmann::json;

std::string RunSummary::group() const {
  return fmt::format("{}N{}D{}K", num_nodes, dimension, num_clusters);
}

RunSummary summarize_run(const std::string& instance_name, int num_nodes, int dimension,
                         int num_clusters, Algorithm algorithm, const RunResult& result) {
  if (result.records.empty()) throw std::invalid_argument("summarize_run: run has no records");
  RunSummary s;
  s.instance = instance_name;
  s.algorithm = algorithm_name(algorithm);
  s.num_nodes = num_nodes;
  s.dimension = dimension;
  s.num_clusters = num_clusters;
  s.iterations = static_cast<int>(result.records.size());
  s.final_rel_dg_percent = result.records.back().rel_dg_percent;
  s.modeled_time_s = result.modeled_time_s;
  s.wall_time_s = result.wall_time_s;
  s.termination = termination_name(result.termination);
  s.best_primal = result.best_primal;
  s.final_dual = result.final_dual;
  return s;
}

std::string run_summary_to_json(const RunSummary& s) {
  const json doc = {{"kind", "run_summary"},
                    {"instance", s.instance},
                    {"algorithm", s.algorithm},
                    {"N_s", s.num_nodes},
                    {"n_y", s.dimension},
                    {"K", s.num_clusters},
                    {"iterations", s.iterations},
                    {"final_rel_dg_percent", s.final_rel_dg_percent},
                    {"modeled_time_s", s.modeled_time_s},
                    {"wall_time_s", s.wall_time_s},
                    {"termination", s.termination},
                    {"best_primal", s.best_primal},
                    {"final_dual", s.final_dual}};
  return doc.dump(1) + "\n";
}

RunSummary run_summary_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (!doc.is_object() || doc.value("kind", "") != "run_summary") {
      throw std::invalid_argument("not a run summary");
    }
    RunSummary s;
    s.instance = doc.at("instance").get<std::string>();
    s.algorithm = doc.at("algorithm").get<std::string>();
    s.num_nodes = doc.at("N_s").get<int>();
    s.dimension = doc.at("n_y").get<int>();
    s.num_clusters = doc.at("K").get<int>();
    s.iterations = doc.at("iterations").get<int>();
    s.final_rel_dg_percent = doc.at("final_rel_dg_percent").get<double>();
    s.modeled_time_s = doc.at("modeled_time_s").get<double>();
    s.wall_time_s = doc.value("wall_time_s", 0.0);
    s.termination = doc.at("termination").get<std::string>();
    s.best_primal = doc.value("best_primal", 0.0);
    s.final_dual = doc.value("final_dual", 0.0);
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed run summary: ") + e.what());
  }
}

std::vector<RunSummary> load_run_summaries(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ReportError("runs directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunSummary> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      out.push_back(run_summary_from_json(buf.str()));
    } catch (const std::invalid_argument&) {
      // Other JSON files (instances, manifests) may share the directory.
    }
  }
  if (out.empty()) throw ReportError("no run summaries found in " + dir.string());
  return out;
}

namespace {

int algorithm_rank(const std::string& name) {
  if (name == "SG") return 0;
  if (name == "BTM") return 1;
  if (name == "QNDA") return 2;
  return 3;
}

struct Accumulator {
  int runs = 0;
  double iterations = 0.0;
  double gap = 0.0;
  double time = 0.0;
  void add(const RunSummary& s) {
    ++runs;
    iterations += s.iterations;
    gap += s.final_rel_dg_percent;
    time += s.modeled_time_s;
  }
  ReportRow row(std::string group, std::string algorithm) const {
    const double n = runs;
    return {std::move(group), std::move(algorithm), runs, iterations / n, gap / n, time / n};
  }
};

}  // namespace

std::vector<ReportRow> aggregate_runs(std::span<const RunSummary> runs) {
  using GroupKey = std::tuple<int, int, int, int, std::string>;
  std::map<GroupKey, Accumulator> groups;
  std::map<std::pair<int, std::string>, Accumulator> overall;
  for (const auto& s : runs) {
    groups[{s.num_nodes, s.dimension, s.num_clusters, algorithm_rank(s.algorithm), s.algorithm}].add(s);
    overall[{algorithm_rank(s.algorithm), s.algorithm}].add(s);
  }
  std::vector<ReportRow> rows;
  for (const auto& [key, acc] : groups) {
    const auto& [n, d, k, rank, algo] = key;
    rows.push_back(acc.row(fmt::format("{}N{}D{}K", n, d, k), algo));
  }
  for (const auto& [key, acc] : overall) rows.push_back(acc.row("all", key.second));
  return rows;
}

void write_report_csv(std::ostream& out, std::span<const ReportRow> rows) {
  out << "group,algorithm,runs,mean_iterations,mean_rel_dg_percent,mean_modeled_time_s\n";
  for (const auto& r : rows) {
    fmt::print(out, "{},{},{},{},{},{}\n", r.group, r.algorithm, r.runs, r.mean_iterations,
               r.mean_rel_dg_percent, r.mean_modeled_time_s);
  }
}

std::string format_report_table(std::span<const ReportRow> rows) {
  std::string out = fmt::format("{:<10} {:<6} {:>5} {:>10} {:>12} {:>14}\n", "group", "algo", "runs",
                                "mean t", "mean DG [%]", "mean T_comp [s]");
  for (const auto& r : rows) {
    out += fmt::format("{:<10} {:<6} {:>5} {:>10.2f} {:>12.4f} {:>14.2f}\n", r.group, r.algorithm, r.runs,
                       r.mean_iterations, r.mean_rel_dg_percent, r.mean_modeled_time_s);
  }
  return out;
}

}  // namespace fedkm
