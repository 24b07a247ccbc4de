#include "fedkm/subsolver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <queue>
#include <string>

#include "fedkm/rng.hpp"

namespace fedkm {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// min over the box of  Σ ||y - m||² + c^T m  from (count, Σy, Σ||y||²).
/// Writes the minimiser to `m` when non-null.
double stats_objective(int count, const double* sum, double sumsq, const double* c,
                       const BoundingBox& box, double* m = nullptr) {
  const Eigen::Index dim = box.lo.size();
  double value = count > 0 ? sumsq : 0.0;
  for (Eigen::Index l = 0; l < dim; ++l) {
    double ml;
    if (count > 0) {
      ml = std::clamp((sum[l] - 0.5 * c[l]) / count, box.lo[l], box.hi[l]);
      value += ml * (count * ml - 2.0 * sum[l]) + c[l] * ml;
    } else {
      ml = c[l] > 0.0 ? box.lo[l] : (c[l] < 0.0 ? box.hi[l] : 0.5 * (box.lo[l] + box.hi[l]));
      value += c[l] * ml;
    }
    if (m != nullptr) m[l] = ml;
  }
  return value;
}

/// Per-cluster sufficient statistics of a (partial) labelling.
struct ClusterStats {
  int num_clusters;
  int dim;
  std::vector<int> count;
  std::vector<double> sum;  // num_clusters * dim
  std::vector<double> sumsq;

  ClusterStats(int k, int d) : num_clusters(k), dim(d), count(k, 0), sum(static_cast<std::size_t>(k) * d, 0.0), sumsq(k, 0.0) {}

  void add(int k, const Observation& y) {
    ++count[k];
    for (int l = 0; l < dim; ++l) sum[static_cast<std::size_t>(k) * dim + l] += y[l];
    sumsq[k] += y.squaredNorm();
  }

  double objective(int k, const Vector& c, const BoundingBox& box) const {
    return stats_objective(count[k], &sum[static_cast<std::size_t>(k) * dim], sumsq[k],
                           c.data() + static_cast<std::ptrdiff_t>(k) * dim, box);
  }

  /// Objective of cluster k if y were added to it.
  double objective_with(int k, const Observation& y, const Vector& c, const BoundingBox& box,
                        double* scratch) const {
    for (int l = 0; l < dim; ++l) scratch[l] = sum[static_cast<std::size_t>(k) * dim + l] + y[l];
    return stats_objective(count[k] + 1, scratch, sumsq[k] + y.squaredNorm(),
                           c.data() + static_cast<std::ptrdiff_t>(k) * dim, box);
  }
};

struct BnbSetup {
  std::span<const Observation> points;  // in branching order
  int num_clusters;
  const BoundingBox* box;
  const Vector* c;
  /// suffix_bound[s] bounds the c = 0 cost of the last s points.
  std::span<const double> suffix_bound;
  bool symmetric;
  double rel_tol;
};

struct BnbLimits {
  std::int64_t max_nodes;
  Clock::time_point deadline;
  Clock::time_point start;
  const std::function<void(const BnbProgress&)>* on_progress = nullptr;
};

struct BnbResult {
  std::vector<int> labels;
  double upper;
  double lower;
  std::int64_t nodes = 0;
  bool proven = false;
};

double labels_value(const BnbSetup& s, std::span<const int> labels) {
  const int dim = s.box->dimension();
  ClusterStats stats(s.num_clusters, dim);
  for (std::size_t p = 0; p < labels.size(); ++p) stats.add(labels[p], s.points[p]);
  double v = 0.0;
  for (int k = 0; k < s.num_clusters; ++k) v += stats.objective(k, *s.c, *s.box);
  return v;
}

double prune_tolerance(double rel_tol, double upper) {
  // Internal pruning is kept an order tighter than the reported contract.
  return 0.1 * rel_tol * std::abs(upper) + 1e-13;
}

struct QueueNode {
  double bound;
  std::int64_t seq;
  int max_label;
  std::vector<std::int8_t> prefix;
};

struct QueueOrder {
  bool operator()(const QueueNode& a, const QueueNode& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.seq > b.seq;
  }
};

/// Best-first branch-and-bound over the cluster of the next observation in
/// branching order. Child bounds are max(parent, partial + suffix bound),
/// which keeps them monotone along every path.
BnbResult run_bnb(const BnbSetup& s, std::vector<int> incumbent, double incumbent_value,
                  const BnbLimits& limits) {
  const int n = static_cast<int>(s.points.size());
  const int k_count = s.num_clusters;
  const int dim = s.box->dimension();

  BnbResult result;
  result.labels = std::move(incumbent);
  result.upper = incumbent_value;

  auto report = [&](double lower) {
    if (limits.on_progress != nullptr && *limits.on_progress) {
      (*limits.on_progress)(BnbProgress{elapsed_since(limits.start), result.upper,
                                        std::min(lower, result.upper), result.nodes});
    }
  };

  std::priority_queue<QueueNode, std::vector<QueueNode>, QueueOrder> queue;
  std::int64_t seq = 0;
  {
    double root = s.suffix_bound[n];
    ClusterStats empty(k_count, dim);
    for (int k = 0; k < k_count; ++k) root += empty.objective(k, *s.c, *s.box);
    queue.push(QueueNode{root, seq++, -1, {}});
  }

  std::vector<double> scratch(dim);
  std::vector<double> cluster_obj(k_count);
  double last_lower = -std::numeric_limits<double>::infinity();

  while (!queue.empty()) {
    const double top_bound = queue.top().bound;
    if (top_bound >= result.upper - prune_tolerance(s.rel_tol, result.upper)) {
      result.lower = std::min(top_bound, result.upper);
      result.proven = true;
      report(result.lower);
      return result;
    }
    if (result.nodes >= limits.max_nodes ||
        ((result.nodes & 255) == 0 && Clock::now() >= limits.deadline)) {
      result.lower = top_bound;
      result.proven = false;
      report(result.lower);
      return result;
    }
    QueueNode node = queue.top();
    queue.pop();
    ++result.nodes;
    if (node.bound > last_lower) last_lower = node.bound;
    if ((result.nodes & 4095) == 0) report(last_lower);

    const int depth = static_cast<int>(node.prefix.size());
    ClusterStats stats(k_count, dim);
    for (int p = 0; p < depth; ++p) stats.add(node.prefix[p], s.points[p]);
    double partial = 0.0;
    for (int k = 0; k < k_count; ++k) {
      cluster_obj[k] = stats.objective(k, *s.c, *s.box);
      partial += cluster_obj[k];
    }

    const Observation& y = s.points[depth];
    const int remaining = n - depth - 1;
    const int k_max = s.symmetric ? std::min(k_count - 1, node.max_label + 1) : k_count - 1;
    for (int k = 0; k <= k_max; ++k) {
      const double child_partial =
          partial - cluster_obj[k] + stats.objective_with(k, y, *s.c, *s.box, scratch.data());
      if (remaining == 0) {
        if (child_partial < result.upper) {
          result.upper = child_partial;
          result.labels.assign(node.prefix.begin(), node.prefix.end());
          result.labels.push_back(k);
          report(last_lower);
        }
        continue;
      }
      const double child_bound = std::max(node.bound, child_partial + s.suffix_bound[remaining]);
      if (child_bound < result.upper - prune_tolerance(s.rel_tol, result.upper)) {
        QueueNode child{child_bound, seq++, std::max(node.max_label, k), node.prefix};
        child.prefix.push_back(static_cast<std::int8_t>(k));
        queue.push(std::move(child));
      }
    }
  }
  result.lower = result.upper;
  result.proven = true;
  report(result.lower);
  return result;
}

std::vector<int> nearest_labels(std::span<const Observation> points, const CentroidSet& m) {
  std::vector<int> labels(points.size(), 0);
  for (std::size_t j = 0; j < points.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < m.num_clusters(); ++k) {
      const double d = (points[j] - m.centroid(k)).squaredNorm();
      if (d < best) {
        best = d;
        labels[j] = k;
      }
    }
  }
  return labels;
}

}  // namespace

double standard_normal(Engine& engine) {
  const double u1 = 1.0 - uniform01(engine);  // (0, 1]
  const double u2 = uniform01(engine);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool LagrangianSubproblem::label_symmetric() const {
  const int dim = dimension();
  for (int k = 1; k < num_clusters; ++k) {
    if (linear_coefficients.segment(k * dim, dim) != linear_coefficients.segment(0, dim)) {
      return false;
    }
  }
  return true;
}

void LagrangianSubproblem::validate() const {
  if (num_clusters < 1) throw std::invalid_argument("subproblem: K must be >= 1");
  if (num_clusters > 127) throw std::invalid_argument("subproblem: K must be <= 127");
  if (data.observations.empty()) throw std::invalid_argument("subproblem: no observations");
  const int dim = box.dimension();
  if (dim < 1 || box.hi.size() != dim) throw std::invalid_argument("subproblem: bad box");
  if (linear_coefficients.size() != static_cast<Eigen::Index>(num_clusters) * dim) {
    throw std::invalid_argument("subproblem: linear coefficients must have length K * n_y");
  }
  for (const auto& y : data.observations) {
    if (y.size() != dim) throw std::invalid_argument("subproblem: observation dimension mismatch");
  }
  if (reference && (reference->num_clusters() != num_clusters || reference->dimension() != dim)) {
    throw std::invalid_argument("subproblem: reference centroid shape mismatch");
  }
}

CentroidFit closed_form_centroid(std::span<const Observation> points, const Vector& c_k,
                                 const BoundingBox& box) {
  const Eigen::Index dim = box.lo.size();
  CentroidFit fit;
  fit.centroid.resize(dim);
  if (points.empty()) {
    for (Eigen::Index l = 0; l < dim; ++l) {
      fit.centroid[l] = c_k[l] > 0.0 ? box.lo[l] : (c_k[l] < 0.0 ? box.hi[l] : box.midpoint()[l]);
    }
    fit.objective = c_k.dot(fit.centroid);
    return fit;
  }
  Vector sum = Vector::Zero(dim);
  for (const auto& y : points) sum += y;
  fit.centroid = box.clip((sum - 0.5 * c_k) / static_cast<double>(points.size()));
  double cost = 0.0;
  for (const auto& y : points) cost += (y - fit.centroid).squaredNorm();
  fit.objective = cost + c_k.dot(fit.centroid);
  return fit;
}

SubproblemSolution evaluate_assignment(const LagrangianSubproblem& problem,
                                       const Assignment& assignment) {
  const auto& obs = problem.data.observations;
  const int k_count = problem.num_clusters;
  const int dim = problem.dimension();
  if (assignment.cluster_of.size() != obs.size()) {
    throw std::invalid_argument("evaluate_assignment: assignment size != observation count");
  }
  std::vector<std::vector<Observation>> members(k_count);
  for (std::size_t j = 0; j < obs.size(); ++j) {
    const int k = assignment.cluster_of[j];
    if (k < 0 || k >= k_count) throw std::invalid_argument("evaluate_assignment: label out of range");
    members[k].push_back(obs[j]);
  }
  SubproblemSolution sol;
  sol.assignment = assignment;
  sol.centroids = CentroidSet(k_count, dim);
  for (int k = 0; k < k_count; ++k) {
    const CentroidFit fit =
        closed_form_centroid(members[k], problem.linear_coefficients.segment(k * dim, dim), problem.box);
    sol.centroids.centroid(k) = fit.centroid;
  }
  sol.distances.resize(obs.size());
  for (std::size_t j = 0; j < obs.size(); ++j) {
    sol.distances[j] = (obs[j] - sol.centroids.centroid(assignment.cluster_of[j])).squaredNorm();
    sol.cluster_cost += sol.distances[j];
  }
  sol.lagrangian_value = sol.cluster_cost + problem.linear_coefficients.dot(sol.centroids.stacked());
  return sol;
}

double assignment_lower_bound(const LagrangianSubproblem& problem,
                              std::span<const int> partial_assignment) {
  const auto& obs = problem.data.observations;
  if (partial_assignment.size() != obs.size()) {
    throw std::invalid_argument("assignment_lower_bound: size != observation count");
  }
  std::vector<std::vector<Observation>> members(problem.num_clusters);
  for (std::size_t j = 0; j < obs.size(); ++j) {
    const int k = partial_assignment[j];
    if (k == kUnassigned) continue;
    if (k < 0 || k >= problem.num_clusters) {
      throw std::invalid_argument("assignment_lower_bound: label out of range");
    }
    members[k].push_back(obs[j]);
  }
  const int dim = problem.dimension();
  double bound = 0.0;
  for (int k = 0; k < problem.num_clusters; ++k) {
    bound += closed_form_centroid(members[k], problem.linear_coefficients.segment(k * dim, dim),
                                  problem.box)
                 .objective;
  }
  return bound;
}

SubproblemSolution lloyd_incumbent(const LagrangianSubproblem& problem, int num_starts,
                                   std::uint64_t seed) {
  problem.validate();
  if (num_starts < 1) throw std::invalid_argument("lloyd_incumbent: need at least one start");
  const auto& obs = problem.data.observations;
  const int k_count = problem.num_clusters;
  const int dim = problem.dimension();
  const std::size_t n = obs.size();

  std::optional<SubproblemSolution> best;
  for (int start = 0; start < num_starts; ++start) {
    Engine engine(derive_seed(seed, {static_cast<std::uint64_t>(start)}));
    // k-means++ seeding
    CentroidSet m(k_count, dim);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = uniform_index(engine, n);
    for (int k = 0; k < k_count; ++k) {
      m.centroid(k) = obs[pick];
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        d2[j] = std::min(d2[j], (obs[j] - obs[pick]).squaredNorm());
        total += d2[j];
      }
      if (total <= 0.0) {
        pick = uniform_index(engine, n);
        continue;
      }
      double target = uniform01(engine) * total;
      pick = n - 1;
      for (std::size_t j = 0; j < n; ++j) {
        target -= d2[j];
        if (target < 0.0) {
          pick = j;
          break;
        }
      }
    }

    Assignment assignment{nearest_labels(obs, m)};
    for (int iter = 0; iter < 100; ++iter) {
      const SubproblemSolution sol = evaluate_assignment(problem, assignment);
      std::vector<int> next = nearest_labels(obs, sol.centroids);
      if (next == assignment.cluster_of) break;
      assignment.cluster_of = std::move(next);
    }
    SubproblemSolution sol = evaluate_assignment(problem, assignment);
    if (!best || sol.lagrangian_value < best->lagrangian_value) best = std::move(sol);
  }
  return *best;
}

NodeLimitExceeded::NodeLimitExceeded(SubproblemSolution incumbent, double lower_bound)
    : std::runtime_error("subproblem node limit exceeded (incumbent " +
                         std::to_string(incumbent.lagrangian_value) + ", bound " +
                         std::to_string(lower_bound) + ")"),
      incumbent_(std::move(incumbent)),
      lower_bound_(lower_bound) {}

SubproblemSolution solve_subproblem(const LagrangianSubproblem& problem,
                                    const SubsolverOptions& options) {
  problem.validate();
  NodeSolver solver(problem.data, problem.num_clusters, problem.box, options);
  return solver.solve(problem.linear_coefficients, problem.reference);
}

SubproblemSolution brute_force_subproblem(const LagrangianSubproblem& problem) {
  problem.validate();
  const auto& obs = problem.data.observations;
  const int k_count = problem.num_clusters;
  const std::size_t n = obs.size();
  double combos = 1.0;
  for (std::size_t j = 0; j < n; ++j) combos *= k_count;
  if (combos > 1e7) {
    throw std::invalid_argument("brute_force_subproblem: K^n exceeds 10^7");
  }
  const int dim = problem.dimension();
  std::vector<int> labels(n, 0);
  std::vector<int> best_labels;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<std::vector<Observation>> members(k_count);
  while (true) {
    for (auto& m : members) m.clear();
    for (std::size_t j = 0; j < n; ++j) members[labels[j]].push_back(obs[j]);
    double value = 0.0;
    for (int k = 0; k < k_count; ++k) {
      value += closed_form_centroid(members[k], problem.linear_coefficients.segment(k * dim, dim),
                                    problem.box)
                   .objective;
    }
    if (value < best_value) {
      best_value = value;
      best_labels = labels;
    }
    std::size_t pos = 0;
    while (pos < n && ++labels[pos] == k_count) labels[pos++] = 0;
    if (pos == n) break;
  }
  SubproblemSolution sol = evaluate_assignment(problem, Assignment{best_labels});
  sol.stats.explored_nodes = static_cast<std::int64_t>(combos);
  return sol;
}

std::vector<int> closest_label_permutation(const CentroidSet& centroids, const CentroidSet& reference) {
  const int k_count = centroids.num_clusters();
  if (reference.num_clusters() != k_count || reference.dimension() != centroids.dimension()) {
    throw std::invalid_argument("label permutation: reference shape mismatch");
  }
  std::vector<int> perm(k_count);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int k = 0; k < k_count; ++k) {
      cost += (centroids.centroid(perm[k]) - reference.centroid(k)).squaredNorm();
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

CentroidSet permute_labels(const CentroidSet& centroids, const std::vector<int>& permutation) {
  CentroidSet out(centroids.num_clusters(), centroids.dimension());
  for (int k = 0; k < centroids.num_clusters(); ++k) out.centroid(k) = centroids.centroid(permutation[k]);
  return out;
}

RelabelResult relabel_to_reference(const LagrangianSubproblem& problem,
                                   const SubproblemSolution& solution,
                                   const CentroidSet& reference) {
  const int k_count = solution.centroids.num_clusters();
  const std::vector<int> best = closest_label_permutation(solution.centroids, reference);

  std::vector<int> new_label_of(k_count);
  for (int k = 0; k < k_count; ++k) new_label_of[best[k]] = k;
  Assignment relabelled;
  relabelled.cluster_of.reserve(solution.assignment.cluster_of.size());
  for (int k : solution.assignment.cluster_of) relabelled.cluster_of.push_back(new_label_of[k]);

  RelabelResult out;
  out.solution = evaluate_assignment(problem, relabelled);
  out.solution.proof_gap = solution.proof_gap;
  out.solution.stats = solution.stats;
  out.permutation = best;
  for (int k = 0; k < k_count && out.dominance_satisfied; ++k) {
    const double own = (out.solution.centroids.centroid(k) - reference.centroid(k)).squaredNorm();
    for (int other = 0; other < k_count; ++other) {
      if ((out.solution.centroids.centroid(other) - reference.centroid(k)).squaredNorm() < own) {
        out.dominance_satisfied = false;
        break;
      }
    }
  }
  return out;
}

double node_objective(std::span<const Observation> points, const CentroidSet& centroids) {
  double z = 0.0;
  for (const auto& y : points) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < centroids.num_clusters(); ++k) {
      best = std::min(best, (y - centroids.centroid(k)).squaredNorm());
    }
    z += best;
  }
  return z;
}

// ---------------------------------------------------------------------------
// NodeSolver

struct NodeSolver::Budget {
  std::int64_t nodes_left;
  Clock::time_point start;
  Clock::time_point deadline;
};

NodeSolver::NodeSolver(NodeDataset data, int num_clusters, BoundingBox box, SubsolverOptions options)
    : data_(std::move(data)), num_clusters_(num_clusters), box_(std::move(box)), options_(options) {
  LagrangianSubproblem probe{data_, num_clusters_, box_,
                             Vector::Zero(static_cast<Eigen::Index>(num_clusters_) * box_.dimension()),
                             std::nullopt};
  probe.validate();

  const std::size_t n = data_.size();
  Vector mean = Vector::Zero(box_.dimension());
  for (const auto& y : data_.observations) mean += y;
  mean /= static_cast<double>(n);
  std::vector<double> dist(n);
  for (std::size_t j = 0; j < n; ++j) dist[j] = (data_.observations[j] - mean).squaredNorm();
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) { return dist[a] > dist[b]; });
  for (int j : order_) ordered_points_.push_back(data_.observations[j]);

  suffix_bound_.assign(n + 1, 0.0);
  suffix_labels_.assign(n + 1, {});
}

LagrangianSubproblem NodeSolver::make_problem(const Vector& c) const {
  return LagrangianSubproblem{data_, num_clusters_, box_, c, std::nullopt};
}

void NodeSolver::ensure_suffix_bounds(Budget& budget,
                                      const std::function<void(const BnbProgress&)>& on_progress) {
  const int n = static_cast<int>(ordered_points_.size());
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(num_clusters_) * box_.dimension());
  for (int s = suffix_done_ + 1; s <= n; ++s) {
    const std::span<const Observation> pts(ordered_points_.data() + (n - s), s);
    if (s <= num_clusters_) {
      suffix_bound_[s] = 0.0;
      suffix_labels_[s].resize(s);
      std::iota(suffix_labels_[s].begin(), suffix_labels_[s].end(), 0);
      suffix_done_ = s;
      continue;
    }
    BnbSetup setup{pts, num_clusters_, &box_, &zero, suffix_bound_, true, options_.rel_tol};

    // Incumbent: the previous stage's optimum with the new point placed greedily.
    std::vector<int> labels(s);
    std::copy(suffix_labels_[s - 1].begin(), suffix_labels_[s - 1].end(), labels.begin() + 1);
    double best_value = std::numeric_limits<double>::infinity();
    std::vector<int> best_labels;
    for (int k = 0; k < num_clusters_; ++k) {
      labels[0] = k;
      const double v = labels_value(setup, labels);
      if (v < best_value) {
        best_value = v;
        best_labels = labels;
      }
    }
    {
      NodeDataset sub{data_.node_id, std::vector<Observation>(pts.begin(), pts.end())};
      LagrangianSubproblem p{std::move(sub), num_clusters_, box_, zero, std::nullopt};
      const int starts = s == n ? options_.lloyd_starts : 2;
      const SubproblemSolution lloyd =
          lloyd_incumbent(p, starts, derive_seed(options_.seed, {0x5eedULL, static_cast<std::uint64_t>(s)}));
      const double v = labels_value(setup, lloyd.assignment.cluster_of);
      if (v < best_value) {
        best_value = v;
        best_labels = lloyd.assignment.cluster_of;
      }
    }

    const std::function<void(const BnbProgress&)>* progress =
        (s == n && on_progress) ? &on_progress : nullptr;
    BnbLimits limits{budget.nodes_left, budget.deadline, budget.start, progress};
    BnbResult r = run_bnb(setup, std::move(best_labels), best_value, limits);
    budget.nodes_left -= r.nodes;
    suffix_nodes_ += r.nodes;
    suffix_bound_[s] = std::max(r.lower, suffix_bound_[s - 1]);
    suffix_labels_[s] = std::move(r.labels);
    if (!r.proven) {
      // Monotone in s: every longer suffix costs at least this much.
      for (int t = s + 1; t <= n; ++t) suffix_bound_[t] = suffix_bound_[s];
      return;
    }
    suffix_done_ = s;
    if (on_progress && s < n) {
      on_progress(BnbProgress{elapsed_since(budget.start), std::numeric_limits<double>::infinity(),
                              suffix_bound_[s], suffix_nodes_});
    }
  }
}

BoundedSolve NodeSolver::solve_bounded(const Vector& c, std::int64_t max_nodes, double time_budget_s,
                                       const std::function<void(const BnbProgress&)>& on_progress) {
  const LagrangianSubproblem problem = make_problem(c);
  problem.validate();
  const int n = static_cast<int>(ordered_points_.size());

  Budget budget{max_nodes, Clock::now(), Clock::time_point::max()};
  if (std::isfinite(time_budget_s)) {
    budget.deadline = budget.start + std::chrono::duration_cast<Clock::duration>(
                                         std::chrono::duration<double>(time_budget_s));
  }

  const bool zero_c = c.isZero(0.0);
  ensure_suffix_bounds(budget, on_progress);

  auto to_assignment = [&](const std::vector<int>& ordered_labels) {
    Assignment a;
    a.cluster_of.assign(n, 0);
    for (int p = 0; p < n; ++p) a.cluster_of[order_[p]] = ordered_labels[p];
    return a;
  };

  BoundedSolve out;
  if (zero_c && suffix_done_ == n) {
    out.best = evaluate_assignment(problem, to_assignment(suffix_labels_[n]));
    out.lower_bound = suffix_bound_[n];
    out.proven = true;
    out.best.stats.suffix_nodes = suffix_nodes_;
    return out;
  }

  BnbSetup setup{ordered_points_, num_clusters_, &box_, &c, suffix_bound_,
                 problem.label_symmetric(), options_.rel_tol};

  // Incumbents: Lloyd, the previous optimum, and the unlabelled optimum.
  std::vector<std::vector<int>> candidates;
  {
    const SubproblemSolution lloyd = lloyd_incumbent(problem, options_.lloyd_starts, options_.seed);
    std::vector<int> ordered(n);
    for (int p = 0; p < n; ++p) ordered[p] = lloyd.assignment.cluster_of[order_[p]];
    candidates.push_back(std::move(ordered));
  }
  if (previous_) {
    std::vector<int> ordered(n);
    for (int p = 0; p < n; ++p) ordered[p] = previous_->cluster_of[order_[p]];
    candidates.push_back(std::move(ordered));
  }
  if (!suffix_labels_[n].empty()) candidates.push_back(suffix_labels_[n]);
  std::vector<int> best_labels;
  double best_value = std::numeric_limits<double>::infinity();
  for (auto& cand : candidates) {
    const double v = labels_value(setup, cand);
    if (v < best_value) {
      best_value = v;
      best_labels = cand;
    }
  }

  BnbLimits limits{std::max<std::int64_t>(budget.nodes_left, 0), budget.deadline, budget.start,
                   on_progress ? &on_progress : nullptr};
  BnbResult r = run_bnb(setup, std::move(best_labels), best_value, limits);

  out.best = evaluate_assignment(problem, to_assignment(r.labels));
  out.lower_bound = std::min(r.lower, out.best.lagrangian_value);
  out.proven = r.proven;
  const double scale = std::max(std::abs(out.best.lagrangian_value), 1e-300);
  out.best.proof_gap = std::max(0.0, out.best.lagrangian_value - out.lower_bound) / scale;
  out.best.stats.explored_nodes = r.nodes;
  out.best.stats.suffix_nodes = suffix_nodes_;
  return out;
}

SubproblemSolution NodeSolver::solve(const Vector& c, const std::optional<CentroidSet>& reference) {
  BoundedSolve r = solve_bounded(c, options_.max_nodes, std::numeric_limits<double>::infinity());
  if (!r.proven) throw NodeLimitExceeded(std::move(r.best), r.lower_bound);
  SubproblemSolution sol = std::move(r.best);
  if (reference) {
    const LagrangianSubproblem problem = make_problem(c);
    if (!problem.label_symmetric()) {
      throw std::invalid_argument(
          "relabelling against a reference requires label-symmetric coefficients");
    }
    sol = relabel_to_reference(problem, sol, *reference).solution;
  }
  previous_ = sol.assignment;
  return sol;
}

}  // namespace fedkm
