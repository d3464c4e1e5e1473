#pragma once

// Proportion-constrained hard pseudo-label assignment.
//
// A bag of m instances with class counts n_1..n_l admits every labeling whose
// histogram equals the counts. The maximum-posterior such labeling minimizes
// sum_j -log p[j][y_j] and is found as a min-cost max-flow on the layered
// graph source -> instances -> labels -> sink. enumerate_optimal() walks all
// multiset permutations and is the brute-force reference for small bags.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "llpdc/mincost_flow.hpp"

namespace llpdc {

/// m x l matrix; row j is the predicted class distribution of instance j.
using ProbabilityMatrix = Eigen::MatrixXd;

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kCostScale = 1e6;

struct ProportionVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t c) const { return values[c]; }
};

/// Returns a description of the first violated invariant, if any.
inline std::optional<std::string> validate_proportions(const ProportionVector& alpha) {
  if (alpha.size() < 2) return "proportion vector needs at least 2 classes";
  double sum = 0.0;
  for (double a : alpha.values) {
    if (!std::isfinite(a) || a < 0.0) return "proportions must be finite and non-negative";
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) return "proportions must sum to 1";
  return std::nullopt;
}

struct ClassCounts {
  std::vector<std::size_t> counts;

  std::size_t classes() const { return counts.size(); }
  std::size_t bag_size() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
  std::size_t operator[](std::size_t c) const { return counts[c]; }
  bool operator==(const ClassCounts&) const = default;
};

/// Class labels are zero-based throughout the library.
struct AssignmentResult {
  std::vector<std::size_t> labels;
  double total_neg_log_prob = 0.0;
  std::vector<double> per_instance_prob;
  Cost quantized_cost = 0;
};

class AssignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Converts proportions to integer counts summing to m. Exact products are
/// used as-is; otherwise largest-remainder rounding, ties to the lower class.
inline ClassCounts counts_from_proportions(const ProportionVector& alpha, std::size_t m) {
  if (m == 0) throw AssignmentError("bag size must be positive");
  if (auto error = validate_proportions(alpha)) throw AssignmentError(*error);

  const std::size_t l = alpha.size();
  std::vector<double> product(l);
  for (std::size_t c = 0; c < l; ++c) {
    product[c] = static_cast<double>(m) * alpha[c];
    const double nearest = std::round(product[c]);
    if (std::abs(product[c] - nearest) <= 1e-9) product[c] = nearest;
  }

  ClassCounts out{std::vector<std::size_t>(l)};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < l; ++c) {
    out.counts[c] = static_cast<std::size_t>(std::floor(product[c]));
    assigned += out.counts[c];
  }
  if (assigned > m) throw AssignmentError("proportions overshoot the bag size");

  std::vector<std::size_t> order(l);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return product[a] - std::floor(product[a]) > product[b] - std::floor(product[b]);
  });
  for (std::size_t r = 0; assigned < m; ++r, ++assigned) ++out.counts[order[r % l]];
  return out;
}

inline double clamp_probability(double p) {
  if (!(p >= kProbabilityFloor)) return kProbabilityFloor;  // also catches NaN
  return std::min(p, 1.0);
}

/// Integer arc cost: round(-log(clamp(p)) * 1e6).
inline Cost quantized_cost(double p) {
  return static_cast<Cost>(std::llround(-std::log(clamp_probability(p)) * kCostScale));
}

namespace detail {

inline void check_dimensions(const ProbabilityMatrix& probs, const ClassCounts& counts) {
  if (counts.classes() == 0) throw AssignmentError("dimension mismatch: no classes");
  if (static_cast<std::size_t>(probs.cols()) != counts.classes())
    throw AssignmentError("dimension mismatch: probability columns vs class count");
  if (static_cast<std::size_t>(probs.rows()) != counts.bag_size())
    throw AssignmentError("dimension mismatch: probability rows vs bag size");
}

inline std::vector<Cost> cost_table(const ProbabilityMatrix& probs) {
  const auto m = static_cast<std::size_t>(probs.rows());
  const auto l = static_cast<std::size_t>(probs.cols());
  std::vector<Cost> table(m * l);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < l; ++c)
      table[j * l + c] = quantized_cost(probs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)));
  return table;
}

inline AssignmentResult finish(const ProbabilityMatrix& probs, std::vector<std::size_t> labels,
                               const std::vector<Cost>& table) {
  const auto l = static_cast<std::size_t>(probs.cols());
  AssignmentResult result;
  result.per_instance_prob.resize(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const double p = clamp_probability(
        probs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(labels[j])));
    result.per_instance_prob[j] = p;
    result.total_neg_log_prob -= std::log(p);
    result.quantized_cost += table[j * l + labels[j]];
  }
  result.labels = std::move(labels);
  return result;
}

// Among all labelings with the same (optimal) quantized cost, move to the
// lexicographically smallest one: the lowest instance index receives the
// lowest class index the optimum allows.
//
// With potentials that make every residual reduced cost non-negative, two
// optimal labelings differ by cycles made of zero-reduced-cost arcs only.
// Instance j is lowered from a to c by pushing one unit around such a cycle
// label c -> ... -> label a that only moves instances after j.
inline void canonicalize(std::vector<std::size_t>& labels, const std::vector<Cost>& table,
                         std::size_t l) {
  const std::size_t m = labels.size();
  if (m == 0) return;

  // Potentials over the bipartite residual graph: instance k is node k,
  // label c is node m + c. Label-correcting from a virtual zero root.
  std::vector<Cost> pi(m + l, 0);
  std::size_t passes = 0;
  for (bool changed = true; changed;) {
    if (++passes > m + l + 1) throw AssignmentError("assignment is not cost-optimal");
    changed = false;
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t a = labels[k];
      // used arc reversed: label a -> instance k, cost -table[k][a]
      if (pi[m + a] - table[k * l + a] < pi[k]) {
        pi[k] = pi[m + a] - table[k * l + a];
        changed = true;
      }
      for (std::size_t c = 0; c < l; ++c) {
        if (c == a) continue;
        if (pi[k] + table[k * l + c] < pi[m + c]) {
          pi[m + c] = pi[k] + table[k * l + c];
          changed = true;
        }
      }
    }
  }
  auto tight = [&](std::size_t k, std::size_t c) { return table[k * l + c] + pi[k] - pi[m + c] == 0; };

  std::vector<std::vector<std::size_t>> members(l);
  std::vector<std::size_t> via_instance(l), via_label(l);
  std::vector<char> seen(l);

  for (std::size_t j = 0; j + 1 < m; ++j) {
    const std::size_t a = labels[j];
    if (a == 0 || !tight(j, a)) continue;

    for (auto& group : members) group.clear();
    for (std::size_t k = j + 1; k < m; ++k)
      if (tight(k, labels[k])) members[labels[k]].push_back(k);

    for (std::size_t c = 0; c < a; ++c) {
      if (!tight(j, c)) continue;
      // BFS over labels from c looking for a; edge u -> v through an
      // instance currently at u that may move to v.
      std::fill(seen.begin(), seen.end(), 0);
      std::deque<std::size_t> queue{c};
      seen[c] = 1;
      while (!queue.empty() && !seen[a]) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (std::size_t k : members[u]) {
          for (std::size_t v = 0; v < l; ++v) {
            if (seen[v] || !tight(k, v)) continue;
            seen[v] = 1;
            via_instance[v] = k;
            via_label[v] = u;
            queue.push_back(v);
          }
        }
      }
      if (!seen[a]) continue;

      for (std::size_t v = a; v != c; v = via_label[v]) labels[via_instance[v]] = v;
      labels[j] = c;
      break;
    }
  }
}

}  // namespace detail

/// Layered network with node ids: 0 source, 1..m instances, m+1..m+l labels,
/// m+l+1 sink. Edges in insertion order: m source edges, then m*l
/// instance->label edges (instance-major), then l label->sink edges.
inline FlowNetwork build_assignment_network(const ProbabilityMatrix& probs, const ClassCounts& counts) {
  detail::check_dimensions(probs, counts);
  const auto m = static_cast<std::size_t>(probs.rows());
  const std::size_t l = counts.classes();

  FlowNetwork network;
  network.node_count = 2 + m + l;
  network.source = 0;
  network.sink = m + l + 1;
  network.edges.reserve(m + m * l + l);
  for (std::size_t j = 0; j < m; ++j) network.add_edge(0, 1 + j, 1, 0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < l; ++c)
      network.add_edge(1 + j, 1 + m + c, 1,
                       quantized_cost(probs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c))));
  for (std::size_t c = 0; c < l; ++c)
    network.add_edge(1 + m + c, network.sink, static_cast<Capacity>(counts[c]), 0);
  return network;
}

/// Maximum-posterior labeling whose histogram equals `counts` exactly.
inline AssignmentResult assign_pseudo_labels(const ProbabilityMatrix& probs, const ClassCounts& counts) {
  const FlowNetwork network = build_assignment_network(probs, counts);
  const FlowResult flow = solve_mcmf(network);
  const auto m = static_cast<std::size_t>(probs.rows());
  const std::size_t l = counts.classes();
  if (flow.total_flow != static_cast<Capacity>(m))
    throw AssignmentError("assignment network did not saturate");

  std::vector<std::size_t> labels(m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < l; ++c)
      if (flow.flow_per_edge[m + j * l + c] > 0) labels[j] = c;

  const std::vector<Cost> table = detail::cost_table(probs);
  detail::canonicalize(labels, table, l);
  return detail::finish(probs, std::move(labels), table);
}

inline constexpr double kEnumerationLimit = 1e6;

/// Number of distinct orderings of the label multiset, m! / prod(n_c!).
inline double candidate_count(const ClassCounts& counts) {
  double total = 1.0;
  std::size_t placed = 0;
  for (std::size_t n : counts.counts) {
    for (std::size_t i = 1; i <= n; ++i) {
      ++placed;
      total = total * static_cast<double>(placed) / static_cast<double>(i);
    }
  }
  return total;
}

/// Brute-force argmin over every labeling consistent with `counts`; ties go
/// to the lexicographically smallest label vector, matching
/// assign_pseudo_labels.
inline AssignmentResult enumerate_optimal(const ProbabilityMatrix& probs, const ClassCounts& counts) {
  detail::check_dimensions(probs, counts);
  if (candidate_count(counts) > kEnumerationLimit)
    throw AssignmentError("too many candidate assignments to enumerate; use the flow solver");

  const std::size_t l = counts.classes();
  const std::vector<Cost> table = detail::cost_table(probs);
  std::vector<std::size_t> candidate;
  for (std::size_t c = 0; c < l; ++c) candidate.insert(candidate.end(), counts[c], c);

  std::vector<std::size_t> best = candidate;
  Cost best_cost = std::numeric_limits<Cost>::max();
  do {
    Cost cost = 0;
    for (std::size_t j = 0; j < candidate.size(); ++j) cost += table[j * l + candidate[j]];
    if (cost < best_cost) {
      best_cost = cost;
      best = candidate;
    }
  } while (std::next_permutation(candidate.begin(), candidate.end()));
  return detail::finish(probs, std::move(best), table);
}

/// Histogram of zero-based labels over l classes.
inline ClassCounts label_histogram(const std::vector<std::size_t>& labels, std::size_t l) {
  ClassCounts out{std::vector<std::size_t>(l, 0)};
  for (std::size_t y : labels) {
    if (y >= l) throw AssignmentError("label out of range");
    ++out.counts[y];
  }
  return out;
}

}  // namespace llpdc
