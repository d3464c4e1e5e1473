#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "llpdc/proportion_assign.hpp"

namespace llpdc {

struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
};

/// Instances are rows of `features`. Labels are zero-based and only ever
/// read by bag construction and evaluation, never by the learner.
struct Dataset {
  Eigen::MatrixXd features;  // n x d
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::optional<Standardization> standardization;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
};

struct Bag {
  std::vector<std::size_t> instance_indices;
  ProportionVector alpha;
  ClassCounts counts;

  std::size_t size() const { return instance_indices.size(); }
};

/// Builds a bag and derives its counts once from alpha.
inline Bag make_bag(std::vector<std::size_t> indices, ProportionVector alpha) {
  Bag bag{std::move(indices), std::move(alpha), {}};
  bag.counts = counts_from_proportions(bag.alpha, bag.instance_indices.size());
  return bag;
}

}  // namespace llpdc
