#pragma once

// Synthetic data, CSV ingestion, standardization and bag construction.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "llpdc/data.hpp"

namespace llpdc {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unit direction of class c: the c-th basis vector while c < d, otherwise a
/// fixed pseudo-random direction (independent of the dataset seed).
inline Eigen::VectorXd class_direction(std::size_t c, std::size_t d) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  if (c < d) {
    u(static_cast<Eigen::Index>(c)) = 1.0;
    return u;
  }
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL + c);
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = normal(rng);
  return u / u.norm();
}

/// n_per_class points per class, class c ~ N(separation * u_c, I).
/// Rows are grouped by class.
inline Dataset make_gaussian_mixture(std::size_t classes, std::size_t dim, std::size_t n_per_class,
                                     double separation, std::uint64_t seed) {
  if (classes < 2 || dim == 0 || n_per_class == 0) throw DataError("mixture needs l >= 2, d >= 1, n >= 1");
  if (!std::isfinite(separation) || separation < 0.0) throw DataError("separation must be non-negative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset data;
  data.classes = classes;
  data.features.resize(static_cast<Eigen::Index>(classes * n_per_class), static_cast<Eigen::Index>(dim));
  data.labels.reserve(classes * n_per_class);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const Eigen::VectorXd center = separation * class_direction(c, dim);
    for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
      for (Eigen::Index k = 0; k < center.size(); ++k) data.features(row, k) = center(k) + normal(rng);
      data.labels.push_back(c);
    }
  }
  return data;
}

inline Dataset select_rows(const Dataset& data, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.classes = data.classes;
  out.standardization = data.standardization;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), data.features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(data.labels[rows[i]]);
  }
  return out;
}

/// Shuffles once and holds out `test_count` rows as a fully labeled test set.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& data, std::size_t test_count,
                                                    std::uint64_t seed) {
  if (test_count >= data.size()) throw DataError("test split leaves no training rows");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(test_count), order.end());
  return {select_rows(data, train), select_rows(data, test)};
}

/// Per-feature mean and standard deviation; constant features get stddev 1.
inline Standardization fit_standardization(const Dataset& data) {
  if (data.size() == 0) throw DataError("cannot standardize an empty dataset");
  Standardization stats;
  stats.mean = data.features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.features.rowwise() - stats.mean.transpose();
  stats.stddev = (centered.array().square().colwise().sum() / static_cast<double>(data.size())).sqrt().transpose();
  for (Eigen::Index k = 0; k < stats.stddev.size(); ++k)
    if (!(stats.stddev(k) > 1e-12)) stats.stddev(k) = 1.0;
  return stats;
}

/// Applies z-scoring in place. A dataset is standardized at most once.
inline void apply_standardization(Dataset& data, const Standardization& stats) {
  if (data.standardization) throw DataError("dataset is already standardized");
  if (stats.mean.size() != data.features.cols()) throw DataError("standardization dimension mismatch");
  data.features = (data.features.rowwise() - stats.mean.transpose()).array().rowwise() /
                  stats.stddev.transpose().array();
  data.standardization = stats;
}

/// Fits on the training split and applies the same statistics to the test split.
inline void standardize_split(Dataset& train, Dataset& test) {
  const Standardization stats = fit_standardization(train);
  apply_standardization(train, stats);
  apply_standardization(test, stats);
}

struct BagSpec {
  std::size_t bag_size = 64;
  /// When non-empty, consecutive bags take these sizes instead of bag_size.
  std::vector<std::size_t> sizes;
  std::uint64_t seed = 0;
  /// Drop a trailing partial bag instead of keeping it as a smaller bag.
  bool drop_remainder = false;
};

/// Proportions of a group of instances computed from their true labels.
inline ProportionVector proportions_of(const Dataset& data, const std::vector<std::size_t>& indices) {
  ProportionVector alpha{std::vector<double>(data.classes, 0.0)};
  for (std::size_t i : indices) alpha.values[data.labels[i]] += 1.0;
  for (double& a : alpha.values) a /= static_cast<double>(indices.size());
  return alpha;
}

/// Shuffles the instances and cuts them into disjoint consecutive bags.
inline std::vector<Bag> partition_into_bags(const Dataset& data, const BagSpec& plan) {
  const std::size_t n = data.size();
  std::vector<std::size_t> sizes = plan.sizes;
  if (sizes.empty()) {
    if (plan.bag_size == 0) throw DataError("bag size must be positive");
    if (plan.bag_size > n) throw DataError("bag size exceeds dataset size");
    sizes.assign(n / plan.bag_size, plan.bag_size);
  } else {
    if (std::find(sizes.begin(), sizes.end(), std::size_t{0}) != sizes.end())
      throw DataError("bag size must be positive");
    if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) > n)
      throw DataError("bag sizes exceed dataset size");
  }
  const std::size_t covered = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (covered < n && !plan.drop_remainder) sizes.push_back(n - covered);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(plan.seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Bag> bags;
  bags.reserve(sizes.size());
  std::size_t offset = 0;
  for (std::size_t size : sizes) {
    std::vector<std::size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(offset),
                                     order.begin() + static_cast<std::ptrdiff_t>(offset + size));
    offset += size;
    ProportionVector alpha = proportions_of(data, indices);
    bags.push_back(make_bag(std::move(indices), std::move(alpha)));
  }
  return bags;
}

struct CsvSchema {
  std::size_t classes = 2;
  /// Label value that denotes the first class in the file.
  std::size_t label_base = 1;
  bool has_header = false;
  char delimiter = ',';
};

namespace detail {

inline std::string_view trim(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  return text;
}

}  // namespace detail

/// Reads "feature,...,feature,label" rows. When `stats` is null the
/// standardization is fitted on this file, otherwise the given one is applied.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema,
                        const Standardization* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);

  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && schema.has_header) continue;
    if (detail::trim(line).empty()) continue;

    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (;;) {
      const auto cut = rest.find(schema.delimiter);
      cells.push_back(detail::trim(rest.substr(0, cut)));
      if (cut == std::string_view::npos) break;
      rest.remove_prefix(cut + 1);
    }
    const std::string where = "row " + std::to_string(line_no) + ": ";
    if (cells.size() < 2) throw DataError(where + "expected at least one feature and a label");
    if (!rows.empty() && cells.size() - 1 != rows.front().size())
      throw DataError(where + "inconsistent column count");

    std::vector<double> features(cells.size() - 1);
    for (std::size_t k = 0; k + 1 < cells.size(); ++k) {
      const auto cell = cells[k];
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), features[k]);
      if (ec != std::errc{} || end != cell.data() + cell.size() || cell.empty() || !std::isfinite(features[k]))
        throw DataError(where + "non-numeric feature in column " + std::to_string(k + 1));
    }
    long long raw_label = 0;
    const auto label_cell = cells.back();
    const auto [end, ec] = std::from_chars(label_cell.data(), label_cell.data() + label_cell.size(), raw_label);
    if (ec != std::errc{} || end != label_cell.data() + label_cell.size() || label_cell.empty())
      throw DataError(where + "non-integer label");
    const long long first = static_cast<long long>(schema.label_base);
    if (raw_label < first || raw_label >= first + static_cast<long long>(schema.classes))
      throw DataError(where + "label outside declared range");

    rows.push_back(std::move(features));
    labels.push_back(static_cast<std::size_t>(raw_label - first));
  }
  if (rows.empty()) throw DataError("no rows");

  Dataset data;
  data.classes = schema.classes;
  data.labels = std::move(labels);
  data.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < rows[r].size(); ++k)
      data.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  apply_standardization(data, stats ? *stats : fit_standardization(data));
  return data;
}

}  // namespace llpdc
