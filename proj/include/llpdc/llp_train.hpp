#pragma once

// Training with dual proportion constraints.
//
// Each step draws a few bags, builds a weak and a strong noisy view of every
// instance, and minimizes
//
//   L = mean_b CE(mean_j g(x_bj^weak), alpha_b)
//     + lambda * CE over gated instances of g(x^strong) vs y*
//
// where y* is the proportion-exact maximum-posterior labeling computed from
// the weak-view predictions, and an instance is gated in when its weak-view
// probability of y* reaches tau. lambda = 0 is plain DLLP.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "llpdc/classifier.hpp"
#include "llpdc/data.hpp"
#include "llpdc/proportion_assign.hpp"

namespace llpdc {

enum class View { weak, strong };

/// How the summed instance-level cross-entropy of one step is scaled.
enum class InstanceNormalization {
  selected_mean,  // divide by the number of gated-in instances
  batch_mean,     // divide by the number of instances in the step
  sum,            // no scaling
};

struct TrainConfig {
  double lambda = 0.5;
  double tau = 0.6;
  std::size_t bags_per_step = 4;
  std::size_t epochs = 10;
  double weak_noise = 0.05;
  double strong_noise = 0.25;
  std::uint64_t seed = 0;
  Architecture architecture = Architecture::one_hidden(64);
  double learning_rate = 0.03;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  InstanceNormalization instance_normalization = InstanceNormalization::selected_mean;
};

inline std::optional<std::string> validate_config(const TrainConfig& config) {
  if (!(config.lambda >= 0.0) || !std::isfinite(config.lambda)) return "lambda must be >= 0";
  if (!(config.tau >= 0.0 && config.tau <= 1.0)) return "tau must be in [0, 1]";
  if (config.bags_per_step == 0) return "bags_per_step must be positive";
  if (config.epochs == 0) return "epochs must be positive";
  if (!(config.weak_noise >= 0.0)) return "weak_noise must be >= 0";
  if (!(config.strong_noise >= config.weak_noise)) return "strong_noise must be >= weak_noise";
  if (!(config.learning_rate > 0.0)) return "learning_rate must be positive";
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) return "momentum must be in [0, 1)";
  if (!(config.weight_decay >= 0.0)) return "weight_decay must be >= 0";
  if (config.architecture.kind == Architecture::Kind::one_hidden && config.architecture.hidden == 0)
    return "hidden width must be positive";
  return std::nullopt;
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double bag_loss = 0.0;
  double instance_loss = 0.0;
  double pseudo_label_accuracy = 0.0;
  double pseudo_label_ratio = 0.0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the objective stops being finite; carries the last finite
/// parameters for inspection.
class TrainingDiverged : public TrainError {
 public:
  TrainingDiverged(const std::string& what, ClassifierParams last_params)
      : TrainError(what), params(std::move(last_params)) {}
  ClassifierParams params;
};

// ---------------------------------------------------------------------------
// Loss terms

/// Cross-entropy of the bag's mean prediction against alpha.
inline double bag_loss(const ProbabilityMatrix& weak_probs, const ProportionVector& alpha) {
  if (static_cast<std::size_t>(weak_probs.cols()) != alpha.size() || weak_probs.rows() == 0)
    throw TrainError("bag_loss: dimension mismatch");
  const Eigen::VectorXd mean = weak_probs.colwise().mean().transpose();
  double loss = 0.0;
  for (std::size_t c = 0; c < alpha.size(); ++c)
    if (alpha[c] != 0.0) loss -= alpha[c] * std::log(std::max(mean(static_cast<Eigen::Index>(c)), kProbabilityFloor));
  return loss;
}

/// d bag_loss / d logits, one row per instance of the bag.
inline Eigen::MatrixXd bag_loss_logit_grad(const ProbabilityMatrix& weak_probs, const ProportionVector& alpha) {
  if (static_cast<std::size_t>(weak_probs.cols()) != alpha.size() || weak_probs.rows() == 0)
    throw TrainError("bag_loss: dimension mismatch");
  const double m = static_cast<double>(weak_probs.rows());
  const Eigen::VectorXd mean = weak_probs.colwise().mean().transpose();
  Eigen::RowVectorXd mean_grad = Eigen::RowVectorXd::Zero(mean.size());
  for (std::size_t c = 0; c < alpha.size(); ++c) {
    const auto k = static_cast<Eigen::Index>(c);
    if (alpha[c] != 0.0 && mean(k) > kProbabilityFloor) mean_grad(k) = -alpha[c] / mean(k) / m;
  }
  // Softmax Jacobian: dz = p * (g - <p, g>).
  Eigen::MatrixXd out(weak_probs.rows(), weak_probs.cols());
  for (Eigen::Index j = 0; j < weak_probs.rows(); ++j) {
    const double inner = weak_probs.row(j).dot(mean_grad);
    out.row(j) = weak_probs.row(j).array() * (mean_grad.array() - inner);
  }
  return out;
}

struct InstanceTerm {
  double loss = 0.0;
  std::size_t selected = 0;
};

inline bool gated_in(const AssignmentResult& assignment, std::size_t j, double tau) {
  return assignment.per_instance_prob[j] >= tau;
}

/// Summed cross-entropy of strong-view predictions against the pseudo-labels
/// of instances whose weak-view confidence reaches tau.
inline InstanceTerm instance_loss(const ProbabilityMatrix& strong_probs, const AssignmentResult& assignment,
                                  double tau) {
  if (static_cast<std::size_t>(strong_probs.rows()) != assignment.labels.size())
    throw TrainError("instance_loss: dimension mismatch");
  InstanceTerm term;
  for (std::size_t j = 0; j < assignment.labels.size(); ++j) {
    if (!gated_in(assignment, j, tau)) continue;
    const double p = strong_probs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(assignment.labels[j]));
    term.loss -= std::log(std::max(p, kProbabilityFloor));
    ++term.selected;
  }
  return term;
}

/// d instance_loss / d logits (pseudo-labels and gate held fixed).
inline Eigen::MatrixXd instance_loss_logit_grad(const ProbabilityMatrix& strong_probs,
                                                const AssignmentResult& assignment, double tau) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(strong_probs.rows(), strong_probs.cols());
  for (std::size_t j = 0; j < assignment.labels.size(); ++j) {
    if (!gated_in(assignment, j, tau)) continue;
    const auto r = static_cast<Eigen::Index>(j);
    out.row(r) = strong_probs.row(r);
    out(r, static_cast<Eigen::Index>(assignment.labels[j])) -= 1.0;
  }
  return out;
}

inline double total_loss(double bag_term, double instance_term, double lambda) {
  if (!(lambda >= 0.0)) throw TrainError("lambda must be >= 0");
  return bag_term + lambda * instance_term;
}

// ---------------------------------------------------------------------------
// One optimization step

/// Rows of a step's inputs grouped by bag: bag b owns rows
/// [offsets[b], offsets[b + 1]).
struct StepLayout {
  std::vector<std::size_t> offsets{0};
  std::vector<ProportionVector> alphas;

  std::size_t bag_count() const { return alphas.size(); }
  Eigen::Index begin(std::size_t b) const { return static_cast<Eigen::Index>(offsets[b]); }
  Eigen::Index rows(std::size_t b) const { return static_cast<Eigen::Index>(offsets[b + 1] - offsets[b]); }
};

struct StepObjective {
  double total = 0.0;
  double bag_term = 0.0;       // mean bag loss over the step's bags
  double instance_term = 0.0;  // normalized instance loss
  std::size_t selected = 0;
  ClassifierParams grad;
};

inline double instance_scale(InstanceNormalization mode, std::size_t selected, std::size_t instances) {
  switch (mode) {
    case InstanceNormalization::selected_mean: return selected ? 1.0 / static_cast<double>(selected) : 0.0;
    case InstanceNormalization::batch_mean: return instances ? 1.0 / static_cast<double>(instances) : 0.0;
    case InstanceNormalization::sum: return 1.0;
  }
  return 1.0;
}

/// Objective and gradient from precomputed forward passes. `strong` may be
/// null when lambda == 0, in which case the instance term is skipped.
inline StepObjective step_objective(const ClassifierParams& params, const StepLayout& layout,
                                    const ForwardCache& weak, const ForwardCache* strong,
                                    const std::vector<AssignmentResult>& assignments, const TrainConfig& config) {
  StepObjective out;
  const double bag_scale = 1.0 / static_cast<double>(layout.bag_count());
  Eigen::MatrixXd weak_grad(weak.probs.rows(), weak.probs.cols());
  for (std::size_t b = 0; b < layout.bag_count(); ++b) {
    const auto block = weak.probs.middleRows(layout.begin(b), layout.rows(b));
    out.bag_term += bag_loss(block, layout.alphas[b]);
    weak_grad.middleRows(layout.begin(b), layout.rows(b)) = bag_loss_logit_grad(block, layout.alphas[b]) * bag_scale;
  }
  out.bag_term *= bag_scale;
  out.grad = backward(params, weak, weak_grad);

  if (config.lambda > 0.0 && strong) {
    double summed = 0.0;
    Eigen::MatrixXd strong_grad(strong->probs.rows(), strong->probs.cols());
    for (std::size_t b = 0; b < layout.bag_count(); ++b) {
      const auto block = strong->probs.middleRows(layout.begin(b), layout.rows(b));
      const InstanceTerm term = instance_loss(block, assignments[b], config.tau);
      summed += term.loss;
      out.selected += term.selected;
      strong_grad.middleRows(layout.begin(b), layout.rows(b)) = instance_loss_logit_grad(block, assignments[b], config.tau);
    }
    const double scale =
        instance_scale(config.instance_normalization, out.selected, static_cast<std::size_t>(strong->probs.rows()));
    out.instance_term = summed * scale;
    strong_grad *= config.lambda * scale;
    out.grad += backward(params, *strong, strong_grad);
  }
  out.total = total_loss(out.bag_term, out.instance_term, config.lambda);
  return out;
}

/// Same objective computed from raw inputs (pseudo-labels held fixed).
inline StepObjective step_objective(const ClassifierParams& params, const StepLayout& layout,
                                    const Eigen::MatrixXd& weak_inputs, const Eigen::MatrixXd& strong_inputs,
                                    const std::vector<AssignmentResult>& assignments, const TrainConfig& config) {
  const ForwardCache weak = forward_batch(params, weak_inputs);
  if (config.lambda > 0.0) {
    const ForwardCache strong = forward_batch(params, strong_inputs);
    return step_objective(params, layout, weak, &strong, assignments, config);
  }
  return step_objective(params, layout, weak, nullptr, assignments, config);
}

// ---------------------------------------------------------------------------
// Data schedule and augmentation

inline std::seed_seq stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b),
                       static_cast<std::uint32_t>(tag)};
}

/// Bag ids for every step of one epoch: a seeded shuffle cut into chunks of
/// bags_per_step (the last chunk may be smaller).
inline std::vector<std::vector<std::size_t>> epoch_schedule(std::size_t bag_count, std::size_t bags_per_step,
                                                            std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(bag_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto seq = stream_seed(seed, epoch, 0, 0xB465);
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> steps;
  for (std::size_t i = 0; i < order.size(); i += bags_per_step)
    steps.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(i + bags_per_step, order.size())));
  return steps;
}

inline std::size_t steps_per_epoch(std::size_t bag_count, std::size_t bags_per_step) {
  return (bag_count + bags_per_step - 1) / bags_per_step;
}

/// Rows `indices` of the dataset plus isotropic Gaussian noise. The noise
/// stream is keyed by (seed, epoch, step, view) so it does not depend on
/// which other views were drawn.
inline Eigen::MatrixXd augment(const Dataset& data, const std::vector<std::size_t>& indices, double sigma,
                               std::uint64_t seed, std::size_t epoch, std::size_t step, View view) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), data.features.cols());
  auto seq = stream_seed(seed, epoch, step, view == View::weak ? 0x3EA4 : 0x5760);
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    out.row(row) = data.features.row(static_cast<Eigen::Index>(indices[r]));
    if (sigma > 0.0)
      for (Eigen::Index k = 0; k < out.cols(); ++k) out(row, k) += sigma * normal(rng);
  }
  return out;
}

/// Concatenated instance indices and row layout for a set of bags.
inline std::pair<std::vector<std::size_t>, StepLayout> gather_step(const std::vector<Bag>& bags,
                                                                   const std::vector<std::size_t>& bag_ids) {
  std::vector<std::size_t> rows;
  StepLayout layout;
  for (std::size_t id : bag_ids) {
    const Bag& bag = bags[id];
    rows.insert(rows.end(), bag.instance_indices.begin(), bag.instance_indices.end());
    layout.offsets.push_back(rows.size());
    layout.alphas.push_back(bag.alpha);
  }
  return {std::move(rows), std::move(layout)};
}

// ---------------------------------------------------------------------------
// Training

/// Observation points, mainly for tests.
struct TrainHooks {
  /// Called once per bag per step with the view whose predictions built the assignment.
  std::function<void(View, const Bag&, const AssignmentResult&)> on_assignment;
  /// Called once per bag per step with the view the instance loss was evaluated on.
  std::function<void(View, const Bag&, const AssignmentResult&)> on_instance_loss;
  /// Called after every optimizer step.
  std::function<void(std::size_t epoch, std::size_t step, const ClassifierParams&)> on_step;
};

struct TrainResult {
  ClassifierParams params;
  std::vector<EpochMetrics> metrics;
};

/// Fraction of argmax predictions equal to the true label; ties go to the
/// lowest class index.
inline double evaluate(const ClassifierParams& params, const Dataset& test) {
  if (test.size() == 0) throw TrainError("empty test set");
  const ForwardCache cache = forward_batch(params, test.features);
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < cache.probs.rows(); ++r) {
    Eigen::Index best = 0;
    cache.probs.row(r).maxCoeff(&best);
    if (static_cast<std::size_t>(best) == test.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline void check_bags(const Dataset& data, const std::vector<Bag>& bags) {
  if (bags.empty()) throw TrainError("no bags to train on");
  std::vector<char> used(data.size(), 0);
  for (const Bag& bag : bags) {
    if (bag.size() == 0) throw TrainError("empty bag");
    if (bag.counts.classes() != data.classes || bag.counts.bag_size() != bag.size())
      throw TrainError("bag counts inconsistent with bag");
    for (std::size_t i : bag.instance_indices) {
      if (i >= data.size()) throw TrainError("bag index out of range");
      if (used[i]) throw TrainError("instance appears in more than one bag");
      used[i] = 1;
    }
  }
}

inline TrainResult train(const Dataset& data, const std::vector<Bag>& bags, const TrainConfig& config,
                         const Dataset* test = nullptr, const TrainHooks* hooks = nullptr) {
  if (auto error = validate_config(config)) throw TrainError(*error);
  check_bags(data, bags);

  TrainResult result;
  result.params = make_classifier(config.architecture, data.dim(), data.classes, config.seed);
  const std::size_t per_epoch = steps_per_epoch(bags.size(), config.bags_per_step);
  OptimizerState optimizer = make_optimizer(result.params, config.learning_rate, config.momentum,
                                            config.weight_decay, per_epoch * config.epochs);

  auto diverged = [&](const std::string& what, std::size_t epoch, std::size_t step) {
    return TrainingDiverged(what + " at epoch " + std::to_string(epoch) + " step " + std::to_string(step),
                            result.params);
  };
  auto guarded_forward = [&](const Eigen::MatrixXd& inputs, std::size_t epoch, std::size_t step) {
    try {
      return forward_batch(result.params, inputs);
    } catch (const ClassifierError& e) {
      throw diverged(e.what(), epoch, step);
    }
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics metrics;
    metrics.epoch = epoch;
    std::size_t seen = 0, selected = 0, selected_correct = 0;

    const auto schedule = epoch_schedule(bags.size(), config.bags_per_step, config.seed, epoch);
    for (std::size_t step = 0; step < schedule.size(); ++step) {
      const auto [rows, layout] = gather_step(bags, schedule[step]);
      const Eigen::MatrixXd weak_inputs =
          augment(data, rows, config.weak_noise, config.seed, epoch, step, View::weak);
      const ForwardCache weak = guarded_forward(weak_inputs, epoch, step);

      std::vector<AssignmentResult> assignments;
      assignments.reserve(layout.bag_count());
      for (std::size_t b = 0; b < layout.bag_count(); ++b) {
        const Bag& bag = bags[schedule[step][b]];
        AssignmentResult assignment =
            assign_pseudo_labels(weak.probs.middleRows(layout.begin(b), layout.rows(b)), bag.counts);
        if (label_histogram(assignment.labels, data.classes) != bag.counts)
          throw TrainError("pseudo-labels violate the bag's class counts");
        if (hooks && hooks->on_assignment) hooks->on_assignment(View::weak, bag, assignment);
        for (std::size_t j = 0; j < bag.size(); ++j) {
          if (!gated_in(assignment, j, config.tau)) continue;
          ++selected;
          if (assignment.labels[j] == data.labels[bag.instance_indices[j]]) ++selected_correct;
        }
        seen += bag.size();
        assignments.push_back(std::move(assignment));
      }

      StepObjective objective;
      if (config.lambda > 0.0) {
        const Eigen::MatrixXd strong_inputs =
            augment(data, rows, config.strong_noise, config.seed, epoch, step, View::strong);
        const ForwardCache strong = guarded_forward(strong_inputs, epoch, step);
        if (hooks && hooks->on_instance_loss)
          for (std::size_t b = 0; b < layout.bag_count(); ++b)
            hooks->on_instance_loss(View::strong, bags[schedule[step][b]], assignments[b]);
        objective = step_objective(result.params, layout, weak, &strong, assignments, config);
      } else {
        objective = step_objective(result.params, layout, weak, nullptr, assignments, config);
      }
      if (!std::isfinite(objective.total)) throw diverged("non-finite loss", epoch, step);

      const ClassifierParams before = result.params;
      sgd_step(result.params, objective.grad, optimizer);
      bool finite = true;
      result.params.for_each_value([&](double v) { finite = finite && std::isfinite(v); });
      if (!finite) {
        result.params = before;
        throw diverged("non-finite parameters", epoch, step);
      }
      if (hooks && hooks->on_step) hooks->on_step(epoch, step, result.params);
      metrics.bag_loss += objective.bag_term;
      metrics.instance_loss += objective.instance_term;
    }

    metrics.bag_loss /= static_cast<double>(schedule.size());
    metrics.instance_loss /= static_cast<double>(schedule.size());
    metrics.pseudo_label_ratio = seen ? static_cast<double>(selected) / static_cast<double>(seen) : 0.0;
    metrics.pseudo_label_accuracy =
        selected ? static_cast<double>(selected_correct) / static_cast<double>(selected) : 0.0;
    if (test) metrics.test_accuracy = evaluate(result.params, *test);
    result.metrics.push_back(metrics);
  }
  return result;
}

}  // namespace llpdc
