#pragma once

// Small softmax classifiers with hand-written backprop, plus SGD with
// momentum on the truncated cosine schedule lr = lr0 * cos(7*pi*k / (16*K)).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace llpdc {

struct Architecture {
  enum class Kind { linear, one_hidden };
  Kind kind = Kind::one_hidden;
  std::size_t hidden = 64;

  static Architecture linear() { return {Kind::linear, 0}; }
  static Architecture one_hidden(std::size_t width = 64) { return {Kind::one_hidden, width}; }
  bool operator==(const Architecture&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Also used as the gradient container (same shapes).
struct ClassifierParams {
  Architecture architecture;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  std::vector<DenseLayer> layers;

  template <class Fn>
  void for_each_value(Fn&& fn) {
    for (auto& layer : layers) {
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) fn(layer.weight.data()[i]);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) fn(layer.bias.data()[i]);
    }
  }
  template <class Fn>
  void for_each_value(Fn&& fn) const {
    for (const auto& layer : layers) {
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) fn(layer.weight.data()[i]);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) fn(layer.bias.data()[i]);
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return n;
  }

  ClassifierParams zeros_like() const {
    ClassifierParams out = *this;
    for (auto& layer : out.layers) {
      layer.weight.setZero();
      layer.bias.setZero();
    }
    return out;
  }

  ClassifierParams& operator+=(const ClassifierParams& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += other.layers[i].weight;
      layers[i].bias += other.layers[i].bias;
    }
    return *this;
  }

  ClassifierParams& operator*=(double scale) {
    for (auto& layer : layers) {
      layer.weight *= scale;
      layer.bias *= scale;
    }
    return *this;
  }
};

class ClassifierError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool same_shape(const ClassifierParams& a, const ClassifierParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight.rows() != b.layers[i].weight.rows() ||
        a.layers[i].weight.cols() != b.layers[i].weight.cols() ||
        a.layers[i].bias.size() != b.layers[i].bias.size())
      return false;
  }
  return true;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline ClassifierParams make_classifier(Architecture architecture, std::size_t input_dim, std::size_t classes,
                                        std::uint64_t seed) {
  if (input_dim == 0 || classes < 2) throw ClassifierError("classifier needs input_dim >= 1 and >= 2 classes");
  if (architecture.kind == Architecture::Kind::one_hidden && architecture.hidden == 0)
    throw ClassifierError("hidden width must be positive");

  std::mt19937_64 rng(seed);
  auto make_layer = [&](std::size_t in, std::size_t out) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uniform(-scale, scale);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = uniform(rng);
    return layer;
  };

  ClassifierParams params{architecture, input_dim, classes, {}};
  if (architecture.kind == Architecture::Kind::linear) {
    params.layers.push_back(make_layer(input_dim, classes));
  } else {
    params.layers.push_back(make_layer(input_dim, architecture.hidden));
    params.layers.push_back(make_layer(architecture.hidden, classes));
  }
  return params;
}

/// Row-wise softmax with max subtraction.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - peak).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Activations kept for the backward pass; inputs are rows.
struct ForwardCache {
  Eigen::MatrixXd inputs;       // n x d
  Eigen::MatrixXd hidden_pre;   // n x h (one_hidden only)
  Eigen::MatrixXd hidden;       // n x h
  Eigen::MatrixXd logits;       // n x l
  Eigen::MatrixXd probs;        // n x l
};

namespace detail {

inline void require_finite(const Eigen::MatrixXd& values, const std::string& where) {
  if (!values.allFinite()) throw ClassifierError("non-finite values in " + where);
}

}  // namespace detail

inline ForwardCache forward_batch(const ClassifierParams& params, const Eigen::MatrixXd& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != params.input_dim)
    throw ClassifierError("input dimension mismatch");
  detail::require_finite(inputs, "input");

  ForwardCache cache;
  cache.inputs = inputs;
  const Eigen::MatrixXd* layer_input = &cache.inputs;
  if (params.architecture.kind == Architecture::Kind::one_hidden) {
    const auto& layer = params.layers[0];
    cache.hidden_pre = (inputs * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    detail::require_finite(cache.hidden_pre, "hidden layer");
    cache.hidden = cache.hidden_pre.cwiseMax(0.0);
    layer_input = &cache.hidden;
  }
  const auto& head = params.layers.back();
  cache.logits = ((*layer_input) * head.weight.transpose()).rowwise() + head.bias.transpose();
  detail::require_finite(cache.logits, "output layer");
  cache.probs = softmax_rows(cache.logits);
  return cache;
}

/// Class distribution g(x) = softmax(f(x)) for one feature vector.
inline Eigen::VectorXd forward(const ClassifierParams& params, const Eigen::VectorXd& x) {
  return forward_batch(params, x.transpose()).probs.row(0).transpose();
}

/// Backpropagates dL/dlogits (n x l) into a parameter-shaped gradient.
inline ClassifierParams backward(const ClassifierParams& params, const ForwardCache& cache,
                                 const Eigen::MatrixXd& logit_grad) {
  ClassifierParams grad = params.zeros_like();
  if (params.architecture.kind == Architecture::Kind::linear) {
    grad.layers[0].weight = logit_grad.transpose() * cache.inputs;
    grad.layers[0].bias = logit_grad.colwise().sum().transpose();
  } else {
    grad.layers[1].weight = logit_grad.transpose() * cache.hidden;
    grad.layers[1].bias = logit_grad.colwise().sum().transpose();
    Eigen::MatrixXd hidden_grad = logit_grad * params.layers[1].weight;
    hidden_grad = hidden_grad.cwiseProduct((cache.hidden_pre.array() > 0.0).cast<double>().matrix());
    grad.layers[0].weight = hidden_grad.transpose() * cache.inputs;
    grad.layers[0].bias = hidden_grad.colwise().sum().transpose();
  }
  for (std::size_t i = 0; i < grad.layers.size(); ++i) {
    const std::string name = "gradient of layer " + std::to_string(i);
    detail::require_finite(grad.layers[i].weight, name);
    detail::require_finite(grad.layers[i].bias, name);
  }
  return grad;
}

struct LossAndGrad {
  double loss = 0.0;
  ClassifierParams grad;
};

/// Mean cross-entropy against per-row target distributions (n x l).
inline LossAndGrad loss_and_grad(const ClassifierParams& params, const Eigen::MatrixXd& inputs,
                                 const Eigen::MatrixXd& targets) {
  if (targets.rows() != inputs.rows() || static_cast<std::size_t>(targets.cols()) != params.classes)
    throw ClassifierError("target shape mismatch");
  const ForwardCache cache = forward_batch(params, inputs);
  const double n = static_cast<double>(inputs.rows());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < targets.rows(); ++r)
    for (Eigen::Index c = 0; c < targets.cols(); ++c)
      if (targets(r, c) != 0.0) loss -= targets(r, c) * std::log(std::max(cache.probs(r, c), 1e-12));
  loss /= n;
  if (!std::isfinite(loss)) throw ClassifierError("non-finite loss");
  // d/dz of -sum_c t_c log softmax(z)_c is p * sum(t) - t.
  Eigen::MatrixXd logit_grad = cache.probs.array().colwise() * targets.rowwise().sum().array();
  logit_grad -= targets;
  logit_grad /= n;
  return {loss, backward(params, cache, logit_grad)};
}

/// Hard-label overload; labels are zero-based class indices.
inline LossAndGrad loss_and_grad(const ClassifierParams& params, const Eigen::MatrixXd& inputs,
                                 const std::vector<std::size_t>& labels) {
  if (labels.size() != static_cast<std::size_t>(inputs.rows())) throw ClassifierError("label count mismatch");
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(inputs.rows(), static_cast<Eigen::Index>(params.classes));
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= params.classes) throw ClassifierError("label out of range");
    targets(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(labels[r])) = 1.0;
  }
  return loss_and_grad(params, inputs, targets);
}

struct OptimizerState {
  ClassifierParams momentum_buffer;
  double momentum = 0.9;
  double base_lr = 0.03;
  double weight_decay = 5e-4;
  std::uint64_t step = 0;
  std::uint64_t total_steps = 1;
};

inline OptimizerState make_optimizer(const ClassifierParams& params, double base_lr, double momentum,
                                     double weight_decay, std::uint64_t total_steps) {
  if (!(base_lr > 0.0)) throw ClassifierError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ClassifierError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ClassifierError("weight decay must be non-negative");
  if (total_steps == 0) throw ClassifierError("total steps must be positive");
  return {params.zeros_like(), momentum, base_lr, weight_decay, 0, total_steps};
}

inline double cosine_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps) {
  return base_lr * std::cos(7.0 * std::numbers::pi * static_cast<double>(step) /
                            (16.0 * static_cast<double>(total_steps)));
}

inline double current_lr(const OptimizerState& state) {
  return cosine_lr(state.base_lr, state.step, state.total_steps);
}

/// buffer <- mu*buffer + grad + wd*param; param <- param - lr(k)*buffer; k += 1.
inline void sgd_step(ClassifierParams& params, const ClassifierParams& grads, OptimizerState& state) {
  if (state.step >= state.total_steps) throw ClassifierError("optimizer step past the schedule end");
  if (!same_shape(params, grads) || !same_shape(params, state.momentum_buffer))
    throw ClassifierError("gradient shape mismatch");
  const double lr = current_lr(state);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& layer = params.layers[i];
    auto& buffer = state.momentum_buffer.layers[i];
    buffer.weight = state.momentum * buffer.weight + grads.layers[i].weight + state.weight_decay * layer.weight;
    buffer.bias = state.momentum * buffer.bias + grads.layers[i].bias + state.weight_decay * layer.bias;
    layer.weight -= lr * buffer.weight;
    layer.bias -= lr * buffer.bias;
  }
  ++state.step;
}

}  // namespace llpdc
