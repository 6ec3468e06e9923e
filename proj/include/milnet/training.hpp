#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "milnet/data.hpp"
#include "milnet/errors.hpp"
#include "milnet/loss.hpp"
#include "milnet/network.hpp"

namespace milnet {

struct TrainConfig {
  double learning_rate = 5e-4;
  double momentum = 0.9;
  double weight_decay = 5e-3;
  int epochs = 50;
  std::uint64_t seed = 0;
  bool shuffle_each_epoch = true;
  // Evaluate inference-mode training accuracy after every epoch.
  bool track_accuracy = true;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainTrace {
  std::vector<double> loss;              // mean training-mode loss per epoch
  std::vector<double> accuracy;          // inference-mode training accuracy per epoch
  std::vector<double> seconds_per_bag;   // wall clock of the update pass per epoch

  std::size_t epochs() const { return loss.size(); }
};

inline int predict_label(double score) { return score >= 0.5 ? 1 : 0; }

namespace detail {

inline void check_finite_grads(const DenseLayer& layer, const std::string& name) {
  if (!layer.grad_weights().allFinite() || !layer.grad_bias().allFinite()) {
    throw NumericalError("non-finite gradient in " + name);
  }
}

inline void momentum_update(Matrix& theta, Matrix& velocity, const Matrix& grad, const TrainConfig& cfg) {
  velocity = cfg.momentum * velocity - cfg.learning_rate * (grad + cfg.weight_decay * theta);
  theta += velocity;
}

inline void momentum_update(Vector& theta, Vector& velocity, const Vector& grad, const TrainConfig& cfg) {
  velocity = cfg.momentum * velocity - cfg.learning_rate * (grad + cfg.weight_decay * theta);
  theta += velocity;
}

}  // namespace detail

/// v <- momentum * v - lr * (grad + weight_decay * theta); theta <- theta + v;
/// then zero the gradients. Throws NumericalError naming the first layer with
/// a non-finite gradient, before any parameter is touched.
inline void sgd_step(Network& net, const TrainConfig& cfg) {
  for (std::size_t i = 0; i < net.trunk().size(); ++i) {
    detail::check_finite_grads(net.trunk()[i], "trunk layer " + std::to_string(i + 1));
  }
  for (std::size_t i = 0; i < net.heads().size(); ++i) {
    detail::check_finite_grads(net.heads()[i], "head " + std::to_string(i + 1));
  }
  net.for_each_layer([&](DenseLayer& layer) {
    detail::momentum_update(layer.weights(), layer.momentum_weights(), layer.grad_weights(), cfg);
    detail::momentum_update(layer.bias(), layer.momentum_bias(), layer.grad_bias(), cfg);
    layer.zero_grad();
  });
}

/// Fraction of bags whose thresholded score matches the label.
inline double dataset_accuracy(const Network& net, const BagDataset& ds) {
  std::size_t correct = 0;
  for (const auto& bag : ds.bags()) correct += predict_label(net.score(bag.instances)) == bag.label;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// One bag per SGD step, `cfg.epochs` passes, optionally reshuffled each epoch.
inline TrainTrace train(Network& net, const BagDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.dim() != net.input_dim()) {
    throw ShapeError("train: dataset dimension " + std::to_string(data.dim()) + " vs network input " +
                     std::to_string(net.input_dim()));
  }
  const Rng root(cfg.seed);
  Rng order_rng = root.split(1);
  Rng dropout_rng = root.split(2);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainTrace trace;
  net.zero_grad();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle_each_epoch) shuffle(order, order_rng);
    net.set_training(true);
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (auto i : order) {
      const Bag& bag = data[i];
      const BagForward fwd = net.forward(bag.instances, &dropout_rng);
      const double loss = net.loss(fwd, bag.label);
      if (!std::isfinite(loss)) throw NumericalError("non-finite loss on bag '" + bag.id + "'");
      loss_sum += loss;
      net.backward(fwd, bag.label);
      sgd_step(net, cfg);
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    net.set_training(false);

    trace.loss.push_back(loss_sum / static_cast<double>(data.size()));
    trace.seconds_per_bag.push_back(elapsed.count() / static_cast<double>(data.size()));
    if (cfg.track_accuracy) trace.accuracy.push_back(dataset_accuracy(net, data));
  }
  return trace;
}

}  // namespace milnet
