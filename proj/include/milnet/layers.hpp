#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "milnet/errors.hpp"
#include "milnet/numerics.hpp"

namespace milnet {

enum class Activation { ReLU, Sigmoid, None };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::None: return "none";
  }
  return "?";
}

/// Logistic function, evaluated on the branch that cannot overflow.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// Fully connected layer y = act(W x + b) over a batch of row vectors.
///
/// The layer keeps its gradient and momentum buffers alongside the
/// parameters. Gradients accumulate across backward calls until zero_grad(),
/// which lets several loss heads feed the same trunk layer.
class DenseLayer {
 public:
  DenseLayer() = default;

  DenseLayer(Matrix weights, Vector bias, Activation activation)
      : weights_(std::move(weights)), bias_(std::move(bias)), activation_(activation) {
    if (weights_.rows() != bias_.size()) {
      throw ShapeError("DenseLayer: weights " + shape_str(weights_.rows(), weights_.cols()) +
                       " vs bias of length " + std::to_string(bias_.size()));
    }
    if (weights_.rows() < 1 || weights_.cols() < 1) {
      throw ShapeError("DenseLayer: empty weight matrix");
    }
    grad_weights_ = Matrix::Zero(weights_.rows(), weights_.cols());
    momentum_weights_ = Matrix::Zero(weights_.rows(), weights_.cols());
    grad_bias_ = Vector::Zero(bias_.size());
    momentum_bias_ = Vector::Zero(bias_.size());
  }

  // Glorot-uniform weights, zero bias.
  static DenseLayer glorot(Rng& rng, Eigen::Index in, Eigen::Index out, Activation activation) {
    return DenseLayer(glorot_uniform(rng, in, out), Vector::Zero(out), activation);
  }

  Eigen::Index in_dim() const { return weights_.cols(); }
  Eigen::Index out_dim() const { return weights_.rows(); }
  Activation activation() const { return activation_; }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(weights_.size() + bias_.size());
  }

  const Matrix& weights() const { return weights_; }
  const Vector& bias() const { return bias_; }
  Matrix& weights() { return weights_; }
  Vector& bias() { return bias_; }
  const Matrix& grad_weights() const { return grad_weights_; }
  const Vector& grad_bias() const { return grad_bias_; }
  Matrix& grad_weights() { return grad_weights_; }
  Vector& grad_bias() { return grad_bias_; }
  Matrix& momentum_weights() { return momentum_weights_; }
  Vector& momentum_bias() { return momentum_bias_; }
  const Matrix& momentum_weights() const { return momentum_weights_; }
  const Vector& momentum_bias() const { return momentum_bias_; }

  bool has_cache() const { return has_cache_; }
  // Pre-activations of the most recent forward (rows = samples).
  const Matrix& cached_preactivation() const { return pre_; }

  /// Rows of `x` are samples. Caches input and pre-activation for backward().
  Matrix forward(const Matrix& x) {
    check_input(x);
    input_ = x;
    pre_ = preactivation(x);
    out_ = activate(pre_);
    has_cache_ = true;
    return out_;
  }

  /// Same arithmetic as forward() without touching the caches.
  Matrix apply(const Matrix& x) const {
    check_input(x);
    return activate(preactivation(x));
  }

  Vector forward_vector(const Vector& x) {
    if (x.size() != in_dim()) {
      throw ShapeError("DenseLayer::forward: input of length " + std::to_string(x.size()) +
                       " vs weights " + shape_str(weights_.rows(), weights_.cols()));
    }
    return forward(Matrix(x.transpose())).row(0).transpose();
  }

  /// Accumulates dLoss/dW and dLoss/db; returns dLoss/dx (same shape as the
  /// cached input).
  Matrix backward(const Matrix& grad_out, bool input_grad = true) {
    require_cache(grad_out, "backward");
    Matrix grad_pre = grad_out;
    switch (activation_) {
      case Activation::ReLU:
        // Subgradient 0 at the kink.
        grad_pre = (pre_.array() > 0.0).select(grad_out.array(), 0.0).matrix();
        break;
      case Activation::Sigmoid:
        grad_pre = grad_out.array() * out_.array() * (1.0 - out_.array());
        break;
      case Activation::None: break;
    }
    return accumulate(grad_pre, input_grad);
  }

  Vector backward_vector(const Vector& grad_out) {
    return backward(Matrix(grad_out.transpose())).row(0).transpose();
  }

  /// Same as backward() but `grad_pre` is already dLoss/d(Wx+b); used where
  /// the activation derivative has been folded into the loss (sigmoid + BCE).
  Matrix backward_preactivation(const Matrix& grad_pre, bool input_grad = true) {
    require_cache(grad_pre, "backward_preactivation");
    return accumulate(grad_pre, input_grad);
  }

  void zero_grad() {
    grad_weights_.setZero();
    grad_bias_.setZero();
  }

 private:
  void require_cache(const Matrix& grad, const char* where) const {
    if (!has_cache_) {
      throw ShapeError(std::string("DenseLayer::") + where + " called before forward");
    }
    if (grad.rows() != pre_.rows() || grad.cols() != pre_.cols()) {
      throw ShapeError(std::string("DenseLayer::") + where + ": gradient " +
                       shape_str(grad.rows(), grad.cols()) + " vs cached output " +
                       shape_str(pre_.rows(), pre_.cols()));
    }
  }

  void check_input(const Matrix& x) const {
    if (x.cols() != in_dim()) {
      throw ShapeError("DenseLayer::forward: input " + shape_str(x.rows(), x.cols()) +
                       " vs weights " + shape_str(weights_.rows(), weights_.cols()));
    }
  }

  Matrix preactivation(const Matrix& x) const {
    Matrix pre(x.rows(), out_dim());
    pre.noalias() = x * weights_.transpose();
    pre.rowwise() += bias_.transpose();
    return pre;
  }

  Matrix activate(const Matrix& pre) const {
    switch (activation_) {
      case Activation::ReLU: return pre.cwiseMax(0.0);
      case Activation::Sigmoid: return pre.unaryExpr([](double v) { return sigmoid(v); });
      case Activation::None: break;
    }
    return pre;
  }

  // Without input_grad the (unused) gradient w.r.t. the input is skipped and
  // an empty matrix is returned.
  Matrix accumulate(const Matrix& grad_pre, bool input_grad) {
    grad_weights_.noalias() += grad_pre.transpose() * input_;
    grad_bias_ += grad_pre.colwise().sum().transpose();
    if (!input_grad) return Matrix();
    return grad_pre * weights_;
  }

  Matrix weights_;
  Vector bias_;
  Matrix grad_weights_;
  Vector grad_bias_;
  Matrix momentum_weights_;
  Vector momentum_bias_;
  Activation activation_ = Activation::None;

  Matrix input_;
  Matrix pre_;
  Matrix out_;
  bool has_cache_ = false;
};

/// Inverted dropout: kept units are scaled by 1/(1-rate) during training so
/// inference is the identity.
class Dropout {
 public:
  explicit Dropout(double rate = 0.0) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
  }

  double rate() const { return rate_; }
  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }
  const Matrix& mask() const { return mask_; }

  Matrix forward(const Matrix& x, Rng& rng) {
    if (!training_ || rate_ == 0.0) {
      mask_.resize(0, 0);
      return x;
    }
    const double keep_scale = 1.0 / (1.0 - rate_);
    mask_.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask_.size(); ++i) {
      mask_.data()[i] = uniform01(rng) < rate_ ? 0.0 : keep_scale;
    }
    return x.cwiseProduct(mask_);
  }

  Vector forward_vector(const Vector& x, Rng& rng) {
    return forward(Matrix(x.transpose()), rng).row(0).transpose();
  }

  Matrix backward(const Matrix& grad_out) const {
    if (mask_.size() == 0) return grad_out;
    if (grad_out.rows() != mask_.rows() || grad_out.cols() != mask_.cols()) {
      throw ShapeError("Dropout::backward: gradient " + shape_str(grad_out.rows(), grad_out.cols()) +
                       " vs mask " + shape_str(mask_.rows(), mask_.cols()));
    }
    return grad_out.cwiseProduct(mask_);
  }

 private:
  double rate_;
  bool training_ = false;
  Matrix mask_;
};

}  // namespace milnet
