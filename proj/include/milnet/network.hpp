#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "milnet/errors.hpp"
#include "milnet/layers.hpp"
#include "milnet/loss.hpp"
#include "milnet/numerics.hpp"
#include "milnet/pooling.hpp"

namespace milnet {

/// The four architectures:
///   MiNet   - instance scores from the last fc layer, pooled into a bag score
///   MINet   - instance features pooled into a bag vector, then scored
///   MINetDS - MINet with a pooled sigmoid head after every trunk layer
///   MINetRC - MINet whose pooled trunk outputs are summed (bag-level residuals)
enum class Variant { MiNet, MINet, MINetDS, MINetRC };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::MiNet: return "mi_net";
    case Variant::MINet: return "MI_net";
    case Variant::MINetDS: return "MI_net_DS";
    case Variant::MINetRC: return "MI_net_RC";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "mi_net" || s == "instance") return Variant::MiNet;
  if (s == "MI_net" || s == "embedded") return Variant::MINet;
  if (s == "MI_net_DS" || s == "ds") return Variant::MINetDS;
  if (s == "MI_net_RC" || s == "rc") return Variant::MINetRC;
  return std::nullopt;
}

inline std::vector<int> default_widths(Variant v) {
  if (v == Variant::MINetRC) return {128, 128, 128, 1};
  return {256, 128, 64, 1};
}

struct NetworkSpec {
  Variant variant = Variant::MINet;
  std::vector<int> widths = default_widths(Variant::MINet);  // hidden widths followed by 1
  PoolingSpec pooling{};
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
  // Per-head loss weights for MINetDS; empty means 1.0 for every head.
  std::vector<double> ds_weights;

  static NetworkSpec defaults(Variant v) {
    NetworkSpec s;
    s.variant = v;
    s.widths = default_widths(v);
    return s;
  }

  std::size_t hidden_layers() const { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t head_count() const { return variant == Variant::MINetDS ? hidden_layers() : 1; }

  double head_weight(std::size_t h) const { return ds_weights.empty() ? 1.0 : ds_weights.at(h); }

  void validate() const {
    if (widths.size() < 2) throw ConfigError("widths needs at least one hidden layer and the final 1");
    if (widths.back() != 1) throw ConfigError("last width must be 1 (score neuron)");
    for (int w : widths) {
      if (w < 1) throw ConfigError("widths must be positive");
    }
    if (variant == Variant::MINetRC) {
      for (std::size_t i = 1; i < hidden_layers(); ++i) {
        if (widths[i] != widths[0]) throw ConfigError("MI_net_RC needs equal hidden widths");
      }
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    pooling.validate();
    if (!ds_weights.empty()) {
      if (variant != Variant::MINetDS) throw ConfigError("ds_weights only applies to MI_net_DS");
      if (ds_weights.size() != head_count()) {
        throw ConfigError("ds_weights needs " + std::to_string(head_count()) + " values");
      }
      for (double w : ds_weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("ds_weights must be finite and >= 0");
      }
    }
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Result of one bag forward pass.
struct BagForward {
  double bag_score = 0.0;
  std::vector<double> level_scores;                  // one per head
  std::vector<double> level_complements;             // 1 - level score, computed without cancellation
  std::optional<std::vector<double>> instance_scores;  // MiNet only
  std::vector<PoolCache> pool_caches;                // one per pooling tap
  std::uint64_t generation = 0;
  bool training = false;
};

class Network {
 public:
  static Network build(const NetworkSpec& spec, Eigen::Index input_dim) {
    spec.validate();
    if (input_dim < 1) throw ConfigError("input dimension must be >= 1");
    Network net;
    net.spec_ = spec;
    net.input_dim_ = input_dim;
    Rng rng(spec.seed);
    Eigen::Index in = input_dim;
    for (std::size_t l = 0; l < spec.hidden_layers(); ++l) {
      net.trunk_.push_back(DenseLayer::glorot(rng, in, spec.widths[l], Activation::ReLU));
      net.dropout_.emplace_back(spec.dropout_rate);
      in = spec.widths[l];
    }
    if (spec.variant == Variant::MINetDS) {
      for (std::size_t l = 0; l < spec.hidden_layers(); ++l) {
        net.heads_.push_back(DenseLayer::glorot(rng, spec.widths[l], 1, Activation::Sigmoid));
      }
    } else {
      net.heads_.push_back(DenseLayer::glorot(rng, in, 1, Activation::Sigmoid));
    }
    return net;
  }

  // Rebuild from stored parameters (deserialization).
  static Network from_layers(const NetworkSpec& spec, Eigen::Index input_dim, std::vector<DenseLayer> trunk,
                             std::vector<DenseLayer> heads) {
    Network net = build(spec, input_dim);
    if (trunk.size() != net.trunk_.size() || heads.size() != net.heads_.size()) {
      throw ShapeError("Network::from_layers: layer count does not match spec");
    }
    for (std::size_t i = 0; i < trunk.size(); ++i) check_same_shape(net.trunk_[i], trunk[i]);
    for (std::size_t i = 0; i < heads.size(); ++i) check_same_shape(net.heads_[i], heads[i]);
    net.trunk_ = std::move(trunk);
    net.heads_ = std::move(heads);
    return net;
  }

  const NetworkSpec& spec() const { return spec_; }
  Eigen::Index input_dim() const { return input_dim_; }
  std::vector<DenseLayer>& trunk() { return trunk_; }
  std::vector<DenseLayer>& heads() { return heads_; }
  const std::vector<DenseLayer>& trunk() const { return trunk_; }
  const std::vector<DenseLayer>& heads() const { return heads_; }

  std::size_t trunk_parameter_count() const {
    return std::accumulate(trunk_.begin(), trunk_.end(), std::size_t{0},
                           [](std::size_t n, const DenseLayer& l) { return n + l.parameter_count(); });
  }
  std::size_t head_parameter_count() const {
    return std::accumulate(heads_.begin(), heads_.end(), std::size_t{0},
                           [](std::size_t n, const DenseLayer& l) { return n + l.parameter_count(); });
  }
  std::size_t parameter_count() const { return trunk_parameter_count() + head_parameter_count(); }

  bool training() const { return training_; }
  void set_training(bool on) {
    training_ = on;
    for (auto& d : dropout_) d.set_training(on);
  }

  template <typename F>
  void for_each_layer(F&& f) {
    for (auto& l : trunk_) f(l);
    for (auto& l : heads_) f(l);
  }

  void zero_grad() {
    for_each_layer([](DenseLayer& l) { l.zero_grad(); });
  }

  /// Dispatches on the variant. `rng` drives dropout and is only needed in
  /// training mode.
  BagForward forward(const Matrix& instances, Rng* rng = nullptr) {
    switch (spec_.variant) {
      case Variant::MiNet: return forward_mi_net(instances, rng);
      case Variant::MINet: return forward_mi_net_embedded(instances, rng);
      case Variant::MINetDS: return forward_ds(instances, rng);
      case Variant::MINetRC: return forward_rc(instances, rng);
    }
    throw ShapeError("unknown variant");
  }

  // Instance space: trunk -> per-instance sigmoid score -> pooled bag score.
  BagForward forward_mi_net(const Matrix& instances, Rng* rng = nullptr) {
    require_variant(Variant::MiNet, "forward_mi_net");
    auto fwd = begin_forward(instances);
    Matrix x = instances;
    for (std::size_t l = 0; l < trunk_.size(); ++l) x = run_trunk_layer(l, x, rng);
    const Matrix p = heads_[0].forward(x);  // m x 1
    auto pooled = pool_forward(spec_.pooling, p);
    fwd.instance_scores = std::vector<double>(p.data(), p.data() + p.size());
    fwd.level_scores = {pooled.output[0]};
    fwd.level_complements = {pooled_complement(heads_[0].cached_preactivation(), pooled.cache)};
    fwd.pool_caches.push_back(std::move(pooled.cache));
    return finish(std::move(fwd));
  }

  // Embedded space: trunk -> pooled bag vector -> sigmoid head.
  BagForward forward_mi_net_embedded(const Matrix& instances, Rng* rng = nullptr) {
    require_variant(Variant::MINet, "forward_mi_net_embedded");
    auto fwd = begin_forward(instances);
    Matrix x = instances;
    for (std::size_t l = 0; l < trunk_.size(); ++l) x = run_trunk_layer(l, x, rng);
    auto pooled = pool_forward(spec_.pooling, x);
    score_head(0, pooled.output, fwd);
    fwd.pool_caches.push_back(std::move(pooled.cache));
    return finish(std::move(fwd));
  }

  // Deep supervision: one pooled head per trunk layer, bag score = mean.
  BagForward forward_ds(const Matrix& instances, Rng* rng = nullptr) {
    require_variant(Variant::MINetDS, "forward_ds");
    auto fwd = begin_forward(instances);
    Matrix x = instances;
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      x = run_trunk_layer(l, x, rng);
      auto pooled = pool_forward(spec_.pooling, x);
      score_head(l, pooled.output, fwd);
      fwd.pool_caches.push_back(std::move(pooled.cache));
    }
    return finish(std::move(fwd));
  }

  // Residual bag representation: X^1 = pool(x^1), X^l = pool(x^l) + X^(l-1).
  BagForward forward_rc(const Matrix& instances, Rng* rng = nullptr) {
    require_variant(Variant::MINetRC, "forward_rc");
    auto fwd = begin_forward(instances);
    Matrix x = instances;
    Vector bag_vector;
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      x = run_trunk_layer(l, x, rng);
      auto pooled = pool_forward(spec_.pooling, x);
      if (l == 0) {
        bag_vector = pooled.output;
      } else {
        bag_vector += pooled.output;
      }
      fwd.pool_caches.push_back(std::move(pooled.cache));
    }
    score_head(0, bag_vector, fwd);
    return finish(std::move(fwd));
  }

  /// Loss of a forward result: BCE on the single head, or the weighted sum
  /// of per-head BCEs for MINetDS.
  double loss(const BagForward& fwd, int label) const {
    if (spec_.variant == Variant::MINetDS) {
      double total = 0.0;
      for (std::size_t h = 0; h < fwd.level_scores.size(); ++h) {
        total += spec_.head_weight(h) * bce_loss(fwd.level_scores[h], fwd.level_complements[h], label);
      }
      return total;
    }
    return bce_loss(fwd.level_scores[0], fwd.level_complements[0], label);
  }

  /// Accumulates dLoss/dtheta for the most recent forward pass into every
  /// layer's gradient buffers.
  void backward(const BagForward& fwd, int label) {
    if (fwd.generation != generation_ || fwd.generation == 0) {
      throw ShapeError("Network::backward: stale forward cache");
    }
    if (!fwd.training) throw ShapeError("Network::backward: forward was not run in training mode");
    // Sigmoid + BCE folded: dLoss/dz = S - Y, taken from the complement when Y = 1.
    auto dz = [&](std::size_t h) { return label == 1 ? -fwd.level_complements[h] : fwd.level_scores[h]; };
    const std::size_t depth = trunk_.size();
    std::vector<Matrix> taps(depth);  // extra gradient entering each trunk output

    switch (spec_.variant) {
      case Variant::MiNet: {
        const Vector dscore = Vector::Constant(1, bce_grad(fwd.level_scores[0], fwd.level_complements[0], label));
        const Matrix dp = pool_backward(fwd.pool_caches[0], spec_.pooling, dscore);
        taps[depth - 1] = heads_[0].backward(dp);
        break;
      }
      case Variant::MINet: {
        taps[depth - 1] = pooled_head_backward(0, fwd.pool_caches[0], dz(0));
        break;
      }
      case Variant::MINetDS: {
        for (std::size_t l = 0; l < depth; ++l) {
          const double g = spec_.head_weight(l) * dz(l);
          taps[l] = pooled_head_backward(l, fwd.pool_caches[l], g);
        }
        break;
      }
      case Variant::MINetRC: {
        const Vector dbag = heads_[0].backward_preactivation(Matrix::Constant(1, 1, dz(0))).row(0).transpose();
        for (std::size_t l = 0; l < depth; ++l) taps[l] = pool_backward(fwd.pool_caches[l], spec_.pooling, dbag);
        break;
      }
    }

    Matrix grad;
    for (std::size_t l = depth; l-- > 0;) {
      if (taps[l].size() != 0) {
        if (grad.size() == 0) {
          grad = std::move(taps[l]);
        } else {
          grad += taps[l];
        }
      }
      if (grad.size() == 0) continue;
      grad = dropout_[l].backward(grad);
      grad = trunk_[l].backward(grad, /*input_grad=*/l > 0);
    }
  }

  /// Inference-mode bag score without touching any cache (const, so safe to
  /// call concurrently on a shared trained network).
  double score(const Matrix& instances) const {
    check_instances(instances);
    Matrix x = instances;
    std::vector<double> levels;
    Vector bag_vector;
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      x = trunk_[l].apply(x);
      if (spec_.variant == Variant::MINetDS) {
        levels.push_back(apply_head(l, pool_forward(spec_.pooling, x).output));
      } else if (spec_.variant == Variant::MINetRC) {
        const Vector pooled = pool_forward(spec_.pooling, x).output;
        if (l == 0) {
          bag_vector = pooled;
        } else {
          bag_vector += pooled;
        }
      }
    }
    switch (spec_.variant) {
      case Variant::MiNet: return pool_forward(spec_.pooling, heads_[0].apply(x)).output[0];
      case Variant::MINet: return apply_head(0, pool_forward(spec_.pooling, x).output);
      case Variant::MINetRC: return apply_head(0, bag_vector);
      case Variant::MINetDS: return mean_of(levels);
    }
    return 0.0;
  }

 private:
  Network() = default;

  static void check_same_shape(const DenseLayer& expected, const DenseLayer& got) {
    if (expected.in_dim() != got.in_dim() || expected.out_dim() != got.out_dim() ||
        expected.activation() != got.activation()) {
      throw ShapeError("Network::from_layers: layer shape " + shape_str(got.out_dim(), got.in_dim()) +
                       " does not match spec " + shape_str(expected.out_dim(), expected.in_dim()));
    }
  }

  static double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }

  void require_variant(Variant v, const char* where) const {
    if (spec_.variant != v) {
      throw ShapeError(std::string("Network::") + where + " called on a " + std::string(to_string(spec_.variant)) +
                       " network");
    }
  }

  void check_instances(const Matrix& instances) const {
    if (instances.rows() < 1) throw ShapeError("bag has zero instances");
    if (instances.cols() != input_dim_) {
      throw ShapeError("instance dimension " + std::to_string(instances.cols()) + " does not match network input " +
                       std::to_string(input_dim_));
    }
  }

  BagForward begin_forward(const Matrix& instances) {
    check_instances(instances);
    BagForward fwd;
    fwd.generation = ++generation_;
    fwd.training = training_;
    return fwd;
  }

  BagForward finish(BagForward fwd) const {
    fwd.bag_score = mean_of(fwd.level_scores);
    return fwd;
  }

  Matrix run_trunk_layer(std::size_t l, const Matrix& x, Rng* rng) {
    Matrix h = trunk_[l].forward(x);
    auto& drop = dropout_[l];
    if (!drop.training() || drop.rate() == 0.0) return drop.forward(h, scratch_rng_);
    if (rng == nullptr) throw ShapeError("Network::forward: training-mode dropout needs an Rng");
    return drop.forward(h, *rng);
  }

  void score_head(std::size_t h, const Vector& bag_vector, BagForward& fwd) {
    fwd.level_scores.push_back(heads_[h].forward(Matrix(bag_vector.transpose()))(0, 0));
    fwd.level_complements.push_back(sigmoid(-heads_[h].cached_preactivation()(0, 0)));
  }

  // 1 - pool(sigmoid(z)) from q = sigmoid(-z): max picks q at the argmax,
  // mean averages q, LSE uses 1 - LSE_r(1 - q) = -LSE_r(-q).
  double pooled_complement(const Matrix& z, const PoolCache& cache) const {
    const Matrix neg_q = z.unaryExpr([](double v) { return -sigmoid(-v); });
    if (spec_.pooling.method == PoolMethod::Max) return -neg_q(cache.argmax[0], 0);
    return -pool_forward(spec_.pooling, neg_q).output[0];
  }

  double apply_head(std::size_t h, const Vector& bag_vector) const {
    return heads_[h].apply(Matrix(bag_vector.transpose()))(0, 0);
  }

  // Sigmoid + BCE folded: dLoss/dz = weight * (S - Y).
  Matrix pooled_head_backward(std::size_t h, const PoolCache& cache, double dz) {
    const Vector dbag = heads_[h].backward_preactivation(Matrix::Constant(1, 1, dz)).row(0).transpose();
    return pool_backward(cache, spec_.pooling, dbag);
  }

  NetworkSpec spec_;
  Eigen::Index input_dim_ = 0;
  std::vector<DenseLayer> trunk_;
  std::vector<Dropout> dropout_;
  std::vector<DenseLayer> heads_;
  bool training_ = false;
  std::uint64_t generation_ = 0;
  Rng scratch_rng_{0};
};

}  // namespace milnet
