#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "milnet/network.hpp"

namespace milnet {

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Denominator floor of the relative error, so parameters with near-zero
  // gradient are judged on absolute error.
  double floor = 1e-6;
  int instances = 10;
  Eigen::Index dim = 20;
  std::uint64_t seed = 2024;
  // A draw is rerolled when a ReLU pre-activation or a max-pooling top-2 gap
  // is within this margin, since the loss is not differentiable there.
  double kink_margin = 1e-4;
  int max_rerolls = 20;
  std::vector<int> widths = {64, 32, 16, 1};
  std::vector<int> rc_widths = {32, 32, 32, 1};
};

struct GradcheckResult {
  Variant variant = Variant::MINet;
  PoolMethod pooling = PoolMethod::Max;
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
  int rerolls = 0;
  bool passed = false;

  std::string label() const { return std::string(to_string(variant)) + "/" + std::string(to_string(pooling)); }
};

namespace detail {

// Smallest gap between the two largest positive entries of any column.
inline double max_pool_gap(const Matrix& x) {
  double gap = INFINITY;
  if (x.rows() < 2) return gap;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    double a = -INFINITY, b = -INFINITY;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double v = x(r, c);
      if (v > a) {
        b = a;
        a = v;
      } else if (v > b) {
        b = v;
      }
    }
    if (a > 0.0) gap = std::min(gap, a - b);
  }
  return gap;
}

// True when the draw sits too close to a ReLU kink or a max-pooling switch.
inline bool near_kink(const Network& net, const Matrix& bag, double margin) {
  const auto& spec = net.spec();
  const bool max_pool = spec.pooling.method == PoolMethod::Max;
  Matrix x = bag;
  for (std::size_t l = 0; l < net.trunk().size(); ++l) {
    const DenseLayer& layer = net.trunk()[l];
    const Matrix pre = (x * layer.weights().transpose()).rowwise() + layer.bias().transpose();
    if (pre.cwiseAbs().minCoeff() < margin) return true;
    x = pre.cwiseMax(0.0);
    const bool tapped = spec.variant == Variant::MINetDS || spec.variant == Variant::MINetRC ||
                        (spec.variant == Variant::MINet && l + 1 == net.trunk().size());
    if (max_pool && tapped && max_pool_gap(x) < margin) return true;
  }
  if (max_pool && spec.variant == Variant::MiNet && max_pool_gap(net.heads()[0].apply(x)) < margin) return true;
  return false;
}

inline double inference_loss(Network& net, const Matrix& bag, int label) {
  return net.loss(net.forward(bag), label);
}

}  // namespace detail

/// Analytic gradients vs central differences for one network and bag.
inline double max_relative_gradient_error(Network& net, const Matrix& bag, int label, double step, double floor) {
  net.zero_grad();
  net.set_training(true);
  const auto fwd = net.forward(bag);
  net.backward(fwd, label);
  net.set_training(false);

  double worst = 0.0;
  auto check = [&](double& p, double analytic) {
    const double saved = p;
    p = saved + step;
    const double up = detail::inference_loss(net, bag, label);
    p = saved - step;
    const double down = detail::inference_loss(net, bag, label);
    p = saved;
    const double fd = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), floor}));
  };
  net.for_each_layer([&](DenseLayer& layer) {
    for (Eigen::Index i = 0; i < layer.weights().size(); ++i) check(layer.weights().data()[i], layer.grad_weights().data()[i]);
    for (Eigen::Index i = 0; i < layer.bias().size(); ++i) check(layer.bias()[i], layer.grad_bias()[i]);
  });
  net.zero_grad();
  return worst;
}

/// Every variant under every pooling method, dropout off.
inline GradcheckResult gradcheck_one(Variant variant, PoolMethod pooling, const GradcheckOptions& opts) {
  GradcheckResult res{variant, pooling};
  Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(variant), static_cast<std::uint64_t>(pooling)));
  for (int attempt = 0;; ++attempt) {
    NetworkSpec spec = NetworkSpec::defaults(variant);
    spec.widths = variant == Variant::MINetRC ? opts.rc_widths : opts.widths;
    spec.pooling = {pooling, 2.0};
    spec.dropout_rate = 0.0;
    spec.seed = rng.next_u64();
    Network net = Network::build(spec, opts.dim);
    Matrix bag(opts.instances, opts.dim);
    for (Eigen::Index i = 0; i < bag.size(); ++i) bag.data()[i] = uniform(rng, -1.0, 1.0);
    const int label = static_cast<int>(uniform_index(rng, 2));
    if (attempt < opts.max_rerolls && detail::near_kink(net, bag, opts.kink_margin)) {
      ++res.rerolls;
      continue;
    }
    res.parameters = net.parameter_count();
    res.max_relative_error = max_relative_gradient_error(net, bag, label, opts.step, opts.floor);
    res.passed = res.max_relative_error < opts.tolerance;
    return res;
  }
}

inline std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opts = {}) {
  std::vector<GradcheckResult> out;
  for (auto v : {Variant::MiNet, Variant::MINet, Variant::MINetDS, Variant::MINetRC}) {
    for (auto p : {PoolMethod::Max, PoolMethod::Mean, PoolMethod::LSE}) out.push_back(gradcheck_one(v, p, opts));
  }
  return out;
}

}  // namespace milnet
