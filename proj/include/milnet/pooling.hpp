#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "milnet/errors.hpp"
#include "milnet/numerics.hpp"

namespace milnet {

enum class PoolMethod { Max, Mean, LSE };

inline std::string_view to_string(PoolMethod m) {
  switch (m) {
    case PoolMethod::Max: return "max";
    case PoolMethod::Mean: return "mean";
    case PoolMethod::LSE: return "lse";
  }
  return "?";
}

inline std::optional<PoolMethod> parse_pool_method(std::string_view s) {
  if (s == "max") return PoolMethod::Max;
  if (s == "mean") return PoolMethod::Mean;
  if (s == "lse") return PoolMethod::LSE;
  return std::nullopt;
}

struct PoolingSpec {
  PoolMethod method = PoolMethod::Max;
  double r = 1.0;  // LSE sharpness; ignored by max and mean

  void validate() const {
    if (method == PoolMethod::LSE && !(r > 0.0 && std::isfinite(r))) {
      throw ConfigError("lse pooling needs a finite r > 0, got " + std::to_string(r));
    }
  }

  friend bool operator==(const PoolingSpec&, const PoolingSpec&) = default;
};

struct PoolCache {
  PoolMethod method = PoolMethod::Max;
  double r = 0.0;
  Eigen::Index instances = 0;
  Eigen::Index dims = 0;
  std::vector<Eigen::Index> argmax;  // Max: winning instance per dimension
  Matrix weights;                    // LSE: per-dimension softmax weights (m x k)
};

struct PoolResult {
  Vector output;
  PoolCache cache;
};

namespace fault {
// Test hook: when set, LSE backward returns deliberately wrong gradients.
// Used as a negative control for the gradient checker.
inline std::atomic<bool>& corrupt_lse_backward() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace fault

namespace detail {

// Sum that does not depend on the order of `values` (sorted before adding),
// so pooled outputs are bit-identical under instance permutation.
inline double order_invariant_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace detail

/// Pools a bag (rows = instances, cols = feature dimensions) into one vector,
/// independently per dimension.
inline PoolResult pool_forward(const PoolingSpec& spec, const Matrix& instances) {
  spec.validate();
  const Eigen::Index m = instances.rows();
  const Eigen::Index k = instances.cols();
  if (m < 1) throw ShapeError("bag has zero instances");
  if (k < 1) throw ShapeError("pool_forward: instances have zero dimensions");

  PoolResult res;
  res.output.resize(k);
  res.cache.method = spec.method;
  res.cache.r = spec.r;
  res.cache.instances = m;
  res.cache.dims = k;

  std::vector<double> column(static_cast<std::size_t>(m));
  switch (spec.method) {
    case PoolMethod::Max: {
      res.cache.argmax.assign(static_cast<std::size_t>(k), 0);
      for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < m; ++j) {
          if (instances(j, c) > instances(best, c)) best = j;  // ties keep the lowest index
        }
        res.cache.argmax[static_cast<std::size_t>(c)] = best;
        res.output[c] = instances(best, c);
      }
      break;
    }
    case PoolMethod::Mean: {
      for (Eigen::Index c = 0; c < k; ++c) {
        for (Eigen::Index j = 0; j < m; ++j) column[static_cast<std::size_t>(j)] = instances(j, c);
        res.output[c] = detail::order_invariant_sum(column) / static_cast<double>(m);
      }
      break;
    }
    case PoolMethod::LSE: {
      // r^-1 log(mean_j exp(r x_j)), shifted by the per-dimension max.
      res.cache.weights.resize(m, k);
      for (Eigen::Index c = 0; c < k; ++c) {
        const double top = instances.col(c).maxCoeff();
        for (Eigen::Index j = 0; j < m; ++j) {
          const double e = std::exp(spec.r * (instances(j, c) - top));
          res.cache.weights(j, c) = e;
          column[static_cast<std::size_t>(j)] = e;
        }
        const double total = detail::order_invariant_sum(column);
        res.output[c] = top + std::log(total / static_cast<double>(m)) / spec.r;
        res.cache.weights.col(c) /= total;
      }
      break;
    }
  }
  return res;
}

inline PoolResult pool_forward(const PoolingSpec& spec, const std::vector<Vector>& instances) {
  if (instances.empty()) throw ShapeError("bag has zero instances");
  const auto k = instances.front().size();
  Matrix stacked(static_cast<Eigen::Index>(instances.size()), k);
  for (std::size_t j = 0; j < instances.size(); ++j) {
    if (instances[j].size() != k) {
      throw ShapeError("pool_forward: instance " + std::to_string(j) + " has length " +
                       std::to_string(instances[j].size()) + ", expected " + std::to_string(k));
    }
    stacked.row(static_cast<Eigen::Index>(j)) = instances[j].transpose();
  }
  return pool_forward(spec, stacked);
}

/// Gradient of the pooled output w.r.t. every instance (m x k).
inline Matrix pool_backward(const PoolCache& cache, const PoolingSpec& spec, const Vector& grad_out) {
  if (cache.instances < 1) throw ShapeError("pool_backward: empty cache (no forward pass)");
  if (cache.method != spec.method || (spec.method == PoolMethod::LSE && cache.r != spec.r)) {
    throw ShapeError("pool_backward: cache was produced by " + std::string(to_string(cache.method)) +
                     " pooling, spec says " + std::string(to_string(spec.method)));
  }
  if (grad_out.size() != cache.dims) {
    throw ShapeError("pool_backward: gradient of length " + std::to_string(grad_out.size()) +
                     " vs pooled dimension " + std::to_string(cache.dims));
  }
  const Eigen::Index m = cache.instances;
  const Eigen::Index k = cache.dims;
  Matrix grad = Matrix::Zero(m, k);
  switch (spec.method) {
    case PoolMethod::Max:
      for (Eigen::Index c = 0; c < k; ++c) grad(cache.argmax[static_cast<std::size_t>(c)], c) = grad_out[c];
      break;
    case PoolMethod::Mean:
      grad.rowwise() = (grad_out / static_cast<double>(m)).transpose();
      break;
    case PoolMethod::LSE:
      grad = cache.weights.array().rowwise() * grad_out.transpose().array();
      if (fault::corrupt_lse_backward().load()) grad *= 1.05;
      break;
  }
  return grad;
}

}  // namespace milnet
