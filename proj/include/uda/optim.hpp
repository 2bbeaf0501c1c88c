#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uda/error.hpp"
#include "uda/tensor.hpp"

namespace uda {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// SGD or bias-corrected Adam over a fixed list of parameter tensors.
/// Moment buffers are allocated on the first step and must keep matching the
/// parameter shapes afterwards.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {
    require(config_.lr > 0.0, "learning rate must be positive");
  }

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) {
      throw ShapeError("optimizer: " + std::to_string(params.size()) +
                       " parameters but " + std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->shape() != grads[i].shape()) {
        throw ShapeError("optimizer: gradient shape " + shape_string(grads[i].shape()) +
                         " does not match parameter " + shape_string(params[i]->shape()));
      }
    }
    if (config_.kind == OptimizerKind::adam) {
      adam(params, grads);
    } else {
      ++steps_;
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        const auto g = grads[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= config_.lr * g[k];
      }
    }
  }

 private:
  void adam(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (first_.empty()) {
      for (Tensor* p : params) {
        first_.push_back(Tensor::zeros(p->shape()));
        second_.push_back(Tensor::zeros(p->shape()));
      }
    }
    if (first_.size() != params.size()) {
      throw ShapeError("optimizer: parameter list changed between steps");
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (first_[i].shape() != params[i]->shape()) {
        throw ShapeError("optimizer: moment buffer shape mismatch");
      }
      auto p = params[i]->data();
      const auto g = grads[i].data();
      auto m = first_[i].data();
      auto v = second_[i].data();
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
        v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        p[k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
  }

  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace uda
