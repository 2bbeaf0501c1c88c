#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uda/autodiff.hpp"
#include "uda/error.hpp"
#include "uda/tensor.hpp"

namespace uda {

// ---------------------------------------------------------------------------
// Margin machinery.

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax_label(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("argmax_label on empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

/// Row-wise argmax_label of a [n,C] matrix.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) out[r] = argmax_label(logits.row(r));
  return out;
}

/// Best class other than `c` (lowest index on ties).
inline std::size_t best_other(std::span<const double> logits, std::size_t c) {
  std::size_t best = c == 0 ? 1 : 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != c && logits[i] > logits[best]) best = i;
  }
  return best;
}

/// logits[c] - max_{c' != c} logits[c'].
inline double margin(std::span<const double> logits, std::size_t c) {
  if (logits.size() < 2) throw ContractError("margin needs at least two classes");
  if (c >= logits.size()) throw ContractError("margin class index out of range");
  return logits[c] - logits[best_other(logits, c)];
}

/// Differentiable per-row margin of [n,C] logits at the given classes. The
/// max over the other classes routes gradient to the argmax entry only.
inline Var margin(const Var& logits, std::span<const std::size_t> classes) {
  const Tensor& x = logits.value();
  if (x.rank() != 2 || x.cols() < 2) throw ContractError("margin needs [n,C] with C >= 2");
  if (classes.size() != x.rows()) throw ShapeError("margin: one class per row required");
  std::vector<std::size_t> own(classes.begin(), classes.end());
  std::vector<std::size_t> other(own.size());
  for (std::size_t r = 0; r < own.size(); ++r) {
    if (own[r] >= x.cols()) throw ContractError("margin class index out of range");
    other[r] = best_other(x.row(r), own[r]);
  }
  return pick(logits, std::move(own)) - pick(logits, std::move(other));
}

/// Ramp loss: 1 below 0, linear down to 0 at rho, 0 above.
inline double ramp(double x, double rho) {
  if (!(rho > 0.0)) throw ContractError("ramp needs rho > 0");
  if (x < 0.0) return 1.0;
  if (x > rho) return 0.0;
  return 1.0 - x / rho;
}

struct MarginConfig {
  double rho = 1.0;
};

// ---------------------------------------------------------------------------
// Layers.

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Linear l{Tensor::zeros({in, out}), Tensor::zeros({out})};
    for (double& w : l.weight.data()) w = u(rng);
    for (double& b : l.bias.data()) b = u(rng);
    return l;
  }
};

class Mlp;

/// An Mlp whose parameters live on a tape, either as trainable leaves or as
/// constants (frozen).
class BoundMlp {
 public:
  BoundMlp() = default;

  /// Wraps existing tape variables laid out as [w0, b0, w1, b1, ...].
  static BoundMlp from_vars(std::vector<Var> params, bool relu_output) {
    if (params.empty() || params.size() % 2 != 0) {
      throw ContractError("BoundMlp needs weight/bias pairs");
    }
    BoundMlp b;
    b.trainable_ = std::any_of(params.begin(), params.end(),
                               [](const Var& v) { return v.requires_grad(); });
    b.params_ = std::move(params);
    b.relu_output_ = relu_output;
    return b;
  }

  Var forward(const Var& x) const {
    Var h = x;
    const std::size_t layers = params_.size() / 2;
    for (std::size_t i = 0; i < layers; ++i) {
      h = add(matmul(h, params_[2 * i]), params_[2 * i + 1]);
      if (i + 1 < layers || relu_output_) h = relu(h);
    }
    return h;
  }

  const std::vector<Var>& params() const { return params_; }
  bool trainable() const { return trainable_; }

  std::vector<Tensor> gradients(const Gradients& g) const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const Var& p : params_) out.push_back(g.of(p));
    return out;
  }

 private:
  friend class Mlp;
  std::vector<Var> params_;
  bool relu_output_ = false;
  bool trainable_ = false;
};

/// Fully-connected network with relu between layers (and optionally after
/// the last one).
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::span<const std::size_t> widths, bool relu_output, std::mt19937_64& rng)
      : relu_output_(relu_output) {
    if (widths.size() < 2) throw ContractError("Mlp needs at least input and output width");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      layers_.push_back(Linear::init(widths[i], widths[i + 1], rng));
    }
  }

  std::size_t input_dim() const { return layers_.front().weight.shape()[0]; }
  std::size_t output_dim() const { return layers_.back().weight.shape()[1]; }
  std::size_t depth() const { return layers_.size(); }
  bool relu_output() const { return relu_output_; }

  BoundMlp bind(Tape& tape, bool trainable) const {
    BoundMlp b;
    b.relu_output_ = relu_output_;
    b.trainable_ = trainable;
    for (const Linear& l : layers_) {
      b.params_.push_back(trainable ? tape.leaf(l.weight) : tape.constant(l.weight));
      b.params_.push_back(trainable ? tape.leaf(l.bias) : tape.constant(l.bias));
    }
    return b;
  }

  /// Plain evaluation, no gradient.
  Tensor apply(const Tensor& x) const {
    Tape tape;
    return bind(tape, false).forward(tape.constant(x)).value();
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (Linear& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const Linear& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::vector<std::pair<std::string, const Tensor*>> named_parameters(
      const std::string& prefix) const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string base = prefix + "." + std::to_string(i);
      out.emplace_back(base + ".weight", &layers_[i].weight);
      out.emplace_back(base + ".bias", &layers_[i].bias);
    }
    return out;
  }

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor* p : parameters()) h = fnv1a(p->data(), h);
    return h;
  }

 private:
  std::vector<Linear> layers_;
  bool relu_output_ = false;
};

// ---------------------------------------------------------------------------
// Task model f = f2 o f1 and discriminator heads.

struct NetworkConfig {
  std::size_t input_dim = 2;
  std::size_t hidden = 32;
  std::size_t feature_dim = 32;
  std::size_t classes = 2;
  std::size_t head_hidden = 32;
};

struct BoundTaskModel {
  BoundMlp extractor;
  BoundMlp predictor;

  Var features(const Var& x) const { return extractor.forward(x); }
  Var logits_from_features(const Var& z) const { return predictor.forward(z); }
  Var logits(const Var& x) const { return predictor.forward(extractor.forward(x)); }

  std::vector<Tensor> gradients(const Gradients& g) const {
    std::vector<Tensor> out = extractor.gradients(g);
    for (Tensor& t : predictor.gradients(g)) out.push_back(std::move(t));
    return out;
  }
};

class TaskModel {
 public:
  TaskModel() = default;

  TaskModel(const NetworkConfig& cfg, std::mt19937_64& rng) {
    require(cfg.classes >= 2, "task model needs at least two classes");
    const std::size_t ext[] = {cfg.input_dim, cfg.hidden, cfg.feature_dim};
    extractor_ = Mlp(ext, true, rng);
    const std::size_t pred[] = {cfg.feature_dim, cfg.classes};
    predictor_ = Mlp(pred, false, rng);
  }

  std::size_t classes() const { return predictor_.output_dim(); }
  std::size_t feature_dim() const { return extractor_.output_dim(); }
  std::size_t input_dim() const { return extractor_.input_dim(); }

  BoundTaskModel bind(Tape& tape, bool trainable) const {
    return {extractor_.bind(tape, trainable), predictor_.bind(tape, trainable)};
  }

  Tensor features(const Tensor& x) const { return extractor_.apply(x); }
  Tensor logits(const Tensor& x) const { return predictor_.apply(extractor_.apply(x)); }

  /// Pseudo labels argmax_c f(x, c) for each row of x.
  std::vector<std::size_t> predict(const Tensor& x) const { return argmax_rows(logits(x)); }

  Mlp& extractor() { return extractor_; }
  Mlp& predictor() { return predictor_; }
  const Mlp& extractor() const { return extractor_; }
  const Mlp& predictor() const { return predictor_; }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out = extractor_.parameters();
    for (Tensor* t : predictor_.parameters()) out.push_back(t);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const {
    auto out = extractor_.named_parameters("task.extractor");
    for (auto& p : predictor_.named_parameters("task.predictor")) out.push_back(p);
    return out;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : named_parameters()) h = fnv1a(t->data(), h);
    return h;
  }

 private:
  Mlp extractor_;
  Mlp predictor_;
};

enum class HeadKind { scalar, multiclass };

/// Two-layer fully-connected discriminator: in -> hidden -> 1 or |C|.
class DiscriminatorHead {
 public:
  DiscriminatorHead() = default;

  DiscriminatorHead(HeadKind kind, std::size_t input_dim, std::size_t hidden,
                    std::size_t classes, std::mt19937_64& rng)
      : kind_(kind) {
    const std::size_t out = kind == HeadKind::scalar ? 1 : classes;
    const std::size_t widths[] = {input_dim, hidden, out};
    net_ = Mlp(widths, false, rng);
  }

  HeadKind kind() const { return kind_; }
  std::size_t output_dim() const { return net_.output_dim(); }
  std::size_t input_dim() const { return net_.input_dim(); }

  BoundMlp bind(Tape& tape, bool trainable) const { return net_.bind(tape, trainable); }
  Tensor apply(const Tensor& z) const { return net_.apply(z); }

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  std::vector<Tensor*> parameters() { return net_.parameters(); }
  std::uint64_t checksum() const { return net_.checksum(); }

 private:
  HeadKind kind_ = HeadKind::multiclass;
  Mlp net_;
};

// ---------------------------------------------------------------------------
// Discriminator input features.

enum class FeatureMode { dann, cdan };

/// DANN: z = f1(x). CDAN: z = flatten(f1(x) (x) softmax(f(x))), row-wise.
inline Var domain_feature(FeatureMode mode, const Var& features, const Var& logits) {
  if (mode == FeatureMode::dann) return features;
  return outer_product(features, softmax_row(logits));
}

inline Var domain_feature(FeatureMode mode, const BoundTaskModel& task, const Var& x) {
  Var z = task.features(x);
  if (mode == FeatureMode::dann) return z;
  return domain_feature(mode, z, task.logits_from_features(z));
}

inline std::size_t domain_feature_dim(FeatureMode mode, std::size_t feature_dim,
                                      std::size_t classes) {
  return mode == FeatureMode::dann ? feature_dim : feature_dim * classes;
}

}  // namespace uda
