#pragma once

// Losses for the three training phases. Gradient flow per wrapper:
//
//   source_only_mdd_loss   psi_s only
//   target_disc_mdd_loss   psi_t only (features detached)
//   ensemble_adv_loss_mdd  omega only (both heads constant)
//
// and likewise for the scalar (sigmoid) variants.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "uda/autodiff.hpp"
#include "uda/error.hpp"
#include "uda/networks.hpp"

namespace uda {

/// Probabilities entering a log are clamped to [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-12;

struct AdvWeights {
  double adv_weight = 0.1;  // weight of the adversarial term in omega's update
  double gamma_s = 1.0;     // scale of the frozen source-only head
  double gamma_t = 1.0;     // scale of the target-phase head

  void validate() const {
    require(adv_weight >= 0.0, "adv_weight must be >= 0");
    require(gamma_s >= 0.0 && gamma_s <= 1.0, "gamma_s must lie in [0, 1]");
    require(gamma_t >= 0.0 && gamma_t <= 1.0, "gamma_t must lie in [0, 1]");
  }
};

/// Number of probability entries that hit the clamp.
struct SaturationCounter {
  std::uint64_t count = 0;
};

/// -log(clamp(p)), elementwise, counting clamped entries.
inline Var neg_log_prob(const Var& p, SaturationCounter* counter) {
  if (counter) {
    for (double v : p.value().data()) {
      if (v < kProbFloor || v > 1.0 - kProbFloor) ++counter->count;
    }
  }
  return -log(clamp(p, kProbFloor, 1.0 - kProbFloor));
}

/// Mean cross-entropy of [n,C] logits against labels.
inline Var task_ce_loss(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& x = logits.value();
  if (x.rank() != 2 || x.rows() != labels.size()) {
    throw ShapeError("task_ce_loss: logits " + shape_string(x.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t y : labels) {
    if (y >= x.cols()) throw ContractError("task_ce_loss: label out of range");
  }
  return mean(-pick(log_softmax_row(logits), {labels.begin(), labels.end()}));
}

// ---------------------------------------------------------------------------
// Multi-class (margin disparity) discriminator losses.
//
// Each loss has a core taking already-bound networks and a wrapper that binds
// them with the gradient-flow rule of its phase.

inline void require_batches(const Tensor& xs, const Tensor& xt) {
  if (xs.rows() == 0 || xt.rows() == 0) {
    throw ContractError("discriminator loss needs non-empty source and target batches");
  }
}

/// Mean of -log softmax(h(f1(x)))[argmax f(x)] over the batch.
inline Var source_only_mdd(const BoundTaskModel& task, const BoundMlp& head, const Var& xs) {
  Var z = task.features(xs);
  auto pseudo = argmax_rows(task.logits_from_features(z).value());
  return mean(-pick(log_softmax_row(head.forward(detach(z))), std::move(pseudo)));
}

/// Source term -log softmax(h(z_s))[d'] plus target term
/// -log(1 - softmax(h(z_t))[d']), each averaged over its batch.
inline Var mdd_pair_loss(const Var& head_out_s, std::vector<std::size_t> pseudo_s,
                         const Var& head_out_t, std::vector<std::size_t> pseudo_t,
                         SaturationCounter* counter) {
  if (pseudo_s.empty() || pseudo_t.empty()) {
    throw ContractError("discriminator loss needs non-empty source and target batches");
  }
  Var source = mean(-pick(log_softmax_row(head_out_s), std::move(pseudo_s)));
  Var p_t = pick(softmax_row(head_out_t), std::move(pseudo_t));
  Var target = mean(neg_log_prob(1.0 - p_t, counter));
  return source + target;
}

/// D_{psi,t} with the feature extractor detached.
inline Var target_disc_mdd(const BoundTaskModel& task, const BoundMlp& head, const Var& xs,
                           const Var& xt, SaturationCounter* counter = nullptr) {
  Var zs = task.features(xs);
  Var zt = task.features(xt);
  auto ls = argmax_rows(task.logits_from_features(zs).value());
  auto lt = argmax_rows(task.logits_from_features(zt).value());
  return mdd_pair_loss(head.forward(detach(zs)), std::move(ls), head.forward(detach(zt)),
                       std::move(lt), counter);
}

inline Var mix_heads(const BoundMlp& hs, const BoundMlp& ht, const Var& z,
                     const AdvWeights& w) {
  return scale(hs.forward(z), w.gamma_s) + scale(ht.forward(z), w.gamma_t);
}

/// D_psi on the logit mixture gamma_s*h_s + gamma_t*h_t.
inline Var ensemble_mdd(const BoundTaskModel& task, const BoundMlp& hs, const BoundMlp& ht,
                        const Var& xs, const Var& xt, const AdvWeights& weights,
                        SaturationCounter* counter = nullptr) {
  weights.validate();
  Var zs = task.features(xs);
  Var zt = task.features(xt);
  auto ls = argmax_rows(task.logits_from_features(zs).value());
  auto lt = argmax_rows(task.logits_from_features(zt).value());
  return mdd_pair_loss(mix_heads(hs, ht, zs, weights), std::move(ls),
                       mix_heads(hs, ht, zt, weights), std::move(lt), counter);
}

struct HeadLoss {
  Var loss;
  BoundMlp head;         // the head that receives gradient
  BoundTaskModel task;   // bound as constants
};

inline HeadLoss source_only_mdd_loss(Tape& tape, const TaskModel& task,
                                     const DiscriminatorHead& head, const Tensor& xs) {
  HeadLoss out{{}, head.bind(tape, true), task.bind(tape, false)};
  out.loss = source_only_mdd(out.task, out.head, tape.constant(xs));
  return out;
}

/// Trains h_t on memory (source) vs target features.
inline HeadLoss target_disc_mdd_loss(Tape& tape, const TaskModel& task,
                                     const DiscriminatorHead& head, const Tensor& xs,
                                     const Tensor& xt, SaturationCounter* counter = nullptr) {
  require_batches(xs, xt);
  HeadLoss out{{}, head.bind(tape, true), task.bind(tape, false)};
  out.loss = target_disc_mdd(out.task, out.head, tape.constant(xs), tape.constant(xt), counter);
  return out;
}

struct EnsembleLoss {
  Var loss;
  BoundMlp head_s;  // constants
  BoundMlp head_t;  // constants
};

/// The adversarial signal for omega. `task` decides whether omega is
/// trainable; the heads are always constants here.
inline EnsembleLoss ensemble_adv_loss_mdd(const BoundTaskModel& task,
                                          const DiscriminatorHead& head_s,
                                          const DiscriminatorHead& head_t, const Tensor& xs,
                                          const Tensor& xt, const AdvWeights& weights,
                                          SaturationCounter* counter = nullptr) {
  require_batches(xs, xt);
  Tape& tape = task.extractor.params().front().tape();
  EnsembleLoss out{{}, head_s.bind(tape, false), head_t.bind(tape, false)};
  out.loss = ensemble_mdd(task, out.head_s, out.head_t, tape.constant(xs), tape.constant(xt),
                          weights, counter);
  return out;
}

// ---------------------------------------------------------------------------
// Scalar (sigmoid) discriminator losses.

/// -log sigma(h(z_s)) - log sigma(-h(z_t)), batch means, for head logits.
inline Var sigmoid_pair_loss(const Var& out_s, const Var& out_t, SaturationCounter* counter) {
  Var source = mean(neg_log_prob(sigmoid(out_s), counter));
  Var target = mean(neg_log_prob(sigmoid(-out_t), counter));
  return source + target;
}

/// Scalar D_{psi,t}, features detached.
inline Var scalar_target_disc(const BoundTaskModel& task, const BoundMlp& head,
                              FeatureMode mode, const Var& xs, const Var& xt,
                              SaturationCounter* counter = nullptr) {
  Var zs = detach(domain_feature(mode, task, xs));
  Var zt = detach(domain_feature(mode, task, xt));
  return sigmoid_pair_loss(head.forward(zs), head.forward(zt), counter);
}

/// Scalar D_psi with the gamma-mixed head logit inside sigma.
inline Var scalar_ensemble(const BoundTaskModel& task, const BoundMlp& hs, const BoundMlp& ht,
                           FeatureMode mode, const Var& xs, const Var& xt,
                           const AdvWeights& weights, SaturationCounter* counter = nullptr) {
  weights.validate();
  Var zs = domain_feature(mode, task, xs);
  Var zt = domain_feature(mode, task, xt);
  return sigmoid_pair_loss(mix_heads(hs, ht, zs, weights), mix_heads(hs, ht, zt, weights),
                           counter);
}

inline HeadLoss scalar_target_disc_loss(Tape& tape, const TaskModel& task,
                                        const DiscriminatorHead& head, FeatureMode mode,
                                        const Tensor& xs, const Tensor& xt,
                                        SaturationCounter* counter = nullptr) {
  require_batches(xs, xt);
  HeadLoss out{{}, head.bind(tape, true), task.bind(tape, false)};
  out.loss = scalar_target_disc(out.task, out.head, mode, tape.constant(xs), tape.constant(xt),
                                counter);
  return out;
}

inline EnsembleLoss scalar_ensemble_adv_loss(const BoundTaskModel& task,
                                             const DiscriminatorHead& head_s,
                                             const DiscriminatorHead& head_t, FeatureMode mode,
                                             const Tensor& xs, const Tensor& xt,
                                             const AdvWeights& weights,
                                             SaturationCounter* counter = nullptr) {
  require_batches(xs, xt);
  Tape& tape = task.extractor.params().front().tape();
  EnsembleLoss out{{}, head_s.bind(tape, false), head_t.bind(tape, false)};
  out.loss = scalar_ensemble(task, out.head_s, out.head_t, mode, tape.constant(xs),
                             tape.constant(xt), weights, counter);
  return out;
}

struct DiscLossValues {
  double d_psi_t = 0.0;
  double d_psi = 0.0;
};

/// Values of (D_{psi,t}, D_psi) in the scalar form, no gradient.
inline DiscLossValues scalar_disc_losses(const TaskModel& task, const DiscriminatorHead& head_s,
                                         const DiscriminatorHead& head_t, FeatureMode mode,
                                         const Tensor& xs, const Tensor& xt,
                                         const AdvWeights& weights,
                                         SaturationCounter* counter = nullptr) {
  require_batches(xs, xt);
  Tape tape;
  const BoundTaskModel t = task.bind(tape, false);
  const BoundMlp hs = head_s.bind(tape, false);
  const BoundMlp ht = head_t.bind(tape, false);
  Var s = tape.constant(xs);
  Var u = tape.constant(xt);
  return {scalar_target_disc(t, ht, mode, s, u, counter).item(),
          scalar_ensemble(t, hs, ht, mode, s, u, weights, counter).item()};
}

/// Values of (D_{psi,t}, D_psi) in the multi-class form, no gradient.
inline DiscLossValues mdd_disc_losses(const TaskModel& task, const DiscriminatorHead& head_s,
                                      const DiscriminatorHead& head_t, const Tensor& xs,
                                      const Tensor& xt, const AdvWeights& weights,
                                      SaturationCounter* counter = nullptr) {
  require_batches(xs, xt);
  Tape tape;
  const BoundTaskModel t = task.bind(tape, false);
  const BoundMlp hs = head_s.bind(tape, false);
  const BoundMlp ht = head_t.bind(tape, false);
  Var s = tape.constant(xs);
  Var u = tape.constant(xt);
  return {target_disc_mdd(t, ht, s, u, counter).item(),
          ensemble_mdd(t, hs, ht, s, u, weights, counter).item()};
}

// ---------------------------------------------------------------------------
// One-class loss with input-gradient penalty.

struct HrnConfig {
  int exponent = 6;
  double weight = 0.1;
};

/// mean(-log sigma(h(z))) + weight * mean(||grad_z h(z)||^exponent).
/// `z` is treated as input data (its own gradient is not used by callers).
inline Var hrn_loss(const BoundMlp& head, const Var& z, const HrnConfig& cfg,
                    SaturationCounter* counter = nullptr) {
  if (cfg.exponent <= 0) throw ContractError("hrn exponent must be positive");
  if (cfg.exponent % 2 != 0) throw ContractError("hrn exponent must be even");
  Tape& tape = z.tape();
  Var input = tape.leaf(z.value(), true);
  Var h = head.forward(input);
  if (h.value().cols() != 1) throw ShapeError("hrn_loss needs a scalar head");
  Var cls = mean(neg_log_prob(sigmoid(h), counter));
  if (cfg.weight == 0.0) return cls;
  const Var wrt[] = {input};
  Var gz = tape.grad(sum(h), wrt, true).front();
  Var sq = row_sum(gz * gz);
  Var penalty = mean(pow(sq, cfg.exponent / 2.0));
  return cls + scale(penalty, cfg.weight);
}

/// Penalty term alone, for inspection.
inline double hrn_penalty(const DiscriminatorHead& head, const Tensor& z, const HrnConfig& cfg) {
  Tape tape;
  BoundMlp h = head.bind(tape, false);
  Var input = tape.leaf(z, true);
  Var out = h.forward(input);
  const Var wrt[] = {input};
  Tensor g = tape.grad(sum(out), wrt, false).front().value();
  double total = 0.0;
  for (std::size_t r = 0; r < g.rows(); ++r) {
    double s = 0.0;
    for (double v : g.row(r)) s += v * v;
    total += std::pow(s, cfg.exponent / 2.0);
  }
  return cfg.weight * total / static_cast<double>(g.rows());
}

}  // namespace uda
