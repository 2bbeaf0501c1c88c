#pragma once

// Three-phase continual adaptation: supervised source training, source-only
// discriminator training, memory sampling, then target adaptation with
// alternating psi_t / omega updates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "uda/domains.hpp"
#include "uda/error.hpp"
#include "uda/networks.hpp"
#include "uda/objectives.hpp"
#include "uda/optim.hpp"
#include "uda/replay.hpp"

namespace uda {

/// Non-finite loss during training; carries the phase and epoch.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// mdd: multi-class heads. dann/cdan: scalar heads on DANN/CDAN features with
/// a plain one-class source head. hrn: scalar heads with the gradient-norm
/// regularised source head.
enum class DiscMode { mdd, dann, cdan, hrn };

inline std::string to_string(DiscMode m) {
  switch (m) {
    case DiscMode::mdd: return "mdd";
    case DiscMode::dann: return "dann";
    case DiscMode::cdan: return "cdan";
    case DiscMode::hrn: return "hrn";
  }
  return "?";
}

inline DiscMode parse_disc_mode(const std::string& s) {
  if (s == "mdd") return DiscMode::mdd;
  if (s == "dann") return DiscMode::dann;
  if (s == "cdan") return DiscMode::cdan;
  if (s == "hrn") return DiscMode::hrn;
  throw FormatError("unknown discriminator mode '" + s + "' (expected mdd|dann|cdan|hrn)");
}

struct PhaseSchedule {
  std::size_t t1 = 15;
  std::size_t t2 = 5;
  std::size_t t3 = 10;
  std::size_t batch = 32;
  double lr_task = 1e-3;
  double lr_disc = 1e-3;
  double lr_source_disc = 1e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  DiscMode mode = DiscMode::mdd;
  FeatureMode hrn_feature = FeatureMode::dann;
  bool disc_first = true;  // psi_t before omega within a step

  void validate() const {
    require(t1 >= 1 && t2 >= 1 && t3 >= 1, "epoch counts must be >= 1");
    require(batch >= 1, "batch size must be >= 1");
    require(lr_task > 0 && lr_disc > 0 && lr_source_disc > 0, "learning rates must be > 0");
  }
};

struct TrainConfig {
  NetworkConfig net;
  PhaseSchedule schedule;
  AdvWeights weights;
  HrnConfig hrn;
  std::size_t mem_per_class = 10;
  bool replay = true;  // false: target phase sees no source data at all
  std::uint64_t seed = 0;
  std::string run_id = "run";
};

enum class Phase { start, source, source_disc, memory, target };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::start: return "start";
    case Phase::source: return "source";
    case Phase::source_disc: return "source_disc";
    case Phase::memory: return "memory";
    case Phase::target: return "target";
  }
  return "?";
}

struct MetricsRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::string phase;
  double target_acc = 0.0;  // percent
  double source_acc = 0.0;  // percent
  double forgetting = 0.0;  // percentage points
  double d_psi_t = 0.0;
  double d_psi = 0.0;
  std::uint64_t saturations = 0;
};

struct StepStats {
  double task_loss = 0.0;
  double d_psi_t = 0.0;
  double d_psi = 0.0;
};

struct FinalMetrics {
  double target_acc = 0.0;
  double source_acc = 0.0;
  double forgetting = 0.0;
  double source_only_target_acc = 0.0;  // before the target phase
};

/// Percentage of rows whose argmax logit equals the label.
inline double accuracy(const TaskModel& task, const LabeledSet& s) {
  if (s.size() == 0) throw ContractError("evaluation set is empty");
  const auto pred = task.predict(s.x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == s.y[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(s.size());
}

/// Independent stream seed derived from a run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Trainer {
 public:
  Trainer(TrainConfig cfg, DomainStream data) : cfg_(std::move(cfg)), data_(std::move(data)) {
    cfg_.schedule.validate();
    cfg_.weights.validate();
    data_.source_train.validate();
    cfg_.net.input_dim = data_.source_train.dim();
    cfg_.net.classes = data_.source_train.classes;
    std::mt19937_64 init(derive_seed(cfg_.seed, 0));
    task_ = TaskModel(cfg_.net, init);
    const bool scalar = cfg_.schedule.mode != DiscMode::mdd;
    const std::size_t head_in =
        scalar ? domain_feature_dim(feature_mode(), cfg_.net.feature_dim, cfg_.net.classes)
               : cfg_.net.feature_dim;
    const HeadKind kind = scalar ? HeadKind::scalar : HeadKind::multiclass;
    head_s_ = DiscriminatorHead(kind, head_in, cfg_.net.head_hidden, cfg_.net.classes, init);
    head_t_ = DiscriminatorHead(kind, head_in, cfg_.net.head_hidden, cfg_.net.classes, init);
    rng_.seed(derive_seed(cfg_.seed, 1));
  }

  const TrainConfig& config() const { return cfg_; }
  const DomainStream& data() const { return data_; }
  Phase phase() const { return phase_; }
  const TaskModel& task() const { return task_; }
  TaskModel& task() { return task_; }
  const DiscriminatorHead& head_s() const { return head_s_; }
  const DiscriminatorHead& head_t() const { return head_t_; }
  const MemoryBuffer& memory() const { return memory_; }
  const std::vector<MetricsRecord>& history() const { return history_; }
  double source_acc_at_s0() const { return acc_s0_; }
  double source_score() const { return source_score_; }

  FeatureMode feature_mode() const {
    switch (cfg_.schedule.mode) {
      case DiscMode::cdan: return FeatureMode::cdan;
      case DiscMode::hrn: return cfg_.schedule.hrn_feature;
      default: return FeatureMode::dann;
    }
  }

  // -------------------------------------------------------------------------
  // Phase S0: supervised training of f on the labelled source set.

  void run_source_phase() {
    require(phase_ == Phase::start, "source phase must run first");
    phase_ = Phase::source;
    Optimizer opt({cfg_.schedule.optimizer, cfg_.schedule.lr_task});
    const LabeledSet& s0 = data_.source_train;
    for (std::size_t e = 1; e <= cfg_.schedule.t1; ++e) {
      guard("source", e, [&] {
        for (const auto& rows : epoch_batches(s0.size())) {
          Tape tape;
          const BoundTaskModel t = task_.bind(tape, true);
          std::vector<std::size_t> y;
          for (std::size_t r : rows) y.push_back(s0.y[r]);
          Var loss = task_ce_loss(t.logits(tape.constant(gather_rows(s0.x, rows))), y);
          auto grads = t.gradients(tape.backward(loss));
          auto params = task_.parameters();
          opt.step(params, grads);
        }
      });
      acc_s0_ = accuracy(task_, data_.source_eval);
      record(e, {});
    }
  }

  // -------------------------------------------------------------------------
  // Phase S0': source-only head with omega frozen.

  void run_source_disc_phase() {
    require(phase_ == Phase::source, "source discriminator phase needs a trained task model");
    phase_ = Phase::source_disc;
    const std::uint64_t omega = task_.checksum();
    Optimizer opt({cfg_.schedule.optimizer, cfg_.schedule.lr_source_disc});
    const LabeledSet& s0 = data_.source_train;
    for (std::size_t e = 1; e <= cfg_.schedule.t2; ++e) {
      guard("source_disc", e, [&] {
        for (const auto& rows : epoch_batches(s0.size())) {
          const Tensor xs = gather_rows(s0.x, rows);
          Tape tape;
          BoundMlp head;
          Var loss;
          if (cfg_.schedule.mode == DiscMode::mdd) {
            HeadLoss l = source_only_mdd_loss(tape, task_, head_s_, xs);
            head = l.head;
            loss = l.loss;
          } else {
            head = head_s_.bind(tape, true);
            Var z = detach(domain_feature(feature_mode(), task_.bind(tape, false),
                                          tape.constant(xs)));
            loss = hrn_loss(head, z, source_head_hrn());
          }
          auto grads = head.gradients(tape.backward(loss));
          auto params = head_s_.parameters();
          opt.step(params, grads);
        }
      });
      record(e, {});
    }
    if (task_.checksum() != omega) throw ContractError("task model changed while frozen");
    source_score_ = mean_source_score();
  }

  // -------------------------------------------------------------------------
  // Memory sampling.

  void sample_memory_phase() {
    require(phase_ == Phase::source_disc, "memory is sampled after the discriminator phase");
    phase_ = Phase::memory;
    if (cfg_.replay) {
      memory_ = sample_memory(data_.source_train, cfg_.mem_per_class, derive_seed(cfg_.seed, 2));
    } else {
      memory_ = MemoryBuffer(cfg_.mem_per_class, cfg_.net.classes, cfg_.net.input_dim);
    }
    source_only_target_acc_ = accuracy(task_, data_.target_eval);
    record(0, {});
  }

  // -------------------------------------------------------------------------
  // Phase T1: adaptation with replay.

  void run_target_phase() {
    require(phase_ == Phase::memory, "target phase needs a sampled memory buffer");
    require(data_.target_train.size() > 0, "target set is empty");
    phase_ = Phase::target;
    const std::uint64_t psi_s = head_s_.checksum();
    const std::uint64_t mem = memory_.checksum();
    opt_task_ = Optimizer({cfg_.schedule.optimizer, cfg_.schedule.lr_task});
    opt_t_ = Optimizer({cfg_.schedule.optimizer, cfg_.schedule.lr_disc});
    const std::size_t k = std::min(cfg_.schedule.batch, data_.target_train.size());
    TargetSampler sampler(data_.target_train.size());
    const std::size_t steps = std::max<std::size_t>(1, data_.target_train.size() / k);
    for (std::size_t e = 1; e <= cfg_.schedule.t3; ++e) {
      StepStats sum;
      saturations_.count = 0;
      guard("target", e, [&] {
        for (std::size_t s = 0; s < steps; ++s) {
          JointBatch b;
          if (cfg_.replay) {
            b = draw_joint_minibatch(memory_, data_.target_train, sampler, k, rng_);
          } else {
            b.xs = Tensor::zeros({0, cfg_.net.input_dim});
            b.xt = gather_rows(data_.target_train.x, sampler.next(k, rng_));
          }
          const StepStats st = target_step(b);
          sum.d_psi_t += st.d_psi_t;
          sum.d_psi += st.d_psi;
        }
      });
      sum.d_psi_t /= static_cast<double>(steps);
      sum.d_psi /= static_cast<double>(steps);
      record(e, sum);
    }
    if (head_s_.checksum() != psi_s) throw ContractError("source-only head changed while frozen");
    if (memory_.checksum() != mem) throw ContractError("memory buffer changed during replay");
  }

  /// One adaptation step on a joint batch. Public for property tests.
  StepStats target_step(const JointBatch& b) {
    StepStats st;
    if (cfg_.schedule.disc_first) {
      st.d_psi_t = head_t_step(b);
      task_step(b, st);
    } else {
      task_step(b, st);
      st.d_psi_t = head_t_step(b);
    }
    return st;
  }

  /// D_{psi,t} on a batch with the current parameters.
  double target_disc_value(const JointBatch& b) {
    Tape tape;
    return target_disc(tape, b).loss.item();
  }

  /// One update of psi_t; returns D_{psi,t} before the update.
  double head_t_step(const JointBatch& b) {
    if (!opt_t_) opt_t_ = Optimizer({cfg_.schedule.optimizer, cfg_.schedule.lr_disc});
    Tape tape;
    HeadLoss l = target_disc(tape, b);
    const double value = l.loss.item();
    auto grads = l.head.gradients(tape.backward(l.loss));
    auto params = head_t_.parameters();
    opt_t_->step(params, grads);
    return value;
  }

  void run_all() {
    run_source_phase();
    run_source_disc_phase();
    sample_memory_phase();
    run_target_phase();
  }

  MetricsRecord evaluate(std::size_t epoch, const StepStats& stats) const {
    MetricsRecord m;
    m.run_id = cfg_.run_id;
    m.seed = cfg_.seed;
    m.epoch = epoch;
    m.phase = to_string(phase_);
    m.target_acc = accuracy(task_, data_.target_eval);
    m.source_acc = accuracy(task_, data_.source_eval);
    m.forgetting = phase_ == Phase::source ? 0.0 : acc_s0_ - m.source_acc;
    m.d_psi_t = stats.d_psi_t;
    m.d_psi = stats.d_psi;
    m.saturations = phase_ == Phase::target ? saturations_.count : 0;
    return m;
  }

  /// Target-phase metrics averaged over the last three epochs.
  FinalMetrics final_metrics() const {
    std::vector<const MetricsRecord*> tail;
    for (const auto& m : history_) {
      if (m.phase == "target") tail.push_back(&m);
    }
    require(!tail.empty(), "no target-phase metrics recorded");
    const std::size_t n = std::min<std::size_t>(3, tail.size());
    FinalMetrics f;
    for (std::size_t i = tail.size() - n; i < tail.size(); ++i) {
      f.target_acc += tail[i]->target_acc / static_cast<double>(n);
      f.source_acc += tail[i]->source_acc / static_cast<double>(n);
      f.forgetting += tail[i]->forgetting / static_cast<double>(n);
    }
    f.source_only_target_acc = source_only_target_acc_;
    return f;
  }

 private:
  HrnConfig source_head_hrn() const {
    if (cfg_.schedule.mode == DiscMode::hrn) return cfg_.hrn;
    return {cfg_.hrn.exponent, 0.0};
  }

  HeadLoss target_disc(Tape& tape, const JointBatch& b) {
    if (cfg_.schedule.mode == DiscMode::mdd) {
      if (b.xs.rows() == 0) {
        HeadLoss l{{}, head_t_.bind(tape, true), task_.bind(tape, false)};
        l.loss = target_only_mdd(l.task, l.head, tape.constant(b.xt));
        return l;
      }
      return target_disc_mdd_loss(tape, task_, head_t_, b.xs, b.xt, &saturations_);
    }
    if (b.xs.rows() == 0) {
      HeadLoss l{{}, head_t_.bind(tape, true), task_.bind(tape, false)};
      Var zt = detach(domain_feature(feature_mode(), l.task, tape.constant(b.xt)));
      l.loss = mean(neg_log_prob(sigmoid(-l.head.forward(zt)), &saturations_));
      return l;
    }
    return scalar_target_disc_loss(tape, task_, head_t_, feature_mode(), b.xs, b.xt,
                                   &saturations_);
  }

  // Target term of the MDD pair loss alone, used when nothing is replayed.
  Var target_only_mdd(const BoundTaskModel& task, const BoundMlp& head, const Var& xt) {
    Var zt = task.features(xt);
    auto lt = argmax_rows(task.logits_from_features(zt).value());
    Var p = pick(softmax_row(head.forward(detach(zt))), std::move(lt));
    return mean(neg_log_prob(1.0 - p, &saturations_));
  }

  void task_step(const JointBatch& b, StepStats& st) {
    if (!opt_task_) opt_task_ = Optimizer({cfg_.schedule.optimizer, cfg_.schedule.lr_task});
    Tape tape;
    const BoundTaskModel t = task_.bind(tape, true);
    Var total;
    if (b.xs.rows() > 0) {
      Var l = task_ce_loss(t.logits(tape.constant(b.xs)), b.ys);
      st.task_loss = l.item();
      total = l;
    }
    if (cfg_.weights.adv_weight > 0.0) {
      Var d;
      if (b.xs.rows() == 0) {
        d = adversarial_target_only(tape, t, b.xt);
      } else if (cfg_.schedule.mode == DiscMode::mdd) {
        d = ensemble_adv_loss_mdd(t, head_s_, head_t_, b.xs, b.xt, cfg_.weights, &saturations_)
                .loss;
      } else {
        d = scalar_ensemble_adv_loss(t, head_s_, head_t_, feature_mode(), b.xs, b.xt,
                                     cfg_.weights, &saturations_)
                .loss;
      }
      st.d_psi = d.item();
      Var adv = scale(d, -cfg_.weights.adv_weight);
      total = total.valid() ? total + adv : adv;
    }
    if (!total.valid()) return;
    auto grads = t.gradients(tape.backward(total));
    auto params = task_.parameters();
    opt_task_->step(params, grads);
  }

  // Ensemble loss restricted to its target term (no replayed source batch).
  Var adversarial_target_only(Tape& tape, const BoundTaskModel& t, const Tensor& xt) {
    const BoundMlp hs = head_s_.bind(tape, false);
    const BoundMlp ht = head_t_.bind(tape, false);
    if (cfg_.schedule.mode == DiscMode::mdd) {
      Var zt = t.features(tape.constant(xt));
      auto lt = argmax_rows(t.logits_from_features(zt).value());
      Var p = pick(softmax_row(mix_heads(hs, ht, zt, cfg_.weights)), std::move(lt));
      return mean(neg_log_prob(1.0 - p, &saturations_));
    }
    Var zt = domain_feature(feature_mode(), t, tape.constant(xt));
    return mean(neg_log_prob(sigmoid(-mix_heads(hs, ht, zt, cfg_.weights)), &saturations_));
  }

  double mean_source_score() const {
    const Tensor& x = data_.source_train.x;
    Tape tape;
    const BoundTaskModel t = task_.bind(tape, false);
    const BoundMlp h = head_s_.bind(tape, false);
    Var xs = tape.constant(x);
    if (cfg_.schedule.mode == DiscMode::mdd) {
      Var z = t.features(xs);
      auto pseudo = argmax_rows(t.logits_from_features(z).value());
      return mean(pick(softmax_row(h.forward(z)), std::move(pseudo))).item();
    }
    return mean(sigmoid(h.forward(domain_feature(feature_mode(), t, xs)))).item();
  }

  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += cfg_.schedule.batch) {
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + cfg_.schedule.batch)));
    }
    return out;
  }

  template <class F>
  void guard(const char* phase, std::size_t epoch, F&& body) {
    try {
      body();
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericError& e) {
      throw DivergenceError(cfg_.run_id + ": diverged in " + phase + " phase, epoch " +
                            std::to_string(epoch) + ": " + e.what());
    }
  }

  void record(std::size_t epoch, const StepStats& stats) {
    history_.push_back(evaluate(epoch, stats));
  }

  TrainConfig cfg_;
  DomainStream data_;
  TaskModel task_;
  DiscriminatorHead head_s_, head_t_;
  MemoryBuffer memory_;
  std::mt19937_64 rng_;
  std::optional<Optimizer> opt_task_, opt_t_;
  SaturationCounter saturations_;
  Phase phase_ = Phase::start;
  double acc_s0_ = 0.0;
  double source_score_ = 0.0;
  double source_only_target_acc_ = 0.0;
  std::vector<MetricsRecord> history_;
};

}  // namespace uda
