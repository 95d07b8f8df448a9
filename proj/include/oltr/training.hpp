#pragma once

// End-to-end optimization: SGD with momentum on every parameter group, then a
// centroid update from the batch's fresh direct features.

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oltr/data.hpp"
#include "oltr/evaluation.hpp"
#include "oltr/model.hpp"

namespace oltr {

struct ModelState {
  ModelParams params;
  ModelParams velocity;
  CentroidMemory memory;
  int epoch = 0;
  std::int64_t step = 0;
};

struct StepMetrics {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double large_margin = 0.0;
  double accuracy = 0.0;
  double gamma_mean = 0.0;
  double grad_norm = 0.0;  // before clipping
  std::int64_t centroid_version = 0;  // snapshot the gradients were computed against
};

inline std::vector<Vec> direct_features(const ModelOptions& o, const ModelParams& p,
                                        const std::vector<LabeledExample>& data) {
  std::vector<Vec> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(direct_feature(o, p, e.input));
  return out;
}

inline std::vector<int> labels_of(const std::vector<LabeledExample>& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(e.label);
  return out;
}

/// Fresh parameters plus centroids initialized from one pass over the training split.
inline ModelState init_state(const Config& c, const std::vector<LabeledExample>& train) {
  const ModelOptions o = ModelOptions::from_config(c);
  auto rng = make_rng(static_cast<std::uint64_t>(c.seed), rng_purpose::init);
  ModelState s;
  s.params = ModelParams::random(o, rng);
  s.velocity = s.params.zeros_like();
  if (!o.baseline) s.memory = init_centroids(direct_features(o, s.params, train), labels_of(train), o.num_classes);
  return s;
}

namespace detail {

template <typename F>
void for_each_pair(ModelParams& a, ModelParams& b, ModelParams& c, F&& f) {
  std::vector<std::span<double>> va, vb, vc;
  a.visit([&](const std::string&, TensorView t) { va.push_back(t.data); });
  b.visit([&](const std::string&, TensorView t) { vb.push_back(t.data); });
  c.visit([&](const std::string&, TensorView t) { vc.push_back(t.data); });
  for (std::size_t i = 0; i < va.size(); ++i)
    for (std::size_t j = 0; j < va[i].size(); ++j) f(va[i][j], vb[i][j], vc[i][j]);
}

}  // namespace detail

/// One optimization step. Loss gradients use the pre-step centroid snapshot; the
/// centroids move only after the parameter update.
inline StepMetrics train_step(const Batch& batch, ModelState& s, const Config& c, double lr) {
  const ModelOptions o = ModelOptions::from_config(c);
  ModelParams grads = s.params.zeros_like();
  StepMetrics m;
  m.centroid_version = s.memory.version;
  const LossBreakdown loss = total_loss(batch, o, s.params, s.memory, &grads);
  if (!std::isfinite(loss.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << s.step << " (epoch " << s.epoch << "): total=" << loss.total
        << " ce=" << loss.cross_entropy << " lm=" << loss.large_margin;
    throw NumericError(msg.str());
  }
  double sq = 0.0;
  grads.visit([&](const std::string&, TensorView t) {
    for (double g : t.data) sq += g * g;
  });
  m.grad_norm = std::sqrt(sq);
  const double clip = c.grad_clip > 0.0 && m.grad_norm > c.grad_clip ? c.grad_clip / m.grad_norm : 1.0;
  const double momentum = c.sgd_momentum, decay = c.weight_decay;
  detail::for_each_pair(s.params, s.velocity, grads, [&](double& w, double& v, double& g) {
    v = momentum * v + clip * g + decay * w;
    w -= lr * v;
  });
  if (!o.baseline) {
    std::vector<Vec> feats;
    std::vector<int> labels;
    for (const LabeledExample* e : batch) {
      feats.push_back(direct_feature(o, s.params, e->input));
      labels.push_back(e->label);
    }
    s.memory = update_centroids(feats, labels, std::move(s.memory), c.centroid_momentum);
  }
  ++s.step;
  m.loss = loss.total;
  m.cross_entropy = loss.cross_entropy;
  m.large_margin = loss.large_margin;
  m.accuracy = static_cast<double>(loss.correct) / loss.count;
  m.gamma_mean = loss.gamma_sum / loss.count;
  return m;
}

inline ScoredSplit score(const ModelOptions& o, const ModelState& s, const std::vector<LabeledExample>& data) {
  ScoredSplit out;
  for (const auto& e : data) {
    const SampleOutput r = forward(o, s.params, s.memory, e.input);
    out.probabilities.push_back(r.probabilities);
    out.labels.push_back(e.label);
    out.source_classes.push_back(e.source_class);
    out.gammas.push_back(r.meta.gamma);
    out.squashed_norms.push_back(r.squashed_norm);
  }
  return out;
}

inline double closed_accuracy(const ModelOptions& o, const ModelState& s, const std::vector<LabeledExample>& data) {
  if (data.empty()) return 0.0;
  int correct = 0;
  for (const auto& e : data) {
    Eigen::Index arg = 0;
    forward(o, s.params, s.memory, e.input).logits.maxCoeff(&arg);
    correct += arg == e.label;
  }
  return static_cast<double>(correct) / data.size();
}

struct EpochMetrics {
  int epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;
  double cross_entropy = 0.0;
  double large_margin = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double gamma_mean = 0.0;
  double gamma_min = 0.0;
  double gamma_max = 0.0;
  int steps = 0;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"lr", m.learning_rate},
          {"loss", m.loss},
          {"cross_entropy", m.cross_entropy},
          {"large_margin", m.large_margin},
          {"train_acc", m.train_accuracy},
          {"val_acc", m.val_accuracy},
          {"gamma_mean", m.gamma_mean},
          {"gamma_min", m.gamma_min},
          {"gamma_max", m.gamma_max},
          {"steps", m.steps}};
}

inline double learning_rate_at(const Config& c, int epoch, bool finetune) {
  const double base = finetune ? c.learning_rate * 0.1 : c.learning_rate;
  return base * std::pow(c.lr_decay_factor, epoch / c.lr_decay_every);
}

struct FitOptions {
  bool finetune = false;  // starting from a provided checkpoint: learning rate scaled by 0.1
  std::optional<double> best_val_accuracy;  // best so far when resuming
  /// Called after each epoch with the current state, its metrics, and whether it is the best so far.
  std::function<void(const ModelState&, const EpochMetrics&, bool)> on_epoch;
};

struct FitResult {
  ModelState last;
  ModelState best;
  double best_val_accuracy = -1.0;
  std::vector<EpochMetrics> log;
};

/// Runs epochs state.epoch .. c.epochs-1. The batch stream of each epoch depends only on
/// (seed, epoch), so a resumed run continues exactly where it stopped.
inline FitResult fit(const CuratedDataset& ds, const Config& c, ModelState state, const FitOptions& opt = {}) {
  const ModelOptions o = ModelOptions::from_config(c);
  if (ds.train.empty()) throw DataError("fit: empty training split");
  FitResult r;
  r.best = state;
  r.best_val_accuracy = opt.best_val_accuracy.value_or(-1.0);
  const auto labels = labels_of(ds.train);
  const auto seed = static_cast<std::uint64_t>(c.seed);
  const bool class_aware = c.effective_sampler() == "class_aware";
  const std::size_t steps_per_epoch = (ds.train.size() + c.batch_size - 1) / c.batch_size;

  for (int epoch = state.epoch; epoch < c.epochs; ++epoch) {
    const double lr = learning_rate_at(c, epoch, opt.finetune);
    std::vector<std::vector<std::size_t>> batches;
    if (class_aware) {
      ClassAwareSampler sampler(labels, c.batch_size, c.classes_per_batch, seed, static_cast<std::uint64_t>(epoch));
      for (std::size_t i = 0; i < steps_per_epoch; ++i) batches.push_back(sampler.next());
    } else {
      auto rng = make_rng(seed, rng_purpose::batches, static_cast<std::uint64_t>(epoch));
      batches = instance_batches(ds.train.size(), c.batch_size, rng);
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.learning_rate = lr;
    em.gamma_min = std::numeric_limits<double>::infinity();
    em.gamma_max = 0.0;
    for (const auto& idx : batches) {
      Batch batch;
      for (auto i : idx) batch.push_back(&ds.train[i]);
      const StepMetrics sm = train_step(batch, state, c, lr);
      em.loss += sm.loss;
      em.cross_entropy += sm.cross_entropy;
      em.large_margin += sm.large_margin;
      em.train_accuracy += sm.accuracy;
      em.gamma_mean += sm.gamma_mean;
      em.gamma_min = std::min(em.gamma_min, sm.gamma_mean);
      em.gamma_max = std::max(em.gamma_max, sm.gamma_mean);
      ++em.steps;
    }
    const double n = std::max(1, em.steps);
    em.loss /= n;
    em.cross_entropy /= n;
    em.large_margin /= n;
    em.train_accuracy /= n;
    em.gamma_mean /= n;
    state.epoch = epoch + 1;
    em.val_accuracy = closed_accuracy(o, state, ds.val.empty() ? ds.train : ds.val);
    const bool improved = em.val_accuracy > r.best_val_accuracy;
    if (improved) {
      r.best_val_accuracy = em.val_accuracy;
      r.best = state;
    }
    r.log.push_back(em);
    if (opt.on_epoch) opt.on_epoch(state, em, improved);
  }
  if (r.log.empty()) r.best = state;
  r.last = std::move(state);
  return r;
}

}  // namespace oltr
