#pragma once

// Full forward/backward pipeline: backbone (+ modulated attention) -> direct
// feature -> dynamic meta-embedding -> squash -> cosine logits, trained with
// cross-entropy plus the centroid large-margin term. The plain baseline swaps
// everything after the (attention-free) backbone for a linear softmax head.

#include <random>
#include <span>
#include <vector>

#include "oltr/backbone.hpp"
#include "oltr/classifier.hpp"
#include "oltr/config.hpp"
#include "oltr/meta_embedding.hpp"

namespace oltr {

struct ModelOptions {
  BackboneSpec spec;
  int num_classes = 0;
  bool baseline = false;
  bool attention = true;
  MetaEmbeddingOptions meta;
  double logit_scale = defaults::logit_scale_s;
  double lambda_lm = defaults::lambda_lm;
  double margin = defaults::margin_m;
  MarginForm margin_form = MarginForm::NearestNegative;
  bool margin_on_direct = false;
  bool mean_reduction = false;

  static ModelOptions from_config(const Config& c) {
    ModelOptions o;
    o.spec = BackboneSpec::from_config(c);
    o.num_classes = c.num_classes;
    o.baseline = c.baseline;
    o.attention = c.use_attention && !c.baseline;
    o.meta.memory_feature = c.use_memory_feature;
    o.meta.concept_selector = c.use_concept_selector;
    o.meta.calibration = c.use_calibration;
    o.meta.softmax_coefficients = c.hallucinate_softmax;
    o.meta.gamma_gradient = c.gamma_gradient;
    o.meta.gamma_eps = c.gamma_eps;
    o.logit_scale = c.logit_scale_s;
    o.lambda_lm = c.lambda_lm;
    o.margin = c.margin_m;
    o.margin_form = c.lm_form == "sum" ? MarginForm::SumOfNegatives : MarginForm::NearestNegative;
    o.margin_on_direct = c.lm_target == "direct";
    o.mean_reduction = c.loss_reduction == "mean";
    return o;
  }
};

struct ModelParams {
  BackboneParams backbone;
  AttentionParams attention;
  HallucinatorParams hallucinator;
  SelectorParams selector;
  ClassifierWeights cosine;
  LinearClassifier linear;

  static ModelParams random(const ModelOptions& o, std::mt19937_64& rng) {
    ModelParams p;
    const int d = o.spec.embed_dim, k = o.num_classes;
    p.backbone = BackboneParams::random(o.spec, rng);
    p.attention = AttentionParams::random(d, rng);
    p.hallucinator = HallucinatorParams::random(k, d, rng);
    p.selector = SelectorParams::random(d, d, rng);
    p.cosine.weight = random_matrix(k, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    p.linear.weight = random_matrix(k, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    p.linear.bias = Vec::Zero(k);
    return p;
  }

  ModelParams zeros_like() const {
    ModelParams z;
    z.backbone = backbone.zeros_like();
    z.attention = AttentionParams::zeros(attention.channels());
    z.hallucinator = AffineParams::zeros(static_cast<int>(hallucinator.weight.rows()), static_cast<int>(hallucinator.weight.cols()));
    z.selector = AffineParams::zeros(static_cast<int>(selector.weight.rows()), static_cast<int>(selector.weight.cols()));
    z.cosine.weight = Mat::Zero(cosine.weight.rows(), cosine.weight.cols());
    z.linear.weight = Mat::Zero(linear.weight.rows(), linear.weight.cols());
    z.linear.bias = Vec::Zero(linear.bias.size());
    return z;
  }

  template <typename F>
  void visit(F&& f) {
    backbone.visit(f);
    attention.visit(f);
    f("hallucinator.weight", view(hallucinator.weight));
    f("hallucinator.bias", view(hallucinator.bias));
    f("selector.weight", view(selector.weight));
    f("selector.bias", view(selector.bias));
    cosine.visit(f);
    linear.visit(f);
  }
};

/// Everything one forward pass produces for a single sample.
struct SampleOutput {
  Vec direct;
  MetaEmbedding meta;  // baseline: vector = direct, gamma = reachability if memory supplied
  Vec logits;
  Vec probabilities;
  double squashed_norm = 0.0;
};

struct SampleCache {
  BackboneCache backbone;
  MetaEmbeddingCache meta;
};

inline Vec direct_feature(const ModelOptions& o, const ModelParams& p, const Vec& input, BackboneCache* cache = nullptr) {
  return extract(o.spec, input, p.backbone, p.attention, o.attention, cache);
}

inline SampleOutput forward(const ModelOptions& o, const ModelParams& p, const CentroidMemory& memory, const Vec& input,
                            SampleCache* cache = nullptr) {
  SampleCache local;
  SampleCache& c = cache ? *cache : local;
  SampleOutput out;
  out.direct = direct_feature(o, p, input, &c.backbone);
  if (o.baseline) {
    out.meta.vector = out.direct;
    if (memory.num_classes() > 0) out.meta.gamma = reachability(out.direct, memory.centroids, o.meta.gamma_eps);
    out.logits = p.linear.logits(out.direct);
  } else {
    out.meta = meta_embed(out.direct, memory.centroids, p.hallucinator, p.selector, o.meta, &c.meta);
    out.logits = cosine_logits(out.meta.vector, p.cosine.weight, o.logit_scale);
  }
  out.squashed_norm = squash(out.meta.vector).norm();
  out.probabilities = softmax(out.logits);
  return out;
}

struct LossBreakdown {
  double total = 0.0;
  double cross_entropy = 0.0;
  double large_margin = 0.0;
  int correct = 0;
  int count = 0;
  double gamma_sum = 0.0;
};

using Batch = std::vector<const LabeledExample*>;

/// Batch objective: sum_n CE(n) + lambda * sum_n LM(n) (optionally averaged). Gradients w.r.t.
/// every parameter group are accumulated into `grads` when non-null; centroids stay fixed.
inline LossBreakdown total_loss(const Batch& batch, const ModelOptions& o, const ModelParams& p,
                                const CentroidMemory& memory, ModelParams* grads = nullptr,
                                std::vector<Vec>* direct_features = nullptr) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  const double weight = o.mean_reduction ? 1.0 / static_cast<double>(batch.size()) : 1.0;
  const bool use_margin = !o.baseline && o.lambda_lm > 0.0;
  LossBreakdown r;
  for (const LabeledExample* ex : batch) {
    if (ex->label < 0 || ex->label >= o.num_classes)
      throw std::out_of_range("total_loss: training label " + std::to_string(ex->label) + " outside [0, K)");
    SampleCache cache;
    const SampleOutput out = forward(o, p, memory, ex->input, &cache);
    if (direct_features) direct_features->push_back(out.direct);

    Vec d_logits = Vec::Zero(out.logits.size());
    const double ce = cross_entropy(out.logits, ex->label, grads ? &d_logits : nullptr, weight);
    double lm = 0.0;
    Vec d_margin = Vec::Zero(out.direct.size());
    if (use_margin) {
      const Vec& target = o.margin_on_direct ? out.direct : out.meta.vector;
      lm = large_margin_loss(target, ex->label, memory.centroids, o.margin, o.margin_form,
                             grads ? &d_margin : nullptr, nullptr, weight * o.lambda_lm)
               .value;
    }
    r.cross_entropy += ce;
    r.large_margin += lm;
    r.gamma_sum += out.meta.gamma;
    Eigen::Index arg = 0;
    out.logits.maxCoeff(&arg);
    r.correct += arg == ex->label ? 1 : 0;
    ++r.count;

    if (!grads) continue;
    Vec d_direct;
    if (o.baseline) {
      grads->linear.weight += d_logits * out.direct.transpose();
      grads->linear.bias += d_logits;
      d_direct = p.linear.weight.transpose() * d_logits;
    } else {
      Vec d_meta = cosine_logits_backward(out.meta.vector, p.cosine.weight, o.logit_scale, d_logits, grads->cosine.weight);
      if (use_margin && !o.margin_on_direct) d_meta += d_margin;
      MetaEmbeddingGrads mg{std::move(grads->hallucinator), std::move(grads->selector)};
      d_direct = meta_embed_backward(cache.meta, memory.centroids, p.hallucinator, p.selector, o.meta, d_meta, mg);
      grads->hallucinator = std::move(mg.hal);
      grads->selector = std::move(mg.sel);
      if (use_margin && o.margin_on_direct) d_direct += d_margin;
    }
    extract_backward(o.spec, cache.backbone, p.backbone, p.attention, d_direct, grads->backbone, grads->attention);
  }
  r.total = weight * (r.cross_entropy + o.lambda_lm * (use_margin ? r.large_margin : 0.0));
  return r;
}

}  // namespace oltr
