#pragma once

// Central finite-difference verification of the hand-written backward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oltr/model.hpp"

namespace oltr::gradcheck {

inline constexpr double kStep = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
inline constexpr double kDenominatorFloor = 1e-6;

enum class Component {
  Squash,
  CosineLogits,
  CrossEntropy,
  LargeMarginLoss,
  LargeMarginInactive,
  MetaEmbed,
  ModulatedAttention,
  Backbone,
  TotalLoss,
};

inline const std::vector<std::pair<std::string, Component>>& component_names() {
  static const std::vector<std::pair<std::string, Component>> names = {
      {"squash", Component::Squash},
      {"cosine_logits", Component::CosineLogits},
      {"cross_entropy", Component::CrossEntropy},
      {"large_margin_loss", Component::LargeMarginLoss},
      {"large_margin_inactive", Component::LargeMarginInactive},
      {"meta_embed", Component::MetaEmbed},
      {"modulated_attention", Component::ModulatedAttention},
      {"backbone", Component::Backbone},
      {"total_loss", Component::TotalLoss},
  };
  return names;
}

inline std::optional<Component> parse_component(const std::string& name) {
  for (const auto& [n, c] : component_names())
    if (n == name) return c;
  return std::nullopt;
}

struct Result {
  double max_relative_error = 0.0;
  double max_absolute_analytic = 0.0;  // largest analytic gradient entry seen
  std::string worst;
  std::size_t entries = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kDenominatorFloor});
}

/// Compares `analytic` against central differences of `loss` over every entry of `values`.
inline void check_entries(const std::string& name, std::span<double> values, std::span<const double> analytic,
                          const std::function<double()>& loss, Result& result) {
  require_shape(values.size() == analytic.size(), "gradcheck: value/gradient size mismatch for " + name);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + kStep;
    const double up = loss();
    values[i] = saved - kStep;
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * kStep);
    const double err = relative_error(analytic[i], numeric);
    result.max_absolute_analytic = std::max(result.max_absolute_analytic, std::abs(analytic[i]));
    ++result.entries;
    if (result.worst.empty() || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst = name + "[" + std::to_string(i) + "]";
    }
  }
}

inline void check_vector(const std::string& name, Vec& values, const Vec& analytic,
                         const std::function<double()>& loss, Result& result) {
  check_entries(name, flat(values), flat(analytic), loss, result);
}

/// Pairs up the tensors of a parameter struct and its gradient struct (same visit order).
template <typename Params>
void check_params(Params& params, Params& grads, const std::function<double()>& loss, Result& result) {
  std::vector<std::pair<std::string, std::span<double>>> values, analytic;
  params.visit([&](const std::string& n, TensorView t) { values.emplace_back(n, t.data); });
  grads.visit([&](const std::string& n, TensorView t) { analytic.emplace_back(n, t.data); });
  require_shape(values.size() == analytic.size(), "gradcheck: parameter/gradient structure mismatch");
  for (std::size_t i = 0; i < values.size(); ++i)
    check_entries(values[i].first, values[i].second, analytic[i].second, loss, result);
}

// ---------------------------------------------------------------------------
// Per-component checks on random small instances.

inline Result check_squash(const Vec& v0, const Vec& projection) {
  Vec v = v0;
  auto loss = [&] { return projection.dot(squash(v)); };
  Result r;
  check_vector("v", v, squash_backward(v, projection), loss, r);
  return r;
}

inline Result check_squash(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Result worst;
  // Below |v| ~ 0.1 the fixed step is no longer small against the curvature scale |v|.
  std::uniform_real_distribution<double> log_norm(std::log(0.1), std::log(100.0));
  for (double norm : {0.5, 1.0, 3.0, 100.0, std::exp(log_norm(rng))}) {
    Vec v = random_vector(6, 1.0, rng);
    v *= norm / v.norm();
    const Result r = check_squash(v, random_vector(6, 1.0, rng));
    if (r.max_relative_error >= worst.max_relative_error) worst = r;
  }
  return worst;
}

inline Result check_cosine_logits(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int k = 4, d = 5;
  Vec v = random_vector(d, 1.5, rng);
  Mat w = random_matrix(k, d, 1.0, rng);
  const Vec proj = random_vector(k, 1.0, rng);
  const double s = 16.0;
  auto loss = [&] { return proj.dot(cosine_logits(v, w, s)); };
  Mat dw = Mat::Zero(k, d);
  const Vec dv = cosine_logits_backward(v, w, s, proj, dw);
  Result r;
  check_vector("v", v, dv, loss, r);
  check_entries("w", flat(w), flat(dw), loss, r);
  return r;
}

inline Result check_cross_entropy(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vec z = random_vector(5, 3.0, rng);
  const int y = static_cast<int>(rng() % 5);
  Vec dz = Vec::Zero(5);
  cross_entropy(z, y, &dz);
  Result r;
  check_vector("logits", z, dz, [&] { return cross_entropy(z, y); }, r);
  return r;
}

/// Draws an instance whose hinge state and negative ordering are unambiguous under perturbation.
inline Result check_large_margin(std::uint64_t seed, bool want_active) {
  std::mt19937_64 rng(seed);
  const int k = 4, d = 3;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Mat c = random_matrix(k, d, 3.0, rng);
    Vec v = random_vector(d, 3.0, rng);
    const int y = static_cast<int>(rng() % k);
    const double margin = want_active ? 5.0 : 0.5;
    if (!want_active) v = c.row(y).transpose() + random_vector(d, 0.05, rng);
    Vec dist(k);
    for (int i = 0; i < k; ++i) dist(i) = (v - c.row(i).transpose()).norm();
    std::vector<double> neg;
    for (int i = 0; i < k; ++i)
      if (i != y) neg.push_back(dist(i));
    std::sort(neg.begin(), neg.end());
    const double arg = dist(y) - neg[0] + margin;
    const bool separated = neg[1] - neg[0] > 1e-2 && dist.minCoeff() > 1e-2;
    if (!separated || std::abs(arg) < 1e-2 || (arg > 0.0) != want_active) continue;
    Vec dv = Vec::Zero(d);
    Mat dc = Mat::Zero(k, d);
    large_margin_loss(v, y, c, margin, MarginForm::NearestNegative, &dv, &dc);
    auto loss = [&] { return large_margin_loss(v, y, c, margin).value; };
    Result r;
    check_vector("v", v, dv, loss, r);
    check_entries("centroids", flat(c), flat(dc), loss, r);
    return r;
  }
  throw std::runtime_error("gradcheck: could not draw a well-separated large-margin instance");
}

/// Finite differences see gamma's dependence on v_direct, so the exact-gradient mode is the
/// default here; the stop-gradient mode is only checkable with calibration off.
inline MetaEmbeddingOptions exact_gradient_options() {
  MetaEmbeddingOptions opt;
  opt.gamma_gradient = true;
  return opt;
}

inline Result check_meta_embed(std::uint64_t seed, MetaEmbeddingOptions opt = exact_gradient_options()) {
  std::mt19937_64 rng(seed);
  const int k = 3, d = 4;
  const Mat c = random_matrix(k, d, 1.0, rng);
  Vec v = random_vector(d, 1.0, rng);
  HallucinatorParams hal = AffineParams::random(k, d, rng);
  hal.bias = random_vector(k, 0.3, rng);
  SelectorParams sel = AffineParams::random(d, d, rng);
  sel.bias = random_vector(d, 0.3, rng);
  const Vec proj = random_vector(d, 1.0, rng);
  auto loss = [&] { return proj.dot(meta_embed(v, c, hal, sel, opt).vector); };
  MetaEmbeddingCache cache;
  meta_embed(v, c, hal, sel, opt, &cache);
  MetaEmbeddingGrads g{AffineParams::zeros(k, d), AffineParams::zeros(d, d)};
  const Vec dv = meta_embed_backward(cache, c, hal, sel, opt, proj, g);
  Result r;
  check_vector("v_direct", v, dv, loss, r);
  check_entries("hallucinator.weight", flat(hal.weight), flat(g.hal.weight), loss, r);
  check_entries("hallucinator.bias", flat(hal.bias), flat(g.hal.bias), loss, r);
  check_entries("selector.weight", flat(sel.weight), flat(g.sel.weight), loss, r);
  check_entries("selector.bias", flat(sel.bias), flat(g.sel.bias), loss, r);
  return r;
}

/// Random 1 x 4 x 3 x 3 feature map (batch of one).
inline Result check_modulated_attention(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int c = 4, h = 3, w = 3;
  FeatureMap f(random_matrix(c, h * w, 1.0, rng), h, w);
  AttentionParams p = AttentionParams::random(c, rng);
  const Mat proj = random_matrix(c, h * w, 1.0, rng);
  auto loss = [&] { return (proj.array() * modulated_attention(f, p).values.array()).sum(); };
  ModulatedAttentionCache cache;
  modulated_attention(f, p, &cache);
  AttentionParams g = AttentionParams::zeros(c);
  const Mat df = modulated_attention_backward(cache, p, proj, g);
  Result r;
  check_entries("f", flat(f.values), flat(df), loss, r);
  check_params(p, g, loss, r);
  return r;
}

inline Result check_backbone(std::uint64_t seed, BackboneKind kind = BackboneKind::Mlp) {
  std::mt19937_64 rng(seed);
  BackboneSpec spec;
  spec.kind = kind;
  spec.embed_dim = 4;
  spec.input_dim = 5;
  spec.hidden = {6, 6};
  spec.map_height = 2;
  spec.map_width = 2;
  spec.input_channels = 2;
  spec.input_size = 6;
  spec.conv_widths = {3, 3, 3};
  BackboneParams bp = BackboneParams::random(spec, rng);
  for (auto& l : bp.layers) l.bias = random_vector(l.bias.size(), 0.1, rng);
  AttentionParams ap = AttentionParams::random(spec.embed_dim, rng);
  Vec x = random_vector(spec.input_size_flat(), 1.0, rng);
  const Vec proj = random_vector(spec.embed_dim, 1.0, rng);
  auto loss = [&] { return proj.dot(extract(spec, x, bp, ap, true)); };
  BackboneCache cache;
  extract(spec, x, bp, ap, true, &cache);
  BackboneParams bg = bp.zeros_like();
  AttentionParams ag = AttentionParams::zeros(spec.embed_dim);
  const Vec dx = extract_backward(spec, cache, bp, ap, proj, bg, ag);
  Result r;
  check_vector("input", x, dx, loss, r);
  check_params(bp, bg, loss, r);
  check_params(ap, ag, loss, r);
  return r;
}

inline ModelOptions small_model_options() {
  ModelOptions o;
  o.spec.embed_dim = 4;
  o.spec.input_dim = 5;
  o.spec.hidden = {6, 6};
  o.spec.map_height = 2;
  o.spec.map_width = 2;
  o.num_classes = 3;
  o.meta = exact_gradient_options();
  return o;
}

inline Result check_total_loss(std::uint64_t seed, ModelOptions o = small_model_options()) {
  std::mt19937_64 rng(seed);
  ModelParams p = ModelParams::random(o, rng);
  for (auto& l : p.backbone.layers) l.bias = random_vector(l.bias.size(), 0.1, rng);
  p.linear.bias = random_vector(o.num_classes, 0.1, rng);
  CentroidMemory memory{random_matrix(o.num_classes, o.spec.embed_dim, 1.0, rng), 0};
  std::vector<LabeledExample> data;
  for (int n = 0; n < 3; ++n)
    data.push_back({n, random_vector(o.spec.input_size_flat(), 1.0, rng), static_cast<int>(rng() % o.num_classes)});
  Batch batch;
  for (const auto& e : data) batch.push_back(&e);
  ModelParams g = p.zeros_like();
  total_loss(batch, o, p, memory, &g);
  Result r;
  check_params(p, g, [&] { return total_loss(batch, o, p, memory).total; }, r);
  return r;
}

inline Result run(Component c, std::uint64_t seed) {
  switch (c) {
    case Component::Squash: return check_squash(seed);
    case Component::CosineLogits: return check_cosine_logits(seed);
    case Component::CrossEntropy: return check_cross_entropy(seed);
    case Component::LargeMarginLoss: return check_large_margin(seed, true);
    case Component::LargeMarginInactive: return check_large_margin(seed, false);
    case Component::MetaEmbed: return check_meta_embed(seed);
    case Component::ModulatedAttention: return check_modulated_attention(seed);
    case Component::Backbone: return check_backbone(seed);
    case Component::TotalLoss: return check_total_loss(seed);
  }
  return {};
}

}  // namespace oltr::gradcheck
