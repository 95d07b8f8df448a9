#pragma once

// Dynamic meta-embedding:
//   o      = softmax(T_hal v_direct)                  hallucinated coefficients
//   v_mem  = sum_i o_i c_i                            memory feature
//   e      = tanh(T_sel v_direct)                     concept selector
//   gamma  = max(eps, min_i |v_direct - c_i|)         reachability
//   v_meta = (v_direct + e * v_mem) / gamma

#include <limits>
#include <random>

#include "oltr/centroid_memory.hpp"

namespace oltr {

struct AffineParams {
  Mat weight;
  Vec bias;

  static AffineParams zeros(int out, int in) { return {Mat::Zero(out, in), Vec::Zero(out)}; }
  static AffineParams random(int out, int in, std::mt19937_64& rng) {
    return {random_matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng), Vec::Zero(out)};
  }
  Vec apply(const Vec& x) const {
    require_shape(weight.cols() == x.size(), "affine: input has " + std::to_string(x.size()) + " entries, expected " +
                                                 std::to_string(weight.cols()));
    return weight * x + bias;
  }
};

using HallucinatorParams = AffineParams;  // embed_dim -> K
using SelectorParams = AffineParams;      // embed_dim -> embed_dim

/// Which parts of the meta-embedding are active (ablation axes).
struct MetaEmbeddingOptions {
  bool memory_feature = true;
  bool concept_selector = true;
  bool calibration = true;
  bool softmax_coefficients = true;
  bool gamma_gradient = false;
  double gamma_eps = 1e-12;
};

struct MetaEmbedding {
  Vec vector;
  double gamma = 1.0;  // reachability of the direct feature
  double scale = 1.0;  // divisor actually applied (gamma, or 1 with calibration off)
};

inline Vec hallucinate(const Vec& v_direct, const HallucinatorParams& p, bool softmax_normalized = true) {
  const Vec logits = p.apply(v_direct);
  return softmax_normalized ? softmax(logits) : logits;
}

inline Vec compose_memory_feature(const Vec& o, const Mat& centroids) {
  require_shape(o.size() == centroids.rows(), "compose_memory_feature: coefficient count " + std::to_string(o.size()) +
                                                  " differs from centroid count " + std::to_string(centroids.rows()));
  return centroids.transpose() * o;
}

struct Reachability {
  double gamma = 0.0;
  int nearest = -1;
  bool clamped = false;
};

inline Reachability reachability_detail(const Vec& v_direct, const Mat& centroids, double gamma_eps) {
  if (centroids.rows() == 0) throw std::invalid_argument("reachability: empty memory");
  require_shape(v_direct.size() == centroids.cols(), "reachability: dimension mismatch");
  Reachability r;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < centroids.rows(); ++i) {
    const double d = (v_direct - centroids.row(i).transpose()).norm();
    if (d < best) {
      best = d;
      r.nearest = static_cast<int>(i);
    }
  }
  r.clamped = best < gamma_eps;
  r.gamma = r.clamped ? gamma_eps : best;
  return r;
}

inline double reachability(const Vec& v_direct, const Mat& centroids, double gamma_eps) {
  return reachability_detail(v_direct, centroids, gamma_eps).gamma;
}

inline Vec concept_select(const Vec& v_direct, const SelectorParams& p) { return p.apply(v_direct).array().tanh().matrix(); }

struct MetaEmbeddingCache {
  Vec v_direct;
  Vec coefficients;
  Vec memory;
  Vec selector;
  Vec numerator;
  Reachability reach;
  double scale = 1.0;
};

inline MetaEmbedding meta_embed(const Vec& v_direct, const Mat& centroids, const HallucinatorParams& hal,
                                const SelectorParams& sel, const MetaEmbeddingOptions& opt = {},
                                MetaEmbeddingCache* cache = nullptr) {
  MetaEmbeddingCache c;
  c.v_direct = v_direct;
  c.reach = reachability_detail(v_direct, centroids, opt.gamma_eps);
  c.numerator = v_direct;
  if (opt.memory_feature) {
    c.coefficients = hallucinate(v_direct, hal, opt.softmax_coefficients);
    c.memory = compose_memory_feature(c.coefficients, centroids);
    if (opt.concept_selector) {
      c.selector = concept_select(v_direct, sel);
      c.numerator += (c.selector.array() * c.memory.array()).matrix();
    } else {
      c.numerator += c.memory;
    }
  }
  c.scale = opt.calibration ? c.reach.gamma : 1.0;
  MetaEmbedding out{c.numerator / c.scale, c.reach.gamma, c.scale};
  if (cache) *cache = std::move(c);
  return out;
}

struct MetaEmbeddingGrads {
  HallucinatorParams hal;
  SelectorParams sel;
};

/// Returns dL/dv_direct given dL/dv_meta; accumulates parameter gradients. Centroids are a
/// constant snapshot here.
inline Vec meta_embed_backward(const MetaEmbeddingCache& c, const Mat& centroids, const HallucinatorParams& hal,
                               const SelectorParams& sel, const MetaEmbeddingOptions& opt, const Vec& d_meta,
                               MetaEmbeddingGrads& grads) {
  const Vec d_num = d_meta / c.scale;
  Vec d_direct = d_num;
  if (opt.calibration && opt.gamma_gradient && !c.reach.clamped) {
    const double d_gamma = -d_meta.dot(c.numerator) / (c.scale * c.scale);
    d_direct += d_gamma * (c.v_direct - centroids.row(c.reach.nearest).transpose()) / c.reach.gamma;
  }
  if (!opt.memory_feature) return d_direct;

  Vec d_memory;
  if (opt.concept_selector) {
    d_memory = (d_num.array() * c.selector.array()).matrix();
    const Vec d_sel_out = (d_num.array() * c.memory.array()).matrix();
    const Vec d_sel_pre = (d_sel_out.array() * (1.0 - c.selector.array().square())).matrix();
    grads.sel.weight += d_sel_pre * c.v_direct.transpose();
    grads.sel.bias += d_sel_pre;
    d_direct += sel.weight.transpose() * d_sel_pre;
  } else {
    d_memory = d_num;
  }
  const Vec d_coeff = centroids * d_memory;
  const Vec d_hal_pre = opt.softmax_coefficients ? softmax_backward(c.coefficients, d_coeff) : d_coeff;
  grads.hal.weight += d_hal_pre * c.v_direct.transpose();
  grads.hal.bias += d_hal_pre;
  d_direct += hal.weight.transpose() * d_hal_pre;
  return d_direct;
}

}  // namespace oltr
