#pragma once

// Self-attention (embedded-Gaussian non-local block) and the modulated
// attention map f + MA(f) * SA(f) applied to the last backbone feature map.

#include <algorithm>
#include <random>

#include "oltr/tensor.hpp"

namespace oltr {

/// One sample's C x H x W feature map, stored as C rows by H*W position columns.
struct FeatureMap {
  Mat values;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(Mat v, int h, int w) : values(std::move(v)), height(h), width(w) {
    require_shape(values.cols() == static_cast<Eigen::Index>(h) * w && h > 0 && w > 0,
                  "feature map: spatial axes must be nonempty and match the column count");
  }

  int channels() const { return static_cast<int>(values.rows()); }
  int positions() const { return height * width; }
  double& at(int c, int y, int x) { return values(c, y * width + x); }
  double at(int c, int y, int x) const { return values(c, y * width + x); }
};

/// Projection weights for the non-local block plus the 1x1 gate head.
struct AttentionParams {
  Mat query;    // r x C
  Mat key;      // r x C
  Mat value;    // r x C
  Mat output;   // C x r
  Vec gate;     // C, scores one position each

  static int reduced(int channels) { return std::max(1, channels / 2); }

  static AttentionParams zeros(int channels) {
    const int r = reduced(channels);
    return {Mat::Zero(r, channels), Mat::Zero(r, channels), Mat::Zero(r, channels),
            Mat::Zero(channels, r), Vec::Zero(channels)};
  }

  static AttentionParams random(int channels, std::mt19937_64& rng) {
    const int r = reduced(channels);
    const double s = 1.0 / std::sqrt(static_cast<double>(channels));
    return {random_matrix(r, channels, s, rng), random_matrix(r, channels, s, rng),
            random_matrix(r, channels, s, rng), random_matrix(channels, r, 1.0 / std::sqrt(r), rng),
            random_vector(channels, s, rng)};
  }

  int channels() const { return static_cast<int>(output.rows()); }

  template <typename F>
  void visit(F&& f) {
    f("attention.query", view(query));
    f("attention.key", view(key));
    f("attention.value", view(value));
    f("attention.output", view(output));
    f("attention.gate", view(gate));
  }
};

struct SelfAttentionCache {
  Mat input;      // C x N
  Mat query;      // r x N
  Mat key;        // r x N
  Mat value;      // r x N
  Mat weights;    // N x N, row-normalized
  Mat mixed;      // r x N
  Mat out;        // C x N
};

struct ModulatedAttentionCache {
  SelfAttentionCache sa;
  Vec gate;  // N, sums to 1
};

inline void check_params(const FeatureMap& f, const AttentionParams& p) {
  const int c = f.channels();
  const int r = AttentionParams::reduced(c);
  require_shape(p.query.rows() == r && p.query.cols() == c && p.key.rows() == r && p.key.cols() == c &&
                    p.value.rows() == r && p.value.cols() == c && p.output.rows() == c &&
                    p.output.cols() == r && p.gate.size() == c,
                "attention: parameter shapes do not match feature map channels");
}

inline Mat row_softmax(const Mat& s) {
  Mat a(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) a.row(i) = softmax(s.row(i).transpose()).transpose();
  return a;
}

inline FeatureMap self_attention(const FeatureMap& f, const AttentionParams& p, SelfAttentionCache* cache = nullptr) {
  check_params(f, p);
  SelfAttentionCache c;
  c.input = f.values;
  c.query = p.query * f.values;
  c.key = p.key * f.values;
  c.value = p.value * f.values;
  // weights(i, j): how much position i attends to position j
  c.weights = row_softmax(c.query.transpose() * c.key);
  c.mixed = c.value * c.weights.transpose();
  c.out = p.output * c.mixed;
  FeatureMap out(c.out, f.height, f.width);
  if (cache) *cache = std::move(c);
  return out;
}

/// Spatial softmax gate conditioned on the original feature map.
inline Vec spatial_gate(const FeatureMap& f, const AttentionParams& p) {
  check_params(f, p);
  return softmax((p.gate.transpose() * f.values).transpose());
}

/// f + gate (broadcast over channels) * sa.
inline FeatureMap apply_gate(const FeatureMap& f, const FeatureMap& sa, const Vec& gate) {
  require_shape(sa.values.rows() == f.values.rows() && sa.values.cols() == f.values.cols() &&
                    gate.size() == f.values.cols(),
                "apply_gate: shape mismatch");
  Mat out = f.values + (sa.values.array().rowwise() * gate.transpose().array()).matrix();
  return {std::move(out), f.height, f.width};
}

inline FeatureMap modulated_attention(const FeatureMap& f, const AttentionParams& p,
                                      ModulatedAttentionCache* cache = nullptr) {
  SelfAttentionCache sc;
  const FeatureMap sa = self_attention(f, p, &sc);
  const Vec gate = spatial_gate(f, p);
  FeatureMap out = apply_gate(f, sa, gate);
  if (cache) {
    cache->sa = std::move(sc);
    cache->gate = gate;
  }
  return out;
}

/// Accumulates parameter gradients into `grads` and returns dL/df through self-attention.
inline Mat self_attention_backward(const SelfAttentionCache& c, const AttentionParams& p, const Mat& d_out,
                                   AttentionParams& grads) {
  grads.output += d_out * c.mixed.transpose();
  const Mat d_mixed = p.output.transpose() * d_out;  // r x N
  const Mat d_value = d_mixed * c.weights;           // r x N
  const Mat d_weights = d_mixed.transpose() * c.value;  // N x N
  Mat d_scores(c.weights.rows(), c.weights.cols());
  for (Eigen::Index i = 0; i < c.weights.rows(); ++i) {
    const double dot = c.weights.row(i).dot(d_weights.row(i));
    d_scores.row(i) = (c.weights.row(i).array() * (d_weights.row(i).array() - dot)).matrix();
  }
  const Mat d_query = c.key * d_scores.transpose();  // r x N
  const Mat d_key = c.query * d_scores;              // r x N
  grads.query += d_query * c.input.transpose();
  grads.key += d_key * c.input.transpose();
  grads.value += d_value * c.input.transpose();
  return p.query.transpose() * d_query + p.key.transpose() * d_key + p.value.transpose() * d_value;
}

inline Mat modulated_attention_backward(const ModulatedAttentionCache& c, const AttentionParams& p,
                                        const Mat& d_out, AttentionParams& grads) {
  Mat d_input = d_out;
  const Mat d_sa = (d_out.array().rowwise() * c.gate.transpose().array()).matrix();
  const Vec d_gate = (d_out.array() * c.sa.out.array()).colwise().sum().transpose();
  const Vec d_score = softmax_backward(c.gate, d_gate);
  grads.gate += c.sa.input * d_score;
  d_input += p.gate * d_score.transpose();
  d_input += self_attention_backward(c.sa, p, d_sa, grads);
  return d_input;
}

}  // namespace oltr
