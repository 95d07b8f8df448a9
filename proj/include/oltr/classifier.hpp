#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "oltr/tensor.hpp"

namespace oltr {

/// Squashing normalization: (|v|^2 / (1 + |v|^2)) * v / |v|, zero at the origin.
inline Vec squash(const Vec& v) {
  const double r = v.norm();
  if (r == 0.0) return Vec::Zero(v.size());
  return v * (r / (1.0 + r * r));
}

/// Vector-Jacobian product of squash. J = g(r) I + g'(r)/r v v^T with g(r) = r / (1 + r^2).
inline Vec squash_backward(const Vec& v, const Vec& d_out) {
  const double r = v.norm();
  if (r == 0.0) return Vec::Zero(v.size());
  const double r2 = r * r;
  const double g = r / (1.0 + r2);
  const double dg_over_r = (1.0 - r2) / ((1.0 + r2) * (1.0 + r2) * r);
  return g * d_out + (dg_over_r * v.dot(d_out)) * v;
}

/// Cosine classifier weights; rows are normalized before use, no bias.
struct ClassifierWeights {
  Mat weight;  // K x embed_dim

  template <typename F>
  void visit(F&& f) {
    f("classifier.weight", view(weight));
  }
};

inline Mat normalized_rows(const Mat& w) {
  Mat out(w.rows(), w.cols());
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    const double n = w.row(k).norm();
    if (n == 0.0) throw std::invalid_argument("cosine_logits: classifier row " + std::to_string(k) + " has zero norm");
    out.row(k) = w.row(k) / n;
  }
  return out;
}

/// s * <squash(v), w_k / |w_k|> for every class k.
inline Vec cosine_logits(const Vec& v_meta, const Mat& w, double scale) {
  require_shape(w.cols() == v_meta.size(), "cosine_logits: embedding dimension mismatch");
  return scale * (normalized_rows(w) * squash(v_meta));
}

/// Backward through cosine_logits; accumulates into d_w and returns dL/dv_meta.
inline Vec cosine_logits_backward(const Vec& v_meta, const Mat& w, double scale, const Vec& d_logits, Mat& d_w) {
  const Vec q = squash(v_meta);
  const Mat w_hat = normalized_rows(w);
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    const double n = w.row(k).norm();
    const Vec g = scale * d_logits(k) * q;
    const Vec wk = w_hat.row(k).transpose();
    d_w.row(k) += ((g - wk * wk.dot(g)) / n).transpose();
  }
  return squash_backward(v_meta, scale * (w_hat.transpose() * d_logits));
}

/// Multiclass softmax cross-entropy, -log softmax(logits)[y].
inline double cross_entropy(const Vec& logits, int y, Vec* d_logits = nullptr, double upstream = 1.0) {
  if (y < 0 || y >= logits.size())
    throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(logits.size()) + ")");
  const double lse = log_sum_exp(logits);
  if (d_logits) {
    Vec g = (logits.array() - lse).exp().matrix();
    g(y) -= 1.0;
    *d_logits += upstream * g;
  }
  return lse - logits(y);
}

/// Plain dot-product classifier with bias, used by the baseline model.
struct LinearClassifier {
  Mat weight;
  Vec bias;

  Vec logits(const Vec& v) const {
    require_shape(weight.cols() == v.size(), "linear classifier: embedding dimension mismatch");
    return weight * v + bias;
  }

  template <typename F>
  void visit(F&& f) {
    f("linear.weight", view(weight));
    f("linear.bias", view(bias));
  }
};

}  // namespace oltr
