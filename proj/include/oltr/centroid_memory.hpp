#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "oltr/tensor.hpp"

namespace oltr {

/// Visual memory: one discriminative centroid per closed training class, in direct-feature space.
struct CentroidMemory {
  Mat centroids;        // K x embed_dim
  std::int64_t version = 0;  // bumped on every update

  int num_classes() const { return static_cast<int>(centroids.rows()); }
  int dim() const { return static_cast<int>(centroids.cols()); }
  Vec centroid(int k) const { return centroids.row(k).transpose(); }
};

/// Row k is the mean of the features labelled k.
inline CentroidMemory init_centroids(const std::vector<Vec>& features, const std::vector<int>& labels,
                                     int num_classes) {
  require_shape(features.size() == labels.size(), "init_centroids: features and labels differ in length");
  if (features.empty()) throw std::invalid_argument("init_centroids: no training examples");
  const auto dim = features.front().size();
  Mat sums = Mat::Zero(num_classes, dim);
  std::vector<int> counts(num_classes, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw std::out_of_range("init_centroids: label " + std::to_string(y) + " out of range");
    require_shape(features[i].size() == dim, "init_centroids: feature dimension mismatch");
    sums.row(y) += features[i].transpose();
    ++counts[y];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw std::invalid_argument("init_centroids: class " + std::to_string(k) + " has no training examples");
    sums.row(k) /= static_cast<double>(counts[k]);
  }
  return {std::move(sums), 0};
}

/// c_k <- momentum * c_k + (1 - momentum) * batch mean of class k, for classes present in the batch.
inline CentroidMemory update_centroids(const std::vector<Vec>& features, const std::vector<int>& labels,
                                       CentroidMemory memory, double momentum) {
  require_shape(features.size() == labels.size(), "update_centroids: features and labels differ in length");
  if (features.empty()) throw std::invalid_argument("update_centroids: empty batch");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("update_centroids: momentum must lie in [0, 1)");
  const int k_total = memory.num_classes();
  Mat sums = Mat::Zero(k_total, memory.dim());
  std::vector<int> counts(k_total, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k_total) throw std::out_of_range("update_centroids: label " + std::to_string(y) + " >= K");
    require_shape(features[i].size() == memory.dim(), "update_centroids: feature dimension mismatch");
    sums.row(y) += features[i].transpose();
    ++counts[y];
  }
  for (int k = 0; k < k_total; ++k) {
    if (counts[k] == 0) continue;
    memory.centroids.row(k) = momentum * memory.centroids.row(k) + (1.0 - momentum) * sums.row(k) / counts[k];
  }
  ++memory.version;
  return memory;
}

enum class MarginForm { NearestNegative, SumOfNegatives };

struct MarginLossResult {
  double value = 0.0;
  int nearest_negative = -1;
  bool active = false;
};

/// Hinge max(0, |v - c_y| - |v - c_j| + m) with j the nearest other centroid
/// (lowest index on ties), or the sum over all other centroids in SumOfNegatives form.
/// Gradients are accumulated into d_v / d_centroids when non-null, scaled by `upstream`.
inline MarginLossResult large_margin_loss(const Vec& v, int y, const Mat& centroids, double margin,
                                          MarginForm form = MarginForm::NearestNegative, Vec* d_v = nullptr,
                                          Mat* d_centroids = nullptr, double upstream = 1.0) {
  const int k_total = static_cast<int>(centroids.rows());
  if (k_total < 2) throw std::invalid_argument("large_margin_loss: need at least two centroids");
  if (y < 0 || y >= k_total) throw std::out_of_range("large_margin_loss: label out of range");
  require_shape(v.size() == centroids.cols(), "large_margin_loss: embedding dimension mismatch");

  Vec dist(k_total);
  for (int i = 0; i < k_total; ++i) dist(i) = (v - centroids.row(i).transpose()).norm();

  MarginLossResult r;
  double negative = 0.0;
  if (form == MarginForm::NearestNegative) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < k_total; ++i)
      if (i != y && dist(i) < best) {
        best = dist(i);
        r.nearest_negative = i;
      }
    negative = best;
  } else {
    for (int i = 0; i < k_total; ++i)
      if (i != y) negative += dist(i);
  }
  const double arg = dist(y) - negative + margin;
  r.active = arg > 0.0;
  r.value = r.active ? arg : 0.0;
  if (!r.active || (!d_v && !d_centroids)) return r;

  auto unit = [&](int i) -> Vec {
    if (dist(i) == 0.0) return Vec::Zero(v.size());
    return (v - centroids.row(i).transpose()) / dist(i);
  };
  auto push = [&](int i, double sign) {
    const Vec u = unit(i) * (sign * upstream);
    if (d_v) *d_v += u;
    if (d_centroids) d_centroids->row(i) -= u.transpose();
  };
  push(y, +1.0);
  if (form == MarginForm::NearestNegative) {
    push(r.nearest_negative, -1.0);
  } else {
    for (int i = 0; i < k_total; ++i)
      if (i != y) push(i, -1.0);
  }
  return r;
}

}  // namespace oltr
