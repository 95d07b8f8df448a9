#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>

#include "oltr/types.hpp"

namespace oltr {

/// Flat view over a dense Eigen object's storage.
template <typename Derived>
std::span<double> flat(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Derived>
std::span<const double> flat(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

/// Gaussian fill scaled for fan-in.
/// Named-parameter visitors receive one of these per tensor; vectors have cols == 1.
struct TensorView {
  std::span<double> data;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

template <typename Derived>
TensorView view(Eigen::PlainObjectBase<Derived>& m) {
  return {flat(m), m.rows(), m.cols()};
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

inline Vec random_vector(Eigen::Index n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

inline Mat he_init(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  return random_matrix(rows, cols, std::sqrt(2.0 / static_cast<double>(cols)), rng);
}

/// Numerically stable softmax.
inline Vec softmax(const Vec& z) {
  const double mx = z.maxCoeff();
  Vec e = (z.array() - mx).exp().matrix();
  return e / e.sum();
}

/// Backward through softmax: returns dL/dz given p = softmax(z) and dL/dp.
inline Vec softmax_backward(const Vec& p, const Vec& dp) {
  return (p.array() * (dp.array() - p.dot(dp))).matrix();
}

inline double log_sum_exp(const Vec& z) {
  const double mx = z.maxCoeff();
  return mx + std::log((z.array() - mx).exp().sum());
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace oltr
