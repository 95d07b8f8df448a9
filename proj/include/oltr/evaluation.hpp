#pragma once

// Closed- and open-set evaluation: thresholded rejection, per-shot accuracy,
// open-set F-measure and the sensitivity curves.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oltr/data.hpp"
#include "oltr/tensor.hpp"

namespace oltr {

/// Argmax class when its probability reaches `threshold`, OPEN otherwise. Ties go to the lowest index.
inline int predict_open(const Vec& probabilities, double threshold) {
  if (probabilities.size() == 0) throw std::invalid_argument("predict_open: empty distribution");
  if ((probabilities.array() < 0.0).any() || !probabilities.allFinite() ||
      std::abs(probabilities.sum() - 1.0) > 1e-6)
    throw std::invalid_argument("predict_open: probabilities must be nonnegative and sum to 1");
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < probabilities.size(); ++k)
    if (probabilities(k) > probabilities(best)) best = k;
  return probabilities(best) >= threshold ? static_cast<int>(best) : kOpenLabel;
}

struct SubsetAccuracy {
  std::optional<double> accuracy;  // absent when the subset has no samples
  int correct = 0;
  int total = 0;
};

struct ShotAccuracy {
  SubsetAccuracy many, medium, few;
  double overall = 0.0;
  int total = 0;
};

/// Top-1 accuracy per shot subset plus overall, over closed samples only.
inline ShotAccuracy accuracy_by_shot(const std::vector<int>& predictions, const std::vector<int>& labels,
                                     const std::vector<ShotCategory>& partition) {
  require_shape(predictions.size() == labels.size(), "accuracy_by_shot: predictions and labels differ in length");
  ShotAccuracy r;
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y == kOpenLabel) continue;
    if (y < 0 || y >= static_cast<int>(partition.size()))
      throw std::out_of_range("accuracy_by_shot: label " + std::to_string(y) + " has no shot category");
    SubsetAccuracy& s = partition[y] == ShotCategory::Many ? r.many : partition[y] == ShotCategory::Medium ? r.medium : r.few;
    const bool hit = predictions[i] == y;
    ++s.total;
    s.correct += hit;
    ++r.total;
    correct += hit;
  }
  for (SubsetAccuracy* s : {&r.many, &r.medium, &r.few})
    if (s->total > 0) s->accuracy = static_cast<double>(s->correct) / s->total;
  r.overall = r.total > 0 ? static_cast<double>(correct) / r.total : 0.0;
  return r;
}

struct OpenSetCounts {
  int true_positive = 0;   // correct predictions on closed samples
  int false_positive = 0;  // incorrect predictions on closed samples (including rejections)
  int false_negative = 0;  // open samples accepted as a known class
};

inline OpenSetCounts open_set_counts(const std::vector<int>& predictions, const std::vector<int>& labels,
                                     const std::vector<bool>& is_open) {
  require_shape(predictions.size() == labels.size() && labels.size() == is_open.size(),
                "f_measure: inputs differ in length");
  OpenSetCounts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (is_open[i]) {
      c.false_negative += predictions[i] != kOpenLabel;
    } else if (predictions[i] == labels[i]) {
      ++c.true_positive;
    } else {
      ++c.false_positive;
    }
  }
  return c;
}

/// F = 2pr / (p + r); 0 when p + r = 0.
inline double f_measure(const OpenSetCounts& c) {
  const double p = c.true_positive + c.false_positive > 0
                       ? static_cast<double>(c.true_positive) / (c.true_positive + c.false_positive)
                       : 0.0;
  const double r = c.true_positive + c.false_negative > 0
                       ? static_cast<double>(c.true_positive) / (c.true_positive + c.false_negative)
                       : 0.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

inline double f_measure(const std::vector<int>& predictions, const std::vector<int>& labels,
                        const std::vector<bool>& is_open) {
  return f_measure(open_set_counts(predictions, labels, is_open));
}

/// Per-sample model outputs over a test split, computed once and reused by every metric.
struct ScoredSplit {
  std::vector<Vec> probabilities;
  std::vector<int> labels;         // closed label or kOpenLabel
  std::vector<int> source_classes;
  std::vector<double> gammas;
  std::vector<double> squashed_norms;
};

struct ScoredTest {
  ScoredSplit closed;
  ScoredSplit open;
};

inline std::vector<int> predictions_at(const ScoredSplit& s, double threshold) {
  std::vector<int> out;
  out.reserve(s.probabilities.size());
  for (const auto& p : s.probabilities) out.push_back(predict_open(p, threshold));
  return out;
}

/// Open samples restricted to the first `num_open_classes` distinct open classes (in split order).
inline ScoredSplit first_open_classes(const ScoredSplit& open, int num_open_classes) {
  std::vector<int> kept;
  ScoredSplit out;
  for (std::size_t i = 0; i < open.labels.size(); ++i) {
    const int cls = open.source_classes[i];
    bool present = std::find(kept.begin(), kept.end(), cls) != kept.end();
    if (!present && static_cast<int>(kept.size()) < num_open_classes) {
      kept.push_back(cls);
      present = true;
    }
    if (!present) continue;
    out.probabilities.push_back(open.probabilities[i]);
    out.labels.push_back(open.labels[i]);
    out.source_classes.push_back(cls);
    out.gammas.push_back(open.gammas[i]);
    out.squashed_norms.push_back(open.squashed_norms[i]);
  }
  return out;
}

struct MixedResult {
  std::vector<int> predictions;
  std::vector<int> labels;
  std::vector<bool> is_open;
};

inline MixedResult mixed_predictions(const ScoredSplit& closed, const ScoredSplit& open, double threshold) {
  MixedResult m;
  m.predictions = predictions_at(closed, threshold);
  m.labels = closed.labels;
  m.is_open.assign(closed.labels.size(), false);
  const auto op = predictions_at(open, threshold);
  m.predictions.insert(m.predictions.end(), op.begin(), op.end());
  m.labels.insert(m.labels.end(), open.labels.begin(), open.labels.end());
  m.is_open.insert(m.is_open.end(), open.labels.size(), true);
  return m;
}

/// Open-setting top-1 over the mixed set: open samples count as correct when rejected.
inline double open_setting_accuracy(const MixedResult& m) {
  if (m.labels.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < m.labels.size(); ++i) correct += m.predictions[i] == m.labels[i];
  return static_cast<double>(correct) / m.labels.size();
}

inline int accepted_count(const MixedResult& m) {
  int n = 0;
  for (int p : m.predictions) n += p != kOpenLabel;
  return n;
}

struct EvalReport {
  ShotAccuracy closed;
  ShotAccuracy open;  // closed samples scored with thresholding
  double open_overall = 0.0;
  double f_measure = 0.0;
  double threshold = 0.0;
  double mean_squashed_norm_closed = 0.0;
  double mean_squashed_norm_open = 0.0;
  std::vector<std::pair<double, double>> threshold_curve;  // (threshold, open-setting overall)
  std::vector<std::pair<int, double>> open_class_curve;    // (open classes, F-measure)
};

enum class SweepAxis { Threshold, NumOpenClasses, ParetoAlpha };

inline std::optional<SweepAxis> parse_sweep_axis(const std::string& s) {
  if (s == "threshold") return SweepAxis::Threshold;
  if (s == "num_open_classes") return SweepAxis::NumOpenClasses;
  if (s == "pareto_alpha") return SweepAxis::ParetoAlpha;
  return std::nullopt;
}

inline std::vector<std::pair<double, double>> threshold_sweep(const ScoredTest& t, const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  std::vector<std::pair<double, double>> curve;
  for (double th : grid) curve.emplace_back(th, open_setting_accuracy(mixed_predictions(t.closed, t.open, th)));
  return curve;
}

inline std::vector<std::pair<int, double>> open_class_sweep(const ScoredTest& t, const std::vector<int>& grid,
                                                           double threshold) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  std::vector<std::pair<int, double>> curve;
  for (int n : grid) {
    const auto m = mixed_predictions(t.closed, first_open_classes(t.open, n), threshold);
    curve.emplace_back(n, f_measure(m.predictions, m.labels, m.is_open));
  }
  return curve;
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(0.05 * i);
  return g;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline EvalReport evaluate(const ScoredTest& t, const std::vector<ShotCategory>& partition, double threshold,
                           int num_open_classes) {
  EvalReport r;
  r.threshold = threshold;
  r.closed = accuracy_by_shot(predictions_at(t.closed, 0.0), t.closed.labels, partition);
  const auto m = mixed_predictions(t.closed, t.open, threshold);
  const std::vector<int> closed_part(m.predictions.begin(), m.predictions.begin() + t.closed.labels.size());
  r.open = accuracy_by_shot(closed_part, t.closed.labels, partition);
  r.open_overall = open_setting_accuracy(m);
  r.f_measure = f_measure(m.predictions, m.labels, m.is_open);
  r.mean_squashed_norm_closed = mean(t.closed.squashed_norms);
  r.mean_squashed_norm_open = mean(t.open.squashed_norms);
  r.threshold_curve = threshold_sweep(t, default_threshold_grid());
  std::vector<int> grid;
  for (int n = 0; n <= num_open_classes; ++n) grid.push_back(n);
  r.open_class_curve = open_class_sweep(t, grid, threshold);
  return r;
}

inline nlohmann::json to_json(const SubsetAccuracy& s) {
  return s.accuracy ? nlohmann::json(*s.accuracy) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const ShotAccuracy& s) {
  return {{"overall_top1", s.overall}, {"many_top1", to_json(s.many)}, {"medium_top1", to_json(s.medium)},
          {"few_top1", to_json(s.few)}, {"samples", s.total}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["closed"] = to_json(r.closed);
  j["open"] = to_json(r.open);
  j["open"]["overall_top1"] = r.open_overall;
  j["f_measure"] = r.f_measure;
  j["threshold"] = r.threshold;
  j["mean_squashed_norm"] = {{"closed", r.mean_squashed_norm_closed}, {"open", r.mean_squashed_norm_open}};
  j["threshold_curve"] = nlohmann::json::array();
  for (auto [t, a] : r.threshold_curve) j["threshold_curve"].push_back({{"threshold", t}, {"overall_top1", a}});
  j["open_class_curve"] = nlohmann::json::array();
  for (auto [n, f] : r.open_class_curve) j["open_class_curve"].push_back({{"num_open_classes", n}, {"f_measure", f}});
  return j;
}

}  // namespace oltr
