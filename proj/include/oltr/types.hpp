#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oltr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Label carried by examples drawn from classes never seen during training.
inline constexpr int kOpenLabel = -1;

struct LabeledExample {
  std::int64_t id = 0;
  Vec input;
  int label = 0;
  int source_class = 0;  // class id in the source the example was drawn from

  bool is_open() const { return label == kOpenLabel; }
};

enum class ShotCategory { Many, Medium, Few };

inline const char* to_string(ShotCategory c) {
  switch (c) {
    case ShotCategory::Many: return "many";
    case ShotCategory::Medium: return "medium";
    case ShotCategory::Few: return "few";
  }
  return "?";
}

/// Thrown on tensor shape disagreements between inputs and parameters.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a loss or activation turns non-finite during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace oltr
