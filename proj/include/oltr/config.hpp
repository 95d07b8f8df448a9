#pragma once

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace oltr {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Default hyperparameters. Every module reads these through Config only.
namespace defaults {
inline constexpr double lambda_lm = 0.1;
inline constexpr double margin_m = 5.0;
inline constexpr double gamma_eps = 1e-12;
inline constexpr double logit_scale_s = 16.0;
inline constexpr double open_threshold = 0.1;
inline constexpr double pareto_alpha = 6.0;
inline constexpr int many_shot_min = 100;
inline constexpr int few_shot_max = 20;
inline constexpr double centroid_momentum = 0.9;
inline constexpr double sgd_momentum = 0.9;
inline constexpr double learning_rate = 0.1;
inline constexpr double finetune_learning_rate = 0.01;
inline constexpr int lr_decay_every = 10;
inline constexpr double lr_decay_factor = 0.1;
inline constexpr int epochs = 30;
inline constexpr int val_per_class = 20;
}  // namespace defaults

struct Config {
  // objective
  double lambda_lm = defaults::lambda_lm;
  double margin_m = defaults::margin_m;
  double gamma_eps = defaults::gamma_eps;
  double logit_scale_s = defaults::logit_scale_s;
  std::string lm_form = "nearest";  // nearest | sum
  std::string lm_target = "direct";  // direct | meta
  std::string loss_reduction = "mean";  // mean | sum
  bool hallucinate_softmax = true;
  bool gamma_gradient = false;

  // ablation switches
  bool use_memory_feature = true;
  bool use_concept_selector = true;
  bool use_calibration = true;
  bool use_attention = true;
  bool baseline = false;

  // evaluation
  double open_threshold = defaults::open_threshold;
  int many_shot_min = defaults::many_shot_min;
  int few_shot_max = defaults::few_shot_max;

  // curation
  double pareto_alpha = defaults::pareto_alpha;
  int n_max = 500;
  int n_min = 5;
  int num_classes = 20;
  int num_open_classes = 5;
  int val_per_class = defaults::val_per_class;
  int test_per_class = 50;
  int open_per_class = 50;

  // source: "synthetic" or a directory holding data.csv
  std::string source = "synthetic";
  int input_dim = 32;
  double synthetic_separation = 3.0;
  double synthetic_noise = 1.0;
  int synthetic_concepts = 8;
  double synthetic_unique = 1.0;  // weight of the class-specific direction relative to the shared concepts

  // architecture
  std::string backbone = "mlp";  // mlp | tiny_conv
  int embed_dim = 32;
  int hidden_dim = 64;
  int map_height = 2;
  int map_width = 2;
  int input_channels = 3;
  int input_size = 32;
  std::string conv_widths = "16,32,64";

  // optimization
  int epochs = defaults::epochs;
  int batch_size = 64;
  int classes_per_batch = 16;
  std::string sampler = "auto";  // auto | class_aware | instance
  double learning_rate = defaults::learning_rate;
  double sgd_momentum = defaults::sgd_momentum;
  double weight_decay = 5e-4;
  double grad_clip = 5.0;  // global gradient-norm ceiling; 0 disables
  int lr_decay_every = defaults::lr_decay_every;
  double lr_decay_factor = defaults::lr_decay_factor;
  double centroid_momentum = defaults::centroid_momentum;

  int seed = 0;

  bool operator==(const Config&) const = default;

  /// Sampler actually used: the plain model trains on instance-uniform batches.
  std::string effective_sampler() const {
    if (sampler != "auto") return sampler;
    return baseline ? "instance" : "class_aware";
  }
};

namespace detail {

template <typename P>
struct member_type;
template <typename T>
struct member_type<T Config::*> {
  using type = T;
};

using FieldPtr = std::variant<double Config::*, int Config::*, bool Config::*,
                              std::string Config::*>;

struct Field {
  const char* key;
  FieldPtr ptr;
};

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"lambda_lm", &Config::lambda_lm},
      {"margin_m", &Config::margin_m},
      {"gamma_eps", &Config::gamma_eps},
      {"logit_scale_s", &Config::logit_scale_s},
      {"lm_form", &Config::lm_form},
      {"lm_target", &Config::lm_target},
      {"loss_reduction", &Config::loss_reduction},
      {"hallucinate_softmax", &Config::hallucinate_softmax},
      {"gamma_gradient", &Config::gamma_gradient},
      {"use_memory_feature", &Config::use_memory_feature},
      {"use_concept_selector", &Config::use_concept_selector},
      {"use_calibration", &Config::use_calibration},
      {"use_attention", &Config::use_attention},
      {"baseline", &Config::baseline},
      {"open_threshold", &Config::open_threshold},
      {"many_shot_min", &Config::many_shot_min},
      {"few_shot_max", &Config::few_shot_max},
      {"pareto_alpha", &Config::pareto_alpha},
      {"n_max", &Config::n_max},
      {"n_min", &Config::n_min},
      {"num_classes", &Config::num_classes},
      {"num_open_classes", &Config::num_open_classes},
      {"val_per_class", &Config::val_per_class},
      {"test_per_class", &Config::test_per_class},
      {"open_per_class", &Config::open_per_class},
      {"source", &Config::source},
      {"input_dim", &Config::input_dim},
      {"synthetic_separation", &Config::synthetic_separation},
      {"synthetic_noise", &Config::synthetic_noise},
      {"synthetic_concepts", &Config::synthetic_concepts},
      {"synthetic_unique", &Config::synthetic_unique},
      {"backbone", &Config::backbone},
      {"embed_dim", &Config::embed_dim},
      {"hidden_dim", &Config::hidden_dim},
      {"map_height", &Config::map_height},
      {"map_width", &Config::map_width},
      {"input_channels", &Config::input_channels},
      {"input_size", &Config::input_size},
      {"conv_widths", &Config::conv_widths},
      {"epochs", &Config::epochs},
      {"batch_size", &Config::batch_size},
      {"classes_per_batch", &Config::classes_per_batch},
      {"sampler", &Config::sampler},
      {"learning_rate", &Config::learning_rate},
      {"sgd_momentum", &Config::sgd_momentum},
      {"weight_decay", &Config::weight_decay},
      {"grad_clip", &Config::grad_clip},
      {"lr_decay_every", &Config::lr_decay_every},
      {"lr_decay_factor", &Config::lr_decay_factor},
      {"centroid_momentum", &Config::centroid_momentum},
      {"seed", &Config::seed},
  };
  return table;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key, "expected a real number, got '" + text + "'");
  return v;
}

inline int parse_int(const std::string& key, const std::string& text) {
  int v = 0;
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key, "expected an integer, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + text + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline void require_one_of(const std::string& key, const std::string& v,
                           std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (v == a) return;
  std::string msg = "must be one of {";
  bool first = true;
  for (const char* a : allowed) {
    msg += (first ? "" : ", ") + std::string(a);
    first = false;
  }
  throw ConfigError(key, msg + "}, got '" + v + "'");
}

}  // namespace detail

inline std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(detail::parse_int(key, detail::trim(item)));
  return out;
}

/// Checks every cross-field invariant; throws ConfigError naming the offending field.
inline void check_invariants(const Config& c) {
  if (!(c.lambda_lm >= 0.0)) throw ConfigError("lambda_lm", "must be nonnegative");
  if (!(c.margin_m >= 0.0)) throw ConfigError("margin_m", "must be nonnegative");
  if (!(c.gamma_eps > 0.0)) throw ConfigError("gamma_eps", "must be positive");
  if (!(c.logit_scale_s > 0.0)) throw ConfigError("logit_scale_s", "must be positive");
  if (!(c.open_threshold >= 0.0 && c.open_threshold <= 1.0))
    throw ConfigError("open_threshold", "must lie in [0, 1]");
  if (!(c.pareto_alpha > 0.0)) throw ConfigError("pareto_alpha", "must be positive");
  if (c.n_max < 1) throw ConfigError("n_max", "must be positive");
  if (c.n_min < 1) throw ConfigError("n_min", "must be positive");
  if (c.n_min > c.n_max) throw ConfigError("n_min/n_max", "n_min must not exceed n_max");
  if (c.few_shot_max > c.many_shot_min)
    throw ConfigError("few_shot_max/many_shot_min", "few_shot_max must not exceed many_shot_min");
  if (c.num_classes < 1) throw ConfigError("num_classes", "must be positive");
  if (c.num_open_classes < 0) throw ConfigError("num_open_classes", "must be nonnegative");
  if (c.embed_dim < 1) throw ConfigError("embed_dim", "must be positive");
  if (c.hidden_dim < 1) throw ConfigError("hidden_dim", "must be positive");
  if (c.input_dim < 1) throw ConfigError("input_dim", "must be positive");
  if (c.map_height < 1 || c.map_width < 1) throw ConfigError("map_height/map_width", "must be positive");
  if (c.val_per_class < 0) throw ConfigError("val_per_class", "must be nonnegative");
  if (c.test_per_class < 0) throw ConfigError("test_per_class", "must be nonnegative");
  if (c.open_per_class < 0) throw ConfigError("open_per_class", "must be nonnegative");
  if (c.epochs < 0) throw ConfigError("epochs", "must be nonnegative");
  if (c.batch_size < 1) throw ConfigError("batch_size", "must be positive");
  if (c.classes_per_batch < 1) throw ConfigError("classes_per_batch", "must be positive");
  if (c.batch_size % c.classes_per_batch != 0)
    throw ConfigError("batch_size/classes_per_batch", "batch_size must be divisible by classes_per_batch");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
  if (!(c.sgd_momentum >= 0.0 && c.sgd_momentum < 1.0)) throw ConfigError("sgd_momentum", "must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be nonnegative");
  if (!(c.grad_clip >= 0.0)) throw ConfigError("grad_clip", "must be nonnegative");
  if (c.lr_decay_every < 1) throw ConfigError("lr_decay_every", "must be positive");
  if (!(c.centroid_momentum >= 0.0 && c.centroid_momentum < 1.0))
    throw ConfigError("centroid_momentum", "must lie in [0, 1)");
  if (!(c.synthetic_separation > 0.0)) throw ConfigError("synthetic_separation", "must be positive");
  if (!(c.synthetic_noise >= 0.0)) throw ConfigError("synthetic_noise", "must be nonnegative");
  if (c.synthetic_concepts < 0) throw ConfigError("synthetic_concepts", "must be nonnegative");
  if (!(c.synthetic_unique >= 0.0)) throw ConfigError("synthetic_unique", "must be nonnegative");
  if (c.synthetic_concepts == 0 && c.synthetic_unique == 0.0)
    throw ConfigError("synthetic_concepts/synthetic_unique", "class means need at least one direction");
  if (c.input_channels < 1 || c.input_size < 1) throw ConfigError("input_channels/input_size", "must be positive");
  detail::require_one_of("lm_form", c.lm_form, {"nearest", "sum"});
  detail::require_one_of("lm_target", c.lm_target, {"meta", "direct"});
  detail::require_one_of("loss_reduction", c.loss_reduction, {"sum", "mean"});
  detail::require_one_of("backbone", c.backbone, {"mlp", "tiny_conv"});
  detail::require_one_of("sampler", c.sampler, {"auto", "class_aware", "instance"});
  for (int w : parse_int_list("conv_widths", c.conv_widths))
    if (w < 1) throw ConfigError("conv_widths", "widths must be positive");
}

/// Applies key/value overrides on top of `base`, then validates.
inline Config apply_overrides(Config base, const std::map<std::string, std::string>& raw) {
  for (const auto& [key, value] : raw) {
    const auto& table = detail::fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError(key, "unknown configuration key");
    std::visit(
        [&](auto ptr) {
          using T = typename detail::member_type<decltype(ptr)>::type;
          if constexpr (std::is_same_v<T, double>) base.*ptr = detail::parse_double(key, value);
          else if constexpr (std::is_same_v<T, int>) base.*ptr = detail::parse_int(key, value);
          else if constexpr (std::is_same_v<T, bool>) base.*ptr = detail::parse_bool(key, value);
          else base.*ptr = value;
        },
        it->ptr);
  }
  check_invariants(base);
  return base;
}

inline Config validate_config(const std::map<std::string, std::string>& raw) {
  return apply_overrides(Config{}, raw);
}

/// Flat `key = value` rendering of every field, in table order.
inline std::map<std::string, std::string> to_map(const Config& c) {
  std::map<std::string, std::string> out;
  for (const auto& f : detail::fields()) {
    std::visit(
        [&](auto ptr) {
          using T = typename detail::member_type<decltype(ptr)>::type;
          if constexpr (std::is_same_v<T, double>) out[f.key] = detail::format_double(c.*ptr);
          else if constexpr (std::is_same_v<T, int>) out[f.key] = std::to_string(c.*ptr);
          else if constexpr (std::is_same_v<T, bool>) out[f.key] = c.*ptr ? "true" : "false";
          else out[f.key] = c.*ptr;
        },
        f.ptr);
  }
  return out;
}

inline std::string serialize(const Config& c) {
  const auto m = to_map(c);
  std::string text;
  for (const auto& f : detail::fields()) text += std::string(f.key) + " = " + m.at(f.key) + "\n";
  return text;
}

/// Parses the flat config format: one `key = value` per line, `#` starts a comment.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    out[key] = detail::trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

inline bool is_config_key(std::string_view key) {
  const auto& table = detail::fields();
  return std::any_of(table.begin(), table.end(), [&](const auto& f) { return key == f.key; });
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.emplace_back(f.key);
  return keys;
}

}  // namespace oltr
