#pragma once

// Long-tailed open-set dataset curation: rank power-law class counts, open
// splits, shot partitions, class-aware batching and the manifest format.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "oltr/config.hpp"
#include "oltr/tensor.hpp"

namespace oltr {

inline constexpr int kManifestVersion = 1;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic generator for a (seed, purpose, index) triple.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

namespace rng_purpose {
inline constexpr std::uint64_t synthetic = 1;
inline constexpr std::uint64_t curate = 2;
inline constexpr std::uint64_t open = 3;
inline constexpr std::uint64_t batches = 4;
inline constexpr std::uint64_t init = 5;
}  // namespace rng_purpose

/// A balanced labeled pool, grouped by source class. Example ids are unique.
struct Source {
  std::string description;
  std::vector<std::vector<LabeledExample>> classes;
  std::unordered_map<std::int64_t, std::pair<int, std::size_t>> index;

  int num_classes() const { return static_cast<int>(classes.size()); }

  void build_index() {
    index.clear();
    for (std::size_t c = 0; c < classes.size(); ++c)
      for (std::size_t i = 0; i < classes[c].size(); ++i) index[classes[c][i].id] = {static_cast<int>(c), i};
  }

  const LabeledExample& by_id(std::int64_t id) const {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("source: unknown example id " + std::to_string(id));
    return classes[it->second.first][it->second.second];
  }
};

struct SyntheticSpec {
  int num_classes = 25;
  int per_class = 600;
  int input_dim = 32;
  double separation = 3.0;
  double noise = 1.0;
  int concepts = 8;
  double unique = 1.0;
  std::uint64_t seed = 0;
};

/// Gaussian-mixture source. Class means are built from a small shared concept
/// basis plus a class-specific direction, so classes share structure.
inline Source synthetic_source(const SyntheticSpec& spec) {
  auto rng = make_rng(spec.seed, rng_purpose::synthetic);
  const int d = spec.input_dim;
  Mat concepts = random_matrix(std::max(1, spec.concepts), d, 1.0, rng);
  for (Eigen::Index j = 0; j < concepts.rows(); ++j) concepts.row(j).normalize();
  std::normal_distribution<double> normal(0.0, 1.0);

  Source src;
  src.description = "synthetic";
  for (int k = 0; k < spec.num_classes; ++k) {
    Vec mean = Vec::Zero(d);
    if (spec.concepts > 0) {
      std::vector<int> order(concepts.rows());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      const int active = std::min<int>(3, static_cast<int>(order.size()));
      for (int a = 0; a < active; ++a) mean += std::abs(normal(rng)) * concepts.row(order[a]).transpose();
    }
    Vec unique = random_vector(d, 1.0, rng);
    mean = mean.normalized() + spec.unique * unique.normalized();
    mean *= spec.separation / mean.norm();
    std::vector<LabeledExample> pool;
    pool.reserve(spec.per_class);
    for (int i = 0; i < spec.per_class; ++i) {
      LabeledExample e;
      e.id = static_cast<std::int64_t>(k) * spec.per_class + i;
      e.input = mean + spec.noise * random_vector(d, 1.0, rng);
      e.label = k;
      e.source_class = k;
      pool.push_back(std::move(e));
    }
    src.classes.push_back(std::move(pool));
  }
  src.build_index();
  return src;
}

/// Reads `<dir>/data.csv`: one example per line, `class_id,x1,...,xd`; ids are line ranks.
inline Source table_source(const std::filesystem::path& dir) {
  std::ifstream in(dir / "data.csv");
  if (!in) throw DataError("source: cannot open " + (dir / "data.csv").string());
  std::map<int, std::vector<LabeledExample>> grouped;
  std::string line;
  std::int64_t id = 0;
  std::ptrdiff_t dim = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    int cls = 0;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
      if (first) {
        cls = std::stoi(cell);
        first = false;
      } else {
        values.push_back(std::stod(cell));
      }
    }
    if (dim < 0) dim = static_cast<std::ptrdiff_t>(values.size());
    if (static_cast<std::ptrdiff_t>(values.size()) != dim || cls < 0)
      throw DataError("source: malformed row " + std::to_string(id) + " in data.csv");
    LabeledExample e;
    e.id = id++;
    e.input = Eigen::Map<Vec>(values.data(), dim);
    e.label = cls;
    e.source_class = cls;
    grouped[cls].push_back(std::move(e));
  }
  Source src;
  src.description = dir.string();
  if (!grouped.empty()) src.classes.resize(grouped.rbegin()->first + 1);
  for (auto& [cls, v] : grouped) src.classes[cls] = std::move(v);
  src.build_index();
  return src;
}

inline SyntheticSpec synthetic_spec_from_config(const Config& c) {
  SyntheticSpec s;
  s.num_classes = c.num_classes + c.num_open_classes;
  s.per_class = std::max(c.n_max + c.val_per_class + c.test_per_class, c.open_per_class);
  s.input_dim = c.backbone == "tiny_conv" ? c.input_channels * c.input_size * c.input_size : c.input_dim;
  s.separation = c.synthetic_separation;
  s.noise = c.synthetic_noise;
  s.concepts = c.synthetic_concepts;
  s.unique = c.synthetic_unique;
  s.seed = static_cast<std::uint64_t>(c.seed);
  return s;
}

inline Source load_source(const Config& c) {
  if (c.source == "synthetic") return synthetic_source(synthetic_spec_from_config(c));
  return table_source(c.source);
}

// ---------------------------------------------------------------------------
// Counts and partitions

/// Training count for each class rank r = 1..K: the r^(-1/alpha) profile, affinely
/// calibrated so that rank 1 gets n_max and rank K gets n_min, rounded and clamped.
inline std::vector<int> pareto_counts(int num_classes, double alpha, int n_max, int n_min) {
  if (num_classes < 1) throw std::invalid_argument("pareto_counts: K must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("pareto_counts: alpha must be positive");
  if (n_min < 1 || n_min > n_max) throw std::invalid_argument("pareto_counts: need 1 <= n_min <= n_max");
  std::vector<int> counts(num_classes, n_max);
  if (num_classes == 1 || n_min == n_max) {
    std::fill(counts.begin(), counts.end(), n_max);
    return counts;
  }
  const double tail = std::pow(static_cast<double>(num_classes), -1.0 / alpha);
  for (int r = 1; r <= num_classes; ++r) {
    const double profile = (std::pow(static_cast<double>(r), -1.0 / alpha) - tail) / (1.0 - tail);
    const double n = std::round(n_min + (n_max - n_min) * profile);
    counts[r - 1] = std::clamp(static_cast<int>(n), n_min, n_max);
  }
  return counts;
}

/// MANY iff count > many_min, FEW iff count < few_max, MEDIUM otherwise.
inline ShotCategory shot_category(int count, int many_min, int few_max) {
  if (count > many_min) return ShotCategory::Many;
  if (count < few_max) return ShotCategory::Few;
  return ShotCategory::Medium;
}

inline std::vector<ShotCategory> shot_partition(const std::vector<int>& class_counts, int many_min, int few_max) {
  std::vector<ShotCategory> out;
  out.reserve(class_counts.size());
  for (int c : class_counts) out.push_back(shot_category(c, many_min, few_max));
  return out;
}

// ---------------------------------------------------------------------------
// Curation

struct CuratedDataset {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> val;
  std::vector<LabeledExample> test_closed;
  std::vector<LabeledExample> test_open;
  std::vector<int> class_counts;
  std::vector<ShotCategory> shot_partition;
  std::vector<int> closed_classes;  // label k <-> source class closed_classes[k]
  std::vector<int> open_classes;
};

/// Per-class draw order; train takes a prefix and held-out splits the following entries.
inline std::vector<std::size_t> class_permutation(std::size_t pool, std::uint64_t seed, int source_class) {
  std::vector<std::size_t> order(pool);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, rng_purpose::curate, static_cast<std::uint64_t>(source_class));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct LongTailSplit {
  std::vector<LabeledExample> train;
  std::vector<int> class_counts;
};

/// Samples n_r examples without replacement from the class at rank r (closed_classes[r-1]).
inline LongTailSplit pareto_longtail_split(const Source& src, const std::vector<int>& closed_classes, double alpha,
                                           int n_max, int n_min, std::uint64_t seed) {
  LongTailSplit out;
  out.class_counts = pareto_counts(static_cast<int>(closed_classes.size()), alpha, n_max, n_min);
  for (std::size_t k = 0; k < closed_classes.size(); ++k) {
    const int cls = closed_classes[k];
    if (cls < 0 || cls >= src.num_classes()) throw DataError("curate: source has no class " + std::to_string(cls));
    const auto& pool = src.classes[cls];
    if (pool.size() < static_cast<std::size_t>(out.class_counts[k]))
      throw DataError("curate: source class " + std::to_string(cls) + " has " + std::to_string(pool.size()) +
                      " examples, fewer than its assigned count " + std::to_string(out.class_counts[k]));
    const auto order = class_permutation(pool.size(), seed, cls);
    for (int i = 0; i < out.class_counts[k]; ++i) {
      LabeledExample e = pool[order[i]];
      e.label = static_cast<int>(k);
      out.train.push_back(std::move(e));
    }
  }
  return out;
}

/// per_class examples from each open class, all labelled OPEN.
inline std::vector<LabeledExample> open_split(const Source& src, const std::vector<int>& open_classes, int per_class,
                                              std::uint64_t seed, const std::vector<int>& closed_classes = {}) {
  for (int o : open_classes)
    if (std::find(closed_classes.begin(), closed_classes.end(), o) != closed_classes.end())
      throw DataError("open_split: class " + std::to_string(o) + " is also a closed class");
  std::vector<LabeledExample> out;
  for (int cls : open_classes) {
    if (cls < 0 || cls >= src.num_classes()) throw DataError("open_split: source has no class " + std::to_string(cls));
    const auto& pool = src.classes[cls];
    if (pool.size() < static_cast<std::size_t>(per_class))
      throw DataError("open_split: class " + std::to_string(cls) + " has fewer than " + std::to_string(per_class) + " examples");
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(seed, rng_purpose::open, static_cast<std::uint64_t>(cls));
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < per_class; ++i) {
      LabeledExample e = pool[order[i]];
      e.label = kOpenLabel;
      out.push_back(std::move(e));
    }
  }
  return out;
}

/// Full curation: long-tailed train, held-out validation and balanced closed test from the
/// unused remainder of each closed class, plus the open split.
inline CuratedDataset curate(const Source& src, const Config& c) {
  CuratedDataset ds;
  const int k_total = c.num_classes;
  if (src.num_classes() < k_total + c.num_open_classes)
    throw DataError("curate: source has " + std::to_string(src.num_classes()) + " classes, need " +
                    std::to_string(k_total + c.num_open_classes));
  for (int k = 0; k < k_total; ++k) ds.closed_classes.push_back(k);
  for (int o = 0; o < c.num_open_classes; ++o) ds.open_classes.push_back(k_total + o);
  const auto seed = static_cast<std::uint64_t>(c.seed);

  auto split = pareto_longtail_split(src, ds.closed_classes, c.pareto_alpha, c.n_max, c.n_min, seed);
  ds.train = std::move(split.train);
  ds.class_counts = std::move(split.class_counts);
  ds.shot_partition = shot_partition(ds.class_counts, c.many_shot_min, c.few_shot_max);

  for (int k = 0; k < k_total; ++k) {
    const int cls = ds.closed_classes[k];
    const auto& pool = src.classes[cls];
    const std::size_t used = ds.class_counts[k];
    if (pool.size() < used + c.val_per_class + c.test_per_class)
      throw DataError("curate: source class " + std::to_string(cls) + " too small for validation and test splits");
    const auto order = class_permutation(pool.size(), seed, cls);
    for (int i = 0; i < c.val_per_class; ++i) {
      LabeledExample e = pool[order[used + i]];
      e.label = k;
      ds.val.push_back(std::move(e));
    }
    for (int i = 0; i < c.test_per_class; ++i) {
      LabeledExample e = pool[order[used + c.val_per_class + i]];
      e.label = k;
      ds.test_closed.push_back(std::move(e));
    }
  }
  ds.test_open = open_split(src, ds.open_classes, c.open_per_class, seed, ds.closed_classes);
  return ds;
}

// ---------------------------------------------------------------------------
// Batching

/// Each batch: classes_per_batch distinct classes drawn uniformly, then
/// batch_size / classes_per_batch instances of each, with replacement only when
/// the class holds fewer instances than the quota. Indices refer to `labels`.
class ClassAwareSampler {
 public:
  ClassAwareSampler(const std::vector<int>& labels, int batch_size, int classes_per_batch, std::uint64_t seed,
                    std::uint64_t stream = 0)
      : rng_(make_rng(seed, rng_purpose::batches, stream)), batch_size_(batch_size), classes_per_batch_(classes_per_batch) {
    if (classes_per_batch < 1 || batch_size % classes_per_batch != 0)
      throw std::invalid_argument("class_aware_batches: batch_size must be divisible by classes_per_batch");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (auto& [cls, idx] : by_class) {
      classes_.push_back(cls);
      members_.push_back(std::move(idx));
    }
    if (static_cast<int>(classes_.size()) < classes_per_batch)
      throw std::invalid_argument("class_aware_batches: classes_per_batch exceeds the number of classes");
  }

  std::vector<std::size_t> next() {
    const int quota = batch_size_ / classes_per_batch_;
    std::vector<std::size_t> order(classes_.size());
    std::iota(order.begin(), order.end(), 0);
    // partial Fisher-Yates: first classes_per_batch entries are a uniform draw
    for (int i = 0; i < classes_per_batch_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng_)]);
    }
    std::vector<std::size_t> batch;
    batch.reserve(batch_size_);
    for (int i = 0; i < classes_per_batch_; ++i) {
      auto members = members_[order[i]];
      if (static_cast<int>(members.size()) >= quota) {
        for (int j = 0; j < quota; ++j) {
          std::uniform_int_distribution<std::size_t> pick(j, members.size() - 1);
          std::swap(members[j], members[pick(rng_)]);
          batch.push_back(members[j]);
        }
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        for (int j = 0; j < quota; ++j) batch.push_back(members[pick(rng_)]);
      }
    }
    return batch;
  }

  const std::vector<int>& classes() const { return classes_; }

 private:
  std::mt19937_64 rng_;
  int batch_size_;
  int classes_per_batch_;
  std::vector<int> classes_;
  std::vector<std::vector<std::size_t>> members_;
};

/// Instance-uniform batches: one shuffled pass per epoch, last batch may be short.
inline std::vector<std::vector<std::size_t>> instance_batches(std::size_t n, int batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + static_cast<std::size_t>(batch_size)));
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestHeader {
  std::string split;
  int num_classes = 0;
  double alpha = 0.0;
  int n_max = 0;
  int n_min = 0;
  int seed = 0;
  int version = kManifestVersion;
  std::string source;
  std::vector<int> closed_classes;
  std::vector<int> open_classes;
};

struct ManifestRow {
  std::int64_t example_id = 0;
  int class_id = 0;  // source class
  std::string split;
};

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline void write_manifest(const std::filesystem::path& path, const ManifestHeader& h,
                           const std::vector<LabeledExample>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("manifest: cannot write " + path.string());
  out << "# oltr-manifest " << h.version << "\n";
  out << "# split = " << h.split << "\n";
  out << "# k = " << h.num_classes << "\n";
  out << "# alpha = " << detail::format_double(h.alpha) << "\n";
  out << "# n_max = " << h.n_max << "\n";
  out << "# n_min = " << h.n_min << "\n";
  out << "# seed = " << h.seed << "\n";
  out << "# spec_version = " << h.version << "\n";
  out << "# source = " << h.source << "\n";
  out << "# closed_classes = " << join_ints(h.closed_classes) << "\n";
  out << "# open_classes = " << join_ints(h.open_classes) << "\n";
  for (const auto& e : rows) out << e.id << ' ' << e.source_class << ' ' << h.split << '\n';
}

inline std::pair<ManifestHeader, std::vector<ManifestRow>> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open " + path.string());
  ManifestHeader h;
  std::vector<ManifestRow> rows;
  std::string line;
  bool saw_magic = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = detail::trim(std::string_view(line).substr(1));
      if (body.rfind("oltr-manifest", 0) == 0) {
        saw_magic = true;
        h.version = std::stoi(body.substr(13));
        continue;
      }
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = detail::trim(std::string_view(body).substr(0, eq));
      const std::string val = detail::trim(std::string_view(body).substr(eq + 1));
      if (key == "split") h.split = val;
      else if (key == "k") h.num_classes = std::stoi(val);
      else if (key == "alpha") h.alpha = std::stod(val);
      else if (key == "n_max") h.n_max = std::stoi(val);
      else if (key == "n_min") h.n_min = std::stoi(val);
      else if (key == "seed") h.seed = std::stoi(val);
      else if (key == "source") h.source = val;
      else if (key == "closed_classes") h.closed_classes = val.empty() ? std::vector<int>{} : parse_int_list(key, val);
      else if (key == "open_classes") h.open_classes = val.empty() ? std::vector<int>{} : parse_int_list(key, val);
      continue;
    }
    std::istringstream ss(line);
    ManifestRow r;
    if (!(ss >> r.example_id >> r.class_id >> r.split)) throw DataError("manifest: malformed row in " + path.string());
    rows.push_back(std::move(r));
  }
  if (!saw_magic) throw DataError("manifest: missing header in " + path.string());
  if (h.version != kManifestVersion) throw DataError("manifest: unsupported version " + std::to_string(h.version));
  return {std::move(h), std::move(rows)};
}

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names = {"train", "val", "test_closed", "test_open"};
  return names;
}

inline void write_manifests(const std::filesystem::path& dir, const CuratedDataset& ds, const Config& c) {
  std::filesystem::create_directories(dir);
  ManifestHeader h;
  h.num_classes = c.num_classes;
  h.alpha = c.pareto_alpha;
  h.n_max = c.n_max;
  h.n_min = c.n_min;
  h.seed = c.seed;
  h.source = c.source;
  h.closed_classes = ds.closed_classes;
  h.open_classes = ds.open_classes;
  const std::vector<const std::vector<LabeledExample>*> parts = {&ds.train, &ds.val, &ds.test_closed, &ds.test_open};
  for (std::size_t i = 0; i < parts.size(); ++i) {
    h.split = split_names()[i];
    write_manifest(dir / (h.split + ".txt"), h, *parts[i]);
  }
}

/// Rebuilds a curated dataset from manifests plus the source they index into.
inline CuratedDataset load_manifests(const std::filesystem::path& dir, const Source& src, const Config& c) {
  CuratedDataset ds;
  std::vector<std::vector<LabeledExample>*> parts = {&ds.train, &ds.val, &ds.test_closed, &ds.test_open};
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto [h, rows] = read_manifest(dir / (split_names()[i] + ".txt"));
    if (i == 0) {
      ds.closed_classes = h.closed_classes;
      ds.open_classes = h.open_classes;
    }
    std::unordered_map<int, int> label_of;
    for (std::size_t k = 0; k < ds.closed_classes.size(); ++k) label_of[ds.closed_classes[k]] = static_cast<int>(k);
    for (const auto& r : rows) {
      LabeledExample e = src.by_id(r.example_id);
      if (e.source_class != r.class_id)
        throw DataError("manifest: example " + std::to_string(r.example_id) + " belongs to class " +
                        std::to_string(e.source_class) + ", manifest says " + std::to_string(r.class_id));
      auto it = label_of.find(r.class_id);
      e.label = it == label_of.end() ? kOpenLabel : it->second;
      if (e.label == kOpenLabel && i != 3) throw DataError("manifest: open example in split " + split_names()[i]);
      parts[i]->push_back(std::move(e));
    }
  }
  ds.class_counts.assign(ds.closed_classes.size(), 0);
  for (const auto& e : ds.train) ++ds.class_counts[e.label];
  ds.shot_partition = shot_partition(ds.class_counts, c.many_shot_min, c.few_shot_max);
  return ds;
}

}  // namespace oltr
