#pragma once

// Command-line front end. Every subcommand works against a run directory:
//
//   <run>/config.txt          config snapshot, written once by `curate`
//   <run>/manifests/          one manifest per split
//   <run>/checkpoints/        last.ckpt, best.ckpt
//   <run>/metrics.jsonl       one JSON object per epoch
//   <run>/reports/            eval, ablation and sweep outputs (JSON + CSV)
//
// Exit codes: 0 ok, 2 usage, 3 config, 4 missing artifact, 5 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oltr/checkpoint.hpp"
#include "oltr/data.hpp"
#include "oltr/evaluation.hpp"
#include "oltr/gradcheck.hpp"
#include "oltr/training.hpp"

namespace oltr::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kConfig = 3, kMissing = 4, kNumeric = 5 };

inline constexpr const char* kRunRootEnv = "OLTR_RUN_ROOT";

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunDir {
  fs::path root;

  fs::path config() const { return root / "config.txt"; }
  fs::path manifests() const { return root / "manifests"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path last_checkpoint() const { return checkpoints() / "last.ckpt"; }
  fs::path best_checkpoint() const { return checkpoints() / "best.ckpt"; }
  fs::path metrics() const { return root / "metrics.jsonl"; }
  fs::path reports() const { return root / "reports"; }
};

/// Relative run paths resolve against $OLTR_RUN_ROOT when it is set.
inline RunDir resolve_run(const std::string& run) {
  fs::path p(run);
  if (p.is_relative()) {
    if (const char* env = std::getenv(kRunRootEnv); env && *env) p = fs::path(env) / p;
  }
  return {p};
}

inline std::string kebab(std::string key) {
  for (char& ch : key)
    if (ch == '_') ch = '-';
  return key;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifact("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

inline Config load_run_config(const RunDir& run) {
  if (!fs::is_directory(run.root)) throw MissingArtifact("missing run directory: " + run.root.string());
  if (!fs::exists(run.config())) throw MissingArtifact("missing config snapshot: " + run.config().string());
  return validate_config(parse_config_text(read_text(run.config())));
}

/// The snapshot is immutable: flags given to later subcommands must agree with it.
inline void check_overrides(const Config& snapshot, const std::map<std::string, std::string>& overrides) {
  if (overrides.empty()) return;
  const Config merged = apply_overrides(snapshot, overrides);
  if (merged == snapshot) return;
  const auto a = to_map(snapshot), b = to_map(merged);
  for (const auto& [k, v] : a)
    if (b.at(k) != v) throw ConfigError(k, "differs from the run's config snapshot (" + v + "); start a new run");
}

inline CuratedDataset load_dataset(const RunDir& run, const Config& c) {
  if (!fs::is_directory(run.manifests())) throw MissingArtifact("missing manifests: " + run.manifests().string());
  for (const auto& s : split_names())
    if (!fs::exists(run.manifests() / (s + ".txt")))
      throw MissingArtifact("missing manifest: " + (run.manifests() / (s + ".txt")).string());
  return load_manifests(run.manifests(), load_source(c), c);
}

inline void curate_run(const RunDir& run, const Config& c) {
  if (fs::exists(run.config())) {
    const Config existing = validate_config(parse_config_text(read_text(run.config())));
    if (!(existing == c)) throw ConfigError("config", "run " + run.root.string() + " already has a different config snapshot");
  }
  const Source src = load_source(c);
  const CuratedDataset ds = curate(src, c);
  fs::create_directories(run.root);
  write_text(run.config(), serialize(c));
  write_manifests(run.manifests(), ds, c);
}

struct TrainOutcome {
  FitResult fit;
  ModelState best;
};

/// Trains into `run`, checkpointing after every epoch.
inline TrainOutcome train_run(const RunDir& run, const Config& c, const CuratedDataset& ds, bool resume,
                              const std::optional<fs::path>& init_from) {
  ModelState state;
  FitOptions opt;
  const ModelOptions o = ModelOptions::from_config(c);
  if (resume && fs::exists(run.last_checkpoint())) {
    auto [s, saved] = load_state(run.last_checkpoint());
    if (!(saved == c)) throw ConfigError("config", "last checkpoint was written under a different config");
    state = std::move(s);
    if (fs::exists(run.best_checkpoint())) opt.best_val_accuracy = closed_accuracy(o, load_state(run.best_checkpoint()).first, ds.val);
  } else if (init_from) {
    if (!fs::exists(*init_from)) throw MissingArtifact("missing checkpoint: " + init_from->string());
    state = init_state(c, ds.train);
    ModelState source = load_state(*init_from).first;
    if (source.params.backbone.layers.size() != state.params.backbone.layers.size())
      throw ConfigError("init_from", "checkpoint backbone does not match this config");
    for (std::size_t i = 0; i < state.params.backbone.layers.size(); ++i)
      if (source.params.backbone.layers[i].weight.rows() != state.params.backbone.layers[i].weight.rows() ||
          source.params.backbone.layers[i].weight.cols() != state.params.backbone.layers[i].weight.cols())
        throw ConfigError("init_from", "checkpoint backbone does not match this config");
    state.params.backbone = source.params.backbone;
    if (!o.baseline) state.memory = init_centroids(direct_features(o, state.params, ds.train), labels_of(ds.train), c.num_classes);
    opt.finetune = true;
  } else {
    state = init_state(c, ds.train);
  }
  if (state.epoch == 0) {
    fs::remove(run.metrics());
    fs::remove(run.best_checkpoint());
  }
  fs::create_directories(run.checkpoints());
  if (state.epoch == 0) {
    save_state(run.last_checkpoint(), state, c);
    if (c.epochs == 0) save_state(run.best_checkpoint(), state, c);
  }
  opt.on_epoch = [&](const ModelState& s, const EpochMetrics& m, bool improved) {
    std::ofstream log(run.metrics(), std::ios::app);
    log << to_json(m).dump() << "\n";
    save_state(run.last_checkpoint(), s, c);
    if (improved) save_state(run.best_checkpoint(), s, c);
  };
  TrainOutcome out;
  out.fit = fit(ds, c, std::move(state), opt);
  out.best = fs::exists(run.best_checkpoint()) ? load_state(run.best_checkpoint()).first : out.fit.best;
  return out;
}

inline ModelState load_checkpoint_for_eval(const RunDir& run, const std::string& which, const Config& c) {
  fs::path p = which == "best" ? run.best_checkpoint() : which == "last" ? run.last_checkpoint() : fs::path(which);
  if (!fs::exists(p)) throw MissingArtifact("missing checkpoint: " + p.string());
  auto [s, saved] = load_state(p);
  if (saved.baseline != c.baseline || saved.embed_dim != c.embed_dim || saved.num_classes != c.num_classes)
    throw ConfigError("checkpoint", "checkpoint " + p.string() + " does not match the run config");
  return s;
}

inline ScoredTest score_test(const Config& c, const ModelState& s, const CuratedDataset& ds) {
  const ModelOptions o = ModelOptions::from_config(c);
  return {score(o, s, ds.test_closed), score(o, s, ds.test_open)};
}

inline std::string threshold_csv(const ScoredTest& t, const std::vector<double>& grid) {
  std::ostringstream out;
  out << std::setprecision(17) << "threshold,overall_top1,accepted\n";
  for (double th : grid) {
    const auto m = mixed_predictions(t.closed, t.open, th);
    out << th << "," << open_setting_accuracy(m) << "," << accepted_count(m) << "\n";
  }
  return out.str();
}

inline std::string open_class_csv(const std::vector<std::pair<int, double>>& curve) {
  std::ostringstream out;
  out << std::setprecision(17) << "num_open_classes,f_measure\n";
  for (auto [n, f] : curve) out << n << "," << f << "\n";
  return out.str();
}

inline EvalReport eval_run(const RunDir& run, const Config& c, const ModelState& s, const CuratedDataset& ds,
                           double threshold) {
  const ScoredTest t = score_test(c, s, ds);
  EvalReport r = evaluate(t, ds.shot_partition, threshold, c.num_open_classes);
  write_text(run.reports() / "eval.json", to_json(r).dump(2) + "\n");
  write_text(run.reports() / "threshold_curve.csv", threshold_csv(t, default_threshold_grid()));
  write_text(run.reports() / "open_class_curve.csv", open_class_csv(r.open_class_curve));
  return r;
}

inline std::string format_optional(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *v;
  return s.str();
}

struct AblationRow {
  std::string name;
  Config config;
};

/// Full model, plain baseline, and one row per removed component.
inline std::vector<AblationRow> ablation_rows(const Config& base, const std::vector<std::string>& flags) {
  std::vector<AblationRow> rows;
  Config full = base;
  full.baseline = false;
  rows.push_back({"full", full});
  Config plain = full;
  plain.baseline = true;
  rows.push_back({"plain", plain});
  for (const auto& f : flags) {
    Config c = full;
    if (f == "memory_feature") c.use_memory_feature = false;
    else if (f == "concept_selector") c.use_concept_selector = false;
    else if (f == "calibration") c.use_calibration = false;
    else if (f == "attention") c.use_attention = false;
    else throw ConfigError("flags", "unknown ablation flag '" + f + "'");
    rows.push_back({"no_" + f, c});
  }
  return rows;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline std::vector<double> parse_double_grid(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("grid", "'" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("grid", "empty grid");
  return out;
}

inline void write_embeddings(std::ostream& out, const ModelOptions& o, const ModelState& s,
                             const std::vector<LabeledExample>& data) {
  out << std::setprecision(17) << "id,label,gamma";
  for (int i = 0; i < o.spec.embed_dim; ++i) out << ",v" << i;
  out << "\n";
  for (const auto& e : data) {
    const SampleOutput r = forward(o, s.params, s.memory, e.input);
    out << e.id << "," << e.label << "," << r.meta.gamma;
    for (Eigen::Index i = 0; i < r.meta.vector.size(); ++i) out << "," << r.meta.vector(i);
    out << "\n";
  }
}

/// Runs the command line; output goes to `out`, diagnostics to `err`.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Open long-tailed recognition: curation, training, evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string run_name, config_file, checkpoint = "best", init_from, flags = "memory_feature,concept_selector,calibration,attention";
  std::string axis, grid, split = "test_closed", out_path, component = "all";
  std::optional<double> threshold;
  bool resume = false;
  int seeds = 10;
  std::map<std::string, std::string> overrides;

  auto add_config_flags = [&](CLI::App* sub) {
    for (const auto& key : config_keys()) {
      std::string names = "--" + kebab(key);
      if (key == "num_classes") names += ",--k";
      if (key == "pareto_alpha") names += ",--alpha";
      sub->add_option_function<std::string>(names, [&overrides, key](const std::string& v) { overrides[key] = v; },
                                            "config: " + key);
    }
  };
  auto add_run = [&](CLI::App* sub) {
    sub->add_option("--run", run_name, std::string("run directory (relative paths resolve against $") + kRunRootEnv + ")")
        ->required();
  };

  auto* curate_cmd = app.add_subcommand("curate", "write the config snapshot and split manifests");
  add_run(curate_cmd);
  curate_cmd->add_option("--config", config_file, "config file (key = value lines)");
  add_config_flags(curate_cmd);

  auto* train_cmd = app.add_subcommand("train", "train on a curated run");
  add_run(train_cmd);
  train_cmd->add_flag("--resume", resume, "continue from checkpoints/last.ckpt");
  train_cmd->add_option("--init-from", init_from, "fine-tune from this checkpoint's backbone");
  add_config_flags(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the closed and open test splits");
  add_run(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "best, last, or a path");
  eval_cmd->add_option("--threshold", threshold, "open-set threshold (default: config open_threshold)");
  add_config_flags(eval_cmd);

  auto* ablate_cmd = app.add_subcommand("ablate", "train full, plain and single-removal variants");
  add_run(ablate_cmd);
  ablate_cmd->add_option("--flags", flags, "components to remove one at a time");
  add_config_flags(ablate_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "sensitivity curve along one axis");
  add_run(sweep_cmd);
  sweep_cmd->add_option("--axis", axis, "threshold | num_open_classes | pareto_alpha")->required();
  sweep_cmd->add_option("--grid", grid, "comma-separated grid values");
  sweep_cmd->add_option("--checkpoint", checkpoint, "best, last, or a path");
  add_config_flags(sweep_cmd);

  auto* dump_cmd = app.add_subcommand("dump-embeddings", "write per-sample meta-embeddings as CSV");
  add_run(dump_cmd);
  dump_cmd->add_option("--split", split, "train | val | test_closed | test_open");
  dump_cmd->add_option("--checkpoint", checkpoint, "best, last, or a path");
  dump_cmd->add_option("--out", out_path, "output file (default: reports/embeddings_<split>.csv)");
  add_config_flags(dump_cmd);

  auto* grad_cmd = app.add_subcommand("gradcheck", "compare analytic gradients against finite differences");
  grad_cmd->add_option("--component", component, "component name or 'all'");
  grad_cmd->add_option("--seeds", seeds, "number of random instances per component")->check(CLI::PositiveNumber);

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    bool known = false;
    for (const auto* sub : app.get_subcommands([](CLI::App*) { return true; })) known |= sub->get_name() == name;
    if (!known) {
      err << "error: unknown subcommand '" << name << "'\n";
      return kUsage;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (grad_cmd->parsed()) {
      std::vector<std::pair<std::string, gradcheck::Component>> comps;
      if (component == "all") {
        comps = gradcheck::component_names();
      } else if (auto c = gradcheck::parse_component(component)) {
        comps.emplace_back(component, *c);
      } else {
        err << "error: unknown component '" << component << "'\n";
        return kUsage;
      }
      bool ok = true;
      nlohmann::json report = nlohmann::json::object();
      for (const auto& [name, c] : comps) {
        double worst = 0.0;
        for (int s = 0; s < seeds; ++s) worst = std::max(worst, gradcheck::run(c, static_cast<std::uint64_t>(s)).max_relative_error);
        ok &= worst < 1e-4;
        report[name] = worst;
      }
      out << report.dump(2) << "\n";
      if (!ok) {
        err << "error: gradient check exceeded 1e-4\n";
        return kNumeric;
      }
      return kOk;
    }

    const RunDir run = resolve_run(run_name);

    if (curate_cmd->parsed()) {
      Config base;
      if (!config_file.empty()) {
        if (!fs::exists(config_file)) throw MissingArtifact("missing config file: " + config_file);
        base = validate_config(parse_config_text(read_text(config_file)));
      }
      const Config c = apply_overrides(base, overrides);
      curate_run(run, c);
      const CuratedDataset ds = load_dataset(run, c);
      out << nlohmann::json{{"run", run.root.string()},
                            {"train", ds.train.size()},
                            {"val", ds.val.size()},
                            {"test_closed", ds.test_closed.size()},
                            {"test_open", ds.test_open.size()},
                            {"class_counts", ds.class_counts}}
                 .dump()
          << "\n";
      return kOk;
    }

    const Config c = load_run_config(run);
    check_overrides(c, overrides);

    if (train_cmd->parsed()) {
      const CuratedDataset ds = load_dataset(run, c);
      std::optional<fs::path> init;
      if (!init_from.empty()) init = init_from;
      const TrainOutcome t = train_run(run, c, ds, resume, init);
      nlohmann::json j{{"run", run.root.string()}, {"epochs", t.fit.last.epoch}, {"best_val_acc", t.fit.best_val_accuracy}};
      if (!t.fit.log.empty()) j["last"] = to_json(t.fit.log.back());
      out << j.dump() << "\n";
      return kOk;
    }

    if (eval_cmd->parsed()) {
      const CuratedDataset ds = load_dataset(run, c);
      const ModelState s = load_checkpoint_for_eval(run, checkpoint, c);
      const double th = threshold.value_or(c.open_threshold);
      if (!(th >= 0.0 && th <= 1.0)) throw ConfigError("threshold", "must lie in [0, 1]");
      out << to_json(eval_run(run, c, s, ds, th)).dump(2) << "\n";
      return kOk;
    }

    if (ablate_cmd->parsed()) {
      const CuratedDataset ds = load_dataset(run, c);
      nlohmann::json table = nlohmann::json::array();
      std::ostringstream csv;
      csv << std::setprecision(17) << "variant,overall_top1,many_top1,medium_top1,few_top1,f_measure\n";
      out << "variant            overall   many      medium    few       F\n";
      for (const auto& row : ablation_rows(c, split_list(flags))) {
        const RunDir sub{run.root / "ablate" / row.name};
        fs::create_directories(sub.root);
        write_text(sub.config(), serialize(row.config));
        const TrainOutcome t = train_run(sub, row.config, ds, false, std::nullopt);
        const EvalReport r = eval_run(sub, row.config, t.best, ds, row.config.open_threshold);
        table.push_back({{"variant", row.name}, {"closed", to_json(r.closed)}, {"f_measure", r.f_measure}});
        csv << row.name << "," << r.closed.overall << "," << format_optional(r.closed.many.accuracy) << ","
            << format_optional(r.closed.medium.accuracy) << "," << format_optional(r.closed.few.accuracy) << ","
            << r.f_measure << "\n";
        out << std::left << std::setw(19) << row.name << std::fixed << std::setprecision(4) << r.closed.overall << "    "
            << format_optional(r.closed.many.accuracy) << "    " << format_optional(r.closed.medium.accuracy) << "    "
            << format_optional(r.closed.few.accuracy) << "    " << r.f_measure << "\n";
      }
      write_text(run.reports() / "ablation.json", table.dump(2) + "\n");
      write_text(run.reports() / "ablation.csv", csv.str());
      return kOk;
    }

    if (sweep_cmd->parsed()) {
      const auto ax = parse_sweep_axis(axis);
      if (!ax) {
        err << "error: unknown sweep axis '" << axis << "'\n";
        return kUsage;
      }
      nlohmann::json curve = nlohmann::json::array();
      std::ostringstream csv;
      csv << std::setprecision(17);
      if (*ax == SweepAxis::ParetoAlpha) {
        const auto alphas = grid.empty() ? std::vector<double>{1, 2, 4, 6, 8} : parse_double_grid(grid);
        csv << "pareto_alpha,overall_top1,many_top1,medium_top1,few_top1,f_measure\n";
        for (double a : alphas) {
          Config ca = c;
          ca.pareto_alpha = a;
          check_invariants(ca);
          std::ostringstream name;
          name << "alpha_" << a;
          const RunDir sub{run.root / "sweep" / name.str()};
          curate_run(sub, ca);
          const CuratedDataset ds = load_dataset(sub, ca);
          const TrainOutcome t = train_run(sub, ca, ds, false, std::nullopt);
          const EvalReport r = eval_run(sub, ca, t.best, ds, ca.open_threshold);
          curve.push_back({{"pareto_alpha", a}, {"closed", to_json(r.closed)}, {"f_measure", r.f_measure}});
          csv << a << "," << r.closed.overall << "," << format_optional(r.closed.many.accuracy) << ","
              << format_optional(r.closed.medium.accuracy) << "," << format_optional(r.closed.few.accuracy) << ","
              << r.f_measure << "\n";
        }
      } else {
        const CuratedDataset ds = load_dataset(run, c);
        const ScoredTest t = score_test(c, load_checkpoint_for_eval(run, checkpoint, c), ds);
        if (*ax == SweepAxis::Threshold) {
          const auto g = grid.empty() ? default_threshold_grid() : parse_double_grid(grid);
          for (double th : g)
            if (!(th >= 0.0 && th <= 1.0)) throw ConfigError("grid", "thresholds must lie in [0, 1]");
          for (auto [th, acc] : threshold_sweep(t, g)) {
            const auto m = mixed_predictions(t.closed, t.open, th);
            curve.push_back({{"threshold", th}, {"overall_top1", acc}, {"accepted", accepted_count(m)}});
          }
          csv << threshold_csv(t, g);
        } else {
          std::vector<int> g;
          if (grid.empty()) {
            for (int n = 0; n <= c.num_open_classes; ++n) g.push_back(n);
          } else {
            for (double v : parse_double_grid(grid)) {
              if (v < 0 || v != static_cast<int>(v)) throw ConfigError("grid", "open-class counts must be nonnegative integers");
              g.push_back(static_cast<int>(v));
            }
          }
          const auto oc = open_class_sweep(t, g, c.open_threshold);
          for (auto [n, f] : oc) curve.push_back({{"num_open_classes", n}, {"f_measure", f}});
          csv << open_class_csv(oc);
        }
      }
      write_text(run.reports() / ("sweep_" + axis + ".json"), curve.dump(2) + "\n");
      write_text(run.reports() / ("sweep_" + axis + ".csv"), csv.str());
      out << curve.dump(2) << "\n";
      return kOk;
    }

    if (dump_cmd->parsed()) {
      const CuratedDataset ds = load_dataset(run, c);
      const std::map<std::string, const std::vector<LabeledExample>*> splits{
          {"train", &ds.train}, {"val", &ds.val}, {"test_closed", &ds.test_closed}, {"test_open", &ds.test_open}};
      auto it = splits.find(split);
      if (it == splits.end()) {
        err << "error: unknown split '" << split << "'\n";
        return kUsage;
      }
      const ModelState s = load_checkpoint_for_eval(run, checkpoint, c);
      const fs::path dest = out_path.empty() ? run.reports() / ("embeddings_" + split + ".csv") : fs::path(out_path);
      std::ostringstream csv;
      write_embeddings(csv, ModelOptions::from_config(c), s, *it->second);
      write_text(dest, csv.str());
      out << nlohmann::json{{"path", dest.string()}, {"rows", it->second->size()}}.dump() << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const MissingArtifact& e) {
    err << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kUsage;
}

}  // namespace oltr::cli
