#pragma once

// The command surface shared by the CLI binary and the test suites. Each
// command reads/writes files only and returns a process exit code.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "pami/experiment.hpp"
#include "pami/io.hpp"

namespace pami {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

namespace files {
inline constexpr const char* kTrainLibrary = "train_library.json";
inline constexpr const char* kEvalLibrary = "eval_library.json";
inline constexpr const char* kTrain = "train.jsonl";
inline constexpr const char* kHalluc = "halluc.jsonl";
inline constexpr const char* kGeneral = "general.jsonl";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kCheckpoint = "checkpoint.bin";
inline constexpr const char* kSteps = "steps.jsonl";
inline constexpr const char* kEpochs = "epochs.jsonl";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kMetricsJsonl = "metrics.jsonl";
inline constexpr const char* kSweepCsv = "sweep.csv";
inline constexpr const char* kCurves = "curves.jsonl";
inline constexpr const char* kPreferences = "preferences.jsonl";
}  // namespace files

struct CommandOptions {
  fs::path config;
  fs::path out;
  fs::path data;
  fs::path checkpoint;
  fs::path sft;
  fs::path prefs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::ostream* err = &std::cerr;
};

inline ExperimentConfig load_config(const CommandOptions& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  Json j;
  try {
    j = Json::parse(read_file(o.config));
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (o.seed && j.is_object()) j["seed"] = *o.seed;
  return config_from_json(j);
}

struct LoadedData {
  Workspace ws;
  std::map<std::string, std::string> hashes;
};

inline LoadedData load_data(const fs::path& dir) {
  if (dir.empty()) throw UsageError("--data is required");
  LoadedData d;
  auto load = [&](const char* name) {
    const fs::path p = dir / name;
    std::string text = read_file(p);
    d.hashes[p.string()] = hex64(fnv1a(text));
    return text;
  };
  d.ws.train_library = parse_library(load(files::kTrainLibrary));
  d.ws.eval_library = parse_library(load(files::kEvalLibrary));
  d.ws.train = parse_dataset(parse_jsonl(load(files::kTrain), files::kTrain));
  d.ws.suites.halluc = parse_suite(d.ws.eval_library, parse_jsonl(load(files::kHalluc), files::kHalluc), "halluc");
  d.ws.suites.general =
      parse_suite(d.ws.eval_library, parse_jsonl(load(files::kGeneral), files::kGeneral), "general");
  return d;
}

namespace detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline RunManifest new_manifest(const std::string& command, const ExperimentConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.config = config_to_json(cfg);
  m.config_hash = config_hash(cfg);
  m.seed = cfg.seed;
  m.artifact_version = kArtifactVersion;
  return m;
}

inline void emit(RunManifest& m, const fs::path& dir, const char* name, const std::string& text) {
  write_file(dir / name, text);
  m.outputs[name] = hex64(fnv1a(text));
}

inline void finish(const RunManifest& m, const fs::path& dir) { write_file(dir / files::kManifest, to_json(m).dump(2) + "\n"); }

inline ModelParams load_for(const fs::path& path, const ModelConfig& expected) {
  if (path.empty()) throw UsageError("a checkpoint path is required");
  return load_checkpoint(path.string(), &expected);
}

inline EpochHook epoch_checkpoints(const fs::path& out, const Suites& suites, RunManifest& m) {
  return [&out, &suites, &m](const ModelParams& p, int epoch) {
    const std::string name = "checkpoint_epoch_" + std::to_string(epoch) + ".bin";
    save_checkpoint(p, (out / name).string());
    m.outputs[name] = file_hash(out / name);
    const Metrics x = measure(p, suites);
    return std::map<std::string, double>{{"halluc_pair_acc", x.halluc_pair_acc}, {"general_acc", x.general_acc}};
  };
}

}  // namespace detail

/// Library files, train JSONL and both suites.
inline int cmd_gen(const CommandOptions& o) {
  const ExperimentConfig cfg = load_config(o);
  detail::Stopwatch sw;
  auto m = detail::new_manifest("gen", cfg);
  const Workspace ws = prepare(cfg);
  m.timings["generate"] = sw.seconds();
  detail::emit(m, o.out, files::kTrainLibrary, library_text(ws.train_library));
  detail::emit(m, o.out, files::kEvalLibrary, library_text(ws.eval_library));
  detail::emit(m, o.out, files::kTrain, dataset_jsonl(ws.train));
  detail::emit(m, o.out, files::kHalluc, suite_jsonl(ws.suites.halluc));
  detail::emit(m, o.out, files::kGeneral, suite_jsonl(ws.suites.general));
  m.timings["total"] = sw.seconds();
  detail::finish(m, o.out);
  return kExitOk;
}

/// SFT from scratch, or a preference method starting from --sft.
inline int cmd_train(const CommandOptions& o) {
  const ExperimentConfig cfg = load_config(o);
  const Method method = o.method ? parse_method(*o.method) : cfg.train.method;
  detail::Stopwatch sw;
  auto m = detail::new_manifest("train", cfg);
  LoadedData d = load_data(o.data);
  d.ws.model = cfg.model_config();
  m.inputs = d.hashes;
  const Workspace& ws = d.ws;
  fs::create_directories(o.out);
  const EpochHook hook = detail::epoch_checkpoints(o.out, ws.suites, m);

  TrainResult res;
  try {
    if (method == Method::SFT) {
      res = run_sft(ws.train_library, ws.train, ws.model, cfg.sft_config(), hook);
    } else {
      if (o.sft.empty()) throw UsageError("preference training needs an SFT checkpoint (--sft)");
      PolicyPair start;
      start.policy = detail::load_for(o.sft, ws.model);
      start.reference = start.policy;
      m.inputs[o.sft.string()] = file_hash(o.sft);
      TrainingConfig tc = cfg.train_config();
      tc.method = method;
      if (method == Method::DPO) {
        if (o.prefs.empty()) throw UsageError("method dpo needs a preference dataset (--prefs)");
        const auto records = parse_preferences(read_jsonl(o.prefs));
        m.inputs[o.prefs.string()] = file_hash(o.prefs);
        if (records.empty()) throw InputError("preference dataset is empty");
        res = run_preference(ws.train_library, records, start, tc, hook);
      } else {
        res = run_preference(ws.train_library, select_subset(cfg, ws.train), start, tc, hook);
      }
    }
  } catch (const TrainingAborted& e) {
    detail::emit(m, o.out, files::kSteps, steps_jsonl(e.log()));
    m.warnings.push_back(e.what());
    m.timings["total"] = sw.seconds();
    detail::finish(m, o.out);
    throw;
  }
  m.timings["train"] = sw.seconds();
  save_checkpoint(res.pair.policy, (o.out / files::kCheckpoint).string());
  m.outputs[files::kCheckpoint] = file_hash(o.out / files::kCheckpoint);
  detail::emit(m, o.out, files::kSteps, steps_jsonl(res.log));
  detail::emit(m, o.out, files::kEpochs, epochs_jsonl(res.log));
  m.warnings.insert(m.warnings.end(), res.log.warnings.begin(), res.log.warnings.end());
  m.timings["total"] = sw.seconds();
  detail::finish(m, o.out);
  return kExitOk;
}

/// Halluc pair/item accuracy and General accuracy of one checkpoint.
inline int cmd_eval(const CommandOptions& o) {
  detail::Stopwatch sw;
  LoadedData d = load_data(o.data);
  ModelParams p;
  RunManifest m;
  if (o.config.empty()) {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    p = load_checkpoint(o.checkpoint.string());
    const WorldConfig& w = d.ws.eval_library.config;
    if (p.config.feature_dim != w.feature_dim() || p.config.frames != w.frames) {
      throw InputError("checkpoint shape manifest does not match the suite features");
    }
    m.command = "eval";
    m.config = Json::object();
    m.config_hash = hex64(fnv1a(m.config.dump()));
    m.artifact_version = kArtifactVersion;
  } else {
    const ExperimentConfig cfg = load_config(o);
    m = detail::new_manifest("eval", cfg);
    p = detail::load_for(o.checkpoint, cfg.model_config());
  }
  const Metrics x = measure(p, d.ws.suites);
  m.inputs = d.hashes;
  m.inputs[o.checkpoint.string()] = file_hash(o.checkpoint);
  detail::emit(m, o.out, files::kMetricsCsv, metrics_csv(x));
  detail::emit(m, o.out, files::kMetricsJsonl, metrics_jsonl(x));
  m.timings["total"] = sw.seconds();
  detail::finish(m, o.out);
  return kExitOk;
}

/// One VDPO run per augmentation type from a shared SFT model.
inline int cmd_sweep(const CommandOptions& o) {
  const ExperimentConfig cfg = load_config(o);
  detail::Stopwatch sw;
  auto m = detail::new_manifest("sweep", cfg);
  Workspace ws;
  if (o.data.empty()) {
    ws = prepare(cfg);
  } else {
    LoadedData d = load_data(o.data);
    m.inputs = d.hashes;
    ws = std::move(d.ws);
    ws.model = cfg.model_config();
  }
  PolicyPair sft;
  if (o.sft.empty()) {
    sft = run_sft(ws.train_library, ws.train, ws.model, cfg.sft_config()).pair;
    m.timings["sft"] = sw.seconds();
  } else {
    sft.policy = detail::load_for(o.sft, ws.model);
    sft.reference = sft.policy;
    m.inputs[o.sft.string()] = file_hash(o.sft);
  }
  const SweepReport rep =
      sweep_augmentations(ws.train_library, select_subset(cfg, ws.train), ws.suites, sft, cfg.train_config());
  m.timings["sweep"] = sw.seconds();
  detail::emit(m, o.out, files::kSweepCsv, sweep_csv(rep));
  detail::emit(m, o.out, files::kCurves, curves_jsonl(rep));
  std::size_t done = 0;
  for (const auto& r : rep.rows) {
    if (r.failed) {
      m.warnings.push_back(r.spec + ": " + r.error);
    } else {
      ++done;
    }
  }
  m.timings["total"] = sw.seconds();
  detail::finish(m, o.out);
  return done > 0 ? kExitOk : kExitNumeric;
}

/// Offline chosen/rejected responses for the DPO baseline.
inline int cmd_prefdata(const CommandOptions& o) {
  const ExperimentConfig cfg = load_config(o);
  detail::Stopwatch sw;
  auto m = detail::new_manifest("prefdata", cfg);
  LoadedData d = load_data(o.data);
  m.inputs = d.hashes;
  const ModelParams p = detail::load_for(o.checkpoint, cfg.model_config());
  m.inputs[o.checkpoint.string()] = file_hash(o.checkpoint);
  const auto records =
      construct_offline_preference(d.ws.train_library, d.ws.train, p, derive_seed(cfg.seed, "prefdata"), cfg.prefdata);
  if (records.empty()) m.warnings.push_back("no preference records passed the judge thresholds");
  detail::emit(m, o.out, files::kPreferences, preference_jsonl(records));
  m.timings["total"] = sw.seconds();
  detail::finish(m, o.out);
  return kExitOk;
}

/// Maps library errors to the exit-code contract and reports them.
template <typename Fn>
int run_command(Fn&& fn, const CommandOptions& o) {
  try {
    return fn(o);
  } catch (const TrainingAborted& e) {
    *o.err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    *o.err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    *o.err << "config error: " << e.what();
    if (!e.key().empty()) *o.err << " [key: " << e.key() << "]";
    *o.err << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    *o.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    *o.err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace pami
