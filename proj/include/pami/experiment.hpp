#pragma once

// Flat experiment configuration (one JSON object, dotted keys, unknown keys
// rejected) and the shared setup used by the CLI and the test suites.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pami/augmentation.hpp"
#include "pami/benchmark.hpp"
#include "pami/core.hpp"
#include "pami/model.hpp"
#include "pami/training.hpp"
#include "pami/video_world.hpp"

namespace pami {

using Json = nlohmann::json;

inline constexpr int kEvalVideoOffset = 100000;
inline constexpr const char* kArtifactVersion = "pami-vdpo 1.0.0";

enum class Subset { All, Clean, Mixed };

inline std::string subset_name(Subset s) {
  switch (s) {
    case Subset::All: return "all";
    case Subset::Clean: return "clean";
    case Subset::Mixed: return "mixed";
  }
  return "all";
}

inline Subset parse_subset(const std::string& s) {
  if (s == "all") return Subset::All;
  if (s == "clean") return Subset::Clean;
  if (s == "mixed") return Subset::Mixed;
  throw ConfigError("unknown training subset '" + s + "'", "train.subset");
}

struct ExperimentConfig {
  std::uint64_t seed = 0;
  WorldConfig world;
  int eval_videos = 100;
  DatasetConfig data;
  SuiteSizes suites;
  int embed = 32;
  int heads = 2;
  TrainingConfig sft;
  TrainingConfig train;
  Subset subset = Subset::All;
  PreferenceOptions prefdata;

  ExperimentConfig() {
    world.videos = 400;
    data.samples = 6000;
    sft.method = Method::SFT;
    sft.epochs = 20;
    sft.batch_size = 16;
    sft.learning_rate = 3e-3;
    train.method = Method::PAMI;
    train.epochs = 2;
    train.learning_rate = 1e-4;
    train.beta = 1.0;
    train.n = 2;
  }

  void validate() const {
    world.validate();
    if (world.videos >= kEvalVideoOffset) throw ConfigError("world.videos too large", "world.videos");
    if (eval_videos < 2) throw ConfigError("eval.videos must be >= 2", "eval.videos");
    if (data.samples < 1) throw ConfigError("data.samples must be >= 1", "data.samples");
    if (data.temporal_fraction < 0.0 || data.temporal_fraction > 1.0) {
      throw ConfigError("data.temporal_fraction must be in [0, 1]", "data.temporal_fraction");
    }
    model_config().validate();
    auto scoped = [](const TrainingConfig& t, const std::string& prefix) {
      try {
        t.validate();
      } catch (const ConfigError& e) {
        throw ConfigError(e.what(), prefix + e.key());
      }
    };
    scoped(sft, "sft.");
    scoped(train, "train.");
    if (prefdata.candidates < 1) throw ConfigError("prefdata.candidates must be >= 1", "prefdata.candidates");
    if (prefdata.types.empty()) throw ConfigError("prefdata.types must be non-empty", "prefdata.types");
  }

  ModelConfig model_config() const { return model_config_for(world, embed, heads); }

  /// Training configs carry sub-seeds derived from the root seed.
  TrainingConfig sft_config() const {
    TrainingConfig c = sft;
    c.method = Method::SFT;
    c.seed = derive_seed(seed, "sft");
    return c;
  }
  TrainingConfig train_config() const {
    TrainingConfig c = train;
    c.seed = derive_seed(seed, "train");
    return c;
  }
};

// ---------------------------------------------------------------------------
// Flat JSON mapping.

namespace detail {

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const Json&)> set;
  std::function<Json(const ExperimentConfig&)> get;
};

template <typename T>
T json_as(const Json& j, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!j.is_number()) throw ConfigError("", key);
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer() && !j.is_number_unsigned()) throw ConfigError("", key);
      if constexpr (std::is_unsigned_v<T>) {
        if (j.is_number_integer() && j.get<long long>() < 0) throw ConfigError("", key);
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw ConfigError("", key);
    }
    return j.get<T>();
  } catch (const ConfigError&) {
    throw ConfigError("config key '" + key + "' has the wrong type", key);
  } catch (const Json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type", key);
  }
}

template <typename T, typename Ref>
Field field(const std::string& key, Ref ref) {
  return {key, [key, ref](ExperimentConfig& c, const Json& j) { ref(c) = json_as<T>(j, key); },
          [ref](const ExperimentConfig& c) { return Json(ref(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Ref, typename Parse, typename Name>
Field enum_field(const std::string& key, Ref ref, Parse parse, Name name) {
  return {key,
          [key, ref, parse](ExperimentConfig& c, const Json& j) {
            try {
              ref(c) = parse(json_as<std::string>(j, key));
            } catch (const ConfigError& e) {
              throw ConfigError(e.what(), key);
            }
          },
          [ref, name](const ExperimentConfig& c) { return Json(name(ref(const_cast<ExperimentConfig&>(c)))); }};
}

template <typename Ref, typename Parse, typename Name>
Field list_field(const std::string& key, Ref ref, Parse parse, Name name) {
  return {key,
          [key, ref, parse](ExperimentConfig& c, const Json& j) {
            if (!j.is_array()) throw ConfigError("config key '" + key + "' must be a list of strings", key);
            auto& out = ref(c);
            out.clear();
            for (const auto& e : j) {
              try {
                out.push_back(parse(json_as<std::string>(e, key)));
              } catch (const ConfigError& err) {
                throw ConfigError(err.what(), key);
              }
            }
          },
          [ref, name](const ExperimentConfig& c) {
            Json arr = Json::array();
            for (const auto& v : ref(const_cast<ExperimentConfig&>(c))) arr.push_back(name(v));
            return arr;
          }};
}

inline const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> f = {
      field<std::uint64_t>("seed", [](C& c) -> auto& { return c.seed; }),
      field<int>("world.videos", [](C& c) -> auto& { return c.world.videos; }),
      field<int>("world.length", [](C& c) -> auto& { return c.world.length; }),
      field<int>("world.height", [](C& c) -> auto& { return c.world.height; }),
      field<int>("world.width", [](C& c) -> auto& { return c.world.width; }),
      field<int>("world.symbols", [](C& c) -> auto& { return c.world.symbols; }),
      field<int>("world.attributes", [](C& c) -> auto& { return c.world.attributes; }),
      field<int>("world.frames", [](C& c) -> auto& { return c.world.frames; }),
      field<double>("world.noise_scale", [](C& c) -> auto& { return c.world.noise_scale; }),
      field<int>("world.min_duration", [](C& c) -> auto& { return c.world.min_duration; }),
      field<int>("world.max_duration", [](C& c) -> auto& { return c.world.max_duration; }),
      field<int>("world.max_gap", [](C& c) -> auto& { return c.world.max_gap; }),
      field<double>("world.order_bias", [](C& c) -> auto& { return c.world.order_bias; }),
      field<double>("world.attribute_bias", [](C& c) -> auto& { return c.world.attribute_bias; }),
      field<double>("world.overlay_prob", [](C& c) -> auto& { return c.world.overlay_prob; }),
      field<int>("eval.videos", [](C& c) -> auto& { return c.eval_videos; }),
      field<int>("data.samples", [](C& c) -> auto& { return c.data.samples; }),
      field<double>("data.temporal_fraction", [](C& c) -> auto& { return c.data.temporal_fraction; }),
      field<double>("data.attribute_fraction", [](C& c) -> auto& { return c.data.qa.attribute_fraction; }),
      field<double>("data.presence_yes", [](C& c) -> auto& { return c.data.qa.presence_yes; }),
      field<int>("data.min_order_frames", [](C& c) -> auto& { return c.data.qa.min_order_frames; }),
      field<int>("suite.halluc_pairs", [](C& c) -> auto& { return c.suites.halluc_pairs; }),
      field<int>("suite.general", [](C& c) -> auto& { return c.suites.general; }),
      field<int>("model.embed", [](C& c) -> auto& { return c.embed; }),
      field<int>("model.heads", [](C& c) -> auto& { return c.heads; }),
      field<int>("sft.epochs", [](C& c) -> auto& { return c.sft.epochs; }),
      field<double>("sft.learning_rate", [](C& c) -> auto& { return c.sft.learning_rate; }),
      field<int>("sft.batch_size", [](C& c) -> auto& { return c.sft.batch_size; }),
      enum_field("sft.optimizer", [](C& c) -> auto& { return c.sft.optimizer; }, parse_optimizer, optimizer_name),
      enum_field("train.method", [](C& c) -> auto& { return c.train.method; }, parse_method, method_name),
      field<double>("train.beta", [](C& c) -> auto& { return c.train.beta; }),
      field<double>("train.learning_rate", [](C& c) -> auto& { return c.train.learning_rate; }),
      field<int>("train.epochs", [](C& c) -> auto& { return c.train.epochs; }),
      field<int>("train.batch_size", [](C& c) -> auto& { return c.train.batch_size; }),
      field<int>("train.n", [](C& c) -> auto& { return c.train.n; }),
      enum_field("train.weight_strategy", [](C& c) -> auto& { return c.train.strategy; }, parse_strategy,
                 strategy_name),
      enum_field("train.distance_mode", [](C& c) -> auto& { return c.train.mode; }, parse_mode, mode_name),
      enum_field("train.candidate_policy", [](C& c) -> auto& { return c.train.policy; }, parse_policy,
                 policy_name),
      list_field("train.specs", [](C& c) -> auto& { return c.train.specs; }, parse_spec,
                 [](const AugmentationSpec& s) { return to_text(s); }),
      list_field("train.spec_types", [](C& c) -> auto& { return c.train.spec_types; }, parse_spec_type,
                 spec_type_name),
      enum_field("train.optimizer", [](C& c) -> auto& { return c.train.optimizer; }, parse_optimizer,
                 optimizer_name),
      field<double>("train.adam_beta1", [](C& c) -> auto& { return c.train.adam_beta1; }),
      field<double>("train.adam_beta2", [](C& c) -> auto& { return c.train.adam_beta2; }),
      field<double>("train.adam_eps", [](C& c) -> auto& { return c.train.adam_eps; }),
      field<double>("train.divergence_threshold", [](C& c) -> auto& { return c.train.divergence_threshold; }),
      enum_field("train.subset", [](C& c) -> auto& { return c.subset; }, parse_subset, subset_name),
      field<std::size_t>("prefdata.candidates", [](C& c) -> auto& { return c.prefdata.candidates; }),
      list_field("prefdata.types", [](C& c) -> auto& { return c.prefdata.types; }, parse_spec_type,
                 spec_type_name),
  };
  return f;
}

}  // namespace detail

/// Parses a flat JSON object. "seed" is required; every other key falls back
/// to its default. Unknown keys are errors.
inline ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("seed")) throw ConfigError("missing required config key 'seed'", "seed");
  ExperimentConfig c;
  for (const auto& [key, value] : j.items()) {
    const auto& fs = detail::fields();
    auto it = std::find_if(fs.begin(), fs.end(), [&](const detail::Field& f) { return f.key == key; });
    if (it == fs.end()) throw ConfigError("unknown config key '" + key + "'", key);
    it->set(c, value);
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

/// Every key with its effective value; keys sorted.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j = Json::object();
  for (const auto& f : detail::fields()) j[f.key] = f.get(c);
  return j;
}

inline std::string canonical_config(const ExperimentConfig& c) { return config_to_json(c).dump(); }

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(canonical_config(c))); }

// ---------------------------------------------------------------------------
// Shared setup.

struct Workspace {
  VideoLibrary train_library;
  VideoLibrary eval_library;
  std::vector<QAExample> train;
  Suites suites;
  ModelConfig model;
};

inline WorldConfig eval_world(const ExperimentConfig& c) {
  WorldConfig w = c.world;
  w.videos = c.eval_videos;
  w.video_id_offset = kEvalVideoOffset;
  return w;
}

inline VideoLibrary make_train_library(const ExperimentConfig& c) {
  return generate_library(c.world, derive_seed(c.seed, "train_world"));
}

inline VideoLibrary make_eval_library(const ExperimentConfig& c) {
  return generate_library(eval_world(c), derive_seed(c.seed, "eval_world"));
}

inline Workspace prepare(const ExperimentConfig& c) {
  c.validate();
  Workspace w;
  w.train_library = make_train_library(c);
  w.eval_library = make_eval_library(c);
  w.train = generate_dataset(w.train_library, c.data, derive_seed(c.seed, "data"));
  w.suites = build_suites(w.eval_library, derive_seed(c.seed, "suites"), c.suites);
  w.model = c.model_config();
  return w;
}

/// Training examples for the preference stage after Clean/Mixed curation.
inline std::vector<QAExample> select_subset(const ExperimentConfig& c, const std::vector<QAExample>& data) {
  if (c.subset == Subset::All) return data;
  auto cur = curate_clean(data, derive_seed(c.seed, "curate"));
  return c.subset == Subset::Clean ? cur.clean : cur.mixed;
}

}  // namespace pami
