#pragma once

// On-disk formats: dataset/suite/preference JSONL, the library file, run logs,
// metrics, sweep reports and manifests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pami/augmentation.hpp"
#include "pami/benchmark.hpp"
#include "pami/core.hpp"
#include "pami/training.hpp"
#include "pami/video_world.hpp"

namespace pami {

using Json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kLibraryFormatVersion = 1;

inline std::string kind_name(QuestionKind k) { return k == QuestionKind::Temporal ? "temporal" : "static"; }

inline QuestionKind parse_kind(const std::string& s) {
  if (s == "temporal") return QuestionKind::Temporal;
  if (s == "static") return QuestionKind::Static;
  throw InputError("unknown question kind '" + s + "'");
}

inline std::string question_type_name(QuestionType t) {
  switch (t) {
    case QuestionType::Order: return "order";
    case QuestionType::Presence: return "presence";
    case QuestionType::Attribute: return "attribute";
  }
  return "presence";
}

inline QuestionType parse_question_type(const std::string& s) {
  if (s == "order") return QuestionType::Order;
  if (s == "presence") return QuestionType::Presence;
  if (s == "attribute") return QuestionType::Attribute;
  throw InputError("unknown question type '" + s + "'");
}

// ---------------------------------------------------------------------------
// Files.

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << text;
  if (!os) throw InputError("write failed for " + path.string());
}

inline std::string file_hash(const fs::path& path) { return hex64(fnv1a(read_file(path))); }

inline std::string to_jsonl(const std::vector<Json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Json> parse_jsonl(const std::string& text, const std::string& what = "jsonl") {
  std::vector<Json> out;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw InputError(what + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Json> read_jsonl(const fs::path& path) { return parse_jsonl(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Examples.

inline Json to_json(const QAExample& ex) {
  return {{"video_id", ex.video_id},
          {"segment", {ex.segment.start, ex.segment.end}},
          {"prompt_tokens", ex.prompt},
          {"answer_tokens", ex.answer},
          {"kind", kind_name(ex.meta.kind)},
          {"type", question_type_name(ex.meta.type)},
          {"symbols", ex.meta.symbols},
          {"truth", ex.meta.truth}};
}

inline QAExample example_from_json(const Json& j) {
  try {
    QAExample ex;
    ex.video_id = j.at("video_id").get<int>();
    ex.segment = {j.at("segment").at(0).get<int>(), j.at("segment").at(1).get<int>()};
    ex.prompt = j.at("prompt_tokens").get<TokenSeq>();
    ex.answer = j.at("answer_tokens").get<TokenSeq>();
    ex.meta.kind = parse_kind(j.at("kind").get<std::string>());
    ex.meta.type = j.contains("type") ? parse_question_type(j.at("type").get<std::string>())
                                      : parse_prompt(ex.prompt).type;
    ex.meta.symbols = j.at("symbols").get<std::vector<int>>();
    ex.meta.truth = j.at("truth").get<std::string>();
    return ex;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed example record: ") + e.what());
  }
}

inline std::string dataset_jsonl(const std::vector<QAExample>& data) {
  std::vector<Json> rows;
  rows.reserve(data.size());
  for (const auto& ex : data) rows.push_back(to_json(ex));
  return to_jsonl(rows);
}

inline std::vector<QAExample> parse_dataset(const std::vector<Json>& rows) {
  std::vector<QAExample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(example_from_json(r));
  return out;
}

// ---------------------------------------------------------------------------
// Library: config, seed and event scripts; frames are rebuilt on load.

inline Json to_json(const WorldConfig& c) {
  return {{"videos", c.videos},
          {"length", c.length},
          {"height", c.height},
          {"width", c.width},
          {"symbols", c.symbols},
          {"attributes", c.attributes},
          {"frames", c.frames},
          {"noise_scale", c.noise_scale},
          {"min_duration", c.min_duration},
          {"max_duration", c.max_duration},
          {"max_gap", c.max_gap},
          {"order_bias", c.order_bias},
          {"attribute_bias", c.attribute_bias},
          {"overlay_prob", c.overlay_prob},
          {"video_id_offset", c.video_id_offset}};
}

inline WorldConfig world_from_json(const Json& j) {
  WorldConfig c;
  c.videos = j.at("videos").get<int>();
  c.length = j.at("length").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.symbols = j.at("symbols").get<int>();
  c.attributes = j.at("attributes").get<int>();
  c.frames = j.at("frames").get<int>();
  c.noise_scale = j.at("noise_scale").get<double>();
  c.min_duration = j.at("min_duration").get<int>();
  c.max_duration = j.at("max_duration").get<int>();
  c.max_gap = j.at("max_gap").get<int>();
  c.order_bias = j.at("order_bias").get<double>();
  c.attribute_bias = j.at("attribute_bias").get<double>();
  c.overlay_prob = j.at("overlay_prob").get<double>();
  c.video_id_offset = j.at("video_id_offset").get<int>();
  return c;
}

inline std::string library_text(const VideoLibrary& lib) {
  Json videos = Json::array();
  for (const auto& v : lib.videos) {
    Json ps = Json::array();
    for (const auto& p : v.script.placements) ps.push_back({p.symbol, p.attribute, p.start, p.end, p.row, p.col});
    videos.push_back({{"id", v.id}, {"placements", std::move(ps)}});
  }
  Json j = {{"format_version", kLibraryFormatVersion},
            {"seed", lib.seed},
            {"config", to_json(lib.config)},
            {"videos", std::move(videos)}};
  return j.dump() + "\n";
}

inline VideoLibrary parse_library(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError(std::string("library file is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kLibraryFormatVersion) {
      throw InputError("unsupported library format_version " + std::to_string(version));
    }
    VideoLibrary lib;
    lib.config = world_from_json(j.at("config"));
    lib.config.validate();
    lib.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& v : j.at("videos")) {
      EventScript script;
      for (const auto& p : v.at("placements")) {
        script.placements.push_back({p.at(0).get<int>(), p.at(1).get<int>(), p.at(2).get<int>(),
                                     p.at(3).get<int>(), p.at(4).get<int>(), p.at(5).get<int>()});
      }
      lib.videos.push_back(build_video(lib.config, lib.seed, v.at("id").get<int>(), std::move(script)));
    }
    if (static_cast<int>(lib.videos.size()) != lib.config.videos) throw InputError("library video count mismatch");
    return lib;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed library file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Suites: dataset schema plus pairing index and clip provenance.

inline Json to_json(const VideoClip& c) {
  Json crops = Json::array();
  for (const auto& r : c.crops) crops.push_back({r.row0, r.col0, r.rows, r.cols});
  return {{"source_video_id", c.source_video_id},
          {"segment", {c.segment.start, c.segment.end}},
          {"source_index", c.source_index},
          {"frame_order", c.frame_order},
          {"crops", std::move(crops)}};
}

inline VideoClip clip_from_json(const VideoLibrary& lib, const Json& j) {
  VideoClip c;
  c.source_video_id = j.at("source_video_id").get<int>();
  c.segment = {j.at("segment").at(0).get<int>(), j.at("segment").at(1).get<int>()};
  c.source_index = j.at("source_index").get<std::vector<int>>();
  c.frame_order = j.at("frame_order").get<std::vector<int>>();
  for (const auto& r : j.at("crops")) {
    c.crops.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()});
  }
  materialize(lib, c);
  return c;
}

inline std::string suite_jsonl(const Suite& suite) {
  std::vector<Json> rows;
  for (std::size_t i = 0; i < suite.items.size(); ++i) {
    const auto& it = suite.items[i];
    Json r = to_json(it.example);
    r["suite"] = suite.name;
    r["index"] = i;
    r["pair"] = it.pair;
    r["clip"] = to_json(it.clip);
    rows.push_back(std::move(r));
  }
  return to_jsonl(rows);
}

inline Suite parse_suite(const VideoLibrary& lib, const std::vector<Json>& rows, const std::string& name) {
  Suite s;
  s.name = name;
  std::map<int, std::vector<int>> members;
  try {
    for (const auto& r : rows) {
      SuiteItem it;
      it.example = example_from_json(r);
      it.clip = clip_from_json(lib, r.at("clip"));
      it.features = render_features(it.clip, lib.config);
      it.pair = r.at("pair").get<int>();
      if (it.pair >= 0) members[it.pair].push_back(static_cast<int>(s.items.size()));
      s.items.push_back(std::move(it));
    }
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed suite record: ") + e.what());
  }
  for (const auto& [p, idx] : members) {
    if (idx.size() != 2) throw InputError("suite pair " + std::to_string(p) + " does not have two members");
    s.pairs.emplace_back(idx[0], idx[1]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Preference records.

inline Json to_json(const PreferenceRecord& r) {
  Json j = to_json(r.example);
  j["chosen_tokens"] = r.chosen;
  j["rejected_tokens"] = r.rejected;
  j["chosen_score"] = r.chosen_score;
  j["rejected_score"] = r.rejected_score;
  j["source_spec"] = r.source_spec;
  return j;
}

inline PreferenceRecord preference_from_json(const Json& j) {
  try {
    PreferenceRecord r;
    r.example = example_from_json(j);
    r.chosen = j.at("chosen_tokens").get<TokenSeq>();
    r.rejected = j.at("rejected_tokens").get<TokenSeq>();
    r.chosen_score = j.at("chosen_score").get<int>();
    r.rejected_score = j.at("rejected_score").get<int>();
    r.source_spec = j.at("source_spec").get<std::string>();
    return r;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed preference record: ") + e.what());
  }
}

inline std::string preference_jsonl(const std::vector<PreferenceRecord>& records) {
  std::vector<Json> rows;
  for (const auto& r : records) rows.push_back(to_json(r));
  return to_jsonl(rows);
}

inline std::vector<PreferenceRecord> parse_preferences(const std::vector<Json>& rows) {
  std::vector<PreferenceRecord> out;
  for (const auto& r : rows) out.push_back(preference_from_json(r));
  return out;
}

// ---------------------------------------------------------------------------
// Run logs.

inline Json to_json(const StepRecord& s) {
  std::vector<std::string> labels;
  for (auto l : s.labels) labels.push_back(label_name(l));
  return {{"step", s.step},     {"epoch", s.epoch}, {"examples", s.examples},
          {"loss", s.loss},     {"reward_margin", s.reward_margin},
          {"alpha", s.alpha},   {"distance", s.distance},
          {"specs", s.specs},   {"labels", labels}};
}

inline std::string steps_jsonl(const RunLog& log) {
  std::vector<Json> rows;
  rows.reserve(log.steps.size());
  for (const auto& s : log.steps) rows.push_back(to_json(s));
  return to_jsonl(rows);
}

inline std::string epochs_jsonl(const RunLog& log) {
  std::vector<Json> rows;
  for (const auto& e : log.epochs) rows.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"metrics", e.metrics}});
  return to_jsonl(rows);
}

// ---------------------------------------------------------------------------
// Metrics and sweep reports.

struct Metrics {
  double halluc_pair_acc = 0.0;
  double halluc_item_acc = 0.0;
  double general_acc = 0.0;
};

inline Metrics measure(const ModelParams& params, const Suites& suites) {
  const EvalResult h = evaluate(params, suites.halluc);
  const EvalResult g = evaluate(params, suites.general);
  return {h.pair_acc, h.item_acc, g.item_acc};
}

inline std::string metrics_csv(const Metrics& m) {
  return "halluc_pair_acc,halluc_item_acc,general_acc\n" + format_double(m.halluc_pair_acc) + "," +
         format_double(m.halluc_item_acc) + "," + format_double(m.general_acc) + "\n";
}

inline std::string metrics_jsonl(const Metrics& m) {
  return Json{{"halluc_pair_acc", m.halluc_pair_acc},
              {"halluc_item_acc", m.halluc_item_acc},
              {"general_acc", m.general_acc}}
             .dump() +
         "\n";
}

inline std::string sweep_csv(const SweepReport& r) {
  std::string out = "spec,group,halluc_delta,general_delta,final_loss_mean,final_loss_var,seed\n";
  auto row = [&](const SweepRow& x) {
    out += x.spec + "," + x.group + "," + format_double(x.halluc_delta) + "," + format_double(x.general_delta) +
           "," + format_double(x.final_loss_mean) + "," + format_double(x.final_loss_var) + "," +
           std::to_string(x.seed) + "\n";
  };
  row(r.baseline);
  for (const auto& x : r.rows) {
    if (!x.failed) row(x);
  }
  return out;
}

inline std::string curves_jsonl(const SweepReport& r) {
  std::vector<Json> rows;
  for (const auto& [group, c] : r.curves) {
    rows.push_back({{"group", group}, {"runs", c.runs}, {"steps", c.steps}, {"mean", c.mean}, {"variance", c.variance}});
  }
  return to_jsonl(rows);
}

// ---------------------------------------------------------------------------
// Manifests.

struct RunManifest {
  std::string command;
  Json config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string artifact_version;
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::map<std::string, std::string> outputs;  // path -> content hash
  std::map<std::string, double> timings;       // seconds
  std::vector<std::string> warnings;
};

inline Json to_json(const RunManifest& m) {
  return {{"command", m.command},
          {"config", m.config},
          {"config_hash", m.config_hash},
          {"seed", m.seed},
          {"artifact_version", m.artifact_version},
          {"inputs", m.inputs},
          {"outputs", m.outputs},
          {"timings", m.timings},
          {"warnings", m.warnings}};
}

inline RunManifest manifest_from_json(const Json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.artifact_version = j.at("artifact_version").get<std::string>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.timings = j.at("timings").get<std::map<std::string, double>>();
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed manifest: ") + e.what());
  }
}

/// True when the stored hash matches a recomputation over the stored config.
inline bool manifest_consistent(const RunManifest& m) { return hex64(fnv1a(m.config.dump())) == m.config_hash; }

}  // namespace pami
