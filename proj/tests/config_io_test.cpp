#include <gtest/gtest.h>

#include "pami/experiment.hpp"
#include "pami/io.hpp"
#include "support.hpp"

using namespace pami;

namespace {

ExperimentConfig tiny(std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.seed = seed;
  c.world.videos = 6;
  c.eval_videos = 6;
  c.data.samples = 30;
  c.suites = {10, 10};
  return c;
}

std::string key_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

}  // namespace

TEST(Config, SeedIsRequired) {
  EXPECT_EQ(key_of("{}"), "seed");
  EXPECT_EQ(key_of(R"({"train.beta": 0.5})"), "seed");
  EXPECT_NO_THROW(parse_config(R"({"seed": 4})"));
}

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse_config(R"({"seed": 4, "train.method": "vdpo", "train.beta": 0.5, "train.spec_types": ["shuffle"]})");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.train.method, Method::VDPO);
  EXPECT_EQ(c.train.beta, 0.5);
  EXPECT_EQ(c.train.spec_types, std::vector<SpecType>{SpecType::Shuffle});
  EXPECT_EQ(c.world.videos, 400);
  EXPECT_EQ(c.data.samples, 6000);
  EXPECT_EQ(c.train.n, 2);
  EXPECT_EQ(c.sft.epochs, 20);
  const auto d = parse_config(R"({"seed": 4, "train.specs": ["crop{ratio=0.1,anchor=top-right}", "reverse"]})");
  ASSERT_EQ(d.train.specs.size(), 2u);
  EXPECT_EQ(d.train.specs[1], AugmentationSpec{Reverse{}});
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(key_of(R"({"seed": 1, "train.betta": 0.5})"), "train.betta");
  EXPECT_EQ(key_of(R"({"seed": 1, "train.beta": "big"})"), "train.beta");
  EXPECT_EQ(key_of(R"({"seed": 1, "train.beta": 0})"), "train.beta");
  EXPECT_EQ(key_of(R"({"seed": 1, "sft.learning_rate": -1})"), "sft.learning_rate");
  EXPECT_EQ(key_of(R"({"seed": 1, "train.method": "ppo"})"), "train.method");
  EXPECT_EQ(key_of(R"({"seed": 1, "train.spec_types": ["blur"]})"), "train.spec_types");
  EXPECT_EQ(key_of(R"({"seed": 1, "train.subset": "dirty"})"), "train.subset");
  EXPECT_EQ(key_of(R"({"seed": -3})"), "seed");
  EXPECT_EQ(key_of(R"({"seed": 1, "world.videos": 2.5})"), "world.videos");
  EXPECT_THROW(parse_config("not json"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
}

TEST(Config, KeyOrderDoesNotChangeHash) {
  const auto a = parse_config(R"({"seed": 9, "train.beta": 0.5, "world.videos": 50, "train.method": "pami"})");
  const auto b = parse_config(R"({"train.method": "pami", "world.videos": 50, "seed": 9, "train.beta": 0.5})");
  EXPECT_EQ(canonical_config(a), canonical_config(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
  const auto c = parse_config(R"({"seed": 9, "train.beta": 0.25, "world.videos": 50, "train.method": "pami"})");
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Config, CanonicalFormRoundTrips) {
  auto c = tiny(12);
  c.train.strategy = WeightStrategy::Near;
  c.train.specs = {Combination{Crop{0.15, Corner::BottomLeft}, Rate{0.5}}};
  c.train.n = 1;
  c.subset = Subset::Clean;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(canonical_config(back), canonical_config(c));
  EXPECT_EQ(back.train.specs, c.train.specs);
}

TEST(Config, SubSeedsDiffer) {
  const auto c = tiny(5);
  EXPECT_NE(c.sft_config().seed, c.train_config().seed);
  EXPECT_EQ(c.train_config().seed, derive_seed(5, "train"));
}

TEST(Workspace, PrepareIsDeterministicAndDisjoint) {
  const auto a = prepare(tiny(3));
  const auto b = prepare(tiny(3));
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.train_library.videos, b.train_library.videos);
  EXPECT_EQ(a.eval_library.videos.front().id, kEvalVideoOffset);
  EXPECT_EQ(a.train.size(), 30u);
  EXPECT_EQ(a.suites.halluc.pairs.size(), 10u);
}

TEST(Workspace, SubsetSelection) {
  auto c = tiny(3);
  const auto ws = prepare(c);
  EXPECT_EQ(select_subset(c, ws.train).size(), ws.train.size());
  c.subset = Subset::Clean;
  const auto clean = select_subset(c, ws.train);
  for (const auto& ex : clean) EXPECT_EQ(ex.meta.kind, QuestionKind::Temporal);
  c.subset = Subset::Mixed;
  EXPECT_EQ(select_subset(c, ws.train).size(), clean.size());
}

TEST(Io, DatasetRoundTrip) {
  const auto ws = prepare(tiny(4));
  const auto text = dataset_jsonl(ws.train);
  const auto rows = parse_jsonl(text);
  EXPECT_EQ(rows.size(), ws.train.size());
  EXPECT_EQ(parse_dataset(rows), ws.train);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 30);
  EXPECT_THROW(parse_jsonl("{\"a\": 1}\n{broken\n"), InputError);
}

TEST(Io, LibraryRoundTripRebuildsFrames) {
  const auto ws = prepare(tiny(4));
  const auto back = parse_library(library_text(ws.eval_library));
  EXPECT_EQ(back.config.video_id_offset, kEvalVideoOffset);
  EXPECT_EQ(back.seed, ws.eval_library.seed);
  EXPECT_EQ(back.videos, ws.eval_library.videos);
  EXPECT_EQ(library_text(back), library_text(ws.eval_library));
  EXPECT_THROW(parse_library("{}"), InputError);
}

TEST(Io, SuiteRoundTrip) {
  const auto ws = prepare(tiny(4));
  for (const Suite* s : {&ws.suites.halluc, &ws.suites.general}) {
    const auto back = parse_suite(ws.eval_library, parse_jsonl(suite_jsonl(*s)), s->name);
    ASSERT_EQ(back.items.size(), s->items.size());
    EXPECT_EQ(back.pairs, s->pairs);
    for (std::size_t i = 0; i < back.items.size(); ++i) {
      EXPECT_EQ(back.items[i].clip, s->items[i].clip);
      EXPECT_EQ(back.items[i].example, s->items[i].example);
      EXPECT_EQ(back.items[i].features, s->items[i].features);
    }
  }
}

TEST(Io, PreferenceRoundTrip) {
  const auto ws = prepare(tiny(4));
  std::vector<PreferenceRecord> recs;
  for (std::size_t i = 0; i < 5; ++i) {
    PreferenceRecord r;
    r.example = ws.train[i];
    r.chosen = r.example.answer;
    r.rejected = {tok::kUnk};
    r.rejected_score = 1;
    r.source_spec = "dvideo";
    recs.push_back(r);
  }
  const auto back = parse_preferences(parse_jsonl(preference_jsonl(recs)));
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back[i].example, recs[i].example);
    EXPECT_EQ(back[i].rejected, recs[i].rejected);
    EXPECT_EQ(back[i].source_spec, "dvideo");
    EXPECT_EQ(back[i].rejected_score, 1);
  }
}

TEST(Io, ManifestRoundTripAndConsistency) {
  const auto c = tiny(8);
  RunManifest m;
  m.command = "gen";
  m.config = config_to_json(c);
  m.config_hash = config_hash(c);
  m.seed = c.seed;
  m.artifact_version = kArtifactVersion;
  m.outputs["train.jsonl"] = "abc";
  EXPECT_TRUE(manifest_consistent(m));
  const auto back = manifest_from_json(Json::parse(to_json(m).dump(2)));
  EXPECT_TRUE(manifest_consistent(back));
  EXPECT_EQ(back.outputs, m.outputs);
  m.config["train.beta"] = 7.0;
  EXPECT_FALSE(manifest_consistent(m));
  EXPECT_THROW(manifest_from_json(Json::object()), InputError);
}

TEST(Io, MetricsAndSweepFormats) {
  const Metrics m{0.5, 0.75, 0.25};
  EXPECT_EQ(metrics_csv(m), "halluc_pair_acc,halluc_item_acc,general_acc\n0.5,0.75,0.25\n");
  const auto j = Json::parse(metrics_jsonl(m));
  EXPECT_EQ(j.at("general_acc").get<double>(), 0.25);
  SweepReport r;
  r.baseline.spec = "baseline";
  r.baseline.group = "sft";
  SweepRow ok;
  ok.spec = "shuffle";
  ok.group = "high";
  ok.halluc_delta = 0.125;
  SweepRow bad = ok;
  bad.spec = "reverse";
  bad.failed = true;
  r.rows = {ok, bad};
  const auto csv = sweep_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "spec,group,halluc_delta,general_delta,final_loss_mean,final_loss_var,seed");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(csv.find("shuffle,high,0.125,0,0,0,0\n"), std::string::npos);
}

TEST(Io, StepsJsonlOneLinePerStep) {
  RunLog log;
  for (int i = 0; i < 4; ++i) {
    StepRecord s;
    s.step = i;
    s.loss = 0.5;
    s.alpha = {0.25, 0.75};
    s.labels = {RejectLabel::TrueRejected, RejectLabel::FalseRejected};
    log.append(s);
  }
  const auto rows = parse_jsonl(steps_jsonl(log));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[2].at("step").get<int>(), 2);
  EXPECT_EQ(rows[0].at("labels")[1].get<std::string>(), "false_rejected");
  EXPECT_EQ(rows[0].at("alpha")[1].get<double>(), 0.75);
}
