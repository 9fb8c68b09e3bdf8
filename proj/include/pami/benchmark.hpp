#pragma once

// Evaluation suites (paired hallucination analog and i.i.d. general QA),
// Clean/Mixed curation, the offline DPO preference builder with a
// token-overlap judge, and the augmentation sweep harness.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pami/augmentation.hpp"
#include "pami/core.hpp"
#include "pami/model.hpp"
#include "pami/training.hpp"
#include "pami/video_world.hpp"

namespace pami {

struct SuiteItem {
  QAExample example;
  VideoClip clip;
  FeatureTensor features;
  int pair = -1;  // pair index for Halluc items
};

struct Suite {
  std::string name;  // "halluc" or "general"
  std::vector<SuiteItem> items;
  std::vector<std::pair<int, int>> pairs;  // item indices, Halluc only

  bool paired() const { return !pairs.empty(); }
};

struct SuiteSizes {
  int halluc_pairs = 400;
  int general = 400;
};

struct Suites {
  Suite halluc;
  Suite general;
};

namespace detail {

inline SuiteItem make_item(const VideoLibrary& lib, QAExample ex, VideoClip clip, int pair = -1) {
  SuiteItem it;
  it.features = render_features(clip, lib.config);
  it.example = std::move(ex);
  it.clip = std::move(clip);
  it.pair = pair;
  return it;
}

/// Second member of a presence pair: a natural clip from the same video whose
/// presence answer is flipped.
inline std::optional<VideoClip> flipped_presence_clip(const VideoLibrary& lib, const QAExample& ex, Rng& rng) {
  const Question q = parse_prompt(ex.prompt);
  const Video& v = lib.video(ex.video_id);
  const int F = ex.segment.size();
  std::vector<int> starts;
  for (int s = 0; s + F <= v.length; ++s) {
    if (Segment{s, s + F}.overlaps(ex.segment)) continue;
    const VideoClip c = slice_clip(lib, ex.video_id, s, F);
    const auto truth = answer_on_frames(q, c.frames);
    if (truth && *truth != ex.answer) starts.push_back(s);
  }
  if (starts.empty()) return std::nullopt;
  return slice_clip(lib, ex.video_id, starts[rng.below(starts.size())], F);
}

/// Second member of an order pair: a frame permutation of the same clip whose
/// order answer is flipped.
inline std::optional<VideoClip> flipped_order_clip(const VideoLibrary& lib, const QAExample& ex,
                                                   const VideoClip& clip, Rng& rng) {
  const Question q = parse_prompt(ex.prompt);
  for (int attempt = 0; attempt < 64; ++attempt) {
    VideoClip c = apply_augmentation(Shuffle{}, clip, lib, rng);
    const auto truth = answer_on_frames(q, c.frames);
    if (truth && *truth != ex.answer) return c;
  }
  return std::nullopt;
}

}  // namespace detail

/// Halluc pairs share a prompt and differ in the clip: Order pairs use a
/// frame permutation with the flipped answer, Presence pairs a disjoint segment without (or with) the
/// symbol. Every pair holds one "yes" and one "no" item. General items are
/// i.i.d. binary questions with alternating answers.
inline Suites build_suites(const VideoLibrary& lib, std::uint64_t seed, const SuiteSizes& sizes = {}) {
  if (sizes.halluc_pairs < 0 || sizes.general < 0) throw ConfigError("suite sizes must be >= 0", "suite_sizes");
  Suites out;
  out.halluc.name = "halluc";
  out.general.name = "general";
  const int F = lib.config.frames;
  Rng rng(derive_seed(seed, "suites"));
  const int max_attempts = 200 * (sizes.halluc_pairs + sizes.general + 10);
  int attempts = 0;
  auto draw_clip = [&]() {
    if (++attempts > max_attempts) throw GenerationError("evaluation library cannot supply enough suite items");
    const auto& v = lib.videos[rng.below(lib.videos.size())];
    const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.length - F + 1)));
    return slice_clip(lib, v.id, start, F);
  };

  while (static_cast<int>(out.halluc.pairs.size()) < sizes.halluc_pairs) {
    const int p = static_cast<int>(out.halluc.pairs.size());
    const QuestionKind kind = p % 2 == 0 ? QuestionKind::Temporal : QuestionKind::Static;
    VideoClip clip = draw_clip();
    QaOptions opts;
    opts.binary_answer = true;
    QAExample ex;
    try {
      ex = generate_qa(lib, clip, kind, rng, opts);
    } catch (const GenerationError&) {
      continue;
    }
    std::optional<VideoClip> other;
    if (kind == QuestionKind::Temporal) {
      other = detail::flipped_order_clip(lib, ex, clip, rng);
    } else {
      other = detail::flipped_presence_clip(lib, ex, rng);
    }
    if (!other) continue;
    const auto truth = answer_on_frames(parse_prompt(ex.prompt), other->frames);
    if (!truth || *truth == ex.answer) continue;
    QAExample ex2 = ex;
    ex2.segment = other->segment;
    ex2.answer = *truth;
    ex2.meta.truth = render_tokens(*truth);
    const int i0 = static_cast<int>(out.halluc.items.size());
    out.halluc.items.push_back(detail::make_item(lib, std::move(ex), std::move(clip), p));
    out.halluc.items.push_back(detail::make_item(lib, std::move(ex2), std::move(*other), p));
    out.halluc.pairs.emplace_back(i0, i0 + 1);
  }

  while (static_cast<int>(out.general.items.size()) < sizes.general) {
    const int i = static_cast<int>(out.general.items.size());
    const QuestionKind kind = (i / 2) % 2 == 0 ? QuestionKind::Temporal : QuestionKind::Static;
    VideoClip clip = draw_clip();
    QaOptions opts;
    opts.binary_answer = i % 2 == 0;
    try {
      QAExample ex = generate_qa(lib, clip, kind, rng, opts);
      out.general.items.push_back(detail::make_item(lib, std::move(ex), std::move(clip)));
    } catch (const GenerationError&) {
    }
  }
  return out;
}

struct EvalResult {
  double item_acc = 0.0;
  double pair_acc = 0.0;
  std::size_t items = 0;
  std::size_t pairs = 0;

  /// Pair accuracy for paired suites, item accuracy otherwise.
  double accuracy() const { return pairs > 0 ? pair_acc : item_acc; }
};

/// Scores an answer sheet (one prediction per item, in item order).
inline EvalResult score_answers(const Suite& suite, const std::vector<TokenSeq>& predictions) {
  if (predictions.size() != suite.items.size()) throw InputError("answer sheet size does not match the suite");
  EvalResult r;
  r.items = suite.items.size();
  r.pairs = suite.pairs.size();
  std::vector<char> ok(suite.items.size(), 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < suite.items.size(); ++i) {
    ok[i] = predictions[i] == suite.items[i].example.answer ? 1 : 0;
    hits += static_cast<std::size_t>(ok[i]);
  }
  if (r.items > 0) r.item_acc = static_cast<double>(hits) / static_cast<double>(r.items);
  std::size_t pair_hits = 0;
  for (const auto& [a, b] : suite.pairs) {
    if (ok[static_cast<std::size_t>(a)] && ok[static_cast<std::size_t>(b)]) ++pair_hits;
  }
  if (r.pairs > 0) r.pair_acc = static_cast<double>(pair_hits) / static_cast<double>(r.pairs);
  return r;
}

inline std::vector<TokenSeq> predict(const ModelParams& params, const Suite& suite) {
  std::vector<TokenSeq> out;
  out.reserve(suite.items.size());
  for (const auto& it : suite.items) {
    out.push_back(greedy_decode(params, it.example.prompt, it.features, static_cast<int>(it.example.answer.size())));
  }
  return out;
}

/// Greedy argmax decoding with exact-match scoring; pair-scored for Halluc.
inline EvalResult evaluate(const ModelParams& params, const Suite& suite) {
  return score_answers(suite, predict(params, suite));
}

/// Exact-match accuracy on training examples (natural clips).
inline double dataset_accuracy(const ModelParams& params, const VideoLibrary& lib,
                               const std::vector<QAExample>& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) {
    const auto f = render_features(clip_of(lib, ex), lib.config);
    if (greedy_decode(params, ex.prompt, f, static_cast<int>(ex.answer.size())) == ex.answer) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Clean / Mixed curation.

struct Curated {
  std::vector<QAExample> clean;  // Temporal items only
  std::vector<QAExample> mixed;  // size-matched uniform draw from the full set
};

inline Curated curate_clean(const std::vector<QAExample>& data, std::uint64_t seed) {
  Curated c;
  for (const auto& ex : data) {
    if (ex.meta.kind == QuestionKind::Temporal) c.clean.push_back(ex);
  }
  if (c.clean.empty()) throw InputError("dataset has no Temporal items to curate");
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, "mixed"));
  rng.shuffle(idx);
  idx.resize(c.clean.size());
  std::sort(idx.begin(), idx.end());
  for (std::size_t i : idx) c.mixed.push_back(data[i]);
  return c;
}

// ---------------------------------------------------------------------------
// Offline preference data.

/// 5 for an exact match, otherwise 1 + 4 * overlap rounded and capped at 4,
/// where overlap is the multiset token intersection over the longer length.
inline int judge_score(const TokenSeq& candidate, const TokenSeq& truth) {
  if (candidate == truth) return 5;
  const std::size_t denom = std::max(candidate.size(), truth.size());
  if (denom == 0) return 1;
  std::vector<Token> rest = truth;
  std::size_t common = 0;
  for (Token t : candidate) {
    auto it = std::find(rest.begin(), rest.end(), t);
    if (it != rest.end()) {
      ++common;
      rest.erase(it);
    }
  }
  const double f = static_cast<double>(common) / static_cast<double>(denom);
  const int s = 1 + static_cast<int>(std::floor(4.0 * f + 0.5));
  return std::min(4, s);
}

struct PreferenceOptions {
  std::vector<SpecType> types{SpecType::DVideo, SpecType::DClip, SpecType::Shuffle, SpecType::Reverse};
  std::size_t candidates = 3;
  int chosen_threshold = 4;    // chosen must score above this
  int rejected_threshold = 3;  // rejected must score below this
};

/// Decodes the policy on augmented clips, scores the outputs against the
/// ground truth, and keeps the lowest-scoring candidate below the rejection
/// threshold. The chosen response is the ground truth.
inline std::vector<PreferenceRecord> construct_offline_preference(const VideoLibrary& lib,
                                                                  const std::vector<QAExample>& data,
                                                                  const ModelParams& policy, std::uint64_t seed,
                                                                  const PreferenceOptions& opts = {}) {
  std::vector<PreferenceRecord> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    if (judge_score(ex.answer, ex.answer) <= opts.chosen_threshold) continue;
    Rng rng(derive_seed(seed, "prefdata", static_cast<std::uint64_t>(i)));
    CandidateSet set;
    try {
      set = build_candidate_set(clip_of(lib, ex), lib, opts.types, std::min(opts.candidates, opts.types.size()), rng);
    } catch (const AugmentationUnavailable&) {
      continue;
    }
    std::optional<PreferenceRecord> best;
    for (const auto& e : set.entries) {
      const auto f = render_features(e.clip, lib.config);
      TokenSeq cand = greedy_decode(policy, ex.prompt, f, static_cast<int>(ex.answer.size()));
      const int s = judge_score(cand, ex.answer);
      if (s >= opts.rejected_threshold) continue;
      if (!best || s < best->rejected_score) {
        PreferenceRecord r;
        r.example = ex;
        r.chosen = ex.answer;
        r.chosen_score = 5;
        r.rejected = std::move(cand);
        r.rejected_score = s;
        r.source_spec = to_text(e.spec);
        best = std::move(r);
      }
    }
    if (best) out.push_back(std::move(*best));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation sweep.

struct SweepRow {
  std::string spec;
  std::string group;
  double halluc_delta = 0.0;
  double general_delta = 0.0;
  double final_loss_mean = 0.0;
  double final_loss_var = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
};

struct SweepReport {
  SweepRow baseline;
  double baseline_halluc = 0.0;
  double baseline_general = 0.0;
  std::vector<SweepRow> rows;
  std::vector<RunLog> logs;  // one per completed row, same order as the completed rows
  std::map<std::string, CurveStats> curves;  // grouped by similarity class
};

/// Mean and population variance of the losses over the final half of a run.
inline HalfSummary final_half(const RunLog& log) {
  HalfSummary h;
  const std::size_t n = log.steps.size();
  if (n == 0) return h;
  const std::size_t from = n / 2;
  const double k = static_cast<double>(n - from);
  for (std::size_t i = from; i < n; ++i) h.mean += log.steps[i].loss;
  h.mean /= k;
  for (std::size_t i = from; i < n; ++i) h.variance += (log.steps[i].loss - h.mean) * (log.steps[i].loss - h.mean);
  h.variance /= k;
  return h;
}

/// One VDPO run per augmentation type from a shared SFT pair; only the
/// augmentation varies between runs.
inline SweepReport sweep_augmentations(const VideoLibrary& lib, const std::vector<QAExample>& train,
                                       const Suites& suites, const PolicyPair& sft, TrainingConfig base,
                                       const std::vector<SpecType>& types = all_spec_types()) {
  base.method = Method::VDPO;
  base.specs.clear();
  SweepReport rep;
  rep.baseline_halluc = evaluate(sft.policy, suites.halluc).accuracy();
  rep.baseline_general = evaluate(sft.policy, suites.general).accuracy();
  rep.baseline.spec = "baseline";
  rep.baseline.group = "sft";
  rep.baseline.seed = base.seed;
  std::vector<std::string> groups;
  for (SpecType t : types) {
    SweepRow row;
    row.spec = spec_type_name(t);
    row.group = similarity_name(similarity_class(t));
    row.seed = base.seed;
    TrainingConfig cfg = base;
    cfg.spec_types = {t};
    try {
      auto res = run_preference(lib, train, sft, cfg);
      row.halluc_delta = evaluate(res.pair.policy, suites.halluc).accuracy() - rep.baseline_halluc;
      row.general_delta = evaluate(res.pair.policy, suites.general).accuracy() - rep.baseline_general;
      const auto h = final_half(res.log);
      row.final_loss_mean = h.mean;
      row.final_loss_var = h.variance;
      groups.push_back(row.group);
      rep.logs.push_back(std::move(res.log));
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
    }
    rep.rows.push_back(std::move(row));
  }
  if (!rep.logs.empty()) rep.curves = loss_stats(rep.logs, groups);
  return rep;
}

}  // namespace pami
