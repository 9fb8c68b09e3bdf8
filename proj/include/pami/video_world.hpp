#pragma once

// Synthetic video world: scripted symbol videos, clip slicing, pooled
// feature rendering, and question generation with construction-time truth.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "pami/core.hpp"
#include "pami/vocabulary.hpp"

namespace pami {

struct WorldConfig {
  int videos = 40;
  int length = 64;  // T
  int height = 8;
  int width = 8;
  int symbols = 6;
  int attributes = 4;
  int frames = 8;  // F, frames per clip
  double noise_scale = 0.05;
  // Event chain shape.
  int min_duration = 2;
  int max_duration = 5;
  int max_gap = 2;
  double order_bias = 0.75;      // P(next chain symbol = previous + 1 mod S)
  double attribute_bias = 0.75;  // P(attribute = symbol mod A)
  double overlay_prob = 0.3;     // P(concurrent placement alongside a chain event)
  int video_id_offset = 0;

  void validate() const {
    if (videos < 1) throw ConfigError("world.videos must be >= 1", "videos");
    if (frames < 2) throw ConfigError("world.frames must be >= 2", "frames");
    if (length < 4 * frames) {
      throw ConfigError("world.length must be >= 4 * frames", "length");
    }
    if (symbols < 2) throw ConfigError("world.symbols must be >= 2", "symbols");
    if (symbols > tok::kMaxSymbols) {
      throw ConfigError("world.symbols exceeds vocabulary capacity", "symbols");
    }
    if (attributes < 1 || attributes > kMaxAttributes) {
      throw ConfigError("world.attributes must be in [1, 4]", "attributes");
    }
    if (height < 2 || width < 2 || height % 2 != 0 || width % 2 != 0) {
      throw ConfigError("world.height/width must be even and >= 2", "height");
    }
    if (noise_scale < 0.0) throw ConfigError("world.noise_scale must be >= 0", "noise_scale");
    if (min_duration < 1 || max_duration < min_duration) {
      throw ConfigError("world durations must satisfy 1 <= min <= max", "min_duration");
    }
    if (max_gap < 0) throw ConfigError("world.max_gap must be >= 0", "max_gap");
  }

  int channels() const { return symbols * attributes + 1; }
  int feature_dim() const { return (height / 2) * (width / 2) * channels(); }
};

struct Cell {
  int symbol = -1;
  int attribute = 0;
  bool empty() const { return symbol < 0; }
  bool operator==(const Cell&) const = default;
};

struct Frame {
  int height = 0;
  int width = 0;
  std::vector<Cell> cells;    // row-major H*W
  std::vector<double> noise;  // row-major H*W, each in [0, noise_scale]

  Cell& at(int r, int c) { return cells[static_cast<std::size_t>(r * width + c)]; }
  const Cell& at(int r, int c) const { return cells[static_cast<std::size_t>(r * width + c)]; }
  bool contains(int symbol) const {
    return std::any_of(cells.begin(), cells.end(), [&](const Cell& c) { return c.symbol == symbol; });
  }
  bool operator==(const Frame&) const = default;
};

struct Placement {
  int symbol = 0;
  int attribute = 0;
  int start = 0;  // [start, end)
  int end = 0;
  int row = 0;
  int col = 0;
  bool operator==(const Placement&) const = default;
};

struct EventScript {
  std::vector<Placement> placements;
  bool operator==(const EventScript&) const = default;
};

struct Video {
  int id = 0;
  int length = 0;
  EventScript script;
  std::vector<Frame> frames;
  bool operator==(const Video&) const = default;
};

struct VideoLibrary {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::vector<Video> videos;

  const Video& video(int id) const {
    const int idx = id - config.video_id_offset;
    if (idx < 0 || idx >= static_cast<int>(videos.size())) {
      throw BoundsError("unknown video id " + std::to_string(id));
    }
    return videos[static_cast<std::size_t>(idx)];
  }
};

struct Segment {
  int start = 0;
  int end = 0;
  int size() const { return end - start; }
  bool overlaps(const Segment& o) const { return start < o.end && o.start < end; }
  bool operator==(const Segment&) const = default;
};

/// Rectangle of zeroed cells applied to every frame of a clip.
struct CropRegion {
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;
  bool covers(int r, int c) const {
    return r >= row0 && r < row0 + rows && c >= col0 && c < col0 + cols;
  }
  bool operator==(const CropRegion&) const = default;
};

struct VideoClip {
  int source_video_id = 0;
  Segment segment;
  std::vector<int> source_index;  // absolute source frame for each clip frame
  std::vector<int> frame_order;   // composed permutation of temporal transforms
  std::vector<CropRegion> crops;
  std::vector<Frame> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
  bool operator==(const VideoClip&) const = default;
};

/// F x D pooled features, row-major.
struct FeatureTensor {
  int frames = 0;
  int dim = 0;
  std::vector<double> values;

  std::span<const double> row(int t) const {
    return {values.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)};
  }
  bool operator==(const FeatureTensor&) const = default;
};

enum class QuestionKind { Temporal, Static };
enum class QuestionType { Order, Presence, Attribute };

inline QuestionKind kind_of(QuestionType t) {
  return t == QuestionType::Order ? QuestionKind::Temporal : QuestionKind::Static;
}

/// Parsed question. Order: "does a appear before b ?"; Presence: "is a
/// present ?"; Attribute: "what attribute has a ?".
struct Question {
  QuestionType type = QuestionType::Presence;
  int a = 0;
  int b = -1;
  bool operator==(const Question&) const = default;
};

struct QAMeta {
  QuestionKind kind = QuestionKind::Static;
  QuestionType type = QuestionType::Presence;
  std::vector<int> symbols;
  std::string truth;
  bool operator==(const QAMeta&) const = default;
};

struct QAExample {
  int video_id = 0;
  Segment segment;
  TokenSeq prompt;
  TokenSeq answer;
  QAMeta meta;
  bool operator==(const QAExample&) const = default;
};

struct QaOptions {
  double attribute_fraction = 0.2;  // share of Static questions asking for attributes
  double presence_yes = 0.5;
  int min_order_frames = 2;  // each symbol of an Order question must fill this many frames
  std::optional<bool> binary_answer;  // force yes/no for Order and Presence
};

// ---------------------------------------------------------------------------
// Question rendering and parsing.

inline TokenSeq render_prompt(const Question& q) {
  switch (q.type) {
    case QuestionType::Order:
      return {tok::kDoes, symbol_token(q.a), tok::kAppear, tok::kBefore, symbol_token(q.b),
              tok::kQuestion};
    case QuestionType::Presence:
      return {tok::kIs, symbol_token(q.a), tok::kPresent, tok::kQuestion};
    case QuestionType::Attribute:
      return {tok::kWhat, tok::kAttribute, tok::kHas, symbol_token(q.a), tok::kQuestion};
  }
  throw InputError("unknown question type");
}

inline Question parse_prompt(const TokenSeq& p) {
  if (p.size() == 6 && p[0] == tok::kDoes && is_symbol_token(p[1]) && p[2] == tok::kAppear &&
      p[3] == tok::kBefore && is_symbol_token(p[4]) && p[5] == tok::kQuestion) {
    return {QuestionType::Order, token_symbol(p[1]), token_symbol(p[4])};
  }
  if (p.size() == 4 && p[0] == tok::kIs && is_symbol_token(p[1]) && p[2] == tok::kPresent &&
      p[3] == tok::kQuestion) {
    return {QuestionType::Presence, token_symbol(p[1]), -1};
  }
  if (p.size() == 5 && p[0] == tok::kWhat && p[1] == tok::kAttribute && p[2] == tok::kHas &&
      is_symbol_token(p[3]) && p[4] == tok::kQuestion) {
    return {QuestionType::Attribute, token_symbol(p[3]), -1};
  }
  throw InputError("prompt does not match any question template: " + render_tokens(p));
}

/// Ground truth of a question on an ordered frame list; nullopt when the
/// question has no defined answer (symbol absent, interleaved order,
/// ambiguous attribute).
inline std::optional<TokenSeq> answer_on_frames(const Question& q, const std::vector<Frame>& frames) {
  auto frames_with = [&](int symbol) {
    std::vector<int> idx;
    for (int t = 0; t < static_cast<int>(frames.size()); ++t) {
      if (frames[static_cast<std::size_t>(t)].contains(symbol)) idx.push_back(t);
    }
    return idx;
  };
  switch (q.type) {
    case QuestionType::Presence: {
      const bool present = std::any_of(frames.begin(), frames.end(),
                                       [&](const Frame& f) { return f.contains(q.a); });
      return TokenSeq{present ? tok::kYes : tok::kNo};
    }
    case QuestionType::Attribute: {
      int attr = -1;
      for (const auto& f : frames) {
        for (const auto& c : f.cells) {
          if (c.symbol != q.a) continue;
          if (attr >= 0 && attr != c.attribute) return std::nullopt;
          attr = c.attribute;
        }
      }
      if (attr < 0) return std::nullopt;
      auto [color, size] = attribute_tokens(attr);
      return TokenSeq{color, size};
    }
    case QuestionType::Order: {
      const auto pa = frames_with(q.a);
      const auto pb = frames_with(q.b);
      if (pa.empty() || pb.empty()) return std::nullopt;
      if (pa.back() < pb.front()) return TokenSeq{tok::kYes};
      if (pb.back() < pa.front()) return TokenSeq{tok::kNo};
      return std::nullopt;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Library generation.

namespace detail {

inline Frame blank_frame(const WorldConfig& cfg) {
  Frame f;
  f.height = cfg.height;
  f.width = cfg.width;
  f.cells.assign(static_cast<std::size_t>(cfg.height * cfg.width), Cell{});
  f.noise.assign(static_cast<std::size_t>(cfg.height * cfg.width), 0.0);
  return f;
}

inline std::vector<Frame> render_script(const WorldConfig& cfg, const EventScript& script,
                                        int length, std::uint64_t noise_seed) {
  std::vector<Frame> frames(static_cast<std::size_t>(length), blank_frame(cfg));
  Rng noise(noise_seed);
  for (auto& f : frames) {
    for (double& n : f.noise) n = noise.uniform() * cfg.noise_scale;
  }
  for (const auto& p : script.placements) {
    for (int t = p.start; t < p.end; ++t) {
      frames[static_cast<std::size_t>(t)].at(p.row, p.col) = Cell{p.symbol, p.attribute};
    }
  }
  return frames;
}

inline bool ranges_overlap(int s0, int e0, int s1, int e1) { return s0 < e1 && s1 < e0; }

// At least two symbols with non-simultaneous ranges, and at least one symbol
// absent from some F-length segment.
inline bool well_posed(const WorldConfig& cfg, const EventScript& script, int length) {
  bool ordered = false;
  const auto& ps = script.placements;
  for (std::size_t i = 0; i < ps.size() && !ordered; ++i) {
    for (std::size_t j = 0; j < ps.size(); ++j) {
      if (ps[i].symbol != ps[j].symbol && ps[i].end <= ps[j].start) {
        ordered = true;
        break;
      }
    }
  }
  if (!ordered) return false;
  for (int s = 0; s + cfg.frames <= length; ++s) {
    for (int sym = 0; sym < cfg.symbols; ++sym) {
      const bool hit = std::any_of(ps.begin(), ps.end(), [&](const Placement& p) {
        return p.symbol == sym && ranges_overlap(p.start, p.end, s, s + cfg.frames);
      });
      if (!hit) return true;
    }
  }
  return false;
}

inline bool cell_free(const std::vector<Placement>& ps, int start, int end, int row, int col) {
  return std::none_of(ps.begin(), ps.end(), [&](const Placement& p) {
    return p.row == row && p.col == col && ranges_overlap(p.start, p.end, start, end);
  });
}

inline bool symbol_free(const std::vector<Placement>& ps, int symbol, int start, int end) {
  return std::none_of(ps.begin(), ps.end(), [&](const Placement& p) {
    return p.symbol == symbol && ranges_overlap(p.start, p.end, start, end);
  });
}

inline bool place(const WorldConfig& cfg, Rng& rng, std::vector<Placement>& ps, int symbol,
                  int start, int end) {
  if (!symbol_free(ps, symbol, start, end)) return false;
  const int attribute = rng.bernoulli(cfg.attribute_bias)
                            ? symbol % cfg.attributes
                            : static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.attributes)));
  for (int tries = 0; tries < 64; ++tries) {
    const int row = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.height)));
    const int col = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.width)));
    if (cell_free(ps, start, end, row, col)) {
      ps.push_back({symbol, attribute, start, end, row, col});
      return true;
    }
  }
  return false;
}

inline EventScript generate_script(const WorldConfig& cfg, Rng& rng) {
  std::vector<Placement> ps;
  const int S = cfg.symbols;
  int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_gap + 1)));
  int prev = static_cast<int>(rng.below(static_cast<std::uint64_t>(S)));
  while (t < cfg.length) {
    int sym = (prev + 1) % S;
    if (!rng.bernoulli(cfg.order_bias)) {
      sym = static_cast<int>(rng.below(static_cast<std::uint64_t>(S - 1)));
      if (sym >= prev) ++sym;
    }
    const int end = std::min(t + rng.range(cfg.min_duration, cfg.max_duration), cfg.length);
    place(cfg, rng, ps, sym, t, end);
    if (rng.bernoulli(cfg.overlay_prob)) {
      int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(S - 1)));
      if (other >= sym) ++other;
      const int os = std::max(0, t + rng.range(-1, 1));
      const int oe = std::min(os + rng.range(cfg.min_duration, cfg.max_duration), cfg.length);
      if (oe > os) place(cfg, rng, ps, other, os, oe);
    }
    t = end + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_gap + 1)));
    prev = sym;
  }
  std::sort(ps.begin(), ps.end(), [](const Placement& a, const Placement& b) {
    return std::tie(a.start, a.symbol) < std::tie(b.start, b.symbol);
  });
  return EventScript{std::move(ps)};
}

}  // namespace detail

inline std::uint64_t noise_seed(std::uint64_t library_seed, int video_id) {
  return derive_seed(library_seed, "noise", static_cast<std::uint64_t>(video_id));
}

/// Rebuilds a video's frames from its script. Used by generation and by
/// library deserialization.
inline Video build_video(const WorldConfig& cfg, std::uint64_t library_seed, int id,
                         EventScript script) {
  Video v;
  v.id = id;
  v.length = cfg.length;
  v.frames = detail::render_script(cfg, script, cfg.length, noise_seed(library_seed, id));
  v.script = std::move(script);
  return v;
}

inline VideoLibrary generate_library(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  VideoLibrary lib;
  lib.config = config;
  lib.seed = seed;
  lib.videos.reserve(static_cast<std::size_t>(config.videos));
  for (int i = 0; i < config.videos; ++i) {
    const int id = config.video_id_offset + i;
    Rng rng(derive_seed(seed, "script", static_cast<std::uint64_t>(id)));
    EventScript script;
    int attempts = 0;
    do {
      if (++attempts > 1000) {
        throw ConfigError("could not generate a well-posed script; check world parameters");
      }
      script = detail::generate_script(config, rng);
    } while (!detail::well_posed(config, script, config.length));
    lib.videos.push_back(build_video(config, seed, id, std::move(script)));
  }
  return lib;
}

// ---------------------------------------------------------------------------
// Clips and features.

/// Re-renders clip frames from source indices and crop regions.
inline void materialize(const VideoLibrary& lib, VideoClip& clip) {
  const Video& v = lib.video(clip.source_video_id);
  clip.frames.clear();
  clip.frames.reserve(clip.source_index.size());
  for (int idx : clip.source_index) {
    if (idx < 0 || idx >= v.length) throw BoundsError("clip frame index outside source video");
    Frame f = v.frames[static_cast<std::size_t>(idx)];
    for (const auto& crop : clip.crops) {
      for (int r = 0; r < f.height; ++r) {
        for (int c = 0; c < f.width; ++c) {
          if (crop.covers(r, c)) {
            f.at(r, c) = Cell{};
            f.noise[static_cast<std::size_t>(r * f.width + c)] = 0.0;
          }
        }
      }
    }
    clip.frames.push_back(std::move(f));
  }
}

inline VideoClip slice_clip(const VideoLibrary& lib, int video_id, int start, int f) {
  const Video& v = lib.video(video_id);
  if (start < 0 || f < 1 || start + f > v.length) {
    throw BoundsError("segment [" + std::to_string(start) + ", " + std::to_string(start + f) +
                      ") outside video of length " + std::to_string(v.length));
  }
  VideoClip clip;
  clip.source_video_id = video_id;
  clip.segment = {start, start + f};
  for (int i = 0; i < f; ++i) {
    clip.source_index.push_back(start + i);
    clip.frame_order.push_back(i);
  }
  materialize(lib, clip);
  return clip;
}

inline VideoClip clip_of(const VideoLibrary& lib, const QAExample& ex) {
  return slice_clip(lib, ex.video_id, ex.segment.start, ex.segment.size());
}

/// Per frame: one plane per (symbol, attribute) glyph plus a noise plane,
/// each average-pooled over non-overlapping 2x2 windows and flattened
/// channel-major.
inline FeatureTensor render_features(const VideoClip& clip, const WorldConfig& cfg) {
  const int ph = cfg.height / 2;
  const int pw = cfg.width / 2;
  const int per_channel = ph * pw;
  const int noise_channel = cfg.symbols * cfg.attributes;
  FeatureTensor out;
  out.frames = clip.frame_count();
  out.dim = cfg.feature_dim();
  out.values.assign(static_cast<std::size_t>(out.frames) * out.dim, 0.0);
  for (int t = 0; t < out.frames; ++t) {
    const Frame& f = clip.frames[static_cast<std::size_t>(t)];
    double* row = out.values.data() + static_cast<std::size_t>(t) * out.dim;
    for (int r = 0; r < f.height; ++r) {
      for (int c = 0; c < f.width; ++c) {
        const int pooled = (r / 2) * pw + (c / 2);
        const Cell& cell = f.at(r, c);
        if (!cell.empty()) {
          row[(cell.symbol * cfg.attributes + cell.attribute) * per_channel + pooled] += 0.25;
        }
        row[noise_channel * per_channel + pooled] +=
            0.25 * f.noise[static_cast<std::size_t>(r * f.width + c)];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Question generation.

inline QAExample make_example(const VideoClip& clip, const Question& q, TokenSeq answer) {
  QAExample ex;
  ex.video_id = clip.source_video_id;
  ex.segment = clip.segment;
  ex.prompt = render_prompt(q);
  ex.meta.kind = kind_of(q.type);
  ex.meta.type = q.type;
  ex.meta.symbols = q.type == QuestionType::Order ? std::vector<int>{q.a, q.b} : std::vector<int>{q.a};
  ex.meta.truth = render_tokens(answer);
  ex.answer = std::move(answer);
  return ex;
}

inline QAExample generate_qa(const VideoLibrary& lib, const VideoClip& clip, QuestionKind kind,
                             Rng& rng, const QaOptions& opts = {}) {
  const int S = lib.config.symbols;
  std::vector<int> count(static_cast<std::size_t>(S), 0);
  for (const auto& f : clip.frames) {
    for (int s = 0; s < S; ++s) count[static_cast<std::size_t>(s)] += f.contains(s) ? 1 : 0;
  }
  if (kind == QuestionKind::Temporal) {
    std::vector<Question> pairs;
    for (int a = 0; a < S; ++a) {
      for (int b = a + 1; b < S; ++b) {
        if (count[static_cast<std::size_t>(a)] < opts.min_order_frames ||
            count[static_cast<std::size_t>(b)] < opts.min_order_frames) {
          continue;
        }
        Question q{QuestionType::Order, a, b};
        if (answer_on_frames(q, clip.frames)) pairs.push_back(q);
      }
    }
    if (pairs.empty()) throw GenerationError("clip has no well-posed order question");
    Question q = pairs[rng.below(pairs.size())];
    const bool a_first = *answer_on_frames(q, clip.frames) == TokenSeq{tok::kYes};
    const bool want_yes = opts.binary_answer.value_or(rng.bernoulli(0.5));
    if (a_first != want_yes) std::swap(q.a, q.b);
    auto ans = answer_on_frames(q, clip.frames);
    return make_example(clip, q, *ans);
  }

  std::vector<int> present;
  std::vector<int> absent;
  for (int s = 0; s < S; ++s) (count[static_cast<std::size_t>(s)] > 0 ? present : absent).push_back(s);
  if (!opts.binary_answer && rng.bernoulli(opts.attribute_fraction)) {
    std::vector<int> unique_attr;
    for (int s : present) {
      if (answer_on_frames({QuestionType::Attribute, s, -1}, clip.frames)) unique_attr.push_back(s);
    }
    if (unique_attr.empty()) throw GenerationError("clip has no symbol with a unique attribute");
    Question q{QuestionType::Attribute, unique_attr[rng.below(unique_attr.size())], -1};
    return make_example(clip, q, *answer_on_frames(q, clip.frames));
  }
  const bool want_yes = opts.binary_answer.value_or(rng.bernoulli(opts.presence_yes));
  const auto& pool = want_yes ? present : absent;
  if (pool.empty()) throw GenerationError("clip has no symbol for the requested presence answer");
  Question q{QuestionType::Presence, pool[rng.below(pool.size())], -1};
  return make_example(clip, q, *answer_on_frames(q, clip.frames));
}

struct DatasetConfig {
  int samples = 1000;
  double temporal_fraction = 0.5;
  QaOptions qa;
};

/// Draws examples from random (video, segment) pairs, resampling until each
/// requested kind is well-posed.
inline std::vector<QAExample> generate_dataset(const VideoLibrary& lib, const DatasetConfig& cfg,
                                               std::uint64_t seed) {
  if (cfg.samples < 0) throw ConfigError("dataset.samples must be >= 0", "samples");
  Rng rng(derive_seed(seed, "dataset"));
  const int F = lib.config.frames;
  std::vector<QAExample> out;
  out.reserve(static_cast<std::size_t>(cfg.samples));
  int failures = 0;
  while (static_cast<int>(out.size()) < cfg.samples) {
    const auto& v = lib.videos[rng.below(lib.videos.size())];
    const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.length - F + 1)));
    const QuestionKind kind =
        rng.bernoulli(cfg.temporal_fraction) ? QuestionKind::Temporal : QuestionKind::Static;
    VideoClip clip = slice_clip(lib, v.id, start, F);
    try {
      out.push_back(generate_qa(lib, clip, kind, rng, cfg.qa));
    } catch (const GenerationError&) {
      if (++failures > 100 * (cfg.samples + 10)) {
        throw GenerationError("library cannot supply enough well-posed questions");
      }
    }
  }
  return out;
}

}  // namespace pami
