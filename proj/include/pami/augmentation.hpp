#pragma once

// Rejected-clip augmentations, their similarity taxonomy, candidate-set
// construction, and the ground-truth true/false-rejected oracle.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "pami/core.hpp"
#include "pami/video_world.hpp"

namespace pami {

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

struct Crop {
  double ratio = 0.2;  // fraction of frame area, (0, 0.2]
  Corner anchor = Corner::TopLeft;
  bool operator==(const Crop&) const = default;
};
struct DVideo {
  bool operator==(const DVideo&) const = default;
};
struct DClip {
  bool operator==(const DClip&) const = default;
};
struct Shuffle {
  bool operator==(const Shuffle&) const = default;
};
struct Reverse {
  bool operator==(const Reverse&) const = default;
};
struct Rate {
  double factor = 2.0;  // 0.5 or 2.0
  bool operator==(const Rate&) const = default;
};

using BaseAugmentation = std::variant<Crop, DVideo, DClip, Shuffle, Reverse, Rate>;

struct Combination {
  BaseAugmentation first;
  BaseAugmentation second;
  bool operator==(const Combination&) const = default;
};

using AugmentationSpec = std::variant<Crop, DVideo, DClip, Shuffle, Reverse, Rate, Combination>;

enum class SimilarityClass { HighSimilarity, LowSimilarity };
enum class RejectLabel { TrueRejected, FalseRejected };

struct CandidateEntry {
  VideoClip clip;
  AugmentationSpec spec;
};

struct CandidateSet {
  std::vector<CandidateEntry> entries;
  std::size_t size() const { return entries.size(); }
};

enum class CandidatePolicy { HighSimilarity, LowSimilarity, CombinationMix, Temporal, Visual, Mixed, Explicit };

// ---------------------------------------------------------------------------
// Text encoding: "crop{ratio=0.2,anchor=top-left}", "rate{factor=2}",
// "combination{shuffle,crop{ratio=0.15,anchor=bottom-right}}".

inline std::string corner_name(Corner c) {
  switch (c) {
    case Corner::TopLeft: return "top-left";
    case Corner::TopRight: return "top-right";
    case Corner::BottomLeft: return "bottom-left";
    case Corner::BottomRight: return "bottom-right";
  }
  return "top-left";
}

inline Corner parse_corner(const std::string& s) {
  if (s == "top-left") return Corner::TopLeft;
  if (s == "top-right") return Corner::TopRight;
  if (s == "bottom-left") return Corner::BottomLeft;
  if (s == "bottom-right") return Corner::BottomRight;
  throw ConfigError("unknown crop anchor '" + s + "'", "anchor");
}

namespace detail {

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct SpecText {
  std::string name;
  std::string params;
};

inline SpecText base_text(const BaseAugmentation& b);

}  // namespace detail

inline std::string type_name(const AugmentationSpec& s) {
  static const char* names[] = {"crop", "dvideo", "dclip", "shuffle", "reverse", "rate", "combination"};
  return names[s.index()];
}

inline std::string to_text(const BaseAugmentation& b) {
  auto t = detail::base_text(b);
  return t.params.empty() ? t.name : t.name + "{" + t.params + "}";
}

inline std::string to_text(const AugmentationSpec& s) {
  if (const auto* c = std::get_if<Combination>(&s)) {
    return "combination{" + to_text(c->first) + "," + to_text(c->second) + "}";
  }
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Combination>) {
          return {};
        } else {
          return to_text(BaseAugmentation{v});
        }
      },
      s);
}

namespace detail {

inline SpecText base_text(const BaseAugmentation& b) {
  return std::visit(
      [](const auto& v) -> SpecText {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Crop>) {
          return {"crop", "ratio=" + format_real(v.ratio) + ",anchor=" + corner_name(v.anchor)};
        } else if constexpr (std::is_same_v<T, DVideo>) {
          return {"dvideo", ""};
        } else if constexpr (std::is_same_v<T, DClip>) {
          return {"dclip", ""};
        } else if constexpr (std::is_same_v<T, Shuffle>) {
          return {"shuffle", ""};
        } else if constexpr (std::is_same_v<T, Reverse>) {
          return {"reverse", ""};
        } else {
          return {"rate", "factor=" + format_real(v.factor)};
        }
      },
      b);
}

// Splits "a,b{c,d},e" at top-level commas.
inline std::vector<std::string> split_top(const std::string& s) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '{') ++depth;
    if (c == '}') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline void validate_crop(const Crop& c) {
  if (!(c.ratio > 0.0 && c.ratio <= 0.2)) {
    throw ConfigError("crop ratio must be in (0, 0.2]", "ratio");
  }
}

inline void validate_rate(const Rate& r) {
  if (r.factor != 0.5 && r.factor != 2.0) {
    throw ConfigError("rate factor must be 0.5 or 2", "factor");
  }
}

inline BaseAugmentation parse_base(const std::string& text) {
  const auto brace = text.find('{');
  const std::string name = text.substr(0, brace);
  std::vector<std::pair<std::string, std::string>> kv;
  if (brace != std::string::npos) {
    if (text.back() != '}') throw ConfigError("malformed augmentation spec '" + text + "'", "augmentation");
    for (const auto& part : split_top(text.substr(brace + 1, text.size() - brace - 2))) {
      const auto eq = part.find('=');
      if (eq == std::string::npos) throw ConfigError("malformed parameter '" + part + "'", "augmentation");
      kv.emplace_back(part.substr(0, eq), part.substr(eq + 1));
    }
  }
  auto param = [&](const std::string& key) -> const std::string* {
    for (const auto& [k, v] : kv) {
      if (k == key) return &v;
    }
    return nullptr;
  };
  for (const auto& [k, v] : kv) {
    const bool known = (name == "crop" && (k == "ratio" || k == "anchor")) || (name == "rate" && k == "factor");
    if (!known) throw ConfigError("unknown parameter '" + k + "' for augmentation " + name, k);
  }
  if (name == "crop") {
    Crop c;
    if (const auto* r = param("ratio")) c.ratio = std::stod(*r);
    if (const auto* a = param("anchor")) c.anchor = parse_corner(*a);
    validate_crop(c);
    return c;
  }
  if (name == "dvideo") return DVideo{};
  if (name == "dclip") return DClip{};
  if (name == "shuffle") return Shuffle{};
  if (name == "reverse") return Reverse{};
  if (name == "rate") {
    Rate r;
    if (const auto* f = param("factor")) r.factor = std::stod(*f);
    validate_rate(r);
    return r;
  }
  throw ConfigError("unknown augmentation '" + name + "'", "augmentation");
}

}  // namespace detail

inline AugmentationSpec parse_spec(const std::string& text) {
  if (text.rfind("combination", 0) == 0) {
    const auto brace = text.find('{');
    if (brace == std::string::npos || text.back() != '}') {
      throw ConfigError("malformed combination spec '" + text + "'", "augmentation");
    }
    const auto parts = detail::split_top(text.substr(brace + 1, text.size() - brace - 2));
    if (parts.size() != 2) throw ConfigError("combination takes exactly two parts", "augmentation");
    return Combination{detail::parse_base(parts[0]), detail::parse_base(parts[1])};
  }
  return std::visit([](const auto& v) -> AugmentationSpec { return v; }, detail::parse_base(text));
}

// ---------------------------------------------------------------------------
// Taxonomy.

inline SimilarityClass similarity_class(const AugmentationSpec& spec) {
  if (std::holds_alternative<DVideo>(spec) || std::holds_alternative<Combination>(spec)) {
    return SimilarityClass::LowSimilarity;
  }
  return SimilarityClass::HighSimilarity;
}

inline std::string similarity_name(SimilarityClass c) {
  return c == SimilarityClass::HighSimilarity ? "high" : "low";
}

// ---------------------------------------------------------------------------
// Application.

/// Corner-anchored rectangle covering at most floor(ratio * H * W) cells.
inline CropRegion crop_region(const Crop& c, int height, int width) {
  const int limit = static_cast<int>(std::floor(c.ratio * height * width + 1e-9));
  CropRegion r;
  if (limit <= 0) return r;
  r.rows = std::min(height, std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(limit))))));
  r.cols = std::min(width, limit / r.rows);
  const bool bottom = c.anchor == Corner::BottomLeft || c.anchor == Corner::BottomRight;
  const bool right = c.anchor == Corner::TopRight || c.anchor == Corner::BottomRight;
  r.row0 = bottom ? height - r.rows : 0;
  r.col0 = right ? width - r.cols : 0;
  return r;
}

namespace detail {

// Moves a clip onto a new source segment, keeping its relative frame offsets,
// temporal permutation, and crops.
inline void retarget(VideoClip& clip, int video_id, int new_start, int length) {
  const int shift = new_start - clip.segment.start;
  for (int& idx : clip.source_index) idx = std::clamp(idx + shift, 0, length - 1);
  clip.source_video_id = video_id;
  clip.segment = {new_start, new_start + clip.segment.size()};
}

inline bool is_natural(const VideoClip& clip) {
  for (std::size_t i = 0; i < clip.source_index.size(); ++i) {
    if (clip.source_index[i] != clip.segment.start + static_cast<int>(i)) return false;
  }
  return true;
}

inline void apply_base(const BaseAugmentation& spec, VideoClip& clip, const VideoLibrary& lib, Rng& rng) {
  const int F = clip.frame_count();
  const Video& src = lib.video(clip.source_video_id);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Crop>) {
          validate_crop(s);
          const CropRegion region = crop_region(s, lib.config.height, lib.config.width);
          if (std::find(clip.crops.begin(), clip.crops.end(), region) == clip.crops.end()) {
            clip.crops.push_back(region);
          }
        } else if constexpr (std::is_same_v<T, DVideo>) {
          const auto n = lib.videos.size();
          if (n < 2) throw AugmentationUnavailable("dvideo needs at least two videos");
          const int self = clip.source_video_id - lib.config.video_id_offset;
          auto pick = rng.below(n - 1);
          if (static_cast<int>(pick) >= self) ++pick;
          const Video& other = lib.videos[pick];
          const int span = clip.segment.size();
          const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(other.length - span + 1)));
          retarget(clip, other.id, start, other.length);
        } else if constexpr (std::is_same_v<T, DClip>) {
          const int span = clip.segment.size();
          std::vector<int> starts;
          for (int s0 = 0; s0 + span <= src.length; ++s0) {
            if (!Segment{s0, s0 + span}.overlaps(clip.segment)) starts.push_back(s0);
          }
          if (starts.empty()) throw AugmentationUnavailable("no disjoint segment for dclip");
          retarget(clip, clip.source_video_id, starts[rng.below(starts.size())], src.length);
        } else if constexpr (std::is_same_v<T, Shuffle>) {
          std::vector<int> perm(static_cast<std::size_t>(F));
          for (int i = 0; i < F; ++i) perm[static_cast<std::size_t>(i)] = i;
          const auto identity = perm;
          do {
            rng.shuffle(perm);
          } while (perm == identity && F > 1);
          auto idx = clip.source_index;
          auto order = clip.frame_order;
          for (int i = 0; i < F; ++i) {
            clip.source_index[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
            clip.frame_order[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
          }
        } else if constexpr (std::is_same_v<T, Reverse>) {
          std::reverse(clip.source_index.begin(), clip.source_index.end());
          std::reverse(clip.frame_order.begin(), clip.frame_order.end());
        } else {
          validate_rate(s);
          auto& idx = clip.source_index;
          if (s.factor == 0.5) {
            std::vector<int> slow(static_cast<std::size_t>(F));
            for (int i = 0; i < F; ++i) slow[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i / 2)];
            idx = std::move(slow);
            return;
          }
          if (is_natural(clip)) {
            // stride-2 over a 2F window clipped to the video
            const int ws = std::max(0, std::min(clip.segment.start, src.length - 2 * F));
            for (int i = 0; i < F; ++i) idx[static_cast<std::size_t>(i)] = std::min(ws + 2 * i, src.length - 1);
            clip.segment = {ws, std::min(ws + 2 * F, src.length)};
            return;
          }
          // Non-natural order: extend with the source continuation, then stride 2.
          std::vector<int> ext = idx;
          int hi = *std::max_element(idx.begin(), idx.end());
          int lo = *std::min_element(idx.begin(), idx.end());
          while (static_cast<int>(ext.size()) < 2 * F && hi + 1 < src.length) ext.push_back(++hi);
          while (static_cast<int>(ext.size()) < 2 * F && lo > 0) ext.push_back(--lo);
          while (static_cast<int>(ext.size()) < 2 * F) ext.push_back(ext.back());
          for (int i = 0; i < F; ++i) idx[static_cast<std::size_t>(i)] = ext[static_cast<std::size_t>(2 * i)];
        }
      },
      spec);
}

}  // namespace detail

inline VideoClip apply_augmentation(const AugmentationSpec& spec, const VideoClip& clip,
                                    const VideoLibrary& lib, Rng& rng) {
  VideoClip out = clip;
  if (const auto* c = std::get_if<Combination>(&spec)) {
    detail::apply_base(c->first, out, lib, rng);
    detail::apply_base(c->second, out, lib, rng);
  } else {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (!std::is_same_v<T, Combination>) detail::apply_base(BaseAugmentation{s}, out, lib, rng);
        },
        spec);
  }
  materialize(lib, out);
  return out;
}

// ---------------------------------------------------------------------------
// Candidate sets.

enum class SpecType { Crop, DVideo, DClip, Shuffle, Reverse, Rate, Combination };

namespace detail {

inline BaseAugmentation draw_base(SpecType t, Rng& rng) {
  switch (t) {
    case SpecType::Crop:
      return Crop{rng.uniform(0.1, 0.2), static_cast<Corner>(rng.below(4))};
    case SpecType::DVideo: return DVideo{};
    case SpecType::DClip: return DClip{};
    case SpecType::Shuffle: return Shuffle{};
    case SpecType::Reverse: return Reverse{};
    case SpecType::Rate: return Rate{rng.bernoulli(0.5) ? 0.5 : 2.0};
    case SpecType::Combination: break;
  }
  throw UsageError("draw_base called with combination");
}

inline AugmentationSpec draw_spec(SpecType t, Rng& rng) {
  if (t == SpecType::Combination) {
    const auto i = rng.below(6);
    auto j = rng.below(5);
    if (j >= i) ++j;
    return Combination{draw_base(static_cast<SpecType>(i), rng), draw_base(static_cast<SpecType>(j), rng)};
  }
  return std::visit([](const auto& v) -> AugmentationSpec { return v; }, draw_base(t, rng));
}

[[noreturn]] inline void too_many() {
  throw ConfigError("candidate set size exceeds the distinct specs available under this policy", "n");
}

inline std::vector<SpecType> take(std::vector<SpecType> pool, std::size_t n, Rng& rng) {
  if (n > pool.size()) too_many();
  rng.shuffle(pool);
  pool.resize(n);
  return pool;
}

inline std::vector<SpecType> policy_types(CandidatePolicy policy, std::size_t n, Rng& rng) {
  using S = SpecType;
  const std::vector<S> high{S::Crop, S::DClip, S::Shuffle, S::Reverse, S::Rate};
  const std::vector<S> low{S::DVideo, S::Combination};
  switch (policy) {
    case CandidatePolicy::HighSimilarity: return take(high, n, rng);
    case CandidatePolicy::LowSimilarity: return take(low, n, rng);
    case CandidatePolicy::Temporal: return take({S::Shuffle, S::Reverse, S::Rate}, n, rng);
    case CandidatePolicy::Visual: return take({S::Crop, S::DClip}, n, rng);
    case CandidatePolicy::CombinationMix: {
      // Alternate high and low draws so both groups are equally represented.
      if (n > high.size() + low.size()) too_many();
      auto h = take(high, std::min(high.size(), (n + 1) / 2), rng);
      auto l = take(low, std::min(low.size(), n / 2), rng);
      if (h.size() + l.size() < n) too_many();
      std::vector<S> out;
      for (std::size_t i = 0; out.size() < n; ++i) {
        if (i < h.size()) out.push_back(h[i]);
        if (out.size() < n && i < l.size()) out.push_back(l[i]);
      }
      return out;
    }
    case CandidatePolicy::Mixed: {
      // One visual (D-Clip) and one temporal (Shuffle) candidate; n = 1 picks
      // one of the two, n > 2 adds further distinct high-similarity specs.
      if (n == 1) return {rng.bernoulli(0.5) ? S::DClip : S::Shuffle};
      if (n > high.size()) too_many();
      std::vector<S> out{S::DClip, S::Shuffle};
      auto rest = take({S::Crop, S::Reverse, S::Rate}, n - 2, rng);
      out.insert(out.end(), rest.begin(), rest.end());
      return out;
    }
    case CandidatePolicy::Explicit: break;
  }
  throw UsageError("explicit policy has no spec pool");
}

}  // namespace detail

/// Applies each spec to the clip. D-Clip falls back to Crop when no disjoint
/// segment exists.
inline CandidateSet realize_candidates(const VideoClip& clip, const VideoLibrary& lib,
                                       const std::vector<AugmentationSpec>& specs, Rng& rng) {
  CandidateSet set;
  for (const auto& spec : specs) {
    try {
      set.entries.push_back({apply_augmentation(spec, clip, lib, rng), spec});
    } catch (const AugmentationUnavailable&) {
      if (!std::holds_alternative<DClip>(spec)) throw;
      AugmentationSpec fallback = Crop{rng.uniform(0.1, 0.2), static_cast<Corner>(rng.below(4))};
      set.entries.push_back({apply_augmentation(fallback, clip, lib, rng), fallback});
    }
  }
  return set;
}

/// Builds N rejected candidates for one clip.
inline CandidateSet build_candidate_set(const VideoClip& clip, const VideoLibrary& lib,
                                        CandidatePolicy policy, std::size_t n, Rng& rng,
                                        const std::vector<AugmentationSpec>& explicit_specs = {}) {
  if (n < 1) throw ConfigError("candidate set size must be >= 1", "n");
  std::vector<AugmentationSpec> specs;
  if (policy == CandidatePolicy::Explicit) {
    if (n > explicit_specs.size()) {
      throw ConfigError("explicit policy lists fewer specs than the candidate set size", "n");
    }
    specs.assign(explicit_specs.begin(), explicit_specs.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    for (SpecType t : detail::policy_types(policy, n, rng)) specs.push_back(detail::draw_spec(t, rng));
  }
  return realize_candidates(clip, lib, specs, rng);
}

/// Builds N candidates of distinct types drawn from `types`, with parameters
/// (crop ratio and corner, rate factor, combination members) resampled per call.
inline CandidateSet build_candidate_set(const VideoClip& clip, const VideoLibrary& lib,
                                        const std::vector<SpecType>& types, std::size_t n, Rng& rng) {
  if (n < 1) throw ConfigError("candidate set size must be >= 1", "n");
  std::vector<AugmentationSpec> specs;
  for (SpecType t : detail::take(types, n, rng)) specs.push_back(detail::draw_spec(t, rng));
  return realize_candidates(clip, lib, specs, rng);
}

inline std::string spec_type_name(SpecType t) {
  switch (t) {
    case SpecType::Crop: return "crop";
    case SpecType::DVideo: return "dvideo";
    case SpecType::DClip: return "dclip";
    case SpecType::Shuffle: return "shuffle";
    case SpecType::Reverse: return "reverse";
    case SpecType::Rate: return "rate";
    case SpecType::Combination: return "combination";
  }
  return "crop";
}

inline SpecType parse_spec_type(const std::string& s) {
  for (int i = 0; i < 7; ++i) {
    if (spec_type_name(static_cast<SpecType>(i)) == s) return static_cast<SpecType>(i);
  }
  throw ConfigError("unknown augmentation type '" + s + "'", "spec_types");
}

inline std::vector<SpecType> all_spec_types() {
  return {SpecType::Crop,    SpecType::DVideo, SpecType::DClip,      SpecType::Shuffle,
          SpecType::Reverse, SpecType::Rate,   SpecType::Combination};
}

inline SimilarityClass similarity_class(SpecType t) {
  return t == SpecType::DVideo || t == SpecType::Combination ? SimilarityClass::LowSimilarity
                                                             : SimilarityClass::HighSimilarity;
}

inline std::string policy_name(CandidatePolicy p) {
  switch (p) {
    case CandidatePolicy::HighSimilarity: return "high";
    case CandidatePolicy::LowSimilarity: return "low";
    case CandidatePolicy::CombinationMix: return "combination";
    case CandidatePolicy::Temporal: return "temporal";
    case CandidatePolicy::Visual: return "visual";
    case CandidatePolicy::Mixed: return "mixed";
    case CandidatePolicy::Explicit: return "explicit";
  }
  return "mixed";
}

inline CandidatePolicy parse_policy(const std::string& s) {
  for (auto p : {CandidatePolicy::HighSimilarity, CandidatePolicy::LowSimilarity, CandidatePolicy::CombinationMix,
                 CandidatePolicy::Temporal, CandidatePolicy::Visual, CandidatePolicy::Mixed,
                 CandidatePolicy::Explicit}) {
    if (policy_name(p) == s) return p;
  }
  throw ConfigError("unknown candidate policy '" + s + "'", "candidate_policy");
}

// ---------------------------------------------------------------------------
// Oracle.

/// TrueRejected iff the question's ground truth on the augmented clip differs
/// from the example's answer or is undefined.
inline RejectLabel oracle_reject_label(const QAExample& example, const VideoClip& augmented) {
  const auto truth = answer_on_frames(parse_prompt(example.prompt), augmented.frames);
  return (!truth || *truth != example.answer) ? RejectLabel::TrueRejected : RejectLabel::FalseRejected;
}

inline RejectLabel oracle_reject_label(const QAExample& example, const VideoClip& augmented,
                                       const VideoLibrary& /*library*/) {
  return oracle_reject_label(example, augmented);
}

inline std::string label_name(RejectLabel l) {
  return l == RejectLabel::TrueRejected ? "true_rejected" : "false_rejected";
}

}  // namespace pami
