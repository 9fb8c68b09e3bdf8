#pragma once

// Independent oracles for the unit tests. Nothing here calls the library
// routine it is used to check.

#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "pami/video_world.hpp"

namespace oracle {

/// Symbols (with attribute) visible in each clip frame, read from the event
/// script rather than the rendered frames.
struct Visible {
  int symbol;
  int attribute;
};

inline std::vector<std::vector<Visible>> script_view(const pami::VideoLibrary& lib, const pami::VideoClip& clip) {
  const auto& v = lib.video(clip.source_video_id);
  std::vector<std::vector<Visible>> out;
  for (int idx : clip.source_index) {
    std::vector<Visible> here;
    for (const auto& p : v.script.placements) {
      if (idx < p.start || idx >= p.end) continue;
      bool cropped = false;
      for (const auto& c : clip.crops) {
        if (p.row >= c.row0 && p.row < c.row0 + c.rows && p.col >= c.col0 && p.col < c.col0 + c.cols) cropped = true;
      }
      if (!cropped) here.push_back({p.symbol, p.attribute});
    }
    out.push_back(here);
  }
  return out;
}

/// Answer text ("yes", "no", "red big", ...) or nullopt when undefined.
inline std::optional<std::string> truth(const pami::Question& q, const std::vector<std::vector<Visible>>& view) {
  auto has = [&](std::size_t t, int s) {
    for (const auto& x : view[t]) {
      if (x.symbol == s) return true;
    }
    return false;
  };
  if (q.type == pami::QuestionType::Presence) {
    for (std::size_t t = 0; t < view.size(); ++t) {
      if (has(t, q.a)) return std::string("yes");
    }
    return std::string("no");
  }
  if (q.type == pami::QuestionType::Attribute) {
    std::set<int> attrs;
    for (const auto& f : view) {
      for (const auto& x : f) {
        if (x.symbol == q.a) attrs.insert(x.attribute);
      }
    }
    if (attrs.size() != 1) return std::nullopt;
    const int a = *attrs.begin();
    return std::string(a < 2 ? "red" : "blue") + " " + (a % 2 == 0 ? "big" : "small");
  }
  int first_a = -1, last_a = -1, first_b = -1, last_b = -1;
  for (int t = 0; t < static_cast<int>(view.size()); ++t) {
    if (has(static_cast<std::size_t>(t), q.a)) {
      if (first_a < 0) first_a = t;
      last_a = t;
    }
    if (has(static_cast<std::size_t>(t), q.b)) {
      if (first_b < 0) first_b = t;
      last_b = t;
    }
  }
  if (first_a < 0 || first_b < 0) return std::nullopt;
  if (last_a < first_b) return std::string("yes");
  if (last_b < first_a) return std::string("no");
  return std::nullopt;
}

/// KL(p || q) in nats by direct summation, skipping p_i = 0.
inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline double js(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

inline double softplus(double x) { return std::log1p(std::exp(x)); }

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("pami_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
