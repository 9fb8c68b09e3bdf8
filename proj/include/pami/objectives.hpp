#pragma once

// Loss and weighting math: SFT, DPO, rewards, VDPO, Jensen-Shannon output
// distance, prompt-aware softmax weights, and the multi-instance VDPO loss.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pami/core.hpp"
#include "pami/model.hpp"

namespace pami {

enum class WeightStrategy { Far, Near, Equal };
enum class DistanceMode { Output, Visual };

using DistanceVector = std::vector<double>;
using WeightVector = std::vector<double>;

inline std::string strategy_name(WeightStrategy s) {
  switch (s) {
    case WeightStrategy::Far: return "far";
    case WeightStrategy::Near: return "near";
    case WeightStrategy::Equal: return "equal";
  }
  return "far";
}

inline WeightStrategy parse_strategy(const std::string& s) {
  if (s == "far") return WeightStrategy::Far;
  if (s == "near") return WeightStrategy::Near;
  if (s == "equal") return WeightStrategy::Equal;
  throw ConfigError("unknown weight strategy '" + s + "'", "weight_strategy");
}

inline std::string mode_name(DistanceMode m) { return m == DistanceMode::Output ? "output" : "visual"; }

inline DistanceMode parse_mode(const std::string& s) {
  if (s == "output") return DistanceMode::Output;
  if (s == "visual") return DistanceMode::Visual;
  throw ConfigError("unknown distance mode '" + s + "'", "distance_mode");
}

/// R(y|x,v) = log pi_theta(y|x,v) - log pi_ref(y|x,v).
inline double reward(double policy_lp, double ref_lp) {
  if (!std::isfinite(policy_lp) || !std::isfinite(ref_lp)) throw NumericError("non-finite log-probability in reward");
  return policy_lp - ref_lp;
}

inline void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be > 0", "beta");
}

/// -log sigmoid(beta * (R_w - R_l)) via softplus.
inline double dpo_loss(double beta, double reward_chosen, double reward_rejected) {
  check_beta(beta);
  return softplus(-beta * (reward_chosen - reward_rejected));
}

inline Var dpo_loss(Tape& tape, double beta, Var reward_chosen, Var reward_rejected) {
  check_beta(beta);
  return tape.softplus(tape.scale(tape.sub(reward_chosen, reward_rejected), -beta));
}

/// Mean per-token cross-entropy of the answer.
inline Var sft_loss(Tape& tape, const TokenSeq& prompt, const FeatureTensor& features, const TokenSeq& answer) {
  return tape.scale(tape.log_prob(prompt, features, answer), -1.0 / static_cast<double>(answer.size()));
}

inline double sft_loss(const ModelParams& params, const TokenSeq& prompt, const FeatureTensor& features,
                       const TokenSeq& answer) {
  return -sequence_log_prob(params, prompt, features, answer) / static_cast<double>(answer.size());
}

/// Reward given an existing policy log-prob leaf.
inline Var reward_from(Tape& tape, Var lp, const ModelParams& reference, const TokenSeq& prompt,
                       const FeatureTensor& features, const TokenSeq& answer) {
  const double ref = sequence_log_prob(reference, prompt, features, answer);
  reward(tape.value(lp), ref);
  return tape.sub(lp, tape.constant(ref));
}

/// Differentiable reward: policy leaf minus a detached reference constant.
inline Var reward(Tape& tape, const ModelParams& reference, const TokenSeq& prompt,
                  const FeatureTensor& features, const TokenSeq& answer) {
  return reward_from(tape, tape.log_prob(prompt, features, answer), reference, prompt, features, answer);
}

struct VdpoTerms {
  Var loss;
  double reward_chosen = 0.0;
  double reward_rejected = 0.0;
};

/// Same response, original clip preferred over the augmented clip.
inline VdpoTerms vdpo_loss(Tape& tape, double beta, const ModelParams& reference, const TokenSeq& prompt,
                           const TokenSeq& answer, const FeatureTensor& chosen, const FeatureTensor& rejected) {
  const Var rw = reward(tape, reference, prompt, chosen, answer);
  const Var rl = reward(tape, reference, prompt, rejected, answer);
  return {dpo_loss(tape, beta, rw, rl), tape.value(rw), tape.value(rl)};
}

inline double vdpo_loss(double beta, const PolicyPair& pair, const TokenSeq& prompt, const TokenSeq& answer,
                        const FeatureTensor& chosen, const FeatureTensor& rejected) {
  Tape tape(pair.policy);
  return tape.value(vdpo_loss(tape, beta, pair.reference, prompt, answer, chosen, rejected).loss);
}

// ---------------------------------------------------------------------------
// Distances and weights.

inline void check_simplex(std::span<const double> p, const char* name) {
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw InputError(std::string(name) + " has a negative or non-finite entry");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-6) throw InputError(std::string(name) + " does not sum to 1");
}

/// 0.5 KL(p||m) + 0.5 KL(q||m), m = (p+q)/2, natural log, 0 log 0 = 0.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw InputError("js_divergence needs equal-length non-empty vectors");
  check_simplex(p, "p");
  check_simplex(q, "q");
  double kp = 0.0;
  double kq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kp += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) kq += q[i] * std::log(q[i] / m);
  }
  return std::clamp(0.5 * kp + 0.5 * kq, 0.0, kLn2);
}

/// Mean over answer positions of JS(softmax(logits_w), softmax(logits_l)).
inline double answer_distance(const TokenDistributions& w, const TokenDistributions& l) {
  if (w.positions() != l.positions() || w.positions() == 0) {
    throw InputError("answer_distance needs the same non-zero number of positions");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < w.positions(); ++k) s += js_divergence(softmax(w.logits[k]), softmax(l.logits[k]));
  return s / static_cast<double>(w.positions());
}

/// 1 - cosine similarity of the frame-averaged feature vectors.
inline double visual_distance(const FeatureTensor& a, const FeatureTensor& b) {
  if (a.frames != b.frames || a.dim != b.dim || a.frames == 0) throw InputError("visual_distance shape mismatch");
  std::vector<double> pa(static_cast<std::size_t>(a.dim), 0.0), pb(static_cast<std::size_t>(a.dim), 0.0);
  for (int t = 0; t < a.frames; ++t) {
    for (int j = 0; j < a.dim; ++j) {
      pa[j] += a.row(t)[j] / a.frames;
      pb[j] += b.row(t)[j] / b.frames;
    }
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int j = 0; j < a.dim; ++j) {
    dot += pa[j] * pb[j];
    na += pa[j] * pa[j];
    nb += pb[j] * pb[j];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("visual_distance of a zero-norm feature vector");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

inline WeightVector prompt_weights(const DistanceVector& d, WeightStrategy strategy) {
  if (d.empty()) throw InputError("prompt_weights needs at least one distance");
  switch (strategy) {
    case WeightStrategy::Far: return softmax(d);
    case WeightStrategy::Near: {
      DistanceVector neg(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) neg[i] = -d[i];
      return softmax(neg);
    }
    case WeightStrategy::Equal: return WeightVector(d.size(), 1.0 / static_cast<double>(d.size()));
  }
  throw InputError("unknown weight strategy");
}

struct PamiTerms {
  Var loss;
  WeightVector alpha;
  DistanceVector distance;
  double reward_chosen = 0.0;
  std::vector<double> rewards_rejected;
  double margin = 0.0;  // R_w - sum_i alpha_i R_i
};

/// Multi-instance VDPO: the rejected reward is the alpha-weighted sum over the
/// candidate set. Distances and weights are detached constants.
inline PamiTerms pami_vdpo_loss(Tape& tape, double beta, const ModelParams& reference, const TokenSeq& prompt,
                                const TokenSeq& answer, const FeatureTensor& chosen,
                                const std::vector<FeatureTensor>& rejected, WeightStrategy strategy,
                                DistanceMode mode) {
  if (rejected.empty()) throw InputError("candidate set must be non-empty");
  PamiTerms out;
  const Var lp_w = tape.log_prob(prompt, chosen, answer);
  const Var rw = reward_from(tape, lp_w, reference, prompt, chosen, answer);
  std::vector<Var> rl;
  TokenDistributions dist_w;
  if (mode == DistanceMode::Output) dist_w = tape.distributions(lp_w);
  for (const auto& f : rejected) {
    const Var lp = tape.log_prob(prompt, f, answer);
    rl.push_back(reward_from(tape, lp, reference, prompt, f, answer));
    out.distance.push_back(mode == DistanceMode::Output ? answer_distance(dist_w, tape.distributions(lp))
                                                        : visual_distance(chosen, f));
    out.rewards_rejected.push_back(tape.value(rl.back()));
  }
  out.alpha = prompt_weights(out.distance, strategy);
  const Var weighted = tape.weighted_sum(rl, out.alpha);
  out.loss = dpo_loss(tape, beta, rw, weighted);
  out.reward_chosen = tape.value(rw);
  out.margin = tape.value(rw) - tape.value(weighted);
  return out;
}

}  // namespace pami
