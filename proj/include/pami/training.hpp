#pragma once

// Two-stage pipeline: SFT from init_params, then a preference stage (DPO,
// VDPO or PaMi-VDPO) against the frozen SFT reference.

#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pami/augmentation.hpp"
#include "pami/core.hpp"
#include "pami/model.hpp"
#include "pami/objectives.hpp"
#include "pami/video_world.hpp"

namespace pami {

enum class Method { SFT, DPO, VDPO, PAMI };
enum class OptimizerKind { SGD, Adam };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::SFT: return "sft";
    case Method::DPO: return "dpo";
    case Method::VDPO: return "vdpo";
    case Method::PAMI: return "pami";
  }
  return "sft";
}

inline Method parse_method(const std::string& s) {
  if (s == "sft") return Method::SFT;
  if (s == "dpo") return Method::DPO;
  if (s == "vdpo") return Method::VDPO;
  if (s == "pami") return Method::PAMI;
  throw ConfigError("unknown method '" + s + "'", "method");
}

inline std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'", "optimizer");
}

struct TrainingConfig {
  Method method = Method::SFT;
  double beta = 0.1;
  double learning_rate = 1e-3;
  int epochs = 10;
  int batch_size = 1;
  int n = 2;  // candidate-set size for PAMI
  WeightStrategy strategy = WeightStrategy::Far;
  DistanceMode mode = DistanceMode::Output;
  CandidatePolicy policy = CandidatePolicy::Mixed;
  std::vector<AugmentationSpec> specs;  // fixed candidates; overrides everything else when non-empty
  std::vector<SpecType> spec_types;     // per-step draws restricted to these types; overrides policy
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double divergence_threshold = 50.0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be > 0", "learning_rate");
    }
    if (epochs < 1) throw ConfigError("epochs must be >= 1", "epochs");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1", "batch_size");
    if (n < 1) throw ConfigError("n must be >= 1", "n");
    if (method != Method::SFT) check_beta(beta);
    if (method == Method::PAMI && !specs.empty() && specs.size() < static_cast<std::size_t>(n)) {
      throw ConfigError("specs lists fewer entries than n", "specs");
    }
    if (specs.empty() && !spec_types.empty() && spec_types.size() < candidates()) {
      throw ConfigError("spec_types lists fewer entries than n", "spec_types");
    }
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0) throw ConfigError("adam_beta1 must be in [0, 1)", "adam_beta1");
    if (adam_beta2 < 0.0 || adam_beta2 >= 1.0) throw ConfigError("adam_beta2 must be in [0, 1)", "adam_beta2");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0", "adam_eps");
    if (!(divergence_threshold > 0.0)) {
      throw ConfigError("divergence_threshold must be > 0", "divergence_threshold");
    }
  }

  /// Candidate-set size actually used by the method.
  std::size_t candidates() const { return method == Method::PAMI ? static_cast<std::size_t>(n) : 1; }
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Sorted key=value lines; identical configs serialize identically.
inline std::string canonical_text(const TrainingConfig& c) {
  std::map<std::string, std::string> kv;
  kv["adam_beta1"] = format_double(c.adam_beta1);
  kv["adam_beta2"] = format_double(c.adam_beta2);
  kv["adam_eps"] = format_double(c.adam_eps);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["beta"] = format_double(c.beta);
  kv["candidate_policy"] = policy_name(c.policy);
  kv["distance_mode"] = mode_name(c.mode);
  kv["divergence_threshold"] = format_double(c.divergence_threshold);
  kv["epochs"] = std::to_string(c.epochs);
  kv["learning_rate"] = format_double(c.learning_rate);
  kv["method"] = method_name(c.method);
  kv["n"] = std::to_string(c.n);
  kv["optimizer"] = optimizer_name(c.optimizer);
  kv["seed"] = std::to_string(c.seed);
  std::string specs;
  for (std::size_t i = 0; i < c.specs.size(); ++i) specs += (i ? ";" : "") + to_text(c.specs[i]);
  kv["specs"] = specs;
  std::string types;
  for (std::size_t i = 0; i < c.spec_types.size(); ++i) types += (i ? ";" : "") + spec_type_name(c.spec_types[i]);
  kv["spec_types"] = types;
  kv["weight_strategy"] = strategy_name(c.strategy);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const TrainingConfig& c) { return hex64(fnv1a(canonical_text(c))); }

// ---------------------------------------------------------------------------
// Run logs.

struct StepRecord {
  int step = 0;
  int epoch = 0;
  std::vector<int> examples;
  double loss = 0.0;
  double reward_margin = 0.0;
  std::vector<double> alpha;
  std::vector<double> distance;
  std::vector<std::string> specs;
  std::vector<RejectLabel> labels;
};

struct EpochSnapshot {
  int epoch = 0;
  double mean_loss = 0.0;
  std::map<std::string, double> metrics;
};

struct RunLog {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string method;
  std::vector<StepRecord> steps;
  std::vector<EpochSnapshot> epochs;
  std::vector<std::string> warnings;

  void append(StepRecord r) {
    if (!steps.empty() && r.step <= steps.back().step) throw UsageError("RunLog steps must be strictly increasing");
    steps.push_back(std::move(r));
  }
  std::vector<double> losses() const {
    std::vector<double> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.loss);
    return out;
  }
};

/// Raised when a loss exceeds the divergence guard or turns non-finite. The
/// partial log is kept for diagnosis.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, RunLog log) : NumericError(what), log_(std::move(log)) {}
  const RunLog& log() const noexcept { return log_; }

 private:
  RunLog log_;
};

struct TrainResult {
  PolicyPair pair;
  RunLog log;
};

/// Optional per-epoch evaluation hook; results land in RunLog::epochs.
using EpochHook = std::function<std::map<std::string, double>(const ModelParams&, int epoch)>;

// ---------------------------------------------------------------------------
// Optimizer.

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
};

inline void optimizer_step(ModelParams& params, const Gradients& grads, OptimizerState& state,
                           const TrainingConfig& cfg) {
  if (grads.values.size() != params.values.size()) throw InputError("gradient shape does not match parameters");
  if (!all_finite(grads.values)) throw NumericError("non-finite gradient");
  const double lr = cfg.learning_rate;
  if (cfg.optimizer == OptimizerKind::SGD) {
    for (std::size_t i = 0; i < params.values.size(); ++i) params.values[i] -= lr * grads.values[i];
    ++state.t;
    return;
  }
  if (state.m.size() != params.values.size()) {
    state.m.assign(params.values.size(), 0.0);
    state.v.assign(params.values.size(), 0.0);
  }
  ++state.t;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double g = grads.values[i];
    if (g == 0.0 && state.m[i] == 0.0 && state.v[i] == 0.0) continue;
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    params.values[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Preference data for the offline DPO baseline.

struct PreferenceRecord {
  QAExample example;
  TokenSeq chosen;
  TokenSeq rejected;
  int chosen_score = 5;
  int rejected_score = 1;
  std::string source_spec;  // augmentation whose decoded answer became the rejected response
};

namespace detail {

inline std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng(derive_seed(seed, "order", static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

inline void guard(const TrainingConfig& cfg, double loss, const RunLog& log, int step) {
  if (!std::isfinite(loss) || loss > cfg.divergence_threshold) {
    throw TrainingAborted("training diverged at step " + std::to_string(step) + " (loss " + format_double(loss) + ")",
                          log);
  }
}

inline std::vector<FeatureTensor> clip_features(const VideoLibrary& lib, const std::vector<QAExample>& data) {
  std::vector<FeatureTensor> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(render_features(clip_of(lib, ex), lib.config));
  return out;
}

/// Outcome of one example's loss graph inside a step.
struct ExampleTerms {
  Var loss;
  double margin = 0.0;
  std::vector<double> alpha;
  std::vector<double> distance;
  std::vector<std::string> specs;
  std::vector<RejectLabel> labels;
};

/// Generic batched loop: `build` adds one example's loss to the tape or
/// returns nullopt to skip the example.
template <typename Build>
TrainResult train_loop(ModelParams policy, ModelParams reference, std::size_t n_items,
                       const TrainingConfig& cfg, Build build, const EpochHook& hook) {
  cfg.validate();
  if (n_items == 0) throw InputError("training dataset is empty");
  TrainResult res;
  res.log.config_hash = config_hash(cfg);
  res.log.seed = cfg.seed;
  res.log.method = method_name(cfg.method);
  OptimizerState opt;
  Gradients grad = zero_like(policy);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n_items, cfg.seed, epoch);
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.values.begin(), grad.values.end(), 0.0);
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      int used = 0;
      double loss_sum = 0.0;
      double margin_sum = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const int idx = order[k];
        Tape tape(policy);
        std::optional<ExampleTerms> t = build(tape, idx, epoch, res.log);
        if (!t) continue;
        ++used;
        rec.examples.push_back(idx);
        loss_sum += tape.value(t->loss);
        margin_sum += t->margin;
        rec.alpha.insert(rec.alpha.end(), t->alpha.begin(), t->alpha.end());
        rec.distance.insert(rec.distance.end(), t->distance.begin(), t->distance.end());
        rec.specs.insert(rec.specs.end(), t->specs.begin(), t->specs.end());
        rec.labels.insert(rec.labels.end(), t->labels.begin(), t->labels.end());
        tape.backward_into(t->loss, 1.0, grad);
      }
      if (used == 0) continue;
      rec.loss = loss_sum / used;
      rec.reward_margin = margin_sum / used;
      guard(cfg, rec.loss, res.log, step);
      if (used > 1) {
        for (double& g : grad.values) g /= used;
      }
      optimizer_step(policy, grad, opt, cfg);
      epoch_loss += rec.loss;
      ++epoch_steps;
      res.log.append(std::move(rec));
      ++step;
    }
    EpochSnapshot snap;
    snap.epoch = epoch;
    snap.mean_loss = epoch_steps > 0 ? epoch_loss / epoch_steps : 0.0;
    if (hook) snap.metrics = hook(policy, epoch);
    res.log.epochs.push_back(std::move(snap));
  }
  res.pair.policy = std::move(policy);
  res.pair.reference = std::move(reference);
  return res;
}

}  // namespace detail

/// Maximum-likelihood training from init_params; the final policy is copied
/// into the frozen reference.
inline TrainResult run_sft(const VideoLibrary& lib, const std::vector<QAExample>& data, const ModelConfig& model,
                           TrainingConfig cfg, const EpochHook& hook = {}) {
  cfg.method = Method::SFT;
  const auto feats = detail::clip_features(lib, data);
  auto build = [&](Tape& tape, int idx, int, RunLog&) -> std::optional<detail::ExampleTerms> {
    const auto& ex = data[static_cast<std::size_t>(idx)];
    detail::ExampleTerms t;
    t.loss = sft_loss(tape, ex.prompt, feats[static_cast<std::size_t>(idx)], ex.answer);
    return t;
  };
  ModelParams init = init_params(model, derive_seed(cfg.seed, "model"));
  auto res = detail::train_loop(std::move(init), ModelParams{}, data.size(), cfg, build, hook);
  res.pair.reference = res.pair.policy;
  return res;
}

/// Online VDPO / PaMi-VDPO: rejected clips are regenerated for every
/// (epoch, example) from a derived seed.
inline TrainResult run_preference(const VideoLibrary& lib, const std::vector<QAExample>& data,
                                  const PolicyPair& start, const TrainingConfig& cfg, const EpochHook& hook = {}) {
  if (cfg.method != Method::VDPO && cfg.method != Method::PAMI) {
    throw ConfigError("run_preference over QA examples needs method vdpo or pami", "method");
  }
  const auto feats = detail::clip_features(lib, data);
  const std::size_t n = cfg.candidates();
  const CandidatePolicy policy = cfg.specs.empty() ? cfg.policy : CandidatePolicy::Explicit;
  auto build = [&](Tape& tape, int idx, int epoch, RunLog& log) -> std::optional<detail::ExampleTerms> {
    const auto& ex = data[static_cast<std::size_t>(idx)];
    Rng rng(derive_seed(cfg.seed, "augment", static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(idx)));
    CandidateSet set;
    try {
      const VideoClip clip = clip_of(lib, ex);
      set = cfg.specs.empty() && !cfg.spec_types.empty() ? build_candidate_set(clip, lib, cfg.spec_types, n, rng)
                                                         : build_candidate_set(clip, lib, policy, n, rng, cfg.specs);
    } catch (const AugmentationUnavailable& e) {
      log.warnings.push_back("epoch " + std::to_string(epoch) + " example " + std::to_string(idx) +
                             " skipped: " + e.what());
      return std::nullopt;
    }
    detail::ExampleTerms t;
    std::vector<FeatureTensor> rejected;
    for (const auto& e : set.entries) {
      rejected.push_back(render_features(e.clip, lib.config));
      t.specs.push_back(to_text(e.spec));
      t.labels.push_back(oracle_reject_label(ex, e.clip));
    }
    const auto& chosen = feats[static_cast<std::size_t>(idx)];
    if (cfg.method == Method::VDPO) {
      auto v = vdpo_loss(tape, cfg.beta, start.reference, ex.prompt, ex.answer, chosen, rejected.front());
      t.loss = v.loss;
      t.margin = v.reward_chosen - v.reward_rejected;
    } else {
      auto p = pami_vdpo_loss(tape, cfg.beta, start.reference, ex.prompt, ex.answer, chosen, rejected, cfg.strategy,
                              cfg.mode);
      t.loss = p.loss;
      t.margin = p.margin;
      t.alpha = std::move(p.alpha);
      t.distance = std::move(p.distance);
    }
    return t;
  };
  return detail::train_loop(start.policy, start.reference, data.size(), cfg, build, hook);
}

/// Offline DPO over (chosen, rejected) responses on the original clip.
inline TrainResult run_preference(const VideoLibrary& lib, const std::vector<PreferenceRecord>& data,
                                  const PolicyPair& start, const TrainingConfig& cfg, const EpochHook& hook = {}) {
  if (cfg.method != Method::DPO) {
    throw ConfigError("run_preference over preference records needs method dpo", "method");
  }
  std::vector<FeatureTensor> feats;
  feats.reserve(data.size());
  for (const auto& r : data) feats.push_back(render_features(clip_of(lib, r.example), lib.config));
  auto build = [&](Tape& tape, int idx, int, RunLog&) -> std::optional<detail::ExampleTerms> {
    const auto& r = data[static_cast<std::size_t>(idx)];
    const auto& f = feats[static_cast<std::size_t>(idx)];
    const Var rw = reward(tape, start.reference, r.example.prompt, f, r.chosen);
    const Var rl = reward(tape, start.reference, r.example.prompt, f, r.rejected);
    detail::ExampleTerms t;
    t.loss = dpo_loss(tape, cfg.beta, rw, rl);
    t.margin = tape.value(rw) - tape.value(rl);
    return t;
  };
  return detail::train_loop(start.policy, start.reference, data.size(), cfg, build, hook);
}

// ---------------------------------------------------------------------------
// Loss curve statistics.

struct CurveStats {
  std::vector<int> steps;
  std::vector<double> mean;
  std::vector<double> variance;  // population variance across runs
  std::size_t runs = 0;
};

/// Per-step mean and variance of the loss across runs sharing a step grid.
inline CurveStats loss_stats(const std::vector<const RunLog*>& runs) {
  if (runs.empty()) throw InputError("loss_stats needs at least one run");
  CurveStats c;
  c.runs = runs.size();
  for (const auto& s : runs.front()->steps) c.steps.push_back(s.step);
  for (const RunLog* r : runs) {
    if (r->steps.size() != c.steps.size()) throw InputError("runs do not share a step grid");
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      if (r->steps[i].step != c.steps[i]) throw InputError("runs do not share a step grid");
    }
  }
  const double k = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < c.steps.size(); ++i) {
    double m = 0.0;
    for (const RunLog* r : runs) m += r->steps[i].loss;
    m /= k;
    double v = 0.0;
    for (const RunLog* r : runs) v += (r->steps[i].loss - m) * (r->steps[i].loss - m);
    c.mean.push_back(m);
    c.variance.push_back(v / k);
  }
  return c;
}

/// Groups runs by label and summarizes each group.
inline std::map<std::string, CurveStats> loss_stats(const std::vector<RunLog>& logs,
                                                    const std::vector<std::string>& groups) {
  if (logs.size() != groups.size()) throw InputError("one group label per run is required");
  std::map<std::string, std::vector<const RunLog*>> by;
  for (std::size_t i = 0; i < logs.size(); ++i) by[groups[i]].push_back(&logs[i]);
  std::map<std::string, CurveStats> out;
  for (const auto& [g, rs] : by) out[g] = loss_stats(rs);
  return out;
}

struct HalfSummary {
  double mean = 0.0;
  double variance = 0.0;
};

/// Averages of the per-step mean and variance over the final half of the grid.
inline HalfSummary final_half(const CurveStats& c) {
  HalfSummary h;
  const std::size_t n = c.steps.size();
  if (n == 0) return h;
  const std::size_t from = n / 2;
  for (std::size_t i = from; i < n; ++i) {
    h.mean += c.mean[i];
    h.variance += c.variance[i];
  }
  h.mean /= static_cast<double>(n - from);
  h.variance /= static_cast<double>(n - from);
  return h;
}

}  // namespace pami
