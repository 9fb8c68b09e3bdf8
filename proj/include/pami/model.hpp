#pragma once

// Tiny conditional answer model standing in for a video LLM.
//
// Frame features are projected and tagged with temporal encodings; the
// prompt is folded into a context vector through per-slot mixing matrices;
// each answer position queries the frames with multi-head attention (plus
// a learned sink slot), passes through a gated MLP, and emits vocabulary
// logits. Gradients are hand-derived and checked against finite differences.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pami/core.hpp"
#include "pami/video_world.hpp"
#include "pami/vocabulary.hpp"

namespace pami {

struct ModelConfig {
  int vocab = kVocabSize;
  int embed = 32;  // E
  int feature_dim = 0;  // D
  int frames = 8;  // F
  int max_prompt = 8;
  int max_answer = 2;
  int heads = 2;

  void validate() const {
    if (vocab < 2) throw ConfigError("model.vocab must be >= 2", "vocab");
    if (embed < 1) throw ConfigError("model.embed must be >= 1", "embed");
    if (feature_dim < 1) throw ConfigError("model.feature_dim must be >= 1", "feature_dim");
    if (frames < 1) throw ConfigError("model.frames must be >= 1", "frames");
    if (max_prompt < 1 || max_answer < 1) throw ConfigError("model prompt/answer limits must be >= 1", "max_prompt");
    if (heads < 1) throw ConfigError("model.heads must be >= 1", "heads");
  }
  bool operator==(const ModelConfig&) const = default;
};

inline ModelConfig model_config_for(const WorldConfig& w, int embed = 32, int heads = 2) {
  ModelConfig c;
  c.embed = embed;
  c.heads = heads;
  c.feature_dim = w.feature_dim();
  c.frames = w.frames;
  return c;
}

struct ParamBlock {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Offsets of every parameter matrix inside the flat value vector.
struct ParamLayout {
  struct Head {
    std::size_t query, key, value, output, sink_key, sink_value;
  };
  std::size_t token_embedding = 0, feature_projection = 0, temporal_position = 0, prompt_slot = 0,
              answer_position = 0, mlp_in = 0, mlp_gate = 0, mlp_out = 0, head = 0, head_bias = 0;
  std::vector<Head> heads;
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;

  explicit ParamLayout(const ModelConfig& c = {}) {
    const int E = c.embed;
    auto add = [&](const std::string& name, int rows, int cols) {
      blocks.push_back({name, rows, cols, total});
      const std::size_t at = total;
      total += blocks.back().size();
      return at;
    };
    token_embedding = add("token_embedding", c.vocab, E);
    feature_projection = add("feature_projection", c.feature_dim, E);
    temporal_position = add("temporal_position", c.frames, E);
    prompt_slot = add("prompt_slot", c.max_prompt * E, E);
    answer_position = add("answer_position", c.max_answer, E);
    for (int h = 0; h < c.heads; ++h) {
      const std::string p = "attn" + std::to_string(h) + ".";
      Head hd{};
      hd.query = add(p + "query", E, E);
      hd.key = add(p + "key", E, E);
      hd.value = add(p + "value", E, E);
      hd.output = add(p + "output", E, E);
      hd.sink_key = add(p + "sink_key", 1, E);
      hd.sink_value = add(p + "sink_value", 1, E);
      heads.push_back(hd);
    }
    mlp_in = add("mlp_in", E, E);
    mlp_gate = add("mlp_gate", E, E);
    mlp_out = add("mlp_out", E, E);
    head = add("head", E, c.vocab);
    head_bias = add("head_bias", 1, c.vocab);
  }

  const ParamBlock& block(const std::string& name) const {
    for (const auto& b : blocks) {
      if (b.name == name) return b;
    }
    throw InputError("unknown parameter block " + name);
  }
};

/// Flat parameter store. Gradients share the same layout.
struct ModelParams {
  ModelConfig config;
  ParamLayout layout;
  std::vector<double> values;

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& c) : config(c), layout(c), values(layout.total, 0.0) {}

  double* at(std::size_t offset) { return values.data() + offset; }
  const double* at(std::size_t offset) const { return values.data() + offset; }
  std::span<double> block(const std::string& name) {
    const auto& b = layout.block(name);
    return {values.data() + b.offset, b.size()};
  }
  std::span<const double> block(const std::string& name) const {
    const auto& b = layout.block(name);
    return {values.data() + b.offset, b.size()};
  }
  bool operator==(const ModelParams& o) const { return config == o.config && values == o.values; }
};

using Gradients = ModelParams;

inline Gradients zero_like(const ModelParams& p) { return Gradients(p.config); }

struct PolicyPair {
  ModelParams policy;
  ModelParams reference;  // frozen after SFT
};

/// Teacher-forced logits, one vector per answer position.
struct TokenDistributions {
  std::vector<std::vector<double>> logits;
  std::size_t positions() const { return logits.size(); }
};

/// Uniform in [-1/sqrt(E), 1/sqrt(E)] for every matrix; head bias zero.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p(config);
  Rng rng(derive_seed(seed, "init"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.embed));
  for (const auto& b : p.layout.blocks) {
    if (b.name == "head_bias") continue;
    for (std::size_t i = 0; i < b.size(); ++i) p.values[b.offset + i] = rng.uniform(-scale, scale);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward.

namespace detail {

// y[E_out] += x[E_in] * W (W row-major E_in x E_out)
inline void vec_mat_acc(const double* x, const double* W, int in, int out, double* y) {
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* w = W + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) y[j] += xi * w[j];
  }
}

// dx[in] += W * dy (W row-major in x out)
inline void mat_vec_acc(const double* W, const double* dy, int in, int out, double* dx) {
  for (int i = 0; i < in; ++i) {
    const double* w = W + static_cast<std::size_t>(i) * out;
    double s = 0.0;
    for (int j = 0; j < out; ++j) s += w[j] * dy[j];
    dx[i] += s;
  }
}

// dW += x ⊗ dy
inline void outer_acc(const double* x, const double* dy, int in, int out, double* dW) {
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    double* w = dW + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) w[j] += xi * dy[j];
  }
}

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Intermediate values of one forward pass, kept for backward.
struct ForwardCache {
  TokenSeq prompt;
  TokenSeq prev;  // previous-answer tokens feeding positions 1..K-1
  const FeatureTensor* features = nullptr;
  std::vector<double> frame;  // F x E
  std::vector<std::vector<double>> keys, values;  // per head, F x E
  std::vector<double> context;  // E

  struct Position {
    std::vector<double> u, z, pre_in, pre_gate, gate, m, z2, logits, probs;
    std::vector<std::vector<double>> q, attn, o;  // per head; attn has F+1 entries (sink first)
  };
  std::vector<Position> pos;
};

inline void check_inputs(const ModelConfig& c, const TokenSeq& prompt, const FeatureTensor& x,
                         const TokenSeq& answer) {
  if (static_cast<int>(prompt.size()) > c.max_prompt) throw InputError("prompt longer than model max_prompt");
  if (static_cast<int>(answer.size()) > c.max_answer) throw InputError("answer longer than model max_answer");
  if (x.frames != c.frames || x.dim != c.feature_dim) throw InputError("feature tensor shape mismatch");
  for (Token t : prompt) {
    if (t < 0 || t >= c.vocab) throw InputError("prompt token out of vocabulary: " + std::to_string(t));
  }
  for (Token t : answer) {
    if (t < 0 || t >= c.vocab) throw InputError("answer token out of vocabulary: " + std::to_string(t));
  }
}

/// Computes `positions` answer positions; position k conditions on prev[k-1].
inline void forward_into(const ModelParams& P, const TokenSeq& prompt, const FeatureTensor& x,
                         const TokenSeq& prev, int positions, ForwardCache& cache) {
  const auto& c = P.config;
  const auto& L = P.layout;
  const int E = c.embed, F = c.frames, D = c.feature_dim, V = c.vocab, H = c.heads;
  const double inv_sqrt_e = 1.0 / std::sqrt(static_cast<double>(E));
  check_inputs(c, prompt, x, prev);
  if (positions < 1 || positions > c.max_answer) throw InputError("answer length must be in [1, max_answer]");
  cache.prompt = prompt;
  cache.prev = prev;
  cache.features = &x;

  cache.frame.assign(static_cast<std::size_t>(F * E), 0.0);
  for (int t = 0; t < F; ++t) {
    double* e = cache.frame.data() + static_cast<std::size_t>(t) * E;
    const double* xt = x.values.data() + static_cast<std::size_t>(t) * D;
    detail::vec_mat_acc(xt, P.at(L.feature_projection), D, E, e);
    const double* tp = P.at(L.temporal_position) + static_cast<std::size_t>(t) * E;
    for (int j = 0; j < E; ++j) e[j] += tp[j];
  }
  cache.keys.assign(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(F * E), 0.0));
  cache.values.assign(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(F * E), 0.0));
  for (int h = 0; h < H; ++h) {
    for (int t = 0; t < F; ++t) {
      const double* e = cache.frame.data() + static_cast<std::size_t>(t) * E;
      detail::vec_mat_acc(e, P.at(L.heads[h].key), E, E, cache.keys[h].data() + static_cast<std::size_t>(t) * E);
      detail::vec_mat_acc(e, P.at(L.heads[h].value), E, E, cache.values[h].data() + static_cast<std::size_t>(t) * E);
    }
  }
  cache.context.assign(static_cast<std::size_t>(E), 0.0);
  for (std::size_t j = 0; j < prompt.size(); ++j) {
    const double* emb = P.at(L.token_embedding) + static_cast<std::size_t>(prompt[j]) * E;
    detail::vec_mat_acc(emb, P.at(L.prompt_slot) + j * static_cast<std::size_t>(E * E), E, E, cache.context.data());
  }

  cache.pos.assign(static_cast<std::size_t>(positions), {});
  for (int k = 0; k < positions; ++k) {
    auto& ps = cache.pos[static_cast<std::size_t>(k)];
    ps.u = cache.context;
    const double* ap = P.at(L.answer_position) + static_cast<std::size_t>(k) * E;
    for (int j = 0; j < E; ++j) ps.u[j] += ap[j];
    if (k > 0) {
      const double* emb = P.at(L.token_embedding) + static_cast<std::size_t>(prev[static_cast<std::size_t>(k - 1)]) * E;
      for (int j = 0; j < E; ++j) ps.u[j] += emb[j];
    }
    ps.z = ps.u;
    ps.q.assign(static_cast<std::size_t>(H), {});
    ps.attn.assign(static_cast<std::size_t>(H), {});
    ps.o.assign(static_cast<std::size_t>(H), {});
    for (int h = 0; h < H; ++h) {
      const auto& hd = L.heads[static_cast<std::size_t>(h)];
      auto& q = ps.q[h];
      q.assign(static_cast<std::size_t>(E), 0.0);
      detail::vec_mat_acc(ps.u.data(), P.at(hd.query), E, E, q.data());
      std::vector<double> scores(static_cast<std::size_t>(F + 1));
      scores[0] = detail::dot(q.data(), P.at(hd.sink_key), E) * inv_sqrt_e;
      for (int t = 0; t < F; ++t) {
        scores[static_cast<std::size_t>(t + 1)] =
            detail::dot(q.data(), cache.keys[h].data() + static_cast<std::size_t>(t) * E, E) * inv_sqrt_e;
      }
      ps.attn[h] = softmax(scores);
      auto& o = ps.o[h];
      o.assign(static_cast<std::size_t>(E), 0.0);
      const double* sv = P.at(hd.sink_value);
      for (int j = 0; j < E; ++j) o[j] = ps.attn[h][0] * sv[j];
      for (int t = 0; t < F; ++t) {
        const double a = ps.attn[h][static_cast<std::size_t>(t + 1)];
        const double* v = cache.values[h].data() + static_cast<std::size_t>(t) * E;
        for (int j = 0; j < E; ++j) o[j] += a * v[j];
      }
      detail::vec_mat_acc(o.data(), P.at(hd.output), E, E, ps.z.data());
    }
    ps.pre_in.assign(static_cast<std::size_t>(E), 0.0);
    ps.pre_gate.assign(static_cast<std::size_t>(E), 0.0);
    detail::vec_mat_acc(ps.z.data(), P.at(L.mlp_in), E, E, ps.pre_in.data());
    detail::vec_mat_acc(ps.z.data(), P.at(L.mlp_gate), E, E, ps.pre_gate.data());
    ps.gate.resize(static_cast<std::size_t>(E));
    ps.m.resize(static_cast<std::size_t>(E));
    for (int j = 0; j < E; ++j) {
      ps.gate[j] = sigmoid(ps.pre_gate[j]);
      ps.m[j] = ps.pre_in[j] * ps.gate[j];
    }
    ps.z2 = ps.z;
    detail::vec_mat_acc(ps.m.data(), P.at(L.mlp_out), E, E, ps.z2.data());
    ps.logits.assign(P.at(L.head_bias), P.at(L.head_bias) + V);
    detail::vec_mat_acc(ps.z2.data(), P.at(L.head), E, V, ps.logits.data());
    ps.probs = softmax(ps.logits);
  }
}

inline TokenDistributions forward(const ModelParams& params, const TokenSeq& prompt,
                                  const FeatureTensor& features, const TokenSeq& answer) {
  ForwardCache cache;
  forward_into(params, prompt, features, answer, static_cast<int>(answer.size()), cache);
  TokenDistributions out;
  for (auto& p : cache.pos) out.logits.push_back(std::move(p.logits));
  return out;
}

inline double log_prob_from_cache(const ForwardCache& cache, const TokenSeq& answer) {
  double lp = 0.0;
  for (std::size_t k = 0; k < answer.size(); ++k) {
    lp += log_softmax(cache.pos[k].logits)[static_cast<std::size_t>(answer[k])];
  }
  return lp;
}

/// Sum over answer positions of log-softmax(logits)[answer token].
inline double sequence_log_prob(const ModelParams& params, const TokenSeq& prompt,
                                const FeatureTensor& features, const TokenSeq& answer) {
  if (answer.empty()) throw InputError("answer must contain at least one token");
  ForwardCache cache;
  forward_into(params, prompt, features, answer, static_cast<int>(answer.size()), cache);
  return log_prob_from_cache(cache, answer);
}

/// grads += scale * d(sequence log-prob)/d(params), given a cache from forward_into.
inline void accumulate_log_prob_gradient(const ModelParams& P, const ForwardCache& cache,
                                         const TokenSeq& answer, double scale, Gradients& G) {
  const auto& c = P.config;
  const auto& L = P.layout;
  const int E = c.embed, F = c.frames, D = c.feature_dim, V = c.vocab, H = c.heads;
  const double inv_sqrt_e = 1.0 / std::sqrt(static_cast<double>(E));
  std::vector<double> dframe(static_cast<std::size_t>(F * E), 0.0);
  std::vector<std::vector<double>> dkeys(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(F * E), 0.0));
  std::vector<std::vector<double>> dvals(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(F * E), 0.0));
  std::vector<double> dctx(static_cast<std::size_t>(E), 0.0);
  std::vector<double> dlogits(static_cast<std::size_t>(V));
  std::vector<double> dz2(static_cast<std::size_t>(E)), dz(static_cast<std::size_t>(E)), dm(static_cast<std::size_t>(E));
  std::vector<double> dp_in(static_cast<std::size_t>(E)), dp_gate(static_cast<std::size_t>(E));
  std::vector<double> du(static_cast<std::size_t>(E)), d_o(static_cast<std::size_t>(E)), dq(static_cast<std::size_t>(E));
  std::vector<double> dattn(static_cast<std::size_t>(F + 1)), dscore(static_cast<std::size_t>(F + 1));

  for (std::size_t k = 0; k < answer.size(); ++k) {
    const auto& ps = cache.pos[k];
    for (int v = 0; v < V; ++v) dlogits[v] = -scale * ps.probs[v];
    dlogits[static_cast<std::size_t>(answer[k])] += scale;

    detail::outer_acc(ps.z2.data(), dlogits.data(), E, V, G.at(L.head));
    for (int v = 0; v < V; ++v) G.at(L.head_bias)[v] += dlogits[v];
    std::fill(dz2.begin(), dz2.end(), 0.0);
    detail::mat_vec_acc(P.at(L.head), dlogits.data(), E, V, dz2.data());

    dz = dz2;
    std::fill(dm.begin(), dm.end(), 0.0);
    detail::mat_vec_acc(P.at(L.mlp_out), dz2.data(), E, E, dm.data());
    detail::outer_acc(ps.m.data(), dz2.data(), E, E, G.at(L.mlp_out));
    for (int j = 0; j < E; ++j) {
      dp_in[j] = dm[j] * ps.gate[j];
      dp_gate[j] = dm[j] * ps.pre_in[j] * ps.gate[j] * (1.0 - ps.gate[j]);
    }
    detail::outer_acc(ps.z.data(), dp_in.data(), E, E, G.at(L.mlp_in));
    detail::outer_acc(ps.z.data(), dp_gate.data(), E, E, G.at(L.mlp_gate));
    detail::mat_vec_acc(P.at(L.mlp_in), dp_in.data(), E, E, dz.data());
    detail::mat_vec_acc(P.at(L.mlp_gate), dp_gate.data(), E, E, dz.data());

    du = dz;
    for (int h = 0; h < H; ++h) {
      const auto& hd = L.heads[static_cast<std::size_t>(h)];
      const auto& attn = ps.attn[h];
      detail::outer_acc(ps.o[h].data(), dz.data(), E, E, G.at(hd.output));
      std::fill(d_o.begin(), d_o.end(), 0.0);
      detail::mat_vec_acc(P.at(hd.output), dz.data(), E, E, d_o.data());

      const double* sv = P.at(hd.sink_value);
      double* dsv = G.at(hd.sink_value);
      dattn[0] = detail::dot(d_o.data(), sv, E);
      for (int j = 0; j < E; ++j) dsv[j] += attn[0] * d_o[j];
      for (int t = 0; t < F; ++t) {
        const double* v = cache.values[h].data() + static_cast<std::size_t>(t) * E;
        double* dv = dvals[h].data() + static_cast<std::size_t>(t) * E;
        const double a = attn[static_cast<std::size_t>(t + 1)];
        dattn[static_cast<std::size_t>(t + 1)] = detail::dot(d_o.data(), v, E);
        for (int j = 0; j < E; ++j) dv[j] += a * d_o[j];
      }
      double mean = 0.0;
      for (int i = 0; i <= F; ++i) mean += attn[i] * dattn[i];
      for (int i = 0; i <= F; ++i) dscore[i] = attn[i] * (dattn[i] - mean) * inv_sqrt_e;

      std::fill(dq.begin(), dq.end(), 0.0);
      const double* sk = P.at(hd.sink_key);
      double* dsk = G.at(hd.sink_key);
      const auto& q = ps.q[h];
      for (int j = 0; j < E; ++j) {
        dq[j] += dscore[0] * sk[j];
        dsk[j] += dscore[0] * q[j];
      }
      for (int t = 0; t < F; ++t) {
        const double ds = dscore[static_cast<std::size_t>(t + 1)];
        const double* key = cache.keys[h].data() + static_cast<std::size_t>(t) * E;
        double* dk = dkeys[h].data() + static_cast<std::size_t>(t) * E;
        for (int j = 0; j < E; ++j) {
          dq[j] += ds * key[j];
          dk[j] += ds * q[j];
        }
      }
      detail::outer_acc(ps.u.data(), dq.data(), E, E, G.at(hd.query));
      detail::mat_vec_acc(P.at(hd.query), dq.data(), E, E, du.data());
    }

    for (int j = 0; j < E; ++j) dctx[j] += du[j];
    double* dap = G.at(L.answer_position) + k * static_cast<std::size_t>(E);
    for (int j = 0; j < E; ++j) dap[j] += du[j];
    if (k > 0) {
      double* demb = G.at(L.token_embedding) + static_cast<std::size_t>(cache.prev[k - 1]) * E;
      for (int j = 0; j < E; ++j) demb[j] += du[j];
    }
  }

  for (int h = 0; h < H; ++h) {
    const auto& hd = L.heads[static_cast<std::size_t>(h)];
    for (int t = 0; t < F; ++t) {
      const double* e = cache.frame.data() + static_cast<std::size_t>(t) * E;
      const double* dk = dkeys[h].data() + static_cast<std::size_t>(t) * E;
      const double* dv = dvals[h].data() + static_cast<std::size_t>(t) * E;
      double* de = dframe.data() + static_cast<std::size_t>(t) * E;
      detail::outer_acc(e, dk, E, E, G.at(hd.key));
      detail::outer_acc(e, dv, E, E, G.at(hd.value));
      detail::mat_vec_acc(P.at(hd.key), dk, E, E, de);
      detail::mat_vec_acc(P.at(hd.value), dv, E, E, de);
    }
  }
  const FeatureTensor& x = *cache.features;
  for (int t = 0; t < F; ++t) {
    const double* de = dframe.data() + static_cast<std::size_t>(t) * E;
    detail::outer_acc(x.values.data() + static_cast<std::size_t>(t) * D, de, D, E, G.at(L.feature_projection));
    double* dtp = G.at(L.temporal_position) + static_cast<std::size_t>(t) * E;
    for (int j = 0; j < E; ++j) dtp[j] += de[j];
  }
  for (std::size_t j = 0; j < cache.prompt.size(); ++j) {
    const double* emb = P.at(L.token_embedding) + static_cast<std::size_t>(cache.prompt[j]) * E;
    const double* slot = P.at(L.prompt_slot) + j * static_cast<std::size_t>(E * E);
    detail::outer_acc(emb, dctx.data(), E, E, G.at(L.prompt_slot) + j * static_cast<std::size_t>(E * E));
    detail::mat_vec_acc(slot, dctx.data(), E, E, G.at(L.token_embedding) + static_cast<std::size_t>(cache.prompt[j]) * E);
  }
}

/// Greedy decode of `length` answer tokens.
inline TokenSeq greedy_decode(const ModelParams& params, const TokenSeq& prompt, const FeatureTensor& features,
                              int length) {
  TokenSeq out;
  ForwardCache cache;
  for (int k = 0; k < length; ++k) {
    forward_into(params, prompt, features, out, k + 1, cache);
    const auto& lg = cache.pos[static_cast<std::size_t>(k)].logits;
    int best = 0;
    for (int v = 1; v < static_cast<int>(lg.size()); ++v) {
      if (lg[static_cast<std::size_t>(v)] > lg[static_cast<std::size_t>(best)]) best = v;
    }
    out.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scalar reverse-mode tape over sequence log-probabilities.

class Tape;

struct Var {
  int id = -1;
  const Tape* tape = nullptr;
};

/// Records a scalar loss graph whose leaves are policy log-probabilities
/// (differentiable) or constants (reference terms, detached weights).
class Tape {
 public:
  explicit Tape(const ModelParams& policy) : policy_(&policy) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(double v) { return push({Op::Const, -1, -1, v, 0.0, {}, {}, -1}); }

  Var log_prob(const TokenSeq& prompt, const FeatureTensor& features, const TokenSeq& answer) {
    if (answer.empty()) throw InputError("answer must contain at least one token");
    auto leaf = std::make_unique<Leaf>();
    leaf->features = features;
    leaf->answer = answer;
    forward_into(*policy_, prompt, leaf->features, answer, static_cast<int>(answer.size()), leaf->cache);
    leaf->cache.features = &leaf->features;
    const double v = log_prob_from_cache(leaf->cache, answer);
    leaves_.push_back(std::move(leaf));
    return push({Op::LogProb, -1, -1, v, 0.0, {}, {}, static_cast<int>(leaves_.size()) - 1});
  }

  /// Teacher-forced logits recorded for a log_prob leaf.
  TokenDistributions distributions(Var v) const {
    const Node& n = node(v);
    if (n.op != Op::LogProb) throw UsageError("distributions requested for a non-leaf node");
    TokenDistributions d;
    for (const auto& p : leaves_[static_cast<std::size_t>(n.leaf)]->cache.pos) d.logits.push_back(p.logits);
    return d;
  }

  Var add(Var a, Var b) { return push({Op::Add, own(a), own(b), value(a) + value(b), 0.0, {}, {}, -1}); }
  Var sub(Var a, Var b) { return push({Op::Sub, own(a), own(b), value(a) - value(b), 0.0, {}, {}, -1}); }
  Var scale(Var a, double c) { return push({Op::Scale, own(a), -1, c * value(a), c, {}, {}, -1}); }
  Var softplus(Var a) { return push({Op::Softplus, own(a), -1, pami::softplus(value(a)), 0.0, {}, {}, -1}); }

  /// sum_i w_i * x_i with constant weights; accumulates in index order.
  Var weighted_sum(const std::vector<Var>& xs, const std::vector<double>& w) {
    if (xs.size() != w.size() || xs.empty()) throw UsageError("weighted_sum needs matching non-empty inputs");
    double s = 0.0;
    std::vector<int> ids;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      s += w[i] * value(xs[i]);
      ids.push_back(own(xs[i]));
    }
    return push({Op::WeightedSum, -1, -1, s, 0.0, std::move(ids), w, -1});
  }

  double value(Var v) const { return node(v).value; }

  /// Gradient of the scalar `root` with respect to the policy parameters.
  Gradients backward(Var root) const {
    Gradients g = zero_like(*policy_);
    backward_into(root, 1.0, g);
    return g;
  }

  /// Adds scale * d(root)/d(policy) into `g`.
  void backward_into(Var root, double scale, Gradients& g) const {
    own(root);
    if (g.values.size() != policy_->values.size()) throw UsageError("gradient buffer shape mismatch");
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[static_cast<std::size_t>(root.id)] = scale;
    for (int i = root.id; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      switch (n.op) {
        case Op::Const: break;
        case Op::LogProb: {
          const auto& leaf = *leaves_[static_cast<std::size_t>(n.leaf)];
          accumulate_log_prob_gradient(*policy_, leaf.cache, leaf.answer, a, g);
          break;
        }
        case Op::Add:
          adj[static_cast<std::size_t>(n.a)] += a;
          adj[static_cast<std::size_t>(n.b)] += a;
          break;
        case Op::Sub:
          adj[static_cast<std::size_t>(n.a)] += a;
          adj[static_cast<std::size_t>(n.b)] -= a;
          break;
        case Op::Scale: adj[static_cast<std::size_t>(n.a)] += a * n.c; break;
        case Op::Softplus:
          adj[static_cast<std::size_t>(n.a)] += a * sigmoid(nodes_[static_cast<std::size_t>(n.a)].value);
          break;
        case Op::WeightedSum:
          for (std::size_t k = 0; k < n.args.size(); ++k) adj[static_cast<std::size_t>(n.args[k])] += a * n.weights[k];
          break;
      }
    }
  }

  const ModelParams& policy() const { return *policy_; }

 private:
  enum class Op { Const, LogProb, Add, Sub, Scale, Softplus, WeightedSum };
  struct Node {
    Op op;
    int a, b;
    double value;
    double c;
    std::vector<int> args;
    std::vector<double> weights;
    int leaf;
  };
  struct Leaf {
    FeatureTensor features;
    TokenSeq answer;
    ForwardCache cache;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1, this};
  }
  int own(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw UsageError("variable does not belong to this tape");
    }
    return v.id;
  }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(own(v))]; }

  const ModelParams* policy_;
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<Leaf>> leaves_;
};

// ---------------------------------------------------------------------------
// Finite-difference verification.

using LossBuilder = std::function<Var(Tape&)>;

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_coord = 0;
  bool pass = false;
};

/// Compares analytic gradients with central differences on `n_coords`
/// coordinates, drawn from those with a non-zero analytic gradient first.
/// Relative error is |a - f| / max(|a|, |f|, 1e-6); pass iff max < tol.
inline FiniteDiffReport finite_diff_check(const ModelParams& params, const LossBuilder& build,
                                          std::size_t n_coords, double h, double tol,
                                          std::uint64_t seed = 0) {
  if (!(tol >= 0.0)) throw InputError("tolerance must be non-negative");
  Gradients analytic = [&] {
    Tape tape(params);
    return tape.backward(build(tape));
  }();
  std::vector<std::size_t> active, idle;
  for (std::size_t i = 0; i < analytic.values.size(); ++i) {
    (std::abs(analytic.values[i]) > 1e-12 ? active : idle).push_back(i);
  }
  Rng rng(derive_seed(seed, "finite-diff"));
  rng.shuffle(active);
  rng.shuffle(idle);
  std::vector<std::size_t> coords(active.begin(), active.begin() + static_cast<std::ptrdiff_t>(std::min(n_coords, active.size())));
  for (std::size_t i = 0; coords.size() < n_coords && i < idle.size(); ++i) coords.push_back(idle[i]);

  auto eval = [&](const ModelParams& p) {
    Tape tape(p);
    return tape.value(build(tape));
  };
  FiniteDiffReport rep;
  ModelParams probe = params;
  for (std::size_t idx : coords) {
    const double orig = probe.values[idx];
    probe.values[idx] = orig + h;
    const double up = eval(probe);
    probe.values[idx] = orig - h;
    const double down = eval(probe);
    probe.values[idx] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double a = analytic.values[idx];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
    if (rep.coords_checked == 0 || rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_coord = idx;
    }
    ++rep.coords_checked;
  }
  rep.pass = rep.coords_checked > 0 && rep.max_rel_error < tol;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, format version, config, shape manifest, raw doubles.

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'M', 'I', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw InputError("checkpoint truncated");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(os, kCheckpointVersion);
  const auto& c = p.config;
  for (int v : {c.vocab, c.embed, c.feature_dim, c.frames, c.max_prompt, c.max_answer, c.heads}) {
    detail::write_pod(os, static_cast<std::int32_t>(v));
  }
  detail::write_pod(os, static_cast<std::uint32_t>(p.layout.blocks.size()));
  for (const auto& b : p.layout.blocks) {
    detail::write_pod(os, static_cast<std::uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    detail::write_pod(os, static_cast<std::int32_t>(b.rows));
    detail::write_pod(os, static_cast<std::int32_t>(b.cols));
  }
  os.write(reinterpret_cast<const char*>(p.values.data()),
           static_cast<std::streamsize>(p.values.size() * sizeof(double)));
  if (!os) throw InputError("failed writing checkpoint: " + path);
}

/// Loads a checkpoint; `expected`, when given, must match the stored config.
inline ModelParams load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw InputError("not a checkpoint file: " + path);
  if (detail::read_pod<std::uint32_t>(is) != kCheckpointVersion) throw InputError("unsupported checkpoint version");
  ModelConfig c;
  c.vocab = detail::read_pod<std::int32_t>(is);
  c.embed = detail::read_pod<std::int32_t>(is);
  c.feature_dim = detail::read_pod<std::int32_t>(is);
  c.frames = detail::read_pod<std::int32_t>(is);
  c.max_prompt = detail::read_pod<std::int32_t>(is);
  c.max_answer = detail::read_pod<std::int32_t>(is);
  c.heads = detail::read_pod<std::int32_t>(is);
  c.validate();
  if (expected && !(*expected == c)) throw InputError("checkpoint shape manifest does not match the configured model");
  ModelParams p(c);
  const auto nblocks = detail::read_pod<std::uint32_t>(is);
  if (nblocks != p.layout.blocks.size()) throw InputError("checkpoint shape manifest mismatch (block count)");
  for (const auto& b : p.layout.blocks) {
    const auto len = detail::read_pod<std::uint32_t>(is);
    if (len > 256) throw InputError("checkpoint shape manifest corrupt");
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rows = detail::read_pod<std::int32_t>(is);
    const auto cols = detail::read_pod<std::int32_t>(is);
    if (!is || name != b.name || rows != b.rows || cols != b.cols) {
      throw InputError("checkpoint shape manifest mismatch at block " + b.name);
    }
  }
  is.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(double)));
  if (!is || is.gcount() != static_cast<std::streamsize>(p.values.size() * sizeof(double))) {
    throw InputError("checkpoint truncated");
  }
  is.peek();
  if (!is.eof()) throw InputError("checkpoint has trailing bytes");
  return p;
}

}  // namespace pami
