#pragma once

// Topic-aware convolutional neural tensor network.
//
//   sentence encoder  one conv layer (word-vector windows mixed by a k1-tap
//                     filter, ReLU) and one element-wise max-pool, shared by
//                     message and response;
//   topic attention   omega = T A v, alpha = softmax(omega), t = sum alpha_j e_j;
//   neural tensors    s(a, c) = tanh(a^T M c + V [a; c] + b) on (m, r), (r, t_m)
//                     and (m, t_r);
//   fusion            two-class softmax over w^T [s...] + b2; g = P(class 1).
//
// Backward passes are written out by hand and validated by finite differences
// in the test suite.

#include <array>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacntn/corpus.hpp"
#include "tacntn/numcore.hpp"

namespace tacntn {

enum class Pooling { windowed, global };

/// Which topic branches feed the fusion layer.
enum class Variant {
  full,  // (m, r), (r, t_m), (m, t_r) with learned attention
  cntn,  // (m, r) only
  avg,   // full, but topic vectors are plain means of topic-word embeddings
  msg,   // (m, r), (r, t_m)
  res,   // (m, r), (m, t_r)
};

inline std::string to_string(Pooling p) { return p == Pooling::windowed ? "windowed" : "global"; }

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "windowed") return Pooling::windowed;
  if (s == "global") return Pooling::global;
  throw Error("unknown pooling mode: " + s);
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::cntn: return "cntn";
    case Variant::avg: return "avg";
    case Variant::msg: return "msg";
    case Variant::res: return "res";
  }
  return "full";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "cntn") return Variant::cntn;
  if (s == "avg") return Variant::avg;
  if (s == "msg") return Variant::msg;
  if (s == "res") return Variant::res;
  throw Error("unknown model variant: " + s);
}

struct ModelConfig {
  std::size_t s = 20;  // max sentence length
  std::size_t d = 100;
  std::size_t feature_maps = 50;
  std::size_t conv_window = 3;
  std::size_t pool_window = 3;
  Pooling pooling = Pooling::global;
  std::size_t slices = 8;
  std::size_t n_topic_words = 50;
  Variant variant = Variant::full;
  bool share_attention = false;
  bool freeze_embeddings = false;

  std::size_t conv_positions() const { return s - conv_window + 1; }
  std::size_t pooled_positions() const {
    return pooling == Pooling::global ? 1 : conv_positions() / pool_window;
  }
  std::size_t pool_start(std::size_t p) const { return pooling == Pooling::global ? 0 : p * pool_window; }
  std::size_t pool_width() const { return pooling == Pooling::global ? conv_positions() : pool_window; }
  /// n_s, the sentence-vector dimension.
  std::size_t sentence_dim() const { return feature_maps * d * pooled_positions(); }

  bool uses_message_topics() const {
    return variant == Variant::full || variant == Variant::avg || variant == Variant::msg;
  }
  bool uses_response_topics() const {
    return variant == Variant::full || variant == Variant::avg || variant == Variant::res;
  }
  bool learned_attention() const { return variant != Variant::avg; }
  std::size_t fusion_inputs() const {
    return slices * (1 + (uses_message_topics() ? 1 : 0) + (uses_response_topics() ? 1 : 0));
  }

  void validate() const {
    if (s < 1 || d < 1 || feature_maps < 1 || conv_window < 1 || pool_window < 1) {
      throw Error("ModelConfig: every size must be >= 1");
    }
    if (conv_window > s) throw Error("ModelConfig: conv window k1 must be <= s");
    if (slices < 1) throw Error("ModelConfig: slices h must be >= 1");
    if (n_topic_words < 1) throw Error("ModelConfig: n_topic_words must be >= 1");
    if (pooling == Pooling::windowed && conv_positions() < pool_window) {
      throw Error("ModelConfig: pool window k2 exceeds the conv output length");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"s", c.s},
          {"d", c.d},
          {"feature_maps", c.feature_maps},
          {"conv_window", c.conv_window},
          {"pool_window", c.pool_window},
          {"pooling", to_string(c.pooling)},
          {"slices", c.slices},
          {"n_topic_words", c.n_topic_words},
          {"variant", to_string(c.variant)},
          {"share_attention", c.share_attention},
          {"freeze_embeddings", c.freeze_embeddings}};
}

/// Missing keys keep their defaults, so a partial JSON document works as a
/// config file.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  c.s = j.value("s", c.s);
  c.d = j.value("d", c.d);
  c.feature_maps = j.value("feature_maps", c.feature_maps);
  c.conv_window = j.value("conv_window", c.conv_window);
  c.pool_window = j.value("pool_window", c.pool_window);
  if (j.contains("pooling")) c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
  c.slices = j.value("slices", c.slices);
  c.n_topic_words = j.value("n_topic_words", c.n_topic_words);
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.share_attention = j.value("share_attention", c.share_attention);
  c.freeze_embeddings = j.value("freeze_embeddings", c.freeze_embeddings);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

struct NtnParams {
  Param tensor;  // a x h x c
  Param linear;  // h x (a + c)
  Param bias;    // h
};

struct ModelParams {
  Param embedding;  // (V+1) x d
  Param conv_w;     // F x k1
  Param conv_b;     // F x d
  Param attn_m;     // d x n_s
  Param attn_r;     // d x n_s, unused when attention is shared
  NtnParams mr;     // (m, r)
  NtnParams r_tm;   // (r, t_m)
  NtnParams m_tr;   // (m, t_r)
  Param fusion_w;   // fusion_inputs x 2
  Param fusion_b;   // 2

  const Param& response_attention(const ModelConfig& c) const { return c.share_attention ? attn_m : attn_r; }
  Param& response_attention(const ModelConfig& c) { return c.share_attention ? attn_m : attn_r; }

  /// Every allocated parameter in a fixed order.
  std::vector<Param*> all() {
    std::vector<Param*> out;
    for (Param* p : {&embedding, &conv_w, &conv_b, &attn_m, &attn_r, &mr.tensor, &mr.linear, &mr.bias,
                     &r_tm.tensor, &r_tm.linear, &r_tm.bias, &m_tr.tensor, &m_tr.linear, &m_tr.bias, &fusion_w,
                     &fusion_b}) {
      if (p->size() > 0) out.push_back(p);
    }
    return out;
  }
  std::vector<const Param*> all() const {
    std::vector<const Param*> out;
    for (Param* p : const_cast<ModelParams*>(this)->all()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (Param* p : all()) p->zero_grad();
  }
};

namespace detail {
inline Param uniform_param(std::string name, Shape shape, double limit, Rng& rng) {
  return Param(std::move(name), rng_uniform(rng, -limit, limit, shape));
}
inline double xavier(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}
inline NtnParams init_ntn(const std::string& prefix, std::size_t a, std::size_t c, std::size_t h, Rng& rng) {
  NtnParams p;
  p.tensor = uniform_param(prefix + ".tensor", {a, h, c}, 1.0 / std::sqrt(static_cast<double>(a * c)), rng);
  p.linear = uniform_param(prefix + ".linear", {h, a + c}, xavier(a + c, h), rng);
  p.bias = Param(prefix + ".bias", DenseArray({h}));
  return p;
}
}  // namespace detail

/// Random initialization. `embeddings`, when given, must be (V+1) x d.
inline ModelParams init_params(const ModelConfig& c, std::size_t vocab_size, Rng& rng,
                               const DenseArray* embeddings = nullptr) {
  c.validate();
  ModelParams p;
  if (embeddings) {
    if (embeddings->shape() != Shape{vocab_size + 1, c.d}) {
      throw Error("embedding table shape " + shape_string(embeddings->shape()) + " does not match vocabulary/d");
    }
    if (!embeddings->all_finite()) throw Error("embedding table contains non-finite values");
    p.embedding = Param("embedding", *embeddings);
  } else {
    DenseArray table({vocab_size + 1, c.d});
    for (std::size_t id = 1; id <= vocab_size; ++id) {
      for (double& v : table.row(id)) v = rng.uniform(-kEmbeddingInitRange, kEmbeddingInitRange);
    }
    p.embedding = Param("embedding", std::move(table));
  }
  for (double& v : p.embedding.value.row(kPadId)) v = 0.0;

  const std::size_t ns = c.sentence_dim();
  const std::size_t h = c.slices;
  p.conv_w = detail::uniform_param("conv.w", {c.feature_maps, c.conv_window},
                                   1.0 / std::sqrt(static_cast<double>(c.conv_window)), rng);
  p.conv_b = Param("conv.b", DenseArray({c.feature_maps, c.d}));
  if (c.learned_attention() && c.uses_message_topics()) {
    p.attn_m = detail::uniform_param("attention.message", {c.d, ns}, detail::xavier(ns, c.d), rng);
  }
  if (c.learned_attention() && c.uses_response_topics()) {
    if (c.share_attention) {
      if (p.attn_m.size() == 0) {
        p.attn_m = detail::uniform_param("attention.message", {c.d, ns}, detail::xavier(ns, c.d), rng);
      }
    } else {
      p.attn_r = detail::uniform_param("attention.response", {c.d, ns}, detail::xavier(ns, c.d), rng);
    }
  }
  p.mr = detail::init_ntn("ntn.mr", ns, ns, h, rng);
  if (c.uses_message_topics()) p.r_tm = detail::init_ntn("ntn.r_tm", ns, c.d, h, rng);
  if (c.uses_response_topics()) p.m_tr = detail::init_ntn("ntn.m_tr", ns, c.d, h, rng);
  p.fusion_w = detail::uniform_param("fusion.w", {c.fusion_inputs(), 2}, detail::xavier(c.fusion_inputs(), 2), rng);
  p.fusion_b = Param("fusion.b", DenseArray({2}));
  return p;
}

// ---------------------------------------------------------------------------
// Forward

struct MatchInput {
  TokenizedText message;
  TokenizedText response;
  std::vector<WordId> message_topics;   // ids into the model vocabulary
  std::vector<WordId> response_topics;
};

struct EncoderTrace {
  std::vector<WordId> ids;
  DenseArray conv;                   // F x L x d, after ReLU
  std::vector<std::uint32_t> argmax; // conv position behind each output entry
  std::vector<double> vec;           // n_s
};

struct AttentionTrace {
  std::vector<WordId> words;
  std::vector<double> projected;  // A v
  std::vector<double> omega;
  std::vector<double> alpha;
  std::vector<double> topic_vec;  // t, length d
};

struct ForwardTrace {
  EncoderTrace message;
  EncoderTrace response;
  AttentionTrace message_topic;
  AttentionTrace response_topic;
  std::vector<double> s_mr;
  std::vector<double> s_r_tm;
  std::vector<double> s_m_tr;
  std::vector<double> fusion_input;
  std::array<double, 2> logits{};
  double probability = 0.5;
};

inline EncoderTrace encode_sentence(const TokenizedText& text, const ModelParams& p, const ModelConfig& c) {
  if (text.ids.size() != c.s) {
    throw Error("encode_sentence: text length " + std::to_string(text.ids.size()) + " != s=" + std::to_string(c.s));
  }
  const std::size_t F = c.feature_maps, L = c.conv_positions(), d = c.d, k1 = c.conv_window;
  const std::size_t P = c.pooled_positions(), width = c.pool_width();
  const DenseArray& E = p.embedding.value;
  if (E.dim(1) != d) throw Error("encode_sentence: embedding width does not match d");
  for (WordId id : text.ids) {
    if (id >= E.dim(0)) throw Error("encode_sentence: word id beyond the embedding table");
  }

  EncoderTrace t;
  t.ids = text.ids;
  t.conv = DenseArray({F, L, d});
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t e = 0; e < d; ++e) {
        double acc = p.conv_b.value.at(f, e);
        for (std::size_t j = 0; j < k1; ++j) acc += p.conv_w.value.at(f, j) * E.at(text.ids[i + j], e);
        t.conv.at(f, i, e) = acc > 0.0 ? acc : 0.0;
      }
    }
  }
  t.vec.resize(F * P * d);
  t.argmax.resize(F * P * d);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t q = 0; q < P; ++q) {
      const std::size_t start = c.pool_start(q);
      for (std::size_t e = 0; e < d; ++e) {
        std::size_t best = start;
        for (std::size_t i = start + 1; i < start + width; ++i) {
          if (t.conv.at(f, i, e) > t.conv.at(f, best, e)) best = i;
        }
        const std::size_t out = (f * P + q) * d + e;
        t.vec[out] = t.conv.at(f, best, e);
        t.argmax[out] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return t;
}

/// attention == nullptr selects plain averaging.
inline AttentionTrace topic_attention(std::span<const WordId> words, std::span<const double> sentence_vec,
                                      const DenseArray* attention, const DenseArray& embedding) {
  if (words.empty()) throw Error("topic_attention: empty topic word set");
  const std::size_t d = embedding.dim(1);
  AttentionTrace t;
  t.words.assign(words.begin(), words.end());
  const std::size_t n = words.size();
  for (WordId w : words) {
    if (w >= embedding.dim(0)) throw Error("topic_attention: topic word id beyond the embedding table");
  }
  if (attention) {
    if (attention->dim(0) != d || attention->dim(1) != sentence_vec.size()) {
      throw Error("topic_attention: attention matrix " + shape_string(attention->shape()) + " does not match d=" +
                  std::to_string(d) + ", n_s=" + std::to_string(sentence_vec.size()));
    }
    t.projected.assign(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
      double acc = 0.0;
      for (std::size_t q = 0; q < sentence_vec.size(); ++q) acc += attention->at(a, q) * sentence_vec[q];
      t.projected[a] = acc;
    }
    t.omega.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      auto e = embedding.row(words[j]);
      double acc = 0.0;
      for (std::size_t a = 0; a < d; ++a) acc += e[a] * t.projected[a];
      t.omega[j] = acc;
    }
    t.alpha = t.omega;
    softmax_inplace(t.alpha);
  } else {
    t.alpha.assign(n, 1.0 / static_cast<double>(n));
  }
  t.topic_vec.assign(d, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    auto e = embedding.row(words[j]);
    for (std::size_t a = 0; a < d; ++a) t.topic_vec[a] += t.alpha[j] * e[a];
  }
  return t;
}

inline std::vector<double> ntn(std::span<const double> a, std::span<const double> c, const NtnParams& p) {
  const std::size_t h = p.bias.size();
  if (p.linear.value.dim(0) != h || p.linear.value.dim(1) != a.size() + c.size()) {
    throw Error("ntn: linear term " + shape_string(p.linear.value.shape()) + " does not match operands " +
                std::to_string(a.size()) + "+" + std::to_string(c.size()));
  }
  std::vector<double> out = bilinear_tensor(a, p.tensor.value, c);
  for (std::size_t k = 0; k < h; ++k) {
    double acc = out[k] + p.bias.value[k];
    auto row = p.linear.value.row(k);
    for (std::size_t i = 0; i < a.size(); ++i) acc += row[i] * a[i];
    for (std::size_t j = 0; j < c.size(); ++j) acc += row[a.size() + j] * c[j];
    out[k] = std::tanh(acc);
  }
  return out;
}

inline ForwardTrace forward(const MatchInput& in, const ModelParams& p, const ModelConfig& c) {
  ForwardTrace t;
  t.message = encode_sentence(in.message, p, c);
  t.response = encode_sentence(in.response, p, c);
  const DenseArray& E = p.embedding.value;
  const bool learned = c.learned_attention();
  if (c.uses_message_topics()) {
    t.message_topic = topic_attention(in.message_topics, t.message.vec, learned ? &p.attn_m.value : nullptr, E);
  }
  if (c.uses_response_topics()) {
    t.response_topic =
        topic_attention(in.response_topics, t.response.vec, learned ? &p.response_attention(c).value : nullptr, E);
  }
  t.s_mr = ntn(t.message.vec, t.response.vec, p.mr);
  t.fusion_input = t.s_mr;
  if (c.uses_message_topics()) {
    t.s_r_tm = ntn(t.response.vec, t.message_topic.topic_vec, p.r_tm);
    t.fusion_input.insert(t.fusion_input.end(), t.s_r_tm.begin(), t.s_r_tm.end());
  }
  if (c.uses_response_topics()) {
    t.s_m_tr = ntn(t.message.vec, t.response_topic.topic_vec, p.m_tr);
    t.fusion_input.insert(t.fusion_input.end(), t.s_m_tr.begin(), t.s_m_tr.end());
  }
  const DenseArray& W = p.fusion_w.value;
  if (W.dim(0) != t.fusion_input.size()) throw Error("forward: fusion weight rows do not match tensor outputs");
  for (std::size_t k = 0; k < 2; ++k) {
    double acc = p.fusion_b.value[k];
    for (std::size_t i = 0; i < t.fusion_input.size(); ++i) acc += W.at(i, k) * t.fusion_input[i];
    t.logits[k] = acc;
  }
  std::array<double, 2> probs = t.logits;
  softmax_inplace(probs);
  t.probability = probs[1];
  return t;
}

// ---------------------------------------------------------------------------
// Loss and backward

inline constexpr double kProbabilityClamp = 1e-12;

inline double cross_entropy(double g, int label) {
  const double gc = std::clamp(g, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label == 1 ? -std::log(gc) : -std::log(1.0 - gc);
}

namespace detail {

inline void backward_encoder(const EncoderTrace& t, std::span<const double> dvec, ModelParams& p,
                             const ModelConfig& c) {
  const std::size_t P = c.pooled_positions(), d = c.d, k1 = c.conv_window;
  const DenseArray& E = p.embedding.value;
  const bool train_embedding = !c.freeze_embeddings;
  for (std::size_t f = 0; f < c.feature_maps; ++f) {
    for (std::size_t q = 0; q < P; ++q) {
      for (std::size_t e = 0; e < d; ++e) {
        const std::size_t out = (f * P + q) * d + e;
        const std::size_t i = t.argmax[out];
        if (!(t.conv.at(f, i, e) > 0.0)) continue;
        const double g = dvec[out];
        if (g == 0.0) continue;
        p.conv_b.grad.at(f, e) += g;
        for (std::size_t j = 0; j < k1; ++j) {
          const WordId w = t.ids[i + j];
          p.conv_w.grad.at(f, j) += g * E.at(w, e);
          if (train_embedding) p.embedding.grad.at(w, e) += p.conv_w.value.at(f, j) * g;
        }
      }
    }
  }
}

/// Accumulates gradients of a topic vector into embeddings and attention;
/// adds the sentence-vector gradient into dvec.
inline void backward_attention(const AttentionTrace& t, std::span<const double> dtopic,
                               std::span<const double> sentence_vec, Param* attention, std::span<double> dvec,
                               ModelParams& p, const ModelConfig& c) {
  const std::size_t n = t.words.size(), d = c.d;
  const DenseArray& E = p.embedding.value;
  const bool train_embedding = !c.freeze_embeddings;
  if (!attention) {
    if (!train_embedding) return;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t a = 0; a < d; ++a) p.embedding.grad.at(t.words[j], a) += t.alpha[j] * dtopic[a];
    }
    return;
  }
  std::vector<double> dalpha(n, 0.0);
  double weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    auto e = E.row(t.words[j]);
    for (std::size_t a = 0; a < d; ++a) dalpha[j] += e[a] * dtopic[a];
    weighted += t.alpha[j] * dalpha[j];
  }
  std::vector<double> dprojected(d, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double domega = t.alpha[j] * (dalpha[j] - weighted);
    auto e = E.row(t.words[j]);
    for (std::size_t a = 0; a < d; ++a) {
      dprojected[a] += domega * e[a];
      if (train_embedding) p.embedding.grad.at(t.words[j], a) += t.alpha[j] * dtopic[a] + domega * t.projected[a];
    }
  }
  const DenseArray& A = attention->value;
  for (std::size_t a = 0; a < d; ++a) {
    const double g = dprojected[a];
    if (g == 0.0) continue;
    for (std::size_t q = 0; q < sentence_vec.size(); ++q) {
      attention->grad.at(a, q) += g * sentence_vec[q];
      dvec[q] += A.at(a, q) * g;
    }
  }
}

inline void backward_ntn(std::span<const double> a, std::span<const double> c, std::span<const double> out,
                         std::span<const double> dout, NtnParams& p, std::span<double> da, std::span<double> dc) {
  const std::size_t h = out.size(), na = a.size(), nc = c.size();
  std::vector<double> dpre(h);
  for (std::size_t k = 0; k < h; ++k) dpre[k] = dout[k] * (1.0 - out[k] * out[k]);
  const DenseArray& M = p.tensor.value;
  const DenseArray& V = p.linear.value;
  for (std::size_t k = 0; k < h; ++k) {
    p.bias.grad[k] += dpre[k];
    auto vrow = V.row(k);
    auto vgrad = p.linear.grad.row(k);
    for (std::size_t i = 0; i < na; ++i) {
      vgrad[i] += dpre[k] * a[i];
      da[i] += dpre[k] * vrow[i];
    }
    for (std::size_t j = 0; j < nc; ++j) {
      vgrad[na + j] += dpre[k] * c[j];
      dc[j] += dpre[k] * vrow[na + j];
    }
  }
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t k = 0; k < h; ++k) {
      const double* mrow = &M.at(i, k, 0);
      double* grow = &p.tensor.grad.at(i, k, 0);
      const double gi = dpre[k] * a[i];
      double mc = 0.0;
      for (std::size_t j = 0; j < nc; ++j) {
        grow[j] += gi * c[j];
        mc += mrow[j] * c[j];
        dc[j] += gi * mrow[j];
      }
      da[i] += dpre[k] * mc;
    }
  }
}

}  // namespace detail

/// Adds scale * dLoss/dTheta into every Param.grad and returns the unscaled
/// loss. The PAD embedding row never receives gradient.
inline double accumulate_gradients(const ForwardTrace& t, int label, ModelParams& p, const ModelConfig& c,
                                   double scale = 1.0) {
  if (label != 0 && label != 1) throw Error("label must be 0 or 1");
  const double loss = cross_entropy(t.probability, label);
  if (!std::isfinite(loss)) throw Error("non-finite loss");
  const double g = t.probability;
  if (g < kProbabilityClamp || g > 1.0 - kProbabilityClamp) return loss;

  const double d1 = scale * (g - static_cast<double>(label));
  const std::array<double, 2> dlogits{-d1, d1};
  const std::size_t fin = t.fusion_input.size(), h = c.slices, ns = c.sentence_dim(), d = c.d;

  std::vector<double> dfusion(fin, 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    p.fusion_b.grad[k] += dlogits[k];
    for (std::size_t i = 0; i < fin; ++i) {
      p.fusion_w.grad.at(i, k) += t.fusion_input[i] * dlogits[k];
      dfusion[i] += p.fusion_w.value.at(i, k) * dlogits[k];
    }
  }

  std::vector<double> dm(ns, 0.0), dr(ns, 0.0), dtm(d, 0.0), dtr(d, 0.0);
  std::size_t offset = 0;
  auto slice = [&](std::size_t start) { return std::span<const double>(dfusion.data() + start, h); };
  detail::backward_ntn(t.message.vec, t.response.vec, t.s_mr, slice(offset), p.mr, dm, dr);
  offset += h;
  if (c.uses_message_topics()) {
    detail::backward_ntn(t.response.vec, t.message_topic.topic_vec, t.s_r_tm, slice(offset), p.r_tm, dr, dtm);
    offset += h;
  }
  if (c.uses_response_topics()) {
    detail::backward_ntn(t.message.vec, t.response_topic.topic_vec, t.s_m_tr, slice(offset), p.m_tr, dm, dtr);
    offset += h;
  }
  const bool learned = c.learned_attention();
  if (c.uses_message_topics()) {
    detail::backward_attention(t.message_topic, dtm, t.message.vec, learned ? &p.attn_m : nullptr, dm, p, c);
  }
  if (c.uses_response_topics()) {
    detail::backward_attention(t.response_topic, dtr, t.response.vec,
                               learned ? &p.response_attention(c) : nullptr, dr, p, c);
  }
  detail::backward_encoder(t.message, dm, p, c);
  detail::backward_encoder(t.response, dr, p, c);
  for (double& v : p.embedding.grad.row(kPadId)) v = 0.0;
  return loss;
}

// ---------------------------------------------------------------------------
// Model bundle and checkpoints

struct Model {
  ModelConfig config;
  Vocabulary vocab;
  ModelParams params;
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  Model model;
  std::string lda_hash;  // empty when the variant uses no topics
  RngState rng;
  std::size_t epoch = 0;
};

namespace detail {
inline nlohmann::json param_to_json(const Param& p) {
  return {{"shape", p.value.shape()},
          {"value", p.value.raw()},
          {"adam_m", p.adam_m.raw()},
          {"adam_v", p.adam_v.raw()},
          {"step", p.step}};
}
inline void param_from_json(const nlohmann::json& j, Param& p) {
  const Shape shape = j.at("shape").get<Shape>();
  if (shape != p.value.shape()) {
    throw Error("checkpoint parameter '" + p.name + "' has shape " + shape_string(shape) + ", expected " +
                shape_string(p.value.shape()));
  }
  p.value = DenseArray(shape, j.at("value").get<std::vector<double>>());
  p.adam_m = DenseArray(shape, j.at("adam_m").get<std::vector<double>>());
  p.adam_v = DenseArray(shape, j.at("adam_v").get<std::vector<double>>());
  p.grad = DenseArray(shape);
  p.step = j.at("step").get<std::uint64_t>();
}
}  // namespace detail

inline nlohmann::json to_json(const Checkpoint& ck) {
  nlohmann::json params = nlohmann::json::object();
  for (const Param* p : ck.model.params.all()) params[p->name] = detail::param_to_json(*p);
  return {{"format", "tacntn-checkpoint"},
          {"version", Checkpoint::kFormatVersion},
          {"config", to_json(ck.model.config)},
          {"vocabulary", ck.model.vocab.words()},
          {"vocab_hash", ck.model.vocab.hash()},
          {"lda_hash", ck.lda_hash},
          {"rng", {{"seed", ck.rng.seed}, {"counter", ck.rng.counter}}},
          {"epoch", ck.epoch},
          {"params", std::move(params)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tacntn-checkpoint") throw Error("not a checkpoint file");
  if (j.at("version").get<int>() != Checkpoint::kFormatVersion) throw Error("unsupported checkpoint version");
  Checkpoint ck;
  ck.model.config = model_config_from_json(j.at("config"));
  ck.model.vocab = Vocabulary::from_words(j.at("vocabulary").get<std::vector<std::string>>());
  if (ck.model.vocab.hash() != j.at("vocab_hash").get<std::string>()) throw Error("checkpoint vocabulary hash mismatch");
  ck.lda_hash = j.at("lda_hash").get<std::string>();
  ck.rng.seed = j.at("rng").at("seed").get<std::uint64_t>();
  ck.rng.counter = j.at("rng").at("counter").get<std::uint64_t>();
  ck.epoch = j.at("epoch").get<std::size_t>();
  Rng scratch(0);
  ck.model.params = init_params(ck.model.config, ck.model.vocab.size(), scratch);
  const auto& jp = j.at("params");
  for (Param* p : ck.model.params.all()) {
    if (!jp.contains(p->name)) throw Error("checkpoint is missing parameter '" + p->name + "'");
    detail::param_from_json(jp.at(p->name), *p);
  }
  if (jp.size() != ck.model.params.all().size()) throw Error("checkpoint has unexpected parameters");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out << to_json(ck).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tacntn
