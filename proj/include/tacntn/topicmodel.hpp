#pragma once

// Twitter-LDA: every short text carries exactly one topic, and each of its
// tokens is either a background word or a word of that topic. Parameters are
// estimated by collapsed Gibbs sampling over two kinds of latent variables:
//
//   z_d      topic of document d, drawn from
//            (C_t + alpha) * prod_i (c^t_{w_i} + beta + n_{<i,w_i}) / (N_t + V beta + i),
//            the sequential predictive over the document's topic tokens
//            (repeats within the document are counted exactly);
//   y_{d,i}  background switch of token i, drawn with weights
//            background: (N_B + gamma) * (c^B_w + beta) / (N_B + V beta)
//            topic:      (N_T + gamma) * (c^z_w + beta) / (N_z + V beta).
//
// All counts exclude the variable being resampled. There is a single global
// pseudo-user, so the per-user topic mixture collapses to one Dirichlet.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacntn/corpus.hpp"
#include "tacntn/numcore.hpp"

namespace tacntn {

struct LdaConfig {
  std::size_t topics = 200;
  std::optional<double> alpha;  // defaults to 1/T
  double beta = 0.01;
  double gamma = 0.01;
  std::size_t iterations = 1000;
  std::size_t n_topic_words = 50;

  double effective_alpha() const { return alpha.value_or(1.0 / static_cast<double>(topics)); }

  void validate() const {
    if (topics < 2) throw Error("LdaConfig: topics must be >= 2");
    if (iterations < 1) throw Error("LdaConfig: iterations must be >= 1");
    if (n_topic_words < 1) throw Error("LdaConfig: n_topic_words must be >= 1");
    if (!(effective_alpha() > 0.0) || !(beta > 0.0) || !(gamma > 0.0)) {
      throw Error("LdaConfig: alpha, beta and gamma must be positive");
    }
  }
};

/// Sufficient statistics of the sampler. Word-indexed tables have V+1 slots;
/// slot 0 (PAD) stays zero.
struct LdaCounts {
  std::size_t topics = 0;
  std::size_t vocab_size = 0;
  std::size_t documents = 0;
  std::vector<std::int64_t> docs_per_topic;   // C_t
  std::vector<std::int64_t> topic_word;       // c^t_w, topics x (V+1)
  std::vector<std::int64_t> background_word;  // c^B_w
  std::vector<std::int64_t> topic_tokens;     // N_t
  std::int64_t background_total = 0;          // N_B
  std::int64_t topic_total = 0;               // N_T

  LdaCounts() = default;
  LdaCounts(std::size_t t, std::size_t v)
      : topics(t),
        vocab_size(v),
        docs_per_topic(t, 0),
        topic_word(t * (v + 1), 0),
        background_word(v + 1, 0),
        topic_tokens(t, 0) {}

  std::int64_t& tw(std::size_t t, WordId w) { return topic_word[t * (vocab_size + 1) + w]; }
  std::int64_t tw(std::size_t t, WordId w) const { return topic_word[t * (vocab_size + 1) + w]; }

  /// c_w: times w was emitted as a topic word under any topic.
  std::int64_t topic_emissions(WordId w) const {
    std::int64_t total = 0;
    for (std::size_t t = 0; t < topics; ++t) total += tw(t, w);
    return total;
  }

  friend bool operator==(const LdaCounts&, const LdaCounts&) = default;
};

struct LdaAssignments {
  std::vector<std::uint32_t> doc_topic;
  std::vector<std::vector<std::uint8_t>> background;  // 1 = background word
  friend bool operator==(const LdaAssignments&, const LdaAssignments&) = default;
};

/// Checks every conservation law of the count tables against the assignments.
/// Returns an empty string when consistent, otherwise a description.
inline std::string check_lda_invariants(const LdaCounts& counts, const LdaAssignments& assign,
                                        std::span<const std::vector<WordId>> docs) {
  LdaCounts expect(counts.topics, counts.vocab_size);
  expect.documents = docs.size();
  std::int64_t tokens = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const std::size_t t = assign.doc_topic[d];
    ++expect.docs_per_topic[t];
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      const WordId w = docs[d][i];
      ++tokens;
      if (assign.background[d][i]) {
        ++expect.background_word[w];
        ++expect.background_total;
      } else {
        ++expect.tw(t, w);
        ++expect.topic_tokens[t];
        ++expect.topic_total;
      }
    }
  }
  if (!(expect == counts)) return "count tables disagree with assignments";
  std::int64_t docs_total = 0;
  for (auto c : counts.docs_per_topic) docs_total += c;
  if (docs_total != static_cast<std::int64_t>(docs.size())) return "sum of C_t != #documents";
  std::int64_t emitted = 0;
  for (auto c : counts.topic_word) emitted += c;
  for (auto c : counts.background_word) emitted += c;
  if (emitted != tokens) return "topic + background emissions != #tokens";
  for (auto c : counts.topic_word)
    if (c < 0) return "negative topic-word count";
  for (auto c : counts.background_word)
    if (c < 0) return "negative background count";
  return {};
}

struct ScoredWord {
  std::string word;
  double score = 0.0;
  friend bool operator==(const ScoredWord&, const ScoredWord&) = default;
};

/// Salience-ranked topic words attached to a text. topic == -1 marks the
/// global fallback set.
struct TopicWordSet {
  int topic = -1;
  std::vector<ScoredWord> words;
  friend bool operator==(const TopicWordSet&, const TopicWordSet&) = default;
};

inline nlohmann::json to_json(const TopicWordSet& set) {
  nlohmann::json words = nlohmann::json::array();
  for (const auto& w : set.words) words.push_back({w.word, w.score});
  return {{"topic", set.topic}, {"words", std::move(words)}};
}

inline TopicWordSet topic_word_set_from_json(const nlohmann::json& j) {
  TopicWordSet set;
  set.topic = j.at("topic").get<int>();
  for (const auto& w : j.at("words")) set.words.push_back({w.at(0).get<std::string>(), w.at(1).get<double>()});
  return set;
}

class TopicModel {
 public:
  static constexpr int kFormatVersion = 1;

  using SweepObserver =
      std::function<void(std::size_t sweep, const LdaCounts&, const LdaAssignments&)>;

  TopicModel() = default;
  TopicModel(LdaConfig config, Vocabulary vocab, LdaCounts counts)
      : config_(std::move(config)), vocab_(std::move(vocab)), counts_(std::move(counts)) {}

  const LdaConfig& config() const noexcept { return config_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  const LdaCounts& counts() const noexcept { return counts_; }
  const LdaAssignments& assignments() const noexcept { return assignments_; }

  /// (c^t_w / c_w) * c^t_w, zero when w never appeared as a topic word.
  double salience(WordId w, std::size_t topic) const {
    if (topic >= counts_.topics) throw Error("topic out of range: " + std::to_string(topic));
    if (w == kPadId || w > counts_.vocab_size) return 0.0;
    const std::int64_t total = counts_.topic_emissions(w);
    if (total == 0) return 0.0;
    const double ctw = static_cast<double>(counts_.tw(topic, w));
    return ctw / static_cast<double>(total) * ctw;
  }

  /// The n most salient words the topic emitted; ties lexicographic.
  TopicWordSet top_words(std::size_t topic, std::size_t n) const {
    if (topic >= counts_.topics) throw Error("topic out of range: " + std::to_string(topic));
    TopicWordSet set;
    set.topic = static_cast<int>(topic);
    for (WordId w = 1; w <= counts_.vocab_size; ++w) {
      if (counts_.tw(topic, w) > 0) set.words.push_back({vocab_.word(w), salience(w, topic)});
    }
    rank_and_truncate(set.words, n);
    return set;
  }

  /// Top n words by their best salience over all topics.
  TopicWordSet global_top_words(std::size_t n) const {
    TopicWordSet set;
    for (WordId w = 1; w <= counts_.vocab_size; ++w) {
      double best = 0.0;
      for (std::size_t t = 0; t < counts_.topics; ++t) best = std::max(best, salience(w, t));
      if (best > 0.0) set.words.push_back({vocab_.word(w), best});
    }
    rank_and_truncate(set.words, n);
    return set;
  }

  /// MAP topic of a text, treating every token as a topic word. Ties go to
  /// the smallest topic id.
  std::size_t infer_topic(std::span<const WordId> tokens) const {
    std::vector<WordId> real;
    for (WordId w : tokens) {
      if (w != kPadId) real.push_back(w);
    }
    if (real.empty()) throw Error("cannot infer a topic for an all-PAD text");
    const double alpha = config_.effective_alpha();
    const double vbeta = static_cast<double>(counts_.vocab_size) * config_.beta;
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < counts_.topics; ++t) {
      double score = std::log(static_cast<double>(counts_.docs_per_topic[t]) + alpha);
      const double denom = std::log(static_cast<double>(counts_.topic_tokens[t]) + vbeta);
      for (WordId w : real) {
        if (w > counts_.vocab_size) throw Error("word id out of range for topic model");
        score += std::log(static_cast<double>(counts_.tw(t, w)) + config_.beta) - denom;
      }
      if (score > best_score) {
        best_score = score;
        best = t;
      }
    }
    return best;
  }

  std::size_t infer_topic(const TokenizedText& text) const { return infer_topic(text.tokens()); }

  TopicWordSet topic_words_for_text(const TokenizedText& text, std::size_t n) const {
    return top_words(infer_topic(text), n);
  }

  /// Raw-text convenience using this model's own vocabulary.
  TopicWordSet topic_words_for_text(std::string_view text, std::size_t n) const {
    std::vector<WordId> ids = known_ids(text, vocab_);
    if (ids.empty()) throw Error("no known tokens");
    return top_words(infer_topic(ids), n);
  }

  // -- training ------------------------------------------------------------

  static TopicModel train(std::span<const TokenizedText> corpus, const Vocabulary& vocab, const LdaConfig& config,
                          std::uint64_t seed, const SweepObserver& observer = {}) {
    std::vector<std::vector<WordId>> docs;
    docs.reserve(corpus.size());
    for (const auto& text : corpus) {
      auto toks = text.tokens();
      std::vector<WordId> doc;
      for (WordId w : toks) {
        if (w != kPadId) doc.push_back(w);
      }
      docs.push_back(std::move(doc));
    }
    return train_docs(docs, vocab, config, seed, observer);
  }

  static TopicModel train_docs(const std::vector<std::vector<WordId>>& docs, const Vocabulary& vocab,
                               const LdaConfig& config, std::uint64_t seed, const SweepObserver& observer = {}) {
    config.validate();
    if (docs.empty()) throw Error("empty corpus");
    const std::size_t V = vocab.size();
    for (std::size_t d = 0; d < docs.size(); ++d) {
      if (docs[d].empty()) throw Error("document " + std::to_string(d) + " has no tokens");
      for (WordId w : docs[d]) {
        if (w == kPadId || w > V) throw Error("document " + std::to_string(d) + " has an out-of-vocabulary id");
      }
    }

    TopicModel model(config, vocab, LdaCounts(config.topics, V));
    LdaCounts& c = model.counts_;
    LdaAssignments& a = model.assignments_;
    c.documents = docs.size();
    Rng rng(seed);

    a.doc_topic.resize(docs.size());
    a.background.resize(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
      const auto t = static_cast<std::uint32_t>(rng.index(config.topics));
      a.doc_topic[d] = t;
      ++c.docs_per_topic[t];
      a.background[d].resize(docs[d].size());
      for (std::size_t i = 0; i < docs[d].size(); ++i) {
        const bool bg = rng.uniform01() < 0.5;
        a.background[d][i] = bg ? 1 : 0;
        model.add_token(docs[d][i], t, bg, +1);
      }
    }

    std::vector<double> weights(config.topics);
    for (std::size_t sweep = 1; sweep <= config.iterations; ++sweep) {
      for (std::size_t d = 0; d < docs.size(); ++d) {
        model.resample_doc_topic(docs[d], d, rng, weights);
        model.resample_switches(docs[d], d, rng);
      }
      if (observer) observer(sweep, c, a);
    }
    return model;
  }

  // -- persistence ---------------------------------------------------------

  nlohmann::json to_json() const {
    nlohmann::json cfg = {{"topics", config_.topics},
                          {"alpha", config_.effective_alpha()},
                          {"beta", config_.beta},
                          {"gamma", config_.gamma},
                          {"iterations", config_.iterations},
                          {"n_topic_words", config_.n_topic_words}};
    nlohmann::json topic_word = nlohmann::json::array();
    for (std::size_t t = 0; t < counts_.topics; ++t) {
      nlohmann::json row = nlohmann::json::array();
      for (WordId w = 1; w <= counts_.vocab_size; ++w) {
        if (counts_.tw(t, w) != 0) row.push_back({w, counts_.tw(t, w)});
      }
      topic_word.push_back(std::move(row));
    }
    nlohmann::json background = nlohmann::json::array();
    for (WordId w = 1; w <= counts_.vocab_size; ++w) {
      if (counts_.background_word[w] != 0) background.push_back({w, counts_.background_word[w]});
    }
    return {{"format", "tacntn-twitter-lda"},
            {"version", kFormatVersion},
            {"config", std::move(cfg)},
            {"vocabulary", vocab_.words()},
            {"vocab_hash", vocab_.hash()},
            {"documents", counts_.documents},
            {"docs_per_topic", counts_.docs_per_topic},
            {"topic_word", std::move(topic_word)},
            {"background_word", std::move(background)}};
  }

  static TopicModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "tacntn-twitter-lda") throw Error("not a topic model file");
    if (j.at("version").get<int>() != kFormatVersion) throw Error("unsupported topic model version");
    LdaConfig cfg;
    const auto& jc = j.at("config");
    cfg.topics = jc.at("topics").get<std::size_t>();
    cfg.alpha = jc.at("alpha").get<double>();
    cfg.beta = jc.at("beta").get<double>();
    cfg.gamma = jc.at("gamma").get<double>();
    cfg.iterations = jc.at("iterations").get<std::size_t>();
    cfg.n_topic_words = jc.at("n_topic_words").get<std::size_t>();
    cfg.validate();
    Vocabulary vocab = Vocabulary::from_words(j.at("vocabulary").get<std::vector<std::string>>());
    if (vocab.hash() != j.at("vocab_hash").get<std::string>()) throw Error("topic model vocabulary hash mismatch");
    LdaCounts c(cfg.topics, vocab.size());
    c.documents = j.at("documents").get<std::size_t>();
    c.docs_per_topic = j.at("docs_per_topic").get<std::vector<std::int64_t>>();
    if (c.docs_per_topic.size() != cfg.topics) throw Error("docs_per_topic has wrong length");
    const auto& tw = j.at("topic_word");
    if (tw.size() != cfg.topics) throw Error("topic_word has wrong length");
    for (std::size_t t = 0; t < cfg.topics; ++t) {
      for (const auto& entry : tw[t]) {
        const auto w = entry.at(0).get<WordId>();
        const auto n = entry.at(1).get<std::int64_t>();
        if (w == kPadId || w > vocab.size() || n < 0) throw Error("bad topic_word entry");
        c.tw(t, w) = n;
        c.topic_tokens[t] += n;
        c.topic_total += n;
      }
    }
    for (const auto& entry : j.at("background_word")) {
      const auto w = entry.at(0).get<WordId>();
      const auto n = entry.at(1).get<std::int64_t>();
      if (w == kPadId || w > vocab.size() || n < 0) throw Error("bad background_word entry");
      c.background_word[w] = n;
      c.background_total += n;
    }
    return TopicModel(cfg, std::move(vocab), std::move(c));
  }

  std::string hash() const { return hex64(fnv1a(to_json().dump())); }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write topic model: " + path);
    out << to_json().dump() << '\n';
  }

  static TopicModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read topic model: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed topic model " + path + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  static void rank_and_truncate(std::vector<ScoredWord>& words, std::size_t n) {
    std::sort(words.begin(), words.end(), [](const ScoredWord& a, const ScoredWord& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.word < b.word;
    });
    if (words.size() > n) words.resize(n);
  }

  void add_token(WordId w, std::size_t topic, bool background, int delta) {
    if (background) {
      counts_.background_word[w] += delta;
      counts_.background_total += delta;
    } else {
      counts_.tw(topic, w) += delta;
      counts_.topic_tokens[topic] += delta;
      counts_.topic_total += delta;
    }
  }

  static std::size_t sample_categorical(std::span<const double> weights, Rng& rng) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = rng.uniform01() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return i;
    }
    return weights.size() - 1;
  }

  void resample_doc_topic(const std::vector<WordId>& doc, std::size_t d, Rng& rng, std::vector<double>& weights) {
    const std::size_t old_topic = assignments_.doc_topic[d];
    --counts_.docs_per_topic[old_topic];
    std::vector<WordId> topic_words;
    for (std::size_t i = 0; i < doc.size(); ++i) {
      if (!assignments_.background[d][i]) {
        topic_words.push_back(doc[i]);
        add_token(doc[i], old_topic, false, -1);
      }
    }

    const double alpha = config_.effective_alpha();
    const double beta = config_.beta;
    const double vbeta = static_cast<double>(counts_.vocab_size) * beta;
    std::vector<double> log_w(config_.topics);
    for (std::size_t t = 0; t < config_.topics; ++t) {
      double lw = std::log(static_cast<double>(counts_.docs_per_topic[t]) + alpha);
      for (std::size_t j = 0; j < topic_words.size(); ++j) {
        const WordId w = topic_words[j];
        const auto earlier = static_cast<double>(std::count(topic_words.begin(), topic_words.begin() + j, w));
        lw += std::log(static_cast<double>(counts_.tw(t, w)) + beta + earlier) -
              std::log(static_cast<double>(counts_.topic_tokens[t]) + vbeta + static_cast<double>(j));
      }
      log_w[t] = lw;
    }
    const double peak = *std::max_element(log_w.begin(), log_w.end());
    for (std::size_t t = 0; t < config_.topics; ++t) weights[t] = std::exp(log_w[t] - peak);
    const auto new_topic = static_cast<std::uint32_t>(sample_categorical(weights, rng));

    assignments_.doc_topic[d] = new_topic;
    ++counts_.docs_per_topic[new_topic];
    for (WordId w : topic_words) add_token(w, new_topic, false, +1);
  }

  void resample_switches(const std::vector<WordId>& doc, std::size_t d, Rng& rng) {
    const std::size_t topic = assignments_.doc_topic[d];
    const double beta = config_.beta;
    const double gamma = config_.gamma;
    const double vbeta = static_cast<double>(counts_.vocab_size) * beta;
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const WordId w = doc[i];
      add_token(w, topic, assignments_.background[d][i] != 0, -1);
      const double nb = static_cast<double>(counts_.background_total);
      const double nt = static_cast<double>(counts_.topic_total);
      const double p_bg = (nb + gamma) * (static_cast<double>(counts_.background_word[w]) + beta) / (nb + vbeta);
      const double p_topic = (nt + gamma) * (static_cast<double>(counts_.tw(topic, w)) + beta) /
                             (static_cast<double>(counts_.topic_tokens[topic]) + vbeta);
      const bool bg = rng.uniform01() * (p_bg + p_topic) < p_bg;
      assignments_.background[d][i] = bg ? 1 : 0;
      add_token(w, topic, bg, +1);
    }
  }

  LdaConfig config_;
  Vocabulary vocab_;
  LdaCounts counts_;
  LdaAssignments assignments_;
};

/// Maps raw texts to topic word sets with caching; texts the model cannot
/// place get the global fallback set and are counted.
class TopicAssigner {
 public:
  TopicAssigner(const TopicModel& model, std::size_t n) : model_(&model), n_(n) {}

  const TopicWordSet& assign(const std::string& text) {
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
    TopicWordSet set;
    try {
      set = model_->topic_words_for_text(std::string_view(text), n_);
    } catch (const Error&) {
      set.words.clear();
    }
    if (set.words.empty()) {
      set = fallback();
      ++fallbacks_;
    }
    return cache_.emplace(text, std::move(set)).first->second;
  }

  const TopicWordSet& fallback() {
    if (!fallback_) fallback_ = model_->global_top_words(n_);
    if (fallback_->words.empty()) throw Error("topic model has no topic words");
    return *fallback_;
  }

  std::size_t fallbacks() const noexcept { return fallbacks_; }
  std::size_t n() const noexcept { return n_; }
  const TopicModel& model() const noexcept { return *model_; }
  const std::map<std::string, TopicWordSet>& cache() const noexcept { return cache_; }
  void seed_cache(std::map<std::string, TopicWordSet> entries) { cache_ = std::move(entries); }

 private:
  const TopicModel* model_;
  std::size_t n_;
  std::map<std::string, TopicWordSet> cache_;
  std::optional<TopicWordSet> fallback_;
  std::size_t fallbacks_ = 0;
};

}  // namespace tacntn
