#pragma once

// Synthetic conversation corpora with planted latent topics.
//
// Each topic k owns a message vocabulary ("t<k>m<j>") and a disjoint response
// vocabulary ("t<k>r<j>"); background words ("g<j>") are shared. Word choice
// within a vocabulary is Zipfian, so the long tail is rare in a small pair set
// while a larger external topic corpus still covers it.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tacntn/corpus.hpp"
#include "tacntn/eval.hpp"
#include "tacntn/numcore.hpp"

namespace tacntn::synthetic {

struct WorldConfig {
  std::size_t topics = 8;
  std::size_t words_per_side = 40;  // message and response vocabulary size per topic
  std::size_t background_words = 20;
  double background_rate = 0.25;
  double zipf = 1.0;
  std::size_t text_length = 6;
};

class World {
 public:
  explicit World(WorldConfig cfg) : cfg_(cfg) {
    if (cfg_.topics < 2) throw Error("synthetic world needs at least two topics");
    double total = 0.0;
    for (std::size_t j = 0; j < cfg_.words_per_side; ++j) {
      total += 1.0 / std::pow(static_cast<double>(j + 1), cfg_.zipf);
      cdf_.push_back(total);
    }
    for (double& c : cdf_) c /= total;
  }

  const WorldConfig& config() const noexcept { return cfg_; }

  static std::string message_word(std::size_t topic, std::size_t j) {
    return "t" + std::to_string(topic) + "m" + std::to_string(j);
  }
  static std::string response_word(std::size_t topic, std::size_t j) {
    return "t" + std::to_string(topic) + "r" + std::to_string(j);
  }
  static std::string background_word(std::size_t j) { return "g" + std::to_string(j); }

  /// Topic encoded in the first topical word of a generated text, or -1.
  static int topic_of(const std::string& text) {
    for (const auto& tok : split_tokens(text)) {
      if (tok.size() >= 3 && tok[0] == 't') {
        const std::size_t cut = tok.find_first_of("mr", 1);
        if (cut != std::string::npos && cut > 1) return std::stoi(tok.substr(1, cut - 1));
      }
    }
    return -1;
  }

  enum class Side { message, response, mixed };

  std::string text(std::size_t topic, Side side, Rng& rng) const {
    std::string out;
    std::size_t topical = 0;
    for (std::size_t i = 0; i < cfg_.text_length; ++i) {
      const bool last_chance = i + 1 == cfg_.text_length && topical == 0;
      std::string w;
      if (!last_chance && rng.uniform01() < cfg_.background_rate) {
        w = background_word(rng.index(cfg_.background_words));
      } else {
        const std::size_t j = zipf_index(rng);
        const bool msg = side == Side::message || (side == Side::mixed && rng.uniform01() < 0.5);
        w = msg ? message_word(topic, j) : response_word(topic, j);
        ++topical;
      }
      if (!out.empty()) out += ' ';
      out += w;
    }
    return out;
  }

  std::size_t other_topic(std::size_t topic, Rng& rng) const {
    const std::size_t r = rng.index(cfg_.topics - 1);
    return r >= topic ? r + 1 : r;
  }

  /// External topic-model corpus: documents mixing both sides of one topic.
  std::vector<std::string> topic_corpus(std::size_t docs, Rng& rng) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < docs; ++i) out.push_back(text(rng.index(cfg_.topics), Side::mixed, rng));
    return out;
  }

  /// `messages` messages, each followed by one positive (same topic) and one
  /// negative (other topic) response row.
  std::vector<RawPair> pairs(std::size_t messages, Rng& rng) const {
    std::vector<RawPair> rows;
    for (std::size_t i = 0; i < messages; ++i) {
      const std::size_t k = rng.index(cfg_.topics);
      const std::string msg = text(k, Side::message, rng);
      rows.push_back({1, msg, text(k, Side::response, rng), rows.size() + 1});
      rows.push_back({0, msg, text(other_topic(k, rng), Side::response, rng), rows.size() + 1});
    }
    return rows;
  }

  /// Groups of n candidates with exactly one same-topic positive at a random
  /// position.
  RankedEvalSet ranked(std::size_t groups, std::size_t n, Rng& rng) const {
    RankedEvalSet set;
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t k = rng.index(cfg_.topics);
      EvalGroup group{std::to_string(g), text(k, Side::message, rng), {}};
      const std::size_t pos = rng.index(n);
      for (std::size_t c = 0; c < n; ++c) {
        if (c == pos) {
          group.candidates.push_back({text(k, Side::response, rng), 1});
        } else {
          group.candidates.push_back({text(other_topic(k, rng), Side::response, rng), 0});
        }
      }
      set.groups.push_back(std::move(group));
    }
    return set;
  }

 private:
  std::size_t zipf_index(Rng& rng) const {
    const double u = rng.uniform01();
    for (std::size_t j = 0; j < cdf_.size(); ++j) {
      if (u < cdf_[j]) return j;
    }
    return cdf_.size() - 1;
  }

  WorldConfig cfg_;
  std::vector<double> cdf_;
};

/// Two disjoint vocabularies "a<j>" and "b<j>"; first half of the documents
/// use only A, second half only B.
inline std::vector<std::string> two_vocabulary_corpus(std::size_t docs, std::size_t vocab_per_side,
                                                      std::size_t length, Rng& rng) {
  std::vector<std::string> out;
  for (std::size_t d = 0; d < docs; ++d) {
    const char prefix = d < docs / 2 ? 'a' : 'b';
    std::string text;
    for (std::size_t i = 0; i < length; ++i) {
      if (!text.empty()) text += ' ';
      text += prefix + std::to_string(rng.index(vocab_per_side));
    }
    out.push_back(std::move(text));
  }
  return out;
}

inline void write_pairs(const std::vector<RawPair>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& r : rows) out << r.label << '\t' << r.message << '\t' << r.response << '\n';
}

inline void write_ranked(const RankedEvalSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& g : set.groups) {
    for (const auto& c : g.candidates) out << g.id << '\t' << c.label << '\t' << g.message << '\t' << c.response << '\n';
  }
}

inline void write_lines(const std::vector<std::string>& lines, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace tacntn::synthetic
