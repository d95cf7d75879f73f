#pragma once

// Retrieval chatbot: a tf-idf inverted index over the message side of
// positive pairs produces candidates, the matching model re-ranks them.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacntn/corpus.hpp"
#include "tacntn/eval.hpp"
#include "tacntn/model.hpp"
#include "tacntn/scoring.hpp"
#include "tacntn/topicmodel.hpp"

namespace tacntn {

struct Posting {
  std::uint32_t pair = 0;
  std::uint32_t tf = 0;
  friend bool operator==(const Posting&, const Posting&) = default;
};

struct CandidateEntry {
  std::string response;
  std::size_t pair_id = 0;
  double retrieval_score = 0.0;
};

struct CandidateSet {
  std::string query;
  std::vector<CandidateEntry> candidates;
};

class InvertedIndex {
 public:
  static constexpr int kFormatVersion = 1;

  InvertedIndex() = default;

  /// Indexes the messages of positive rows; negatives are ignored.
  static InvertedIndex build(const std::vector<RawPair>& rows) {
    InvertedIndex index;
    for (const auto& row : rows) {
      if (row.label == 1) index.add(row.message, row.response);
    }
    index.finalize();
    return index;
  }

  static InvertedIndex build(const std::string& pairs_path) { return build(read_pair_file(pairs_path).rows); }

  std::size_t pair_count() const noexcept { return messages_.size(); }
  const std::string& message(std::size_t id) const { return messages_.at(id); }
  const std::string& response(std::size_t id) const { return responses_.at(id); }
  const std::map<std::string, std::vector<Posting>>& postings() const noexcept { return postings_; }
  std::size_t df(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  double idf(const std::string& term) const {
    return std::log((1.0 + static_cast<double>(pair_count())) / (1.0 + static_cast<double>(df(term)))) + 1.0;
  }

  /// Responses of the top_m messages by tf-idf cosine with the query,
  /// deduplicated by text in retrieval order.
  CandidateSet retrieve(const std::string& query, std::size_t top_m) const {
    if (top_m < 1) throw Error("top_m must be >= 1");
    CandidateSet out;
    out.query = query;
    std::map<std::string, double> q;
    for (auto& t : split_tokens(query)) q[t] += 1.0;
    double qnorm = 0.0;
    std::map<std::uint32_t, double> dot;
    for (auto& [term, tf] : q) {
      const double w = tf * idf(term);
      qnorm += w * w;
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double term_idf = idf(term);
      for (const Posting& p : it->second) dot[p.pair] += w * static_cast<double>(p.tf) * term_idf;
    }
    if (dot.empty()) return out;
    qnorm = std::sqrt(qnorm);
    std::vector<std::pair<double, std::uint32_t>> scored;
    for (auto& [pair, v] : dot) scored.emplace_back(v / (qnorm * norms_[pair]), pair);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::set<std::string> seen;
    for (std::size_t i = 0; i < scored.size() && i < top_m; ++i) {
      const std::uint32_t id = scored[i].second;
      if (!seen.insert(responses_[id]).second) continue;
      out.candidates.push_back({responses_[id], id, scored[i].first});
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json pairs = nlohmann::json::array();
    for (std::size_t i = 0; i < messages_.size(); ++i) pairs.push_back({messages_[i], responses_[i]});
    nlohmann::json post = nlohmann::json::object();
    for (const auto& [term, list] : postings_) {
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& p : list) entries.push_back({p.pair, p.tf});
      post[term] = std::move(entries);
    }
    return {{"format", "tacntn-index"}, {"version", kFormatVersion}, {"pairs", std::move(pairs)},
            {"postings", std::move(post)}};
  }

  static InvertedIndex from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "tacntn-index") throw Error("not an index file");
    if (j.at("version").get<int>() != kFormatVersion) throw Error("unsupported index version");
    InvertedIndex index;
    for (const auto& p : j.at("pairs")) index.add(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    index.finalize();
    std::map<std::string, std::vector<Posting>> stored;
    for (const auto& [term, entries] : j.at("postings").items()) {
      auto& list = stored[term];
      for (const auto& e : entries) list.push_back({e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>()});
    }
    if (stored != index.postings_) throw Error("index postings are inconsistent with the stored pairs");
    return index;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write index: " + path);
    out << to_json().dump() << '\n';
  }

  static InvertedIndex load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read index: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed index " + path + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  void add(const std::string& message, const std::string& response) {
    const auto id = static_cast<std::uint32_t>(messages_.size());
    messages_.push_back(message);
    responses_.push_back(response);
    std::map<std::string, std::uint32_t> tf;
    for (auto& t : split_tokens(message)) ++tf[t];
    for (auto& [term, n] : tf) postings_[term].push_back({id, n});
  }

  void finalize() {
    norms_.assign(messages_.size(), 0.0);
    for (const auto& [term, list] : postings_) {
      const double term_idf = idf(term);
      for (const auto& p : list) norms_[p.pair] += std::pow(static_cast<double>(p.tf) * term_idf, 2);
    }
    for (double& n : norms_) n = std::sqrt(n);
  }

  std::vector<std::string> messages_;
  std::vector<std::string> responses_;
  std::map<std::string, std::vector<Posting>> postings_;  // sorted by pair id
  std::vector<double> norms_;
};

// ---------------------------------------------------------------------------

/// Refuses a checkpoint trained against a different topic model.
inline void check_compatible(const Checkpoint& ck, const TopicModel* lda) {
  const bool needs_topics = ck.model.config.uses_message_topics() || ck.model.config.uses_response_topics();
  if (!needs_topics) return;
  if (!lda) throw Error("checkpoint needs a topic model");
  if (ck.lda_hash != lda->hash()) {
    throw Error("topic model hash " + lda->hash() + " does not match the checkpoint's " + ck.lda_hash);
  }
}

struct RankedResponse {
  std::string response;
  double score = 0.0;
  double retrieval_score = 0.0;
  std::size_t pair_id = 0;
  std::vector<WeightedTopicWord> response_topics;
};

struct ChatResponse {
  std::string query;
  std::vector<RankedResponse> ranked;  // empty means "no response"
  std::vector<WeightedTopicWord> message_topics;
  bool empty() const noexcept { return ranked.empty(); }
};

inline ChatResponse respond(const InvertedIndex& index, TextMatcher& matcher, const std::string& message,
                            std::size_t top_m = 10) {
  ChatResponse out;
  out.query = message;
  const CandidateSet cands = index.retrieve(message, top_m);
  std::vector<double> scores;
  for (const auto& c : cands.candidates) {
    MatchResult m = matcher.match(message, c.response);
    scores.push_back(m.probability);
    if (out.message_topics.empty()) out.message_topics = m.message_topics;
    out.ranked.push_back({c.response, m.probability, c.retrieval_score, c.pair_id, std::move(m.response_topics)});
  }
  std::vector<RankedResponse> ordered;
  for (std::size_t i : rank_order(scores)) ordered.push_back(std::move(out.ranked[i]));
  out.ranked = std::move(ordered);
  return out;
}

inline nlohmann::json to_json(const ChatResponse& r, std::size_t turn) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : r.ranked) {
    cands.push_back({{"response", c.response},
                     {"score", c.score},
                     {"retrieval_score", c.retrieval_score},
                     {"pair_id", c.pair_id},
                     {"response_topics", format_topic_weights(c.response_topics)}});
  }
  return {{"turn", turn},
          {"query", r.query},
          {"message_topics", format_topic_weights(r.message_topics)},
          {"candidates", std::move(cands)}};
}

/// Line-oriented chat loop. Prints the top `show` responses per query and
/// appends one JSON line per turn to `log`. Returns the number of turns.
inline std::size_t run_repl(std::istream& in, std::ostream& out, std::ostream* log, const InvertedIndex& index,
                            TextMatcher& matcher, std::size_t top_m = 10, std::size_t show = 3) {
  std::size_t turns = 0;
  std::string line;
  char buf[32];
  while (true) {
    out << "> " << std::flush;
    if (!std::getline(in, line)) break;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "/quit") break;
    if (line.empty()) continue;
    const ChatResponse r = respond(index, matcher, line, top_m);
    ++turns;
    if (r.empty()) {
      out << "(no response)\n";
    } else {
      for (std::size_t i = 0; i < r.ranked.size() && i < show; ++i) {
        std::snprintf(buf, sizeof buf, "%.4f", r.ranked[i].score);
        out << (i + 1) << ". [" << buf << "] " << r.ranked[i].response << '\n';
        if (!r.ranked[i].response_topics.empty()) {
          out << "   response topics: " << format_topic_weights(r.ranked[i].response_topics) << '\n';
        }
      }
      if (!r.message_topics.empty()) out << "message topics: " << format_topic_weights(r.message_topics) << '\n';
    }
    if (log) *log << to_json(r, turns).dump() << '\n' << std::flush;
  }
  return turns;
}

}  // namespace tacntn
