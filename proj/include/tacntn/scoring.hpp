#pragma once

// Raw-text scoring with a trained model. Evaluation, validation and the chat
// pipeline all score through TextMatcher, so their rankings agree.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "tacntn/corpus.hpp"
#include "tacntn/model.hpp"
#include "tacntn/topicmodel.hpp"

namespace tacntn {

struct WeightedTopicWord {
  std::string word;
  double weight = 0.0;
};

struct MatchResult {
  double probability = 0.0;
  std::vector<WeightedTopicWord> message_topics;
  std::vector<WeightedTopicWord> response_topics;
};

/// "movie: 0.198, character: 0.187, plot: 0.087" for the `top` heaviest words.
inline std::string format_topic_weights(std::vector<WeightedTopicWord> words, std::size_t top = 3) {
  std::stable_sort(words.begin(), words.end(),
                   [](const WeightedTopicWord& a, const WeightedTopicWord& b) { return a.weight > b.weight; });
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < words.size() && i < top; ++i) {
    if (i) out += ", ";
    std::snprintf(buf, sizeof buf, "%.3f", words[i].weight);
    out += words[i].word + ": " + buf;
  }
  return out;
}

/// Maps a topic word set onto model vocabulary ids, dropping unknown words.
inline std::vector<WordId> topic_ids(const TopicWordSet& set, const Vocabulary& vocab) {
  std::vector<WordId> ids;
  for (const auto& w : set.words) {
    if (auto id = vocab.find(w.word)) ids.push_back(*id);
  }
  return ids;
}

class TextMatcher {
 public:
  /// `topics` may be null only for the topic-free variant.
  TextMatcher(const Model& model, TopicAssigner* topics) : model_(&model), topics_(topics) {
    const bool needs_topics = model.config.uses_message_topics() || model.config.uses_response_topics();
    if (needs_topics && !topics) throw Error("this model variant requires a topic model");
  }

  const Model& model() const noexcept { return *model_; }

  /// Texts without any known token are encoded as all-PAD sentences.
  TokenizedText tokenize_lenient(const std::string& text) const {
    try {
      return tokenize(text, model_->vocab, model_->config.s);
    } catch (const Error&) {
      return TokenizedText{std::vector<WordId>(model_->config.s, kPadId), 0};
    }
  }

  std::vector<WordId> topics_for(const std::string& text) {
    std::vector<WordId> ids = topic_ids(topics_->assign(text), model_->vocab);
    if (ids.empty()) ids = topic_ids(topics_->fallback(), model_->vocab);
    if (ids.empty()) throw Error("no topic word of the topic model is in the model vocabulary");
    return ids;
  }

  MatchInput prepare(const std::string& message, const std::string& response) {
    MatchInput in;
    in.message = tokenize_lenient(message);
    in.response = tokenize_lenient(response);
    if (model_->config.uses_message_topics()) in.message_topics = topics_for(message);
    if (model_->config.uses_response_topics()) in.response_topics = topics_for(response);
    return in;
  }

  double score(const std::string& message, const std::string& response) {
    return forward(prepare(message, response), model_->params, model_->config).probability;
  }

  MatchResult match(const std::string& message, const std::string& response) {
    const ForwardTrace t = forward(prepare(message, response), model_->params, model_->config);
    MatchResult r;
    r.probability = t.probability;
    auto describe = [&](const AttentionTrace& at) {
      std::vector<WeightedTopicWord> out;
      for (std::size_t j = 0; j < at.words.size(); ++j) out.push_back({model_->vocab.word(at.words[j]), at.alpha[j]});
      return out;
    };
    if (model_->config.uses_message_topics()) r.message_topics = describe(t.message_topic);
    if (model_->config.uses_response_topics()) r.response_topics = describe(t.response_topic);
    return r;
  }

 private:
  const Model* model_;
  TopicAssigner* topics_;
};

}  // namespace tacntn
