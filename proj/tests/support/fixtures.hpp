#pragma once

// Shared experiment setup: a planted-topic world, a topic model trained on an
// external corpus from that world, and tokenized pair sets.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tacntn/synthetic.hpp"
#include "tacntn/tacntn.hpp"

namespace tacntn::testing {

inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.s = 4;
  c.d = 3;
  c.feature_maps = 2;
  c.conv_window = 2;
  c.pool_window = 2;
  c.slices = 2;
  c.n_topic_words = 2;
  return c;
}

inline ModelConfig small_model_config() {
  ModelConfig c;
  c.s = 8;
  c.d = 8;
  c.feature_maps = 4;
  c.conv_window = 2;
  c.pool_window = 2;
  c.slices = 4;
  c.n_topic_words = 20;
  return c;
}

/// Random parameters with every group (biases included) away from zero, so
/// a gradient check exercises every path.
inline ModelParams random_params(const ModelConfig& c, std::size_t vocab_size, Rng& rng) {
  ModelParams p = init_params(c, vocab_size, rng);
  for (Param* q : p.all()) {
    for (double& v : q->value.values()) v = rng.uniform(-0.9, 0.9);
  }
  for (double& v : p.embedding.value.row(kPadId)) v = 0.0;
  return p;
}

inline TokenizedText random_text(std::size_t s, std::size_t vocab_size, Rng& rng, bool allow_pad = true) {
  TokenizedText t;
  t.true_length = allow_pad ? 1 + rng.index(s) : s;
  for (std::size_t i = 0; i < s; ++i) {
    t.ids.push_back(i < t.true_length ? static_cast<WordId>(1 + rng.index(vocab_size)) : kPadId);
  }
  return t;
}

inline MatchInput random_input(const ModelConfig& c, std::size_t vocab_size, Rng& rng) {
  MatchInput in;
  in.message = random_text(c.s, vocab_size, rng);
  in.response = random_text(c.s, vocab_size, rng);
  for (std::size_t j = 0; j < c.n_topic_words; ++j) {
    in.message_topics.push_back(static_cast<WordId>(1 + rng.index(vocab_size)));
    in.response_topics.push_back(static_cast<WordId>(1 + rng.index(vocab_size)));
  }
  return in;
}

struct TopicExperiment {
  synthetic::World world;
  std::vector<std::string> lda_docs;
  std::vector<RawPair> train_rows;
  std::vector<RawPair> val_rows;
  RankedEvalSet test;
  std::unique_ptr<TopicModel> lda;
  Vocabulary vocab;
  std::vector<LabeledPair> train_pairs;
  RankedEvalSet val;

  explicit TopicExperiment(synthetic::WorldConfig wc) : world(wc) {}
};

struct ExperimentSizes {
  std::size_t lda_docs = 4000;
  std::size_t train_messages = 1000;
  std::size_t val_messages = 200;
  std::size_t test_groups = 500;
  std::size_t lda_iterations = 100;
};

inline std::unique_ptr<TopicExperiment> make_experiment(std::uint64_t seed, const ModelConfig& mc,
                                                        ExperimentSizes sizes = {},
                                                        synthetic::WorldConfig wc = {}) {
  auto ex = std::make_unique<TopicExperiment>(wc);
  Rng rng(seed * 100);
  ex->lda_docs = ex->world.topic_corpus(sizes.lda_docs, rng);
  ex->train_rows = ex->world.pairs(sizes.train_messages, rng);
  ex->val_rows = ex->world.pairs(sizes.val_messages, rng);
  ex->test = ex->world.ranked(sizes.test_groups, 10, rng);

  const Vocabulary lda_vocab = build_vocabulary(ex->lda_docs, 1);
  std::vector<TokenizedText> docs;
  for (const auto& d : ex->lda_docs) docs.push_back(tokenize(d, lda_vocab, 64));
  LdaConfig lc;
  lc.topics = wc.topics;
  lc.iterations = sizes.lda_iterations;
  lc.n_topic_words = mc.n_topic_words;
  ex->lda = std::make_unique<TopicModel>(TopicModel::train(docs, lda_vocab, lc, seed));

  ex->vocab = training_vocabulary(ex->train_rows, ex->lda.get(), mc.n_topic_words);
  ex->train_pairs = tokenize_pairs(RawPairFile{ex->train_rows, {}}, ex->vocab, mc.s).pairs;
  ex->val = group_consecutive_pairs(ex->val_rows);
  return ex;
}

}  // namespace tacntn::testing
