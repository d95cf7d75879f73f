#include <gtest/gtest.h>

#include <algorithm>

#include "support/temp_dir.hpp"
#include "tacntn/synthetic.hpp"
#include "tacntn/topicmodel.hpp"

namespace tacntn {
namespace {

struct Corpus {
  Vocabulary vocab;
  std::vector<std::vector<WordId>> docs;
};

Corpus two_vocabulary(std::uint64_t seed, std::size_t docs = 200) {
  Rng rng(seed);
  auto texts = synthetic::two_vocabulary_corpus(docs, 20, 8, rng);
  Corpus c{build_vocabulary(texts, 1), {}};
  for (const auto& t : texts) c.docs.push_back(known_ids(t, c.vocab));
  return c;
}

LdaConfig two_topics(std::size_t iterations = 200) {
  LdaConfig cfg;
  cfg.topics = 2;
  cfg.iterations = iterations;
  return cfg;
}

double majority_share(const std::vector<std::uint32_t>& z, std::size_t lo, std::size_t hi, std::uint32_t topic) {
  std::size_t n = 0;
  for (std::size_t d = lo; d < hi; ++d) n += z[d] == topic ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(hi - lo);
}

TEST(Lda, SingleTokenCorpusConservesCounts) {
  auto vocab = Vocabulary::from_words({"hello"});
  auto model = TopicModel::train_docs({{1}}, vocab, two_topics(5), 1);
  const auto& c = model.counts();
  EXPECT_EQ(c.docs_per_topic[0] + c.docs_per_topic[1], 1);
  EXPECT_EQ(c.tw(0, 1) + c.tw(1, 1) + c.background_word[1], 1);
}

TEST(Lda, ConservationAfterEverySweep) {
  auto corpus = two_vocabulary(3);
  std::size_t sweeps = 0;
  TopicModel::train_docs(corpus.docs, corpus.vocab, two_topics(50), 7,
                         [&](std::size_t, const LdaCounts& counts, const LdaAssignments& a) {
                           ++sweeps;
                           ASSERT_EQ(check_lda_invariants(counts, a, corpus.docs), "");
                         });
  EXPECT_EQ(sweeps, 50u);
}

TEST(Lda, SeparatesDisjointVocabularies) {
  auto corpus = two_vocabulary(11);
  auto model = TopicModel::train_docs(corpus.docs, corpus.vocab, two_topics(), 5);
  const auto& z = model.assignments().doc_topic;
  const std::uint32_t a_topic = majority_share(z, 0, 100, 0) >= 0.5 ? 0 : 1;
  EXPECT_GE(majority_share(z, 0, 100, a_topic), 0.9);
  EXPECT_GE(majority_share(z, 100, 200, 1 - a_topic), 0.9);
}

TEST(Lda, SameSeedIsBitwiseIdentical) {
  auto corpus = two_vocabulary(2);
  auto a = TopicModel::train_docs(corpus.docs, corpus.vocab, two_topics(30), 99);
  auto b = TopicModel::train_docs(corpus.docs, corpus.vocab, two_topics(30), 99);
  EXPECT_EQ(a.assignments(), b.assignments());
  EXPECT_EQ(a.counts(), b.counts());
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Lda, RejectsBadInput) {
  auto vocab = Vocabulary::from_words({"a"});
  EXPECT_THROW(TopicModel::train_docs({}, vocab, two_topics(), 1), Error);
  EXPECT_THROW(TopicModel::train_docs({{}}, vocab, two_topics(), 1), Error);
  EXPECT_THROW(TopicModel::train_docs({{2}}, vocab, two_topics(), 1), Error);
  LdaConfig one = two_topics();
  one.topics = 1;
  EXPECT_THROW(TopicModel::train_docs({{1}}, vocab, one, 1), Error);
}

// Hand-built state: topic t owns words whose ids map to it.
TopicModel hand_model(const std::vector<std::vector<std::int64_t>>& table, std::vector<std::string> words) {
  const std::size_t T = table.size();
  const std::size_t V = words.size();
  LdaCounts c(T, V);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t w = 1; w <= V; ++w) {
      c.tw(t, static_cast<WordId>(w)) = table[t][w - 1];
      c.topic_tokens[t] += table[t][w - 1];
      c.topic_total += table[t][w - 1];
    }
    c.docs_per_topic[t] = 10;
  }
  c.documents = 10 * T;
  LdaConfig cfg;
  cfg.topics = T;
  return TopicModel(cfg, Vocabulary::from_words(std::move(words)), std::move(c));
}

TEST(Salience, HandValues) {
  auto m = hand_model({{10, 0, 5}, {0, 4, 5}}, {"x", "y", "z"});
  EXPECT_DOUBLE_EQ(m.salience(1, 0), 10.0);
  EXPECT_DOUBLE_EQ(m.salience(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(m.salience(3, 0), 2.5);
  EXPECT_DOUBLE_EQ(m.salience(99, 0), 0.0);
  EXPECT_THROW(m.salience(1, 2), Error);
}

TEST(Salience, NonNegativeAndMonotone) {
  // At fixed c_w = 20, more mass in topic 0 never lowers its salience.
  double prev = -1.0;
  for (std::int64_t k = 0; k <= 20; ++k) {
    auto m = hand_model({{k}, {20 - k}}, {"w"});
    const double s = m.salience(1, 0);
    EXPECT_GE(s, 0.0);
    EXPECT_GE(s, prev);
    prev = s;
  }
}

TEST(TopWords, ExhaustionAndTies) {
  auto m = hand_model({{3, 3, 1, 0}, {0, 0, 0, 9}}, {"beta", "alpha", "gamma", "delta"});
  auto set = m.top_words(0, 50);
  ASSERT_EQ(set.words.size(), 3u);
  EXPECT_EQ(set.topic, 0);
  EXPECT_EQ(set.words[0].word, "alpha");
  EXPECT_EQ(set.words[1].word, "beta");
  EXPECT_EQ(set.words[2].word, "gamma");
  EXPECT_EQ(m.top_words(0, 1).words.size(), 1u);
  EXPECT_THROW(m.top_words(2, 5), Error);
}

TEST(TopWords, MatchesBruteForceSalienceTable) {
  auto corpus = two_vocabulary(17);
  auto model = TopicModel::train_docs(corpus.docs, corpus.vocab, two_topics(), 5);
  for (std::size_t t = 0; t < 2; ++t) {
    std::vector<std::pair<double, std::string>> table;
    for (WordId w = 1; w <= corpus.vocab.size(); ++w) {
      std::int64_t cw = 0;
      for (std::size_t u = 0; u < 2; ++u) cw += model.counts().tw(u, w);
      const auto ctw = static_cast<double>(model.counts().tw(t, w));
      if (ctw > 0) table.emplace_back(-(ctw / static_cast<double>(cw)) * ctw, corpus.vocab.word(w));
    }
    std::sort(table.begin(), table.end());
    auto set = model.top_words(t, 10);
    ASSERT_EQ(set.words.size(), std::min<std::size_t>(10, table.size()));
    for (std::size_t i = 0; i < set.words.size(); ++i) {
      EXPECT_EQ(set.words[i].word, table[i].second);
      EXPECT_EQ(set.words[i].score, -table[i].first);
      if (i) {
        EXPECT_LE(set.words[i].score, set.words[i - 1].score);
      }
    }
    // A topic owns one vocabulary, so its top word comes from that side.
    const char side = set.words[0].word[0];
    for (const auto& w : set.words) EXPECT_EQ(w.word[0], side);
  }
}

TEST(InferTopic, ConcentratedCounts) {
  std::vector<std::vector<std::int64_t>> table(5, std::vector<std::int64_t>(10, 0));
  for (std::size_t t = 0; t < 5; ++t) {
    table[t][2 * t] = 50;
    table[t][2 * t + 1] = 30;
  }
  std::vector<std::string> words;
  for (int i = 0; i < 10; ++i) words.push_back("w" + std::to_string(i));
  auto m = hand_model(table, words);
  const std::vector<WordId> text{7, 8, 7, kPadId};  // w6, w7: topic 3
  EXPECT_EQ(m.infer_topic(text), 3u);
  auto set = m.topic_words_for_text(TokenizedText{text, 3}, 2);
  EXPECT_EQ(set.topic, 3);
  ASSERT_EQ(set.words.size(), 2u);
  EXPECT_EQ(set.words[0].word, "w6");
  EXPECT_EQ(set.words[1].word, "w7");
  EXPECT_EQ(m.topic_words_for_text(TokenizedText{text, 3}, 2).words[0].score, set.words[0].score);

  EXPECT_THROW(m.infer_topic(std::vector<WordId>{kPadId, kPadId}), Error);
  EXPECT_THROW(m.topic_words_for_text(TokenizedText{{kPadId}, 0}, 2), Error);
}

TEST(InferTopic, UniformStateTiesToTopicZero) {
  auto m = hand_model({{4, 4}, {4, 4}, {4, 4}}, {"a", "b"});
  EXPECT_EQ(m.infer_topic(std::vector<WordId>{1, 2}), 0u);
}

TEST(Persistence, RoundTripKeepsInference) {
  testing::TempDir dir;
  auto corpus = two_vocabulary(4);
  auto model = TopicModel::train_docs(corpus.docs, corpus.vocab, two_topics(20), 3);
  const std::string path = dir.path("lda.json");
  model.save(path);
  auto back = TopicModel::load(path);
  EXPECT_EQ(back.counts(), model.counts());
  EXPECT_EQ(back.hash(), model.hash());
  EXPECT_EQ(back.vocabulary().words(), model.vocabulary().words());
  for (const auto& doc : corpus.docs) EXPECT_EQ(back.infer_topic(doc), model.infer_topic(doc));
  EXPECT_THROW(TopicModel::load(dir.file("bad.json", "{\"format\": \"nope\"}")), Error);
}

TEST(Assigner, CachesAndFallsBack) {
  auto m = hand_model({{5, 0, 1}, {0, 6, 0}}, {"x", "y", "z"});
  TopicAssigner assigner(m, 2);
  const auto& a = assigner.assign("x z");
  EXPECT_EQ(a.topic, 0);
  EXPECT_EQ(&assigner.assign("x z"), &a);
  const auto& none = assigner.assign("unknown words");
  EXPECT_EQ(none.topic, -1);
  EXPECT_EQ(none.words.size(), 2u);
  EXPECT_EQ(none.words[0].word, "y");
  EXPECT_EQ(assigner.fallbacks(), 1u);
}

}  // namespace
}  // namespace tacntn
