#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support/temp_dir.hpp"
#include "tacntn/corpus.hpp"

namespace tacntn {
namespace {

using testing::TempDir;

TEST(Tokens, LowercaseAndTrailingPunctuation) {
  EXPECT_EQ(split_tokens("Is it GOOD?!  yes."), (std::vector<std::string>{"is", "it", "good", "?!", "yes", "."}));
  EXPECT_EQ(split_tokens("_url_ it's ..."), (std::vector<std::string>{"_url_", "it's", "..."}));
  EXPECT_TRUE(split_tokens("   ").empty());
}

TEST(Vocabulary, MinCount) {
  auto v2 = build_vocabulary({"a b", "a c"}, 2);
  EXPECT_EQ(v2.size(), 1u);
  EXPECT_EQ(v2.find("a"), WordId{1});
  auto v1 = build_vocabulary({"a b", "a c"}, 1);
  EXPECT_EQ(v1.size(), 3u);
  EXPECT_EQ(v1.words(), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Vocabulary, EmptyCorpus) {
  try {
    build_vocabulary({"", "  "}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty corpus");
  }
  EXPECT_THROW(build_vocabulary({"a"}, 0), Error);
}

TEST(Vocabulary, FrequencyOrderStableAcrossRuns) {
  Rng rng(4);
  std::vector<std::string> docs;
  for (int d = 0; d < 1000; ++d) {
    std::string text;
    for (int i = 0; i < 6; ++i) text += "w" + std::to_string(rng.index(50)) + " ";
    docs.push_back(text);
  }
  auto a = build_vocabulary(docs, 1);
  auto b = build_vocabulary(docs, 1);
  EXPECT_EQ(a.size(), 50u);
  EXPECT_EQ(a.words(), b.words());
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(Vocabulary, PadIsReserved) {
  auto v = Vocabulary::from_words({"x", "y"});
  EXPECT_FALSE(v.find("<pad>").has_value());
  auto with_literal = Vocabulary::from_words({"<pad>"});
  EXPECT_EQ(with_literal.find("<pad>"), WordId{1});
  EXPECT_THROW(v.word(kPadId), Error);
  EXPECT_THROW(Vocabulary::from_words({"x", "x"}), Error);
}

TEST(Tokenize, PadTruncateAndOov) {
  auto v = Vocabulary::from_words({"hello", "world"});
  auto t = tokenize("Hello World", v, 4);
  EXPECT_EQ(t.ids, (std::vector<WordId>{1, 2, 0, 0}));
  EXPECT_EQ(t.true_length, 2u);

  std::vector<std::string> words;
  std::string text;
  for (int i = 0; i < 25; ++i) {
    words.push_back("w" + std::to_string(i));
    text += words.back() + " ";
  }
  auto big = Vocabulary::from_words(words);
  auto tr = tokenize(text, big, 20);
  EXPECT_EQ(tr.true_length, 20u);
  for (WordId i = 0; i < 20; ++i) EXPECT_EQ(tr.ids[i], i + 1);

  try {
    tokenize("xyz", v, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no known tokens");
  }
}

TEST(Tokenize, IdempotentOnDetokenizedOutput) {
  auto v = build_vocabulary({"the movie was good ! really", "plot , character ?"}, 1);
  Rng rng(2);
  const auto words = v.words();
  for (int trial = 0; trial < 100; ++trial) {
    std::string text;
    const std::size_t n = 1 + rng.index(12);
    for (std::size_t i = 0; i < n; ++i) text += words[rng.index(words.size())] + " ";
    const std::size_t s = 1 + rng.index(10);
    auto once = tokenize(text, v, s);
    auto twice = tokenize(detokenize(once, v), v, s);
    EXPECT_EQ(once, twice);
    ASSERT_EQ(once.ids.size(), s);
    for (std::size_t i = once.true_length; i < s; ++i) EXPECT_EQ(once.ids[i], kPadId);
  }
}

TEST(LoadPairs, GoodAndBadLabels) {
  TempDir dir;
  auto v = build_vocabulary({"is it good yes it is a b"}, 1);
  auto ok = load_pairs(dir.file("ok.tsv", "# comment\n1\tis it good\tyes it is\n"), v, 20);
  ASSERT_EQ(ok.pairs.size(), 1u);
  EXPECT_EQ(ok.pairs[0].label, 1);
  EXPECT_EQ(ok.pairs[0].message_text, "is it good");
  EXPECT_TRUE(ok.warnings.empty());

  auto bad = load_pairs(dir.file("bad.tsv", "2\ta\tb\n"), v, 20);
  EXPECT_TRUE(bad.pairs.empty());
  ASSERT_EQ(bad.warnings.size(), 1u);
  EXPECT_EQ(bad.warnings[0].line, 1u);
}

TEST(LoadPairs, CountsSkippedLines) {
  TempDir dir;
  auto v = Vocabulary::from_words({"a", "b"});
  std::string content;
  std::vector<std::size_t> malformed;
  for (std::size_t line = 1; line <= 1000; ++line) {
    if (line % 100 == 7) {
      content += (line % 200 == 7 ? "x\ta\tb\n" : "1\ta\n");
      malformed.push_back(line);
    } else {
      content += std::to_string(line % 2) + "\ta b\tb a\n";
    }
  }
  auto res = load_pairs(dir.file("big.tsv", content), v, 5);
  EXPECT_EQ(res.pairs.size(), 990u);
  ASSERT_EQ(res.warnings.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(res.warnings[i].line, malformed[i]);
}

TEST(LoadPairs, UnreadableFile) { EXPECT_THROW(load_pairs("/nonexistent/pairs.tsv", Vocabulary(), 4), Error); }

TEST(Embeddings, FullAndEmptyCoverage) {
  TempDir dir;
  auto v = Vocabulary::from_words({"a", "b"});
  Rng rng(1);
  auto full = load_embeddings(dir.file("full.txt", "a 0.5 1\nb -1 2.25\nzzz 9 9\n"), v, 2, rng);
  EXPECT_EQ(full.random_rows, 0u);
  EXPECT_EQ(full.loaded_rows, 2u);
  EXPECT_EQ(full.table.at(1, 1), 1.0);
  EXPECT_EQ(full.table.at(2, 0), -1.0);
  EXPECT_EQ(full.table.at(2, 1), 2.25);

  auto empty = load_embeddings(dir.file("empty.txt", ""), v, 3, rng);
  EXPECT_EQ(empty.random_rows, 2u);
  for (double x : empty.table.row(kPadId)) EXPECT_EQ(x, 0.0);
  for (std::size_t id = 1; id <= 2; ++id) {
    for (double x : empty.table.row(id)) {
      EXPECT_GE(x, -0.1);
      EXPECT_LE(x, 0.1);
    }
  }
}

TEST(Embeddings, DimensionMismatchNamesLine) {
  TempDir dir;
  auto v = Vocabulary::from_words({"a"});
  Rng rng(1);
  std::string row100 = "a";
  for (int i = 0; i < 100; ++i) row100 += " 0.1";
  auto path = dir.file("bad.txt", row100 + "\nb 1 2 3 4 5\n");
  try {
    load_embeddings(path, v, 100, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
}

TEST(Embeddings, DeterministicUnderSeed) {
  TempDir dir;
  auto v = Vocabulary::from_words({"a", "b", "c"});
  auto path = dir.file("part.txt", "b 1 2\n");
  Rng r1(77), r2(77);
  EXPECT_EQ(load_embeddings(path, v, 2, r1).table, load_embeddings(path, v, 2, r2).table);
}

}  // namespace
}  // namespace tacntn
