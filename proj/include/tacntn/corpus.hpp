#pragma once

// Tokenization, vocabulary, TSV dataset readers and embedding tables.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tacntn/numcore.hpp"

namespace tacntn {

using WordId = std::uint32_t;
inline constexpr WordId kPadId = 0;

/// FNV-1a, used for vocabulary and model fingerprints.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return out;
}

namespace detail {
inline bool is_trailing_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '"': case '\'': case ')': case ']': case '}':
      return true;
    default:
      return false;
  }
}
}  // namespace detail

/// Lowercases, splits on whitespace and detaches a run of trailing
/// punctuation as its own token ("good?!" -> "good", "?!").
inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (start == i) break;
    std::string chunk(text.substr(start, i - start));
    for (char& c : chunk) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::size_t cut = chunk.size();
    while (cut > 0 && detail::is_trailing_punct(chunk[cut - 1])) --cut;
    if (cut == 0 || cut == chunk.size()) {
      tokens.push_back(std::move(chunk));
    } else {
      tokens.push_back(chunk.substr(0, cut));
      tokens.push_back(chunk.substr(cut));
    }
  }
  return tokens;
}

/// Word <-> dense id map. Id 0 is reserved for padding and never maps from a
/// surface word; real words occupy [1, V].
class Vocabulary {
 public:
  Vocabulary() : words_{"<pad>"} {}

  /// Builds from an ordered word list (id = position + 1).
  static Vocabulary from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) {
      if (w.empty()) throw Error("empty word in vocabulary list");
      if (!v.index_.emplace(w, static_cast<WordId>(v.words_.size())).second) {
        throw Error("duplicate word in vocabulary list: " + w);
      }
      v.words_.push_back(w);
    }
    return v;
  }

  /// Number of real words (excluding PAD).
  std::size_t size() const noexcept { return words_.size() - 1; }

  std::optional<WordId> find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view word) const { return find(word).has_value(); }

  const std::string& word(WordId id) const {
    if (id == kPadId || id >= words_.size()) throw Error("word id out of range: " + std::to_string(id));
    return words_[id];
  }

  /// Words in id order, excluding PAD.
  std::vector<std::string> words() const { return {words_.begin() + 1, words_.end()}; }

  std::string hash() const {
    std::uint64_t h = fnv1a("tacntn-vocab");
    for (std::size_t i = 1; i < words_.size(); ++i) {
      h = fnv1a(words_[i], h);
      h = fnv1a("\n", h);
    }
    return hex64(h);
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, WordId> index_;
};

/// Keeps tokens with frequency >= min_count. Ids ordered by descending
/// frequency, ties lexicographic.
inline Vocabulary build_vocabulary(const std::vector<std::string>& texts, std::size_t min_count) {
  if (min_count < 1) throw Error("min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& text : texts) {
    for (auto& tok : split_tokens(text)) {
      ++counts[tok];
      ++total;
    }
  }
  if (total == 0) throw Error("empty corpus");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts) {
    if (c >= min_count) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, c] : kept) words.push_back(w);
  return Vocabulary::from_words(words);
}

/// Token ids padded or truncated to exactly s entries.
struct TokenizedText {
  std::vector<WordId> ids;
  std::size_t true_length = 0;

  std::span<const WordId> tokens() const { return {ids.data(), true_length}; }
  friend bool operator==(const TokenizedText&, const TokenizedText&) = default;
};

/// In-vocabulary ids of `text` in order, without truncation.
inline std::vector<WordId> known_ids(std::string_view text, const Vocabulary& vocab) {
  std::vector<WordId> ids;
  for (const auto& tok : split_tokens(text)) {
    if (auto id = vocab.find(tok)) ids.push_back(*id);
  }
  return ids;
}

inline TokenizedText tokenize(std::string_view text, const Vocabulary& vocab, std::size_t s) {
  if (s < 1) throw Error("sentence length s must be >= 1");
  std::vector<WordId> ids = known_ids(text, vocab);
  if (ids.empty()) throw Error("no known tokens");
  TokenizedText out;
  out.true_length = std::min(ids.size(), s);
  ids.resize(s, kPadId);
  out.ids = std::move(ids);
  return out;
}

inline std::string detokenize(const TokenizedText& text, const Vocabulary& vocab) {
  std::string out;
  for (WordId id : text.tokens()) {
    if (!out.empty()) out += ' ';
    out += vocab.word(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

struct LabeledPair {
  TokenizedText message;
  TokenizedText response;
  int label = 0;
  std::string message_text;
  std::string response_text;
};

struct LoadWarning {
  std::size_t line = 0;
  std::string reason;
};

struct RawPair {
  int label = 0;
  std::string message;
  std::string response;
  std::size_t line = 0;
};

struct RawRankedRow {
  std::string group_id;
  int label = 0;
  std::string message;
  std::string response;
  std::size_t line = 0;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

inline std::optional<int> parse_label(const std::string& field) {
  if (field == "0") return 0;
  if (field == "1") return 1;
  return std::nullopt;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read file: " + path);
  return in;
}

/// Reads lines, strips CR, skips blank and '#' lines; calls fn(line_no, line).
template <typename Fn>
void for_each_data_line(const std::string& path, Fn&& fn) {
  std::ifstream in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    fn(line_no, line);
  }
}

}  // namespace detail

struct RawPairFile {
  std::vector<RawPair> rows;
  std::vector<LoadWarning> warnings;
};

/// `label<TAB>message<TAB>response` rows, without tokenization.
inline RawPairFile read_pair_file(const std::string& path) {
  RawPairFile out;
  detail::for_each_data_line(path, [&](std::size_t line_no, const std::string& line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 3) {
      out.warnings.push_back({line_no, "expected 3 tab-separated fields, got " + std::to_string(fields.size())});
      return;
    }
    auto label = detail::parse_label(fields[0]);
    if (!label) {
      out.warnings.push_back({line_no, "label must be 0 or 1, got '" + fields[0] + "'"});
      return;
    }
    out.rows.push_back({*label, fields[1], fields[2], line_no});
  });
  return out;
}

struct RawRankedFile {
  std::vector<RawRankedRow> rows;
  std::vector<LoadWarning> warnings;
};

/// `group_id<TAB>label<TAB>message<TAB>response` rows.
inline RawRankedFile read_ranked_file(const std::string& path) {
  RawRankedFile out;
  detail::for_each_data_line(path, [&](std::size_t line_no, const std::string& line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 4) {
      out.warnings.push_back({line_no, "expected 4 tab-separated fields, got " + std::to_string(fields.size())});
      return;
    }
    auto label = detail::parse_label(fields[1]);
    if (!label) {
      out.warnings.push_back({line_no, "label must be 0 or 1, got '" + fields[1] + "'"});
      return;
    }
    out.rows.push_back({fields[0], *label, fields[2], fields[3], line_no});
  });
  return out;
}

struct PairLoadResult {
  std::vector<LabeledPair> pairs;
  std::vector<LoadWarning> warnings;
};

inline PairLoadResult tokenize_pairs(const RawPairFile& raw, const Vocabulary& vocab, std::size_t s) {
  PairLoadResult out;
  out.warnings = raw.warnings;
  for (const auto& row : raw.rows) {
    try {
      LabeledPair p;
      p.message = tokenize(row.message, vocab, s);
      p.response = tokenize(row.response, vocab, s);
      p.label = row.label;
      p.message_text = row.message;
      p.response_text = row.response;
      out.pairs.push_back(std::move(p));
    } catch (const Error& e) {
      out.warnings.push_back({row.line, e.what()});
    }
  }
  std::sort(out.warnings.begin(), out.warnings.end(),
            [](const LoadWarning& a, const LoadWarning& b) { return a.line < b.line; });
  return out;
}

inline PairLoadResult load_pairs(const std::string& path, const Vocabulary& vocab, std::size_t s) {
  return tokenize_pairs(read_pair_file(path), vocab, s);
}

// ---------------------------------------------------------------------------
// Embeddings

inline constexpr double kEmbeddingInitRange = 0.1;

/// (V+1) x d table; row 0 is the all-zero PAD vector.
struct EmbeddingTable {
  DenseArray table;
  std::size_t loaded_rows = 0;
  std::size_t random_rows = 0;
};

inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t d, Rng& rng) {
  EmbeddingTable out;
  out.table = DenseArray({vocab.size() + 1, d});
  for (std::size_t id = 1; id <= vocab.size(); ++id) {
    for (double& v : out.table.row(id)) v = rng.uniform(-kEmbeddingInitRange, kEmbeddingInitRange);
  }
  out.random_rows = vocab.size();
  return out;
}

/// Reads `word v1 ... vd` lines. Vocabulary words absent from the file get
/// uniform [-0.1, 0.1] rows drawn in id order from `rng`.
inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t d, Rng& rng) {
  if (d == 0) throw Error("embedding dimension must be >= 1");
  EmbeddingTable out;
  out.table = DenseArray({vocab.size() + 1, d});
  std::vector<bool> seen(vocab.size() + 1, false);
  std::ifstream in = detail::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    std::vector<double> values;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(path + ":" + std::to_string(line_no) + ": malformed float '" + tok + "'");
      }
    }
    if (values.size() != d) {
      throw Error(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(d) + " values, got " +
                  std::to_string(values.size()));
    }
    auto id = vocab.find(word);
    if (!id || seen[*id]) continue;
    seen[*id] = true;
    std::copy(values.begin(), values.end(), out.table.row(*id).begin());
    ++out.loaded_rows;
  }
  for (std::size_t id = 1; id <= vocab.size(); ++id) {
    if (seen[id]) continue;
    for (double& v : out.table.row(id)) v = rng.uniform(-kEmbeddingInitRange, kEmbeddingInitRange);
    ++out.random_rows;
  }
  return out;
}

}  // namespace tacntn
