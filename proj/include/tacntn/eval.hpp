#pragma once

// Ranking metrics over grouped candidate sets and the baseline scorers.
// Ranking is by descending score with ties broken by ascending candidate
// index, so every metric is deterministic.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "tacntn/corpus.hpp"
#include "tacntn/numcore.hpp"
#include "tacntn/scoring.hpp"

namespace tacntn {

struct Candidate {
  std::string response;
  int label = 0;
};

struct EvalGroup {
  std::string id;
  std::string message;
  std::vector<Candidate> candidates;

  std::size_t positives() const {
    return static_cast<std::size_t>(
        std::count_if(candidates.begin(), candidates.end(), [](const Candidate& c) { return c.label == 1; }));
  }
};

struct RankedEvalSet {
  std::vector<EvalGroup> groups;
  std::size_t candidate_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.candidates.size();
    return n;
  }
};

/// Rows sharing a group_id form one group, in order of first appearance.
inline RankedEvalSet ranked_set_from_rows(const std::vector<RawRankedRow>& rows) {
  RankedEvalSet set;
  std::map<std::string, std::size_t> index;
  for (const auto& row : rows) {
    auto [it, fresh] = index.emplace(row.group_id, set.groups.size());
    if (fresh) set.groups.push_back({row.group_id, row.message, {}});
    EvalGroup& g = set.groups[it->second];
    if (g.message != row.message) {
      throw Error("line " + std::to_string(row.line) + ": group '" + row.group_id + "' has two different messages");
    }
    g.candidates.push_back({row.response, row.label});
  }
  return set;
}

inline RankedEvalSet load_ranked_eval(const std::string& path) { return ranked_set_from_rows(read_ranked_file(path).rows); }

/// Consecutive pair rows with the same message become one group.
inline RankedEvalSet group_consecutive_pairs(const std::vector<RawPair>& rows) {
  RankedEvalSet set;
  for (const auto& row : rows) {
    if (set.groups.empty() || set.groups.back().message != row.message) {
      set.groups.push_back({std::to_string(set.groups.size()), row.message, {}});
    }
    set.groups.back().candidates.push_back({row.response, row.label});
  }
  return set;
}

// ---------------------------------------------------------------------------
// Metrics

/// Candidate indices by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

inline std::vector<int> ranked_labels(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error("label/score count mismatch");
  std::vector<int> out;
  for (std::size_t i : rank_order(scores)) out.push_back(labels[i]);
  return out;
}

/// 1 iff the single positive is within the top k.
inline int recall_at_k(std::span<const int> labels, std::span<const double> scores, std::size_t k) {
  if (std::count(labels.begin(), labels.end(), 1) != 1) throw Error("R_n@k requires exactly one positive per group");
  const auto ranked = ranked_labels(labels, scores);
  for (std::size_t r = 0; r < ranked.size() && r < k; ++r) {
    if (ranked[r] == 1) return 1;
  }
  return 0;
}

inline double average_precision(std::span<const int> labels, std::span<const double> scores) {
  const auto ranked = ranked_labels(labels, scores);
  double hits = 0.0, total = 0.0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r] == 1) {
      hits += 1.0;
      total += hits / static_cast<double>(r + 1);
    }
  }
  if (hits == 0.0) throw Error("average precision of a group without positives");
  return total / hits;
}

inline double reciprocal_rank(std::span<const int> labels, std::span<const double> scores) {
  const auto ranked = ranked_labels(labels, scores);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r] == 1) return 1.0 / static_cast<double>(r + 1);
  }
  throw Error("reciprocal rank of a group without positives");
}

inline double precision_at_1(std::span<const int> labels, std::span<const double> scores) {
  const auto ranked = ranked_labels(labels, scores);
  if (ranked.empty()) throw Error("precision at 1 of an empty group");
  return ranked.front() == 1 ? 1.0 : 0.0;
}

using GroupScores = std::vector<std::vector<double>>;

namespace detail {
inline std::vector<int> labels_of(const EvalGroup& g) {
  std::vector<int> out;
  for (const auto& c : g.candidates) out.push_back(c.label);
  return out;
}
inline void check_shape(const RankedEvalSet& set, const GroupScores& scores) {
  if (scores.size() != set.groups.size()) throw Error("score table does not match the group count");
  for (std::size_t g = 0; g < scores.size(); ++g) {
    if (scores[g].size() != set.groups[g].candidates.size()) throw Error("score row does not match its group");
  }
}
}  // namespace detail

/// Mean of recall_at_k over groups, each of which must hold n candidates.
inline double recall_n_at_k(const RankedEvalSet& set, const GroupScores& scores, std::size_t n, std::size_t k) {
  if (set.groups.empty()) throw Error("empty evaluation set");
  detail::check_shape(set, scores);
  double hits = 0.0;
  for (std::size_t g = 0; g < set.groups.size(); ++g) {
    if (set.groups[g].candidates.size() != n) {
      throw Error("group '" + set.groups[g].id + "' has " + std::to_string(set.groups[g].candidates.size()) +
                  " candidates, R_" + std::to_string(n) + "@k needs " + std::to_string(n));
    }
    hits += recall_at_k(detail::labels_of(set.groups[g]), scores[g], k);
  }
  return hits / static_cast<double>(set.groups.size());
}

struct GradedMetrics {
  double map = 0.0;
  double mrr = 0.0;
  double p_at_1 = 0.0;
};

inline GradedMetrics map_mrr_p1(const RankedEvalSet& set, const GroupScores& scores) {
  if (set.groups.empty()) throw Error("empty evaluation set");
  detail::check_shape(set, scores);
  GradedMetrics m;
  for (std::size_t g = 0; g < set.groups.size(); ++g) {
    if (set.groups[g].positives() == 0) throw Error("group '" + set.groups[g].id + "' has no positive candidate");
    const auto labels = detail::labels_of(set.groups[g]);
    m.map += average_precision(labels, scores[g]);
    m.mrr += reciprocal_rank(labels, scores[g]);
    m.p_at_1 += precision_at_1(labels, scores[g]);
  }
  const auto n = static_cast<double>(set.groups.size());
  m.map /= n;
  m.mrr /= n;
  m.p_at_1 /= n;
  return m;
}

// ---------------------------------------------------------------------------
// Scorers

struct Scorer {
  std::string tag;
  std::function<double(const std::string& message, const std::string& response)> fn;
};

inline Scorer random_scorer(std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return {"random", [rng](const std::string&, const std::string&) { return rng->uniform01(); }};
}

/// Smoothed idf = ln((1 + N) / (1 + df)) + 1 over a document collection.
class IdfTable {
 public:
  IdfTable() = default;
  explicit IdfTable(const std::vector<std::string>& documents) {
    for (const auto& doc : documents) add_document(doc);
  }

  void add_document(const std::string& doc) {
    auto toks = split_tokens(doc);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (auto& t : toks) ++df_[t];
    ++documents_;
  }

  double idf(const std::string& term) const {
    auto it = df_.find(term);
    const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(documents_)) / (1.0 + df)) + 1.0;
  }

  std::size_t documents() const noexcept { return documents_; }
  std::size_t df(const std::string& term) const {
    auto it = df_.find(term);
    return it == df_.end() ? 0 : it->second;
  }

 private:
  std::size_t documents_ = 0;
  std::map<std::string, std::size_t> df_;
};

/// Raw term counts weighted by idf.
inline std::map<std::string, double> tfidf_vector(const std::string& text, const IdfTable& idf) {
  std::map<std::string, double> v;
  for (auto& t : split_tokens(text)) v[t] += 1.0;
  for (auto& [term, w] : v) w *= idf.idf(term);
  return v;
}

inline double sparse_cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, w] : a) {
    na += w * w;
    if (auto it = b.find(t); it != b.end()) dot += w * it->second;
  }
  for (const auto& [t, w] : b) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double cosine_score(const std::string& message, const std::string& response, const IdfTable& idf) {
  return sparse_cosine(tfidf_vector(message, idf), tfidf_vector(response, idf));
}

inline Scorer cosine_scorer(std::shared_ptr<const IdfTable> idf) {
  return {"cosine", [idf](const std::string& m, const std::string& r) { return cosine_score(m, r, *idf); }};
}

/// Scores through a trained model; the matcher must outlive the scorer.
inline Scorer model_scorer(TextMatcher& matcher, std::string tag) {
  return {std::move(tag), [&matcher](const std::string& m, const std::string& r) { return matcher.score(m, r); }};
}

inline GroupScores score_set(const RankedEvalSet& set, const Scorer& scorer) {
  GroupScores out;
  out.reserve(set.groups.size());
  for (const auto& g : set.groups) {
    std::vector<double> row;
    row.reserve(g.candidates.size());
    for (const auto& c : g.candidates) row.push_back(scorer.fn(g.message, c.response));
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

enum class Protocol { rnk, graded };

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "rnk") return Protocol::rnk;
  if (s == "graded") return Protocol::graded;
  throw Error("unknown protocol: " + s);
}

struct EvalReport {
  std::string scorer;
  Protocol protocol = Protocol::rnk;
  std::size_t groups = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> metrics;  // report order
  std::vector<double> per_group;  // R_n@1 hit (rnk) or AP (graded) per group

  double metric(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
      if (k == name) return v;
    }
    throw Error("report has no metric " + name);
  }
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = v;
  return {{"scorer", r.scorer},
          {"protocol", r.protocol == Protocol::rnk ? "rnk" : "graded"},
          {"groups", r.groups},
          {"seed", r.seed},
          {"metrics", std::move(metrics)},
          {"per_group", r.per_group}};
}

inline std::string recall_name(std::size_t n, std::size_t k) {
  return "R" + std::to_string(n) + "@" + std::to_string(k);
}

/// Cutoffs reported for groups of size n: {1, 2, 5} below n, so R_2 yields
/// only R_2@1.
inline std::vector<std::size_t> recall_cutoffs(std::size_t n) {
  std::vector<std::size_t> ks;
  for (std::size_t k : {1, 2, 5}) {
    if (k < n) ks.push_back(k);
  }
  if (ks.empty()) ks.push_back(1);
  return ks;
}

inline EvalReport report_from_scores(const RankedEvalSet& set, const GroupScores& scores, const std::string& tag,
                                     Protocol protocol, std::uint64_t seed = 0) {
  if (set.groups.empty()) throw Error("empty evaluation set");
  EvalReport r;
  r.scorer = tag;
  r.protocol = protocol;
  r.groups = set.groups.size();
  r.seed = seed;
  if (protocol == Protocol::rnk) {
    const std::size_t n = set.groups.front().candidates.size();
    for (std::size_t k : recall_cutoffs(n)) r.metrics.emplace_back(recall_name(n, k), recall_n_at_k(set, scores, n, k));
    for (std::size_t g = 0; g < set.groups.size(); ++g) {
      r.per_group.push_back(recall_at_k(detail::labels_of(set.groups[g]), scores[g], 1));
    }
  } else {
    const GradedMetrics m = map_mrr_p1(set, scores);
    r.metrics = {{"MAP", m.map}, {"MRR", m.mrr}, {"P@1", m.p_at_1}};
    for (std::size_t g = 0; g < set.groups.size(); ++g) {
      r.per_group.push_back(average_precision(detail::labels_of(set.groups[g]), scores[g]));
    }
  }
  return r;
}

inline EvalReport run_eval(const RankedEvalSet& set, const Scorer& scorer, Protocol protocol, std::uint64_t seed = 0) {
  if (set.groups.empty()) throw Error("empty evaluation set");
  return report_from_scores(set, score_set(set, scorer), scorer.tag, protocol, seed);
}

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  std::size_t dof = 0;
};

/// Two-sided paired t-test on per-group values.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("paired t-test needs equally many observations");
  if (a.size() < 2) throw Error("paired t-test needs at least two observations");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) var += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  var /= n - 1.0;
  TTestResult r;
  r.dof = a.size() - 1;
  if (var == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / std::sqrt(var / n);
  boost::math::students_t dist(static_cast<double>(r.dof));
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace tacntn
