#pragma once

// Mini-batch Adam training with per-epoch validation and early stopping.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacntn/eval.hpp"
#include "tacntn/model.hpp"
#include "tacntn/scoring.hpp"
#include "tacntn/topicmodel.hpp"

namespace tacntn {

enum class ValidationMetric {
  automatic,      // R_2@1 when every group is 1 positive + 1 negative, else loss
  recall_2_at_1,
  loss,           // reported as negative mean cross entropy
};

inline ValidationMetric validation_metric_from_string(const std::string& s) {
  if (s == "auto") return ValidationMetric::automatic;
  if (s == "r2@1") return ValidationMetric::recall_2_at_1;
  if (s == "loss") return ValidationMetric::loss;
  throw Error("unknown validation metric: " + s);
}

inline std::string to_string(ValidationMetric m) {
  switch (m) {
    case ValidationMetric::automatic: return "auto";
    case ValidationMetric::recall_2_at_1: return "r2@1";
    case ValidationMetric::loss: return "loss";
  }
  return "auto";
}

struct TrainConfig {
  AdamConfig adam{};  // learning rate 0.01
  std::size_t batch_size = 200;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  ValidationMetric metric = ValidationMetric::automatic;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // empty: keep everything in memory

  void validate() const {
    if (!(adam.learning_rate > 0.0)) throw Error("TrainConfig: learning rate must be > 0");
    if (batch_size < 1) throw Error("TrainConfig: batch size must be >= 1");
    if (patience < 1) throw Error("TrainConfig: patience must be >= 1");
    if (max_epochs < 1) throw Error("TrainConfig: max_epochs must be >= 1");
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  if (j.contains("validation_metric")) c.metric = validation_metric_from_string(j.at("validation_metric").get<std::string>());
  c.validate();
  return c;
}

struct TrainReport {
  std::vector<double> epoch_losses;
  std::vector<double> epoch_accuracy;  // online accuracy of the pre-update predictions
  std::vector<double> validation_scores;
  std::string metric;
  std::size_t stopping_epoch = 0;
  std::size_t best_epoch = 0;
  double best_score = 0.0;
  bool diverged = false;
  std::string divergence;
  std::size_t topic_fallbacks = 0;
};

inline nlohmann::json to_json(const TrainReport& r) {
  return {{"epoch_losses", r.epoch_losses},
          {"epoch_accuracy", r.epoch_accuracy},
          {"validation_scores", r.validation_scores},
          {"metric", r.metric},
          {"stopping_epoch", r.stopping_epoch},
          {"best_epoch", r.best_epoch},
          {"best_checkpoint", "checkpoint.json"},
          {"best_score", r.best_score},
          {"diverged", r.diverged},
          {"divergence", r.divergence},
          {"topic_fallbacks", r.topic_fallbacks}};
}

struct TrainResult {
  TrainReport report;
  Checkpoint best;
};

struct TrainHooks {
  /// Replaces the validation score, for forcing early-stop behaviour.
  std::function<double(const Model&, std::size_t epoch)> validation_override;
  /// Called once per epoch with the log line fields.
  std::function<void(std::size_t epoch, double loss, double val)> on_epoch;
};

// ---------------------------------------------------------------------------

inline ValidationMetric resolve_metric(ValidationMetric m, const RankedEvalSet& val) {
  if (m != ValidationMetric::automatic) return m;
  for (const auto& g : val.groups) {
    if (g.candidates.size() != 2 || g.positives() != 1) return ValidationMetric::loss;
  }
  return val.groups.empty() ? ValidationMetric::loss : ValidationMetric::recall_2_at_1;
}

inline double evaluate_validation(TextMatcher& matcher, const RankedEvalSet& val, ValidationMetric metric) {
  if (val.groups.empty()) throw Error("empty validation set");
  metric = resolve_metric(metric, val);
  const GroupScores scores = score_set(val, model_scorer(matcher, "tacntn"));
  if (metric == ValidationMetric::recall_2_at_1) return recall_n_at_k(val, scores, 2, 1);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t g = 0; g < val.groups.size(); ++g) {
    for (std::size_t i = 0; i < scores[g].size(); ++i) {
      total += cross_entropy(scores[g][i], val.groups[g].candidates[i].label);
      ++count;
    }
  }
  return -total / static_cast<double>(count);
}

/// Fraction of pairs whose prediction (g >= 0.5) matches the label.
inline double pair_accuracy(TextMatcher& matcher, const std::vector<LabeledPair>& pairs) {
  if (pairs.empty()) throw Error("accuracy of an empty set");
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    const int pred = matcher.score(p.message_text, p.response_text) >= 0.5 ? 1 : 0;
    if (pred == p.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Topic precomputation with an on-disk cache

/// Every token of the training texts plus the top `n` words of each topic, so
/// attention can always look up the topic words.
inline Vocabulary training_vocabulary(const std::vector<RawPair>& rows, const TopicModel* lda, std::size_t n) {
  std::vector<std::string> texts;
  for (const auto& r : rows) {
    texts.push_back(r.message);
    texts.push_back(r.response);
  }
  if (lda) {
    for (std::size_t t = 0; t < lda->config().topics; ++t) {
      for (const auto& w : lda->top_words(t, n).words) texts.push_back(w.word);
    }
  }
  return build_vocabulary(texts, 1);
}

struct TopicCacheResult {
  std::map<std::string, TopicWordSet> sets;  // every message and response text
  std::size_t computed = 0;                  // entries not served from the cache
  bool wrote_cache = false;
};

inline TopicCacheResult precompute_topics(const std::vector<LabeledPair>& pairs, TopicAssigner& assigner,
                                          const std::string& cache_path = {}) {
  const std::string lda_hash = assigner.model().hash();
  std::map<std::string, TopicWordSet> disk;
  if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
    std::ifstream in(cache_path);
    nlohmann::json j;
    try {
      in >> j;
      if (j.value("format", "") == "tacntn-topic-cache" && j.value("lda_hash", "") == lda_hash &&
          j.value("n", std::size_t{0}) == assigner.n()) {
        for (const auto& [text, set] : j.at("entries").items()) disk.emplace(text, topic_word_set_from_json(set));
      }
    } catch (const nlohmann::json::exception&) {
      disk.clear();
    }
  }
  TopicCacheResult out;
  auto visit = [&](const std::string& text) {
    if (out.sets.count(text)) return;
    if (auto it = disk.find(text); it != disk.end()) {
      out.sets.emplace(text, it->second);
      return;
    }
    out.sets.emplace(text, assigner.assign(text));
    ++out.computed;
  };
  for (const auto& p : pairs) {
    visit(p.message_text);
    visit(p.response_text);
  }
  std::map<std::string, TopicWordSet> merged = assigner.cache();
  for (const auto& [k, v] : out.sets) merged.emplace(k, v);
  assigner.seed_cache(merged);
  if (!cache_path.empty() && out.computed > 0) {
    nlohmann::json entries = nlohmann::json::object();
    for (const auto& [text, set] : disk) entries[text] = to_json(set);
    for (const auto& [text, set] : out.sets) entries[text] = to_json(set);
    nlohmann::json j = {{"format", "tacntn-topic-cache"}, {"lda_hash", lda_hash}, {"n", assigner.n()},
                        {"entries", std::move(entries)}};
    std::ofstream f(cache_path);
    if (!f) throw Error("cannot write topic cache: " + cache_path);
    f << j.dump() << '\n';
    out.wrote_cache = true;
  }
  return out;
}

// ---------------------------------------------------------------------------

inline void write_report(const TrainReport& report, const std::string& dir) {
  std::ofstream out(std::filesystem::path(dir) / "report.json");
  if (!out) throw Error("cannot write report in " + dir);
  out << to_json(report).dump(2) << '\n';
}

/// Trains from scratch. `topics` may be null for the topic-free variant; its
/// vocabulary need not match `vocab`, but every topic word the model should
/// attend to must be in `vocab`.
inline TrainResult train(const std::vector<LabeledPair>& train_pairs, const RankedEvalSet& val,
                         TopicAssigner* topics, const Vocabulary& vocab, const ModelConfig& model_config,
                         const TrainConfig& train_config, const DenseArray* embeddings = nullptr,
                         const TrainHooks& hooks = {}) {
  model_config.validate();
  train_config.validate();
  if (train_pairs.empty()) throw Error("empty training set");
  if (val.groups.empty()) throw Error("empty validation set");
  for (const auto& p : train_pairs) {
    if (p.message.ids.size() != model_config.s || p.response.ids.size() != model_config.s) {
      throw Error("training pairs were tokenized with a different sentence length");
    }
  }

  Rng master(train_config.seed);
  Rng init_rng = master.fork(1);
  Rng shuffle_rng = master.fork(2);

  Model model{model_config, vocab, init_params(model_config, vocab.size(), init_rng, embeddings)};
  TextMatcher matcher(model, topics);
  const std::string lda_hash = topics ? topics->model().hash() : std::string{};

  std::vector<MatchInput> inputs;
  inputs.reserve(train_pairs.size());
  for (const auto& p : train_pairs) {
    MatchInput in;
    in.message = p.message;
    in.response = p.response;
    if (model_config.uses_message_topics()) in.message_topics = matcher.topics_for(p.message_text);
    if (model_config.uses_response_topics()) in.response_topics = matcher.topics_for(p.response_text);
    inputs.push_back(std::move(in));
  }

  const ValidationMetric metric = resolve_metric(train_config.metric, val);
  TrainResult result;
  result.report.metric = to_string(metric);
  if (!train_config.checkpoint_dir.empty()) std::filesystem::create_directories(train_config.checkpoint_dir);
  const std::string ckpt_path =
      train_config.checkpoint_dir.empty() ? std::string{}
                                          : (std::filesystem::path(train_config.checkpoint_dir) / "checkpoint.json").string();

  auto snapshot = [&](std::size_t epoch) {
    return Checkpoint{model, lda_hash, shuffle_rng.state(), epoch};
  };
  result.best = snapshot(0);

  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t since_best = 0;
  bool have_best = false;
  std::vector<Param*> params = model.params.all();

  for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
        const std::size_t end = std::min(order.size(), start + train_config.batch_size);
        const double scale = 1.0 / static_cast<double>(end - start);
        for (std::size_t b = start; b < end; ++b) {
          const std::size_t i = order[b];
          const ForwardTrace t = forward(inputs[i], model.params, model_config);
          if ((t.probability >= 0.5 ? 1 : 0) == train_pairs[i].label) ++correct;
          loss_sum += accumulate_gradients(t, train_pairs[i].label, model.params, model_config, scale);
        }
        if (!std::isfinite(loss_sum)) throw Error("non-finite training loss");
        for (Param* p : params) {
          if (p == &model.params.embedding && model_config.freeze_embeddings) {
            p->zero_grad();
            continue;
          }
          adam_step(*p, train_config.adam);
        }
        for (double& v : model.params.embedding.value.row(kPadId)) v = 0.0;
      }
    } catch (const Error& e) {
      result.report.diverged = true;
      result.report.divergence = e.what();
      result.report.stopping_epoch = epoch;
      break;
    }

    const double epoch_loss = loss_sum / static_cast<double>(order.size());
    result.report.epoch_losses.push_back(epoch_loss);
    result.report.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(order.size()));
    const double score = hooks.validation_override ? hooks.validation_override(model, epoch)
                                                   : evaluate_validation(matcher, val, metric);
    result.report.validation_scores.push_back(score);
    result.report.stopping_epoch = epoch;
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss, score);

    if (!have_best || score > result.report.best_score) {
      have_best = true;
      since_best = 0;
      result.report.best_score = score;
      result.report.best_epoch = epoch;
      result.best = snapshot(epoch);
      if (!ckpt_path.empty()) save_checkpoint(result.best, ckpt_path);
    } else if (++since_best >= train_config.patience) {
      break;
    }
  }
  if (topics) result.report.topic_fallbacks = topics->fallbacks();
  if (!train_config.checkpoint_dir.empty()) {
    if (!have_best) save_checkpoint(result.best, ckpt_path);
    write_report(result.report, train_config.checkpoint_dir);
  }
  return result;
}

}  // namespace tacntn
