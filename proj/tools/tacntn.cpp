#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>

#include "tacntn/synthetic.hpp"
#include "tacntn/tacntn.hpp"

using namespace tacntn;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON in " + path + ": " + e.what());
  }
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
}

void report_warnings(const std::string& path, const std::vector<LoadWarning>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << path << ":" << w.line << ": " << w.reason << '\n';
}

std::size_t field_count(const std::string& path) {
  std::size_t fields = 0;
  detail::for_each_data_line(path, [&](std::size_t, const std::string& line) {
    if (fields == 0) fields = detail::split_tabs(line).size();
  });
  return fields;
}

// A pair file contributes both sides of every row (each distinct text once);
// anything else is read as one document per line.
std::vector<std::string> lda_documents(const std::string& path) {
  std::vector<std::string> docs;
  if (field_count(path) == 3) {
    auto raw = read_pair_file(path);
    report_warnings(path, raw.warnings);
    std::set<std::string> seen;
    for (const auto& r : raw.rows) {
      for (const auto* t : {&r.message, &r.response}) {
        if (seen.insert(*t).second) docs.push_back(*t);
      }
    }
  } else {
    detail::for_each_data_line(path, [&](std::size_t, const std::string& line) { docs.push_back(line); });
  }
  return docs;
}

// Validation and test files may be pair files (consecutive rows sharing a
// message form one group) or ranked files with explicit group ids.
RankedEvalSet load_eval_set(const std::string& path) {
  if (field_count(path) == 4) {
    auto raw = read_ranked_file(path);
    report_warnings(path, raw.warnings);
    return ranked_set_from_rows(raw.rows);
  }
  auto raw = read_pair_file(path);
  report_warnings(path, raw.warnings);
  return group_consecutive_pairs(raw.rows);
}

struct LoadedModel {
  Checkpoint ck;
  std::unique_ptr<TopicModel> lda;
  std::unique_ptr<TopicAssigner> assigner;
  std::unique_ptr<TextMatcher> matcher;
};

std::unique_ptr<LoadedModel> load_model(const std::string& ckpt, const std::string& lda_path) {
  auto m = std::make_unique<LoadedModel>();
  m->ck = load_checkpoint(ckpt);
  if (!lda_path.empty()) m->lda = std::make_unique<TopicModel>(TopicModel::load(lda_path));
  check_compatible(m->ck, m->lda.get());
  if (m->lda) m->assigner = std::make_unique<TopicAssigner>(*m->lda, m->ck.model.config.n_topic_words);
  m->matcher = std::make_unique<TextMatcher>(m->ck.model, m->assigner.get());
  return m;
}

std::string checkpoint_path(const std::string& p) {
  return fs::is_directory(p) ? (fs::path(p) / "checkpoint.json").string() : p;
}

// ---------------------------------------------------------------------------

struct TrainLdaArgs {
  std::string input, out;
  std::size_t topics = 200, iters = 1000, n = 50;
  std::uint64_t seed = 1;
};

int cmd_train_lda(const TrainLdaArgs& a) {
  const auto texts = lda_documents(a.input);
  const Vocabulary vocab = build_vocabulary(texts, 1);
  std::vector<std::vector<WordId>> docs;
  std::size_t skipped = 0;
  for (const auto& t : texts) {
    auto ids = known_ids(t, vocab);
    if (ids.empty()) {
      ++skipped;
      continue;
    }
    docs.push_back(std::move(ids));
  }
  LdaConfig cfg;
  cfg.topics = a.topics;
  cfg.iterations = a.iters;
  cfg.n_topic_words = a.n;
  auto model = TopicModel::train_docs(docs, vocab, cfg, a.seed);
  model.save(a.out);
  std::cerr << "trained " << a.topics << " topics on " << docs.size() << " documents (" << vocab.size()
            << " words, " << skipped << " empty lines skipped), hash " << model.hash() << '\n';
  return 0;
}

struct TopicsArgs {
  std::string model, text;
  std::size_t n = 50;
  int topic = -1;
};

int cmd_topics(const TopicsArgs& a) {
  auto model = TopicModel::load(a.model);
  TopicWordSet set;
  if (a.topic >= 0) {
    set = model.top_words(static_cast<std::size_t>(a.topic), a.n);
  } else if (!a.text.empty()) {
    set = model.topic_words_for_text(std::string_view(a.text), a.n);
  } else {
    throw Error("give --text or --topic");
  }
  std::cout << "topic " << set.topic << '\n';
  char buf[32];
  for (const auto& w : set.words) {
    std::snprintf(buf, sizeof buf, "%.4f", w.score);
    std::cout << w.word << '\t' << buf << '\n';
  }
  return 0;
}

struct TrainArgs {
  std::string train, val, lda, config, train_config, embeddings, out;
  std::uint64_t seed = 1;
  bool freeze = false;
  std::string variant;
};

int cmd_train(const TrainArgs& a) {
  ModelConfig mc = a.config.empty() ? ModelConfig{} : model_config_from_json(read_json(a.config));
  if (!a.variant.empty()) mc.variant = variant_from_string(a.variant);
  if (a.freeze) mc.freeze_embeddings = true;
  mc.validate();
  TrainConfig tc = a.train_config.empty() ? TrainConfig{} : train_config_from_json(read_json(a.train_config));
  tc.seed = a.seed;
  tc.checkpoint_dir = a.out;

  const bool needs_topics = mc.uses_message_topics() || mc.uses_response_topics();
  std::unique_ptr<TopicModel> lda;
  if (!a.lda.empty()) lda = std::make_unique<TopicModel>(TopicModel::load(a.lda));
  if (needs_topics && !lda) throw Error("variant " + to_string(mc.variant) + " needs --lda");

  auto raw = read_pair_file(a.train);
  report_warnings(a.train, raw.warnings);
  const Vocabulary vocab = training_vocabulary(raw.rows, needs_topics ? lda.get() : nullptr, mc.n_topic_words);
  const auto loaded = tokenize_pairs(raw, vocab, mc.s);
  report_warnings(a.train, loaded.warnings);
  const RankedEvalSet val = load_eval_set(a.val);

  std::optional<EmbeddingTable> emb;
  if (!a.embeddings.empty()) {
    Rng rng = Rng(a.seed).fork(3);
    emb = load_embeddings(a.embeddings, vocab, mc.d, rng);
    std::cerr << "embeddings: " << emb->loaded_rows << " loaded, " << emb->random_rows << " random\n";
  }

  std::unique_ptr<TopicAssigner> assigner;
  if (needs_topics) {
    assigner = std::make_unique<TopicAssigner>(*lda, mc.n_topic_words);
    fs::create_directories(a.out);
    precompute_topics(loaded.pairs, *assigner, (fs::path(a.out) / "topics.json").string());
  }

  TrainHooks hooks;
  hooks.on_epoch = [](std::size_t epoch, double loss, double val) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.6f val=%.6f", epoch, loss, val);
    std::cout << buf << std::endl;
  };
  auto res = train(loaded.pairs, val, assigner.get(), vocab, mc, tc, emb ? &emb->table : nullptr, hooks);
  if (res.report.diverged) {
    std::cerr << "training diverged: " << res.report.divergence << '\n';
    return 2;
  }
  std::cerr << "best " << res.report.metric << " " << res.report.best_score << " at epoch " << res.report.best_epoch
            << "; wrote " << (fs::path(a.out) / "checkpoint.json").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string test, scorer = "tacntn", ckpt, lda, protocol = "rnk", out, idf;
  std::uint64_t seed = 1;
  std::string baseline;
};

int cmd_eval(const EvalArgs& a) {
  const RankedEvalSet set = load_eval_set(a.test);
  const Protocol protocol = protocol_from_string(a.protocol);
  std::unique_ptr<LoadedModel> model;
  Scorer scorer;
  if (a.scorer == "random") {
    scorer = random_scorer(a.seed);
  } else if (a.scorer == "cosine") {
    std::vector<std::string> docs;
    if (!a.idf.empty()) {
      for (const auto& r : read_pair_file(a.idf).rows) docs.push_back(r.message);
    } else {
      for (const auto& g : set.groups) {
        docs.push_back(g.message);
        for (const auto& c : g.candidates) docs.push_back(c.response);
      }
    }
    scorer = cosine_scorer(std::make_shared<IdfTable>(docs));
  } else if (a.scorer == "tacntn" || a.scorer == "cntn") {
    if (a.ckpt.empty()) throw Error("--scorer " + a.scorer + " needs --ckpt");
    model = load_model(checkpoint_path(a.ckpt), a.lda);
    const bool topic_free = model->ck.model.config.variant == Variant::cntn;
    if (topic_free != (a.scorer == "cntn")) {
      throw Error("checkpoint variant " + to_string(model->ck.model.config.variant) + " does not fit --scorer " +
                  a.scorer);
    }
    scorer = model_scorer(*model->matcher, a.scorer);
  } else {
    throw Error("unknown scorer " + a.scorer);
  }
  const EvalReport rep = run_eval(set, scorer, protocol, a.seed);
  nlohmann::json j = to_json(rep);
  for (const auto& [k, v] : rep.metrics) std::printf("%s\t%.4f\n", k.c_str(), v);
  if (!a.baseline.empty()) {
    const auto other = read_json(a.baseline);
    const auto base = other.at("per_group").get<std::vector<double>>();
    const TTestResult t = paired_t_test(rep.per_group, base);
    j["t_test"] = {{"baseline", other.value("scorer", "")}, {"t", t.t}, {"dof", t.dof}, {"p_value", t.p_value}};
    std::printf("paired t=%.4f dof=%zu p=%.3g vs %s\n", t.t, t.dof, t.p_value, other.value("scorer", "").c_str());
  }
  if (!a.out.empty()) write_json(j, a.out);
  return 0;
}

struct IndexArgs {
  std::string pairs, out;
};

int cmd_index(const IndexArgs& a) {
  auto raw = read_pair_file(a.pairs);
  report_warnings(a.pairs, raw.warnings);
  auto index = InvertedIndex::build(raw.rows);
  index.save(a.out);
  std::cerr << "indexed " << index.pair_count() << " positive pairs, " << index.postings().size() << " terms\n";
  return 0;
}

struct ChatArgs {
  std::string index, ckpt, lda, log;
  std::size_t top_m = 10, show = 3;
};

int cmd_chat(const ChatArgs& a) {
  const auto index = InvertedIndex::load(a.index);
  auto model = load_model(checkpoint_path(a.ckpt), a.lda);
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log);
    if (!log) throw Error("cannot write " + a.log);
  }
  run_repl(std::cin, std::cout, a.log.empty() ? nullptr : &log, index, *model->matcher, a.top_m, a.show);
  return 0;
}

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t topics = 8, lda_docs = 4000, train = 1000, val = 200, test = 500, queries = 50;
};

int cmd_synth(const SynthArgs& a) {
  synthetic::WorldConfig wc;
  wc.topics = a.topics;
  synthetic::World world(wc);
  Rng rng(a.seed);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  synthetic::write_lines(world.topic_corpus(a.lda_docs, rng), (dir / "lda_corpus.txt").string());
  synthetic::write_pairs(world.pairs(a.train, rng), (dir / "train.tsv").string());
  synthetic::write_pairs(world.pairs(a.val, rng), (dir / "val.tsv").string());
  synthetic::write_ranked(world.ranked(a.test, 10, rng), (dir / "test.tsv").string());
  std::vector<std::string> queries;
  for (std::size_t i = 0; i < a.queries; ++i) {
    queries.push_back(world.text(rng.index(a.topics), synthetic::World::Side::message, rng));
  }
  synthetic::write_lines(queries, (dir / "queries.txt").string());
  ModelConfig mc;
  mc.s = 8;
  mc.d = 8;
  mc.feature_maps = 4;
  mc.conv_window = 2;
  mc.pool_window = 2;
  mc.slices = 4;
  mc.n_topic_words = 20;
  write_json(to_json(mc), (dir / "model.json").string());
  write_json({{"batch_size", 50}, {"max_epochs", 20}, {"patience", 5}}, (dir / "train.json").string());
  std::cerr << "wrote synthetic corpus to " << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topic-aware response matching for retrieval chatbots"};
  app.require_subcommand(1);
  std::function<int()> action;

  TrainLdaArgs lda;
  auto* c = app.add_subcommand("train-lda", "train a Twitter-LDA topic model");
  c->add_option("--input", lda.input, "one document per line, or a label/message/response TSV")->required();
  c->add_option("--topics", lda.topics, "number of topics T");
  c->add_option("--iters", lda.iters, "Gibbs sweeps");
  c->add_option("--n", lda.n, "default topic words per text");
  c->add_option("--seed", lda.seed);
  c->add_option("--out", lda.out)->required();
  c->callback([&] { action = [&] { return cmd_train_lda(lda); }; });

  TopicsArgs top;
  c = app.add_subcommand("topics", "show the topic words of a text or a topic");
  c->add_option("--model", top.model)->required();
  c->add_option("--text", top.text);
  c->add_option("--topic", top.topic);
  c->add_option("--n", top.n);
  c->callback([&] { action = [&] { return cmd_topics(top); }; });

  TrainArgs tr;
  c = app.add_subcommand("train", "train a matching model");
  c->add_option("--train", tr.train, "label/message/response TSV")->required();
  c->add_option("--val", tr.val, "pair TSV or ranked TSV")->required();
  c->add_option("--lda", tr.lda, "topic model (needed by every topic variant)");
  c->add_option("--config", tr.config, "model config JSON");
  c->add_option("--train-config", tr.train_config, "optimizer and schedule JSON");
  c->add_option("--variant", tr.variant, "overrides the config variant")
      ->check(CLI::IsMember({"full", "cntn", "avg", "msg", "res"}));
  c->add_option("--embeddings", tr.embeddings, "pretrained word vectors, `word v1 ... vd` per line");
  c->add_flag("--freeze-embeddings", tr.freeze);
  c->add_option("--seed", tr.seed);
  c->add_option("--out", tr.out, "checkpoint directory")->required();
  c->callback([&] { action = [&] { return cmd_train(tr); }; });

  EvalArgs ev;
  c = app.add_subcommand("eval", "score a test set");
  c->add_option("--test", ev.test)->required();
  c->add_option("--scorer", ev.scorer)->check(CLI::IsMember({"tacntn", "cntn", "cosine", "random"}));
  c->add_option("--ckpt", ev.ckpt, "checkpoint file or directory");
  c->add_option("--lda", ev.lda);
  c->add_option("--protocol", ev.protocol)->check(CLI::IsMember({"rnk", "graded"}));
  c->add_option("--idf", ev.idf, "pair TSV whose messages define idf for the cosine scorer");
  c->add_option("--baseline", ev.baseline, "earlier eval report for a paired t-test");
  c->add_option("--seed", ev.seed);
  c->add_option("--out", ev.out);
  c->callback([&] { action = [&] { return cmd_eval(ev); }; });

  IndexArgs ix;
  c = app.add_subcommand("index", "build the retrieval index");
  c->add_option("--pairs", ix.pairs)->required();
  c->add_option("--out", ix.out)->required();
  c->callback([&] { action = [&] { return cmd_index(ix); }; });

  ChatArgs ch;
  c = app.add_subcommand("chat", "interactive retrieval chatbot, reading queries from stdin");
  c->add_option("--index", ch.index)->required();
  c->add_option("--ckpt", ch.ckpt)->required();
  c->add_option("--lda", ch.lda);
  c->add_option("--log", ch.log, "JSON-lines session log");
  c->add_option("--top-m", ch.top_m, "candidates retrieved per query");
  c->add_option("--show", ch.show, "responses printed per query");
  c->callback([&] { action = [&] { return cmd_chat(ch); }; });

  SynthArgs sy;
  c = app.add_subcommand("synth", "write a synthetic topic-structured corpus");
  c->add_option("--out", sy.out)->required();
  c->add_option("--seed", sy.seed);
  c->add_option("--topics", sy.topics);
  c->add_option("--lda-docs", sy.lda_docs);
  c->add_option("--train-messages", sy.train);
  c->add_option("--val-messages", sy.val);
  c->add_option("--test-groups", sy.test);
  c->add_option("--queries", sy.queries);
  c->callback([&] { action = [&] { return cmd_synth(sy); }; });

  CLI11_PARSE(app, argc, argv);
  try {
    return action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
