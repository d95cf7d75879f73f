#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "support/reference_model.hpp"
#include "support/temp_dir.hpp"
#include "tacntn/model.hpp"

namespace tacntn {
namespace {

using testing::random_input;
using testing::random_params;
using testing::tiny_model_config;

ModelParams zero_params(const ModelConfig& c, std::size_t vocab_size) {
  Rng rng(0);
  ModelParams p = init_params(c, vocab_size, rng);
  for (Param* q : p.all()) q->value.fill(0.0);
  return p;
}

TEST(Encoder, HandEvaluatedWindow) {
  ModelConfig c;
  c.s = 3;
  c.d = 2;
  c.feature_maps = 1;
  c.conv_window = 3;
  c.pool_window = 1;
  c.pooling = Pooling::windowed;
  c.slices = 1;
  c.n_topic_words = 1;
  ModelParams p = zero_params(c, 3);
  p.embedding.value = DenseArray({4, 2}, {0, 0, 1, 0, 0, 1, 1, 1});
  p.conv_w.value = DenseArray({1, 3}, {1, 1, 1});
  auto t = encode_sentence(TokenizedText{{1, 2, 3}, 3}, p, c);
  EXPECT_EQ(c.sentence_dim(), 2u);
  EXPECT_EQ(t.vec, (std::vector<double>{2, 2}));
}

TEST(Encoder, AllPadIsZero) {
  for (Pooling mode : {Pooling::global, Pooling::windowed}) {
    ModelConfig c = tiny_model_config();
    c.pooling = mode;
    Rng rng(3);
    ModelParams p = init_params(c, 5, rng);
    auto t = encode_sentence(TokenizedText{std::vector<WordId>(c.s, kPadId), 0}, p, c);
    ASSERT_EQ(t.vec.size(), c.sentence_dim());
    for (double v : t.vec) EXPECT_EQ(v, 0.0);
  }
}

TEST(Encoder, SiameseSharedWeights) {
  ModelConfig c = tiny_model_config();
  Rng rng(8);
  ModelParams p = random_params(c, 6, rng);
  MatchInput in = random_input(c, 6, rng);
  in.response = in.message;
  auto t = forward(in, p, c);
  EXPECT_EQ(t.message.vec, t.response.vec);
}

TEST(Encoder, WindowedDimension) {
  ModelConfig c = tiny_model_config();
  c.s = 9;
  c.conv_window = 2;
  c.pool_window = 3;
  c.pooling = Pooling::windowed;
  // 8 conv positions, stride-3 windows start at 0 and 3.
  EXPECT_EQ(c.pooled_positions(), 2u);
  EXPECT_EQ(c.sentence_dim(), c.feature_maps * c.d * 2);
  c.conv_window = 10;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Attention, SingletonAndZeroMatrix) {
  DenseArray E({4, 2}, {0, 0, 1, 2, 3, 4, 5, 7});
  DenseArray A({2, 3}, {0.3, -0.2, 0.5, 0.1, 0.9, -0.4});
  std::vector<double> v{1, 2, 3};
  auto one = topic_attention(std::vector<WordId>{2}, v, &A, E);
  EXPECT_EQ(one.alpha, (std::vector<double>{1.0}));
  EXPECT_EQ(one.topic_vec, (std::vector<double>{3, 4}));

  DenseArray zero({2, 3});
  auto flat = topic_attention(std::vector<WordId>{1, 2, 3}, v, &zero, E);
  for (double a : flat.alpha) EXPECT_DOUBLE_EQ(a, 1.0 / 3.0);
  EXPECT_NEAR(flat.topic_vec[0], 3.0, 1e-12);
  EXPECT_NEAR(flat.topic_vec[1], 13.0 / 3.0, 1e-12);

  EXPECT_THROW(topic_attention(std::vector<WordId>{}, v, &A, E), Error);
}

TEST(Attention, MatchesHandSoftmax) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    DenseArray E = rng_uniform(rng, -1, 1, {5, 2});
    DenseArray A = rng_uniform(rng, -1, 1, {2, 4});
    DenseArray v = rng_uniform(rng, -1, 1, {4});
    std::vector<WordId> words{1, 3, 4};
    auto t = topic_attention(words, v.values(), &A, E);
    std::vector<double> omega(3, 0.0);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t q = 0; q < 4; ++q) omega[j] += E.at(words[j], a) * A.at(a, q) * v[q];
    double z = 0;
    for (double w : omega) z += std::exp(w);
    double total = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(t.alpha[j], std::exp(omega[j]) / z, 1e-12);
      EXPECT_GT(t.alpha[j], 0.0);
      EXPECT_LT(t.alpha[j], 1.0);
      total += t.alpha[j];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Ntn, ZeroAndUnitBasis) {
  NtnParams p{Param("m", DenseArray({2, 1, 2})), Param("v", DenseArray({1, 4})), Param("b", DenseArray({1}))};
  std::vector<double> a{1, 0}, c{0, 1};
  EXPECT_EQ(ntn(a, c, p), (std::vector<double>{0.0}));
  p.linear.value.fill(1.0);
  EXPECT_NEAR(ntn(a, c, p)[0], 0.96403, 1e-5);
  EXPECT_DOUBLE_EQ(ntn(a, c, p)[0], std::tanh(2.0));
  EXPECT_THROW(ntn(std::vector<double>{1}, c, p), Error);
}

TEST(Forward, ZeroFusionGivesHalf) {
  ModelConfig c = tiny_model_config();
  Rng rng(4);
  ModelParams p = random_params(c, 7, rng);
  p.fusion_w.value.fill(0.0);
  p.fusion_b.value.fill(0.0);
  EXPECT_EQ(forward(random_input(c, 7, rng), p, c).probability, 0.5);
}

TEST(Forward, DeterministicAndInUnitInterval) {
  ModelConfig c = tiny_model_config();
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    ModelParams p = random_params(c, 7, rng);
    MatchInput in = random_input(c, 7, rng);
    const double g1 = forward(in, p, c).probability;
    const double g2 = forward(in, p, c).probability;
    EXPECT_EQ(g1, g2);
    EXPECT_GT(g1, 0.0);
    EXPECT_LT(g1, 1.0);
  }
}

TEST(Forward, MatchesReferenceForEveryVariant) {
  Rng rng(10);
  for (Variant v : {Variant::full, Variant::cntn, Variant::avg, Variant::msg, Variant::res}) {
    for (Pooling mode : {Pooling::global, Pooling::windowed}) {
      for (bool share : {false, true}) {
        ModelConfig c = tiny_model_config();
        c.variant = v;
        c.pooling = mode;
        c.share_attention = share;
        for (int trial = 0; trial < 10; ++trial) {
          ModelParams p = random_params(c, 9, rng);
          MatchInput in = random_input(c, 9, rng);
          auto t = forward(in, p, c);
          auto ref = oracle::reference_forward(in, p, c);
          EXPECT_NEAR(t.probability, ref.probability, 1e-10) << to_string(v) << " " << to_string(mode);
          ASSERT_EQ(t.message.vec.size(), ref.message_vec.size());
          for (std::size_t i = 0; i < ref.message_vec.size(); ++i) {
            EXPECT_NEAR(t.message.vec[i], ref.message_vec[i], 1e-12);
          }
        }
      }
    }
  }
}

TEST(Loss, CrossEntropyValues) {
  EXPECT_NEAR(cross_entropy(0.5, 1), 0.6931, 1e-4);
  EXPECT_DOUBLE_EQ(cross_entropy(0.5, 1), std::log(2.0));
  EXPECT_LT(cross_entropy(1.0 - 1e-9, 1), 1e-8);
  EXPECT_TRUE(std::isfinite(cross_entropy(0.0, 1)));
  EXPECT_NEAR(cross_entropy(0.0, 1), -std::log(kProbabilityClamp), 1e-9);
}

TEST(Loss, RejectsBadLabel) {
  ModelConfig c = tiny_model_config();
  Rng rng(2);
  ModelParams p = random_params(c, 5, rng);
  auto t = forward(random_input(c, 5, rng), p, c);
  EXPECT_THROW(accumulate_gradients(t, 2, p, c), Error);
}

struct GradCase {
  Variant variant;
  Pooling pooling;
  bool share;
  std::uint64_t seed;
};

void PrintTo(const GradCase& g, std::ostream* os) { *os << to_string(g.variant) << "/" << to_string(g.pooling); }

class GradientCheck : public ::testing::TestWithParam<GradCase> {};

TEST_P(GradientCheck, EveryParameterGroup) {
  const GradCase gc = GetParam();
  ModelConfig c = tiny_model_config();
  c.variant = gc.variant;
  c.pooling = gc.pooling;
  c.share_attention = gc.share;
  Rng rng(gc.seed);
  ModelParams p = random_params(c, 6, rng);
  MatchInput in = random_input(c, 6, rng);
  const int label = static_cast<int>(rng.index(2));
  p.zero_grad();
  accumulate_gradients(forward(in, p, c), label, p, c);
  auto loss = [&] { return cross_entropy(forward(in, p, c).probability, label); };
  for (Param* q : p.all()) {
    if (q == &p.embedding) {
      // PAD is masked, so its numeric derivative is deliberately ignored.
      for (double x : q->grad.row(kPadId)) EXPECT_EQ(x, 0.0);
      for (std::size_t i = c.d; i < q->size(); ++i) {
        const double saved = q->value[i];
        q->value[i] = saved + 1e-5;
        const double up = loss();
        q->value[i] = saved - 1e-5;
        const double down = loss();
        q->value[i] = saved;
        EXPECT_LT(relative_error(q->grad[i], (up - down) / 2e-5), 1e-4) << "embedding index " << i;
      }
      continue;
    }
    auto r = finite_diff_check(loss, *q, 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-4) << q->name << " index " << r.worst_index << " analytic "
                                          << r.worst_analytic << " numeric " << r.worst_numeric;
  }
}

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> out;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (Variant v : {Variant::full, Variant::cntn, Variant::avg, Variant::msg, Variant::res}) {
      out.push_back({v, Pooling::global, false, seed});
    }
    out.push_back({Variant::full, Pooling::windowed, false, seed});
    out.push_back({Variant::full, Pooling::global, true, seed});
  }
  return out;
}

INSTANTIATE_TEST_SUITE_P(Variants, GradientCheck, ::testing::ValuesIn(grad_cases()),
                         [](const auto& info) {
                           const GradCase& g = info.param;
                           return to_string(g.variant) + "_" + to_string(g.pooling) + (g.share ? "_shared" : "") +
                                  "_seed" + std::to_string(g.seed);
                         });

TEST(Gradients, FrozenEmbeddingsGetNoGradient) {
  ModelConfig c = tiny_model_config();
  c.freeze_embeddings = true;
  Rng rng(5);
  ModelParams p = random_params(c, 6, rng);
  p.zero_grad();
  accumulate_gradients(forward(random_input(c, 6, rng), p, c), 1, p, c);
  for (double g : p.embedding.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Gradients, ScaleIsLinear) {
  ModelConfig c = tiny_model_config();
  Rng rng(12);
  ModelParams p = random_params(c, 6, rng);
  MatchInput in = random_input(c, 6, rng);
  auto t = forward(in, p, c);
  p.zero_grad();
  accumulate_gradients(t, 0, p, c, 1.0);
  const DenseArray full = p.fusion_w.grad;
  p.zero_grad();
  accumulate_gradients(t, 0, p, c, 0.25);
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_NEAR(p.fusion_w.grad[i], 0.25 * full[i], 1e-15);
}

TEST(Params, ShapesFollowConfig) {
  ModelConfig c = tiny_model_config();
  Rng rng(1);
  ModelParams p = init_params(c, 10, rng);
  const std::size_t ns = c.sentence_dim();
  EXPECT_EQ(p.embedding.value.shape(), (Shape{11, 3}));
  EXPECT_EQ(p.attn_m.value.shape(), (Shape{3, ns}));
  EXPECT_EQ(p.mr.tensor.value.shape(), (Shape{ns, 2, ns}));
  EXPECT_EQ(p.m_tr.tensor.value.shape(), (Shape{ns, 2, 3}));
  EXPECT_EQ(p.m_tr.linear.value.shape(), (Shape{2, ns + 3}));
  EXPECT_EQ(p.fusion_w.value.shape(), (Shape{6, 2}));
  for (double v : p.embedding.value.row(kPadId)) EXPECT_EQ(v, 0.0);

  c.variant = Variant::cntn;
  ModelParams q = init_params(c, 10, rng);
  EXPECT_EQ(q.fusion_w.value.shape(), (Shape{2, 2}));
  EXPECT_EQ(q.attn_m.size(), 0u);
  EXPECT_EQ(q.r_tm.tensor.size(), 0u);
}

TEST(Checkpoint, RoundTripIsExact) {
  testing::TempDir dir;
  ModelConfig c = tiny_model_config();
  Rng rng(13);
  Checkpoint ck;
  ck.model.config = c;
  ck.model.vocab = Vocabulary::from_words({"a", "b", "c", "d"});
  ck.model.params = random_params(c, 4, rng);
  ck.model.params.mr.tensor.adam_m[0] = 1.0 / 3.0;
  ck.model.params.mr.tensor.step = 7;
  ck.lda_hash = "abc";
  ck.rng = {5, 9};
  ck.epoch = 3;
  const std::string path = dir.path("ck.json");
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.model.config, c);
  EXPECT_EQ(back.lda_hash, "abc");
  EXPECT_EQ(back.rng, ck.rng);
  auto a = ck.model.params.all();
  auto b = back.model.params.all();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
    EXPECT_EQ(a[i]->adam_m, b[i]->adam_m);
    EXPECT_EQ(a[i]->step, b[i]->step);
  }
  const std::string again = dir.path("ck2.json");
  save_checkpoint(back, again);
  EXPECT_EQ(testing::read_file(path), testing::read_file(again));
}

TEST(Checkpoint, RejectsForeignFile) {
  EXPECT_THROW(checkpoint_from_json(nlohmann::json{{"format", "other"}}), Error);
}

}  // namespace
}  // namespace tacntn
