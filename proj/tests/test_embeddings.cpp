#include <gtest/gtest.h>

#include <random>

#include "prosparse/embeddings.hpp"
#include "test_util.hpp"

using namespace prosparse;
using G = Graph<double>;

namespace {

VectorStore small_store() {
  VectorStore s;
  s.dim = 3;
  s.producer = "test";
  auto a = Tensor<float>::matrix(2, 3);
  auto b = Tensor<float>::matrix(3, 3);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.5f * static_cast<float>(i);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = -0.25f * static_cast<float>(i);
  s.sentences.emplace("s1", a);
  s.sentences.emplace("s2", b);
  return s;
}

}  // namespace

TEST(WordVocab, MinCountAndUnk) {
  auto v = WordVocab::build({{"a", "b", "a"}, {"c", "a", "b"}}, 2);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.index(WordVocab::kUnk), 0u);
  EXPECT_NE(v.index("a"), 0u);
  EXPECT_NE(v.index("b"), 0u);
  EXPECT_EQ(v.index("c"), 0u);
  EXPECT_EQ(v.index("never-seen"), 0u);
  EXPECT_EQ(WordVocab::from_words(v.words()).words(), v.words());
}

TEST(Embeddings, LearnedOovGetsUnkRow) {
  std::mt19937_64 rng(1);
  ParameterStore<double> params;
  EmbeddingConfig cfg;
  cfg.mode = EmbeddingMode::kLearned;
  cfg.dim = 5;
  EmbeddingProvider<double> emb(cfg, WordVocab::build({{"a", "a"}}, 2), params, rng, nullptr);
  G g;
  const auto& e = g.value(emb.embed(g, "x", {"zzz", "a"}));
  const auto& table = params.get("embed.table").value;
  ASSERT_EQ(e.rows(), 2u);
  ASSERT_EQ(e.cols(), 5u);
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_EQ(e(0, c), table(0, c));
    EXPECT_EQ(e(1, c), table(1, c));
  }
}

TEST(Embeddings, LearnedUnkDropoutOnlyInTraining) {
  std::mt19937_64 rng(1);
  ParameterStore<double> params;
  EmbeddingConfig cfg;
  cfg.mode = EmbeddingMode::kLearned;
  cfg.dim = 2;
  cfg.unk_dropout = 1.0;
  EmbeddingProvider<double> emb(cfg, WordVocab::build({{"a", "a"}}, 2), params, rng, nullptr);
  const auto& table = params.get("embed.table").value;
  G train(true, 3);
  EXPECT_EQ(train.value(emb.embed(train, "x", {"a"}))(0, 0), table(0, 0));
  G eval;
  EXPECT_EQ(eval.value(emb.embed(eval, "x", {"a"}))(0, 0), table(1, 0));
}

TEST(Embeddings, FrozenRepeatableAndNoGradient) {
  auto store = small_store();
  std::mt19937_64 rng(1);
  ParameterStore<double> params;
  EmbeddingConfig cfg;
  cfg.mode = EmbeddingMode::kFrozen;
  EmbeddingProvider<double> emb(cfg, WordVocab(), params, rng, &store);
  EXPECT_EQ(emb.dim(), 3u);
  EXPECT_EQ(params.all().size(), 0u);
  G g1, g2;
  Var v1 = emb.embed(g1, "s2", {"x", "y", "z"});
  Var v2 = emb.embed(g2, "s2", {"x", "y", "z"});
  EXPECT_EQ(g1.value(v1), g2.value(v2));
  EXPECT_FALSE(g1.requires_grad(v1));
  EXPECT_EQ(g1.value(v1)(2, 2), static_cast<double>(store.find("s2")->operator()(2, 2)));
}

TEST(Embeddings, FrozenErrors) {
  auto store = small_store();
  std::mt19937_64 rng(1);
  ParameterStore<double> params;
  EmbeddingConfig cfg;
  cfg.mode = EmbeddingMode::kFrozen;
  EmbeddingProvider<double> emb(cfg, WordVocab(), params, rng, &store);
  G g;
  try {
    emb.embed(g, "nope", {"a"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
  try {
    emb.embed(g, "s1", {"a", "b", "c"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kAlignment);
    EXPECT_NE(std::string(e.what()).find("s1"), std::string::npos);
  }
  EXPECT_THROW(EmbeddingProvider<double>(cfg, WordVocab(), params, rng, nullptr), Error);
}

TEST(Embeddings, FinetunedStepChangesOnlyUsedRows) {
  auto store = small_store();
  std::vector<TokenizedSentence> corpus{{"s1", {"a", "b"}}, {"s2", {"c", "a", "d"}}};
  auto vocab = WordVocab::from_words({"a", "b", "c", "d", "e"});
  std::mt19937_64 rng(1);
  ParameterStore<double> params;
  EmbeddingConfig cfg;
  cfg.mode = EmbeddingMode::kFinetuned;
  cfg.unk_dropout = 0;
  EmbeddingProvider<double> emb(cfg, vocab, params, rng, &store, corpus);
  auto& table = params.get("embed.table");
  // "b" only occurs once, so its row is that vector.
  EXPECT_EQ(table.value(vocab.index("b"), 1), static_cast<double>((*store.find("s1"))(1, 1)));
  auto before = table.value;

  G g(true, 5);
  Var e = emb.embed(g, "s1", {"a", "b"});
  std::vector<std::pair<std::size_t, double>> w;
  for (std::size_t i = 0; i < g.value(e).size(); ++i) w.push_back({i, 1.0 + static_cast<double>(i)});
  g.backward(ad::weighted_entries(g, e, w));
  Adam<double> opt;
  opt.step(params, 0.01);

  for (std::size_t r = 0; r < vocab.size(); ++r) {
    bool used = r == vocab.index("a") || r == vocab.index("b");
    for (std::size_t c = 0; c < table.value.cols(); ++c) {
      if (used) {
        EXPECT_NE(table.value(r, c), before(r, c)) << vocab.words()[r];
      } else {
        EXPECT_EQ(table.value(r, c), before(r, c)) << vocab.words()[r];
      }
    }
  }
}

TEST(VectorStoreFile, Examples) {
  auto dir = testutil::temp_dir("vectors");
  std::string body = "dim=8 producer=unit\n";
  for (int s = 0; s < 3; ++s) {
    body += "sentence id" + std::to_string(s) + " 2\n";
    for (int r = 0; r < 2; ++r) body += "1 2 3 4 5 6 7 8\n";
  }
  testutil::write_file(dir + "/ok.vec", body);
  auto store = load_vector_store(dir + "/ok.vec");
  EXPECT_EQ(store.dim, 8u);
  EXPECT_EQ(store.size(), 3u);
  EXPECT_EQ(store.producer, "unit");
  EXPECT_DOUBLE_EQ(store.coverage({"id0", "id1", "id2", "other"}), 0.75);

  testutil::write_file(dir + "/mixed.vec",
                       "dim=8\nsentence a 1\n1 2 3 4 5 6 7 8\nsentence b 1\n"
                       "1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16\n");
  try {
    load_vector_store(dir + "/mixed.vec");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("dim inconsistency"), std::string::npos);
  }

  testutil::write_file(dir + "/empty.vec", "");
  auto empty = load_vector_store(dir + "/empty.vec");
  EXPECT_EQ(empty.size(), 0u);
  EXPECT_EQ(empty.warnings.size(), 1u);
}

TEST(VectorStoreFile, RoundTrip) {
  auto dir = testutil::temp_dir("vectors-rt");
  auto store = small_store();
  write_vector_store(dir + "/s.vec", store);
  auto back = load_vector_store(dir + "/s.vec");
  EXPECT_EQ(back.dim, 3u);
  EXPECT_EQ(back.producer, "test");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.sentences.at("s1"), store.sentences.at("s1"));
  EXPECT_EQ(back.sentences.at("s2"), store.sentences.at("s2"));
}
