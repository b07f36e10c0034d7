#include <gtest/gtest.h>

#include "model_fixtures.hpp"
#include "prosparse/grad_check.hpp"
#include "test_util.hpp"

using namespace prosparse;

namespace {

LabelVocab toy_labels() { return LabelVocab::from_symbols({"", "S", "NP", "VP"}); }

}  // namespace

TEST(Model, GradientCheckFullLoss) {
  ParserModel<double> m(testutil::tiny_model(true), toy_labels(), WordVocab::from_words({"a", "b"}), nullptr, 3);
  auto s = testutil::toy_sentence({"a", "b", "c"}, true);
  auto gold = m.gold_spans(parse_tree("(S (NP (DT a) (NN b)) (VP (VB c)))"));
  GradCheckOptions o;
  o.samples_per_param = 50;
  auto r = grad_check<double>([&](Graph<double>& g) { return m.loss(g, s, gold); }, m.params().all(), o);
  for (const auto& e : r.per_param) {
    auto* p = m.params().find(e.name);
    EXPECT_GE(e.checked + e.skipped, std::min<std::size_t>(50, p->value.size())) << e.name;
    EXPECT_LT(e.max_rel_error, 1e-3) << e.name;
  }
  EXPECT_LT(r.max_rel_error, 1e-3);
  EXPECT_GT(r.checked, 500u);
}

TEST(Model, LossZeroWhenGoldWinsByMargin) {
  ParserModel<double> m(testutil::tiny_model(false), toy_labels(), WordVocab::from_words({"a"}), nullptr, 5);
  auto s = testutil::toy_sentence({"a", "b"}, false);
  auto gold = m.gold_spans(parse_tree("(S (NP (DT a)) (VP (VB b)))"));
  Graph<double> g;
  MarginResult details;
  double loss = g.value(m.loss(g, s, gold, &details))[0];
  EXPECT_NEAR(loss, details.loss, 1e-9);
  EXPECT_GE(loss, 0.0);
}

TEST(Model, ParseProducesTreeOverInputWords) {
  ParserModel<double> m(testutil::tiny_model(true), toy_labels(), WordVocab::from_words({"a"}), nullptr, 5);
  auto s = testutil::toy_sentence({"a", "b", "c", "d"}, true);
  auto d = m.parse(s);
  EXPECT_EQ(d.tree.words(), s.words);
  EXPECT_FALSE(d.tree.label.empty());
}

TEST(Model, MissingProsodyIsDataError) {
  ParserModel<double> m(testutil::tiny_model(true), toy_labels(), WordVocab(), nullptr, 1);
  auto s = testutil::toy_sentence({"a", "b"}, false);
  try {
    m.parse(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
  s.prosody = testutil::toy_prosody(3);
  try {
    m.parse(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kAlignment);
  }
}

TEST(Model, FrozenRequiresStore) {
  auto c = testutil::tiny_model(false);
  c.embedding.mode = EmbeddingMode::kFrozen;
  try {
    ParserModel<double> m(c, toy_labels(), WordVocab(), nullptr, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Model, SaveLoadRoundTrip) {
  auto dir = testutil::temp_dir("model-ckpt");
  ParserModel<float> m(testutil::tiny_model(true), toy_labels(), WordVocab::from_words({"a", "b"}), nullptr, 9);
  m.duration_stats().global_mean = 0.25;
  m.lineage().push_back("base");
  m.save(dir + "/m.ckpt");
  auto back = ParserModel<float>::load(dir + "/m.ckpt", nullptr);
  EXPECT_EQ(back->labels(), m.labels());
  EXPECT_EQ(back->words().words(), m.words().words());
  EXPECT_EQ(back->duration_stats().global_mean, 0.25);
  EXPECT_EQ(back->lineage(), std::vector<std::string>{"base"});
  for (auto* p : m.params().all()) EXPECT_EQ(back->params().get(p->name).value, p->value) << p->name;
  auto s = testutil::toy_sentence({"a", "b", "zzz"}, true);
  EXPECT_EQ(serialize(back->parse(s).tree), serialize(m.parse(s).tree));
}

TEST(Model, FrozenCheckpointNeedsMatchingStore) {
  auto dir = testutil::temp_dir("model-frozen");
  VectorStore store;
  store.dim = 4;
  store.sentences.emplace("toy", Tensor<float>::matrix(2, 4, 0.5f));
  auto c = testutil::tiny_model(false);
  c.embedding.mode = EmbeddingMode::kFrozen;
  ParserModel<float> m(c, toy_labels(), WordVocab(), &store, 1);
  m.save(dir + "/f.ckpt");
  EXPECT_THROW(ParserModel<float>::load(dir + "/f.ckpt", nullptr), Error);
  VectorStore wrong;
  wrong.dim = 3;
  EXPECT_THROW(ParserModel<float>::load(dir + "/f.ckpt", &wrong), Error);
  auto back = ParserModel<float>::load(dir + "/f.ckpt", &store);
  auto s = testutil::toy_sentence({"x", "y"}, false);
  EXPECT_EQ(serialize(back->parse(s).tree), serialize(m.parse(s).tree));
}

TEST(Model, FactorizationIdentity) {
  auto words = WordVocab::from_words({"a", "b", "c"});
  ParserModel<double> text(testutil::tiny_model(false), toy_labels(), words, nullptr, 21);
  ParserModel<double> full(testutil::tiny_model(true), toy_labels(), words, nullptr, 22);
  testutil::graft_text_weights(text, full);
  for (std::size_t T : {1u, 3u, 6u}) {
    std::vector<std::string> w;
    for (std::size_t i = 0; i < T; ++i) w.push_back(std::string(1, static_cast<char>('a' + i % 4)));
    auto st = testutil::toy_sentence(w, false);
    auto sf = testutil::toy_sentence(w, true, T);
    auto a = text.span_scores(st), b = full.span_scores(sf);
    for (std::size_t x = 0; x < T; ++x)
      for (std::size_t y = x + 1; y <= T; ++y)
        for (std::size_t l = 0; l < 4; ++l) EXPECT_NEAR(a(x, y, l), b(x, y, l), 1e-6);
  }
}

TEST(ModelConfig, JsonRoundTripAndUnknownKeys) {
  auto c = testutil::tiny_model(true);
  auto back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  auto j = to_json(c);
  j["encoder"]["layerz"] = 3;
  try {
    model_config_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("layerz"), std::string::npos);
  }
}
