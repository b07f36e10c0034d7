#include <gtest/gtest.h>

#include <cmath>

#include "model_fixtures.hpp"
#include "prosparse/synthetic.hpp"
#include "prosparse/trainer.hpp"
#include "test_util.hpp"

using namespace prosparse;

namespace {

Corpus synthetic_corpus(const std::string& name, std::size_t n, std::uint64_t seed) {
  SyntheticOptions o;
  o.sentences = n;
  o.seed = seed;
  o.vector_dim = 0;
  o.id_prefix = name;
  auto s = generate_synthetic(o);
  Corpus c;
  c.name = name;
  c.examples = examples_from_trees(s.trees, s.ids);
  return c;
}

ModelConfig small_text_model() {
  auto c = testutil::tiny_model(false);
  c.encoder.d_content = 16;
  c.encoder.d_ff = 16;
  c.embedding.dim = 8;
  c.embedding.min_count = 1;
  c.label_hidden = 16;
  return c;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.seeds = {1};
  t.batch_size = 8;
  t.learning_rate = 5e-3;
  t.warmup_steps = 4;
  t.max_epochs = epochs;
  t.patience = 100;
  return t;
}

RunRecord record_with(std::uint64_t seed, double f1) {
  RunRecord r;
  r.seed = seed;
  r.best_dev_f1 = f1;
  return r;
}

}  // namespace

TEST(Schedule, WarmupThenInverseSqrt) {
  EXPECT_DOUBLE_EQ(learning_rate_at(1, 8e-4, 160), 8e-4 / 160);
  EXPECT_DOUBLE_EQ(learning_rate_at(80, 8e-4, 160), 4e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(160, 8e-4, 160), 8e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(640, 8e-4, 160), 4e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(7, 1e-3, 0), 1e-3);
  double prev = 0;
  for (std::size_t s = 1; s <= 160; ++s) {
    EXPECT_GT(learning_rate_at(s, 1.0, 160), prev);
    prev = learning_rate_at(s, 1.0, 160);
  }
  for (std::size_t s = 161; s < 400; ++s) EXPECT_LT(learning_rate_at(s, 1.0, 160), learning_rate_at(s - 1, 1.0, 160));
}

TEST(EarlyStopping, PatienceExample) {
  EXPECT_EQ(early_stop_epoch({80, 81, 80, 80}, 2), 4u);
  EXPECT_EQ(early_stop_epoch({80, 81, 80, 82, 81}, 2), 5u);
  EXPECT_EQ(early_stop_epoch({80, 80}, 1), 2u);
  EXPECT_EQ(early_stop_epoch({70, 71, 72}, 1), 3u);
}

TEST(MedianSelection, Examples) {
  std::vector<RunRecord> five;
  for (int i = 0; i < 5; ++i) five.push_back(record_with(10 + i, 90.0 + ((i * 3) % 5)));
  auto idx = median_run(five);
  ASSERT_TRUE(idx);
  EXPECT_EQ(five[*idx].best_dev_f1, 92.0);
  EXPECT_EQ(*median_run({record_with(1, 92), record_with(2, 90)}), 1u);
  EXPECT_EQ(*median_run({record_with(7, 50)}), 0u);
  auto failed = record_with(3, 99);
  failed.failed = true;
  EXPECT_EQ(*median_run({failed, record_with(4, 10)}), 1u);
  EXPECT_FALSE(median_run({failed}));
  EXPECT_THROW(median_report({}), Error);
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate(1));
  t.seeds.clear();
  EXPECT_THROW(t.validate(1), Error);
  t = {};
  t.patience = 0;
  EXPECT_THROW(t.validate(1), Error);
  t = {};
  t.corpus_weights = {0, 0};
  EXPECT_THROW(t.validate(2), Error);
  t.corpus_weights = {1, -1};
  EXPECT_THROW(t.validate(2), Error);
  t.corpus_weights = {1};
  EXPECT_THROW(t.validate(2), Error);
  t = {};
  t.seeds = {1, 1};
  EXPECT_THROW(t.validate(1), Error);
}

TEST(BatchSchedule, ZeroWeightCorpusLeavesBatchesUnchanged) {
  std::vector<std::size_t> a{3, 5, 2, 8, 4, 4, 6, 1, 9, 7};
  std::vector<std::size_t> b{2, 2, 3};
  BatchSchedule alone({a}, {1.0}, 3, 42);
  BatchSchedule mixed({a, b}, {1.0, 0.0}, 3, 42);
  for (int epoch = 0; epoch < 4; ++epoch) {
    auto x = alone.epoch(), y = mixed.epoch();
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_EQ(y[i].corpus, 0u);
      EXPECT_EQ(x[i].sentences, y[i].sentences);
    }
  }
}

TEST(BatchSchedule, EpochCoversEverySentenceOnce) {
  std::vector<std::size_t> a(23);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 1 + i % 7;
  BatchSchedule s({a}, {1.0}, 4, 3);
  auto e = s.epoch();
  std::vector<int> seen(a.size(), 0);
  for (const auto& b : e)
    for (auto i : b.sentences) ++seen[i];
  for (int v : seen) EXPECT_EQ(v, 1);
}

TEST(Trainer, DeterministicPerSeed) {
  auto train_c = synthetic_corpus("tr", 24, 5);
  auto dev_c = synthetic_corpus("dv", 8, 6);
  TrainData data{{&train_c}, &dev_c, {}};
  auto cfg = quick(3);
  auto a = train_seed(small_text_model(), cfg, data, 1, {});
  auto b = train_seed(small_text_model(), cfg, data, 1, {});
  auto c = train_seed(small_text_model(), cfg, data, 2, {});
  ASSERT_EQ(a.epochs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.epochs[i].train_loss, b.epochs[i].train_loss);
    EXPECT_EQ(a.epochs[i].dev_f1, b.epochs[i].dev_f1);
  }
  EXPECT_NE(a.epochs[0].train_loss, c.epochs[0].train_loss);
  auto f1s = a.dev_f1s();
  EXPECT_DOUBLE_EQ(a.best_dev_f1, *std::max_element(f1s.begin(), f1s.end()));
}

TEST(Trainer, ZeroWeightSecondCorpusEqualsFirstAlone) {
  auto first = synthetic_corpus("a", 20, 11);
  // Same sentences under other ids: vocabularies stay identical.
  Corpus second = first;
  second.name = "b";
  for (auto& e : second.examples) e.input.id = "b-" + e.input.id;
  auto dev_c = synthetic_corpus("dv", 6, 12);
  auto cfg = quick(2);
  auto alone = train_seed(small_text_model(), cfg, {{&first}, &dev_c, {}}, 4, {});
  cfg.corpus_weights = {1.0, 0.0};
  auto mixed = train_seed(small_text_model(), cfg, {{&first, &second}, &dev_c, {}}, 4, {});
  ASSERT_EQ(alone.epochs.size(), mixed.epochs.size());
  for (std::size_t i = 0; i < alone.epochs.size(); ++i) {
    EXPECT_EQ(alone.epochs[i].train_loss, mixed.epochs[i].train_loss);
    EXPECT_EQ(alone.epochs[i].dev_f1, mixed.epochs[i].dev_f1);
  }
}

TEST(Trainer, RunDirectoryLayoutAndRoundTrip) {
  auto dir = testutil::temp_dir("trainer-run");
  auto train_c = synthetic_corpus("tr", 16, 7);
  auto dev_c = synthetic_corpus("dv", 6, 8);
  auto cfg = quick(2);
  cfg.seeds = {3, 9};
  cfg.jobs = 2;
  std::vector<std::string> lines;
  auto records = train(small_text_model(), cfg, {{&train_c}, &dev_c, {}}, dir,
                       [&](const std::string& l) { lines.push_back(l); });
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].seed, 3u);
  EXPECT_EQ(lines.size(), 4u);
  for (const auto& r : records) {
    ASSERT_TRUE(std::filesystem::exists(r.checkpoint));
    auto metrics = testutil::read_file(r.metrics_path);
    EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "epoch\ttrain_loss\tdev_F1");
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
    auto model = ModelT::load(r.checkpoint, nullptr);
    EXPECT_NEAR(evaluate_model(*model, dev_c).f1(), r.best_dev_f1, 1e-6);
  }
  auto summary = median_report(records, &dev_c);
  EXPECT_EQ(summary.seed, records[*median_run(records)].seed);
  ASSERT_TRUE(summary.test);
  EXPECT_NEAR(summary.test->f1(), summary.dev_f1, 1e-6);
}

TEST(Trainer, ZeroEpochFineTuneKeepsCheckpoint) {
  auto dir = testutil::temp_dir("trainer-ft0");
  auto train_c = synthetic_corpus("tr", 12, 7);
  auto base = train_seed(small_text_model(), quick(1), {{&train_c}, nullptr, {}}, 1, {dir + "/base", {}});
  auto cfg = quick(0);
  cfg.fine_tune_from = base.checkpoint;
  auto ft = train_seed(small_text_model(), cfg, {{&train_c}, nullptr, {}}, 1, {dir + "/ft", {}});
  auto in = read_checkpoint(base.checkpoint), out = read_checkpoint(ft.checkpoint);
  ASSERT_EQ(in.tensors.size(), out.tensors.size());
  for (std::size_t i = 0; i < in.tensors.size(); ++i) {
    EXPECT_EQ(out.tensors[i].name, in.tensors[i].name);
    EXPECT_EQ(out.tensors[i].value, in.tensors[i].value) << in.tensors[i].name;
  }
  auto loaded = ModelT::load(ft.checkpoint, nullptr);
  EXPECT_EQ(loaded->lineage(), std::vector<std::string>{base.checkpoint});
}

TEST(Trainer, FineTuneOnSameCorpusDoesNotRegress) {
  auto dir = testutil::temp_dir("trainer-ft");
  auto train_c = synthetic_corpus("tr", 40, 21);
  auto dev_c = synthetic_corpus("dv", 12, 22);
  auto base = train_seed(small_text_model(), quick(8), {{&train_c}, &dev_c, {}}, 1, {dir + "/base", {}});
  auto cfg = quick(1);
  cfg.fine_tune_from = base.checkpoint;
  cfg.warmup_steps = 0;
  auto ft = train_seed(small_text_model(), cfg, {{&train_c}, &dev_c, {}}, 1, {dir + "/ft", {}});
  EXPECT_GE(ft.epochs.at(0).dev_f1, base.best_dev_f1 - 0.5);
}

TEST(Trainer, FineTuneUnseenLabelIsVocabularyError) {
  auto dir = testutil::temp_dir("trainer-ftv");
  auto train_c = synthetic_corpus("tr", 12, 7);
  auto base = train_seed(small_text_model(), quick(0), {{&train_c}, nullptr, {}}, 1, {dir + "/base", {}});
  Corpus other;
  other.name = "other";
  other.examples = examples_from_trees({parse_tree("(FRAG (ZZZ (NN dog)) (NN cat))")}, {"o1"});
  auto cfg = quick(1);
  cfg.fine_tune_from = base.checkpoint;
  try {
    train_seed(small_text_model(), cfg, {{&other}, nullptr, {}}, 1, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kVocabulary);
  }
}

TEST(Trainer, FineTuneArchitectureMismatchListsShapes) {
  auto dir = testutil::temp_dir("trainer-ftm");
  auto train_c = synthetic_corpus("tr", 12, 7);
  auto base = train_seed(small_text_model(), quick(0), {{&train_c}, nullptr, {}}, 1, {dir + "/base", {}});
  auto wider = small_text_model();
  wider.encoder.d_content = 24;
  auto cfg = quick(1);
  cfg.fine_tune_from = base.checkpoint;
  try {
    train_seed(wider, cfg, {{&train_c}, nullptr, {}}, 1, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCheckpoint);
    EXPECT_NE(std::string(e.what()).find("content.proj"), std::string::npos) << e.what();
  }
}

TEST(Trainer, DivergenceAbortsSeedButOthersRun) {
  auto train_c = synthetic_corpus("tr", 12, 7);
  auto cfg = quick(3);
  cfg.seeds = {1, 2};
  cfg.learning_rate = 1e35;
  cfg.warmup_steps = 0;
  cfg.adam.clip_norm = 0;
  auto records = train(small_text_model(), cfg, {{&train_c}, nullptr, {}}, "");
  ASSERT_EQ(records.size(), 2u);
  for (const auto& r : records) {
    EXPECT_TRUE(r.failed);
    EXPECT_NE(r.error.find("seed " + std::to_string(r.seed)), std::string::npos) << r.error;
  }
}
