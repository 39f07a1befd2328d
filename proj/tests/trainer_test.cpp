#include "higen/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "higen/harness.hpp"
#include "oracles.hpp"

using namespace higen;

namespace {

// A small, quickly trainable setup: 3x2 taxonomy, short documents, tiny model.
Config tiny_config() {
  Config cfg;
  cfg.set("data.branching", "3,2");
  cfg.set("data.docs_per_leaf", "30");
  cfg.set("data.zipf_s", "0.0");
  cfg.set("data.topic_vocab", "12");
  cfg.set("data.len_min", "6");
  cfg.set("data.len_max", "10");
  cfg.set("data.noise_rate", "0.1");
  cfg.set("data.noise_vocab", "30");
  cfg.set("data.pretrain_docs_per_leaf", "20");
  cfg.set("model.d_model", "32");
  cfg.set("model.n_layers", "1");
  cfg.set("model.n_heads", "2");
  cfg.set("model.d_ffn", "48");
  cfg.set("model.proj_dim", "16");
  cfg.set("model.max_len", "64");
  cfg.set("train.batch_size", "8");
  cfg.set("train.lr", "1e-3");
  cfg.set("train.pretrain_epochs", "2");
  cfg.set("train.epochs", "4");
  return cfg;
}

TEST(LrSchedule, WarmupPeakDecay) {
  // 100 steps, 10% warmup: 0 at step 0, peak at step 10, 0 at step 100.
  EXPECT_DOUBLE_EQ(lr_at(0, 100, 3e-4, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(10, 100, 3e-4, 0.1), 3e-4);
  EXPECT_DOUBLE_EQ(lr_at(100, 100, 3e-4, 0.1), 0.0);
  EXPECT_NEAR(lr_at(55, 100, 3e-4, 0.1), 3e-4 * 45 / 90, 1e-15);
  // No warmup: starts at the peak.
  EXPECT_DOUBLE_EQ(lr_at(0, 100, 1e-3, 0.0), 1e-3);
  // Monotone up then down.
  for (int s = 1; s <= 10; ++s)
    EXPECT_GE(lr_at(s, 100, 1.0, 0.1), lr_at(s - 1, 100, 1.0, 0.1));
  for (int s = 11; s <= 100; ++s)
    EXPECT_LE(lr_at(s, 100, 1.0, 0.1), lr_at(s - 1, 100, 1.0, 0.1));
}

TEST(TrainConfig, SemanticNeedsPairs) {
  Config cfg = tiny_config();
  cfg.set("train.batch_size", "1");
  EXPECT_THROW(TrainConfig::from_config(cfg), BatchTooSmallForSemanticLoss);
  cfg.set("train.no_semantic", "true");
  EXPECT_NO_THROW(TrainConfig::from_config(cfg));
}

TEST(SinglePath, ExtractsRootToLeafAndRejectsMultiPath) {
  Taxonomy t = Taxonomy::build({{"A", "a", 0, {}},
                                {"B", "b", 0, {}},
                                {"A1", "a1", 0, {}},
                                {"B1", "b1", 0, {}}},
                               {{kRootToken, "A"},
                                {kRootToken, "B"},
                                {"A", "A1"},
                                {"B", "B1"}});
  LabelSet single;
  single.insert("A");
  single.insert("A1");
  EXPECT_EQ(single_path_levels(t, single), (std::vector<std::string>{"A", "A1"}));

  LabelSet multi = single;
  multi.insert("B");
  multi.insert("B1");
  EXPECT_THROW(single_path_levels(t, multi), MultiPathUnsupported);

  LabelSet gap;  // level-2 node with no level-1 entry is also rejected
  gap.insert("A1");
  EXPECT_THROW(single_path_levels(t, gap), MultiPathUnsupported);
}

TEST(Pretrain, LossDecreasesOnSmokeRun) {
  Config cfg = tiny_config();
  DataBundle b = generate_bundle(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg);
  tc.pretrain_epochs = 3;
  Seq2SeqModel model = make_model(cfg, b, tc.seed);
  SplitResult split = stratified_split(b.taxonomy, b.pretrain, {0.9, 0.1, 0.0}, 5);
  TrainResult r = pretrain(model, tc, split.train, split.val, b.taxonomy, b.vocab);

  const long per_epoch = static_cast<long>(r.history.size()) / 3;
  double first_epoch = 0, last_epoch = 0;
  for (long i = 0; i < per_epoch; ++i) first_epoch += r.history[i].lm;
  for (long i = r.history.size() - per_epoch; i < (long)r.history.size(); ++i)
    last_epoch += r.history[i].lm;
  EXPECT_LT(last_epoch, first_epoch);
  EXPECT_LT(r.best_val, r.initial_val_lm);
}

TEST(Pretrain, DeterministicGivenSeed) {
  Config cfg = tiny_config();
  DataBundle b = generate_bundle(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg);
  tc.pretrain_epochs = 1;
  auto run = [&]() {
    Seq2SeqModel model = make_model(cfg, b, tc.seed);
    SplitResult split = stratified_split(b.taxonomy, b.pretrain, {0.9, 0.1, 0.0}, 5);
    return pretrain(model, tc, split.train, split.val, b.taxonomy, b.vocab);
  };
  TrainResult r1 = run();
  TrainResult r2 = run();
  ASSERT_EQ(r1.history.size(), r2.history.size());
  for (size_t i = 0; i < r1.history.size(); ++i)
    EXPECT_DOUBLE_EQ(r1.history[i].total, r2.history[i].total);
  EXPECT_DOUBLE_EQ(r1.best_val, r2.best_val);
}

TEST(Pretrain, NanParametersAbortWithDivergence) {
  Config cfg = tiny_config();
  DataBundle b = generate_bundle(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg);
  Seq2SeqModel model = make_model(cfg, b, tc.seed);
  for (auto* t : model.params()) t->w.setConstant(std::nan(""));
  SplitResult split = stratified_split(b.taxonomy, b.pretrain, {0.9, 0.1, 0.0}, 5);
  EXPECT_THROW(pretrain(model, tc, split.train, split.val, b.taxonomy, b.vocab),
               DivergenceDetected);
}

TEST(Finetune, AblationFlagEqualsZeroWeight) {
  Config cfg = tiny_config();
  DataBundle b = generate_bundle(cfg);

  auto run = [&](bool flag, double lambda1) {
    Config c = cfg;
    if (flag) c.set("train.no_output_space", "true");
    std::ostringstream l1;
    l1 << lambda1;
    c.set("loss.lambda1", l1.str());
    TrainConfig tc = TrainConfig::from_config(c);
    tc.epochs = 2;
    Seq2SeqModel model = make_model(c, b, tc.seed);
    return finetune(model, tc, b.train, b.val, b.taxonomy, b.vocab);
  };
  TrainResult with_flag = run(true, 1e-3);
  TrainResult zero_weight = run(false, 0.0);
  ASSERT_EQ(with_flag.history.size(), zero_weight.history.size());
  for (size_t i = 0; i < with_flag.history.size(); ++i) {
    EXPECT_DOUBLE_EQ(with_flag.history[i].total, zero_weight.history[i].total);
    EXPECT_DOUBLE_EQ(with_flag.history[i].lm, zero_weight.history[i].lm);
  }
}

TEST(Finetune, MultiPathDatasetRejectedWhenSemanticEnabled) {
  Config cfg = tiny_config();
  DataBundle b = generate_bundle(cfg);
  // Graft a second path onto one example.
  ASSERT_GE(b.train.size(), 1u);
  for (const auto& n : b.taxonomy.nodes()) {
    if (n.level == 1 && !b.train[0].labels.contains(n.id)) {
      b.train[0].labels.insert(n.id);
      break;
    }
  }
  TrainConfig tc = TrainConfig::from_config(cfg);
  Seq2SeqModel model = make_model(cfg, b, tc.seed);
  EXPECT_THROW(finetune(model, tc, b.train, b.val, b.taxonomy, b.vocab),
               MultiPathUnsupported);
  tc.no_semantic = true;
  EXPECT_NO_THROW(finetune(model, tc, b.train, b.val, b.taxonomy, b.vocab));
}

TEST(Finetune, LearnsTinyTask) {
  Config cfg = tiny_config();
  cfg.set("train.epochs", "20");
  cfg.set("train.lr", "3e-3");
  DataBundle b = generate_bundle(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg);
  Seq2SeqModel model = make_model(cfg, b, tc.seed);
  finetune(model, tc, b.train, b.val, b.taxonomy, b.vocab);
  std::vector<PredictionRecord> records =
      predict_records(model, b.test, b.taxonomy, b.vocab, false, 16);
  ScoreReport report = micro_macro_f1(records);
  EXPECT_GT(report.micro_f1, 0.6);
}

TEST(Finetune, PretrainInitLowersInitialValLoss) {
  Config cfg = tiny_config();
  cfg.set("train.pretrain_epochs", "3");
  DataBundle b = generate_bundle(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg);
  tc.epochs = 1;

  std::vector<nn::Matrix> pre = pretrain_snapshot(cfg, tc, b);
  PipelineResult with_pre = finetune_and_eval(cfg, tc, b, &pre);
  PipelineResult without = finetune_and_eval(cfg, tc, b, nullptr);
  EXPECT_LT(with_pre.initial_val_lm, without.initial_val_lm);
}

TEST(Checkpointing, BestModelSavedDuringTraining) {
  namespace fs = std::filesystem;
  Config cfg = tiny_config();
  DataBundle b = generate_bundle(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg);
  tc.epochs = 2;
  std::string path = (fs::temp_directory_path() / "higen_train_ck.bin").string();
  Seq2SeqModel model = make_model(cfg, b, tc.seed);
  finetune(model, tc, b.train, b.val, b.taxonomy, b.vocab, path);
  ASSERT_TRUE(fs::exists(path));
  Seq2SeqModel loaded = load_checkpoint(path, TokenInfo::from_vocab(b.vocab));
  // The checkpoint holds the best-epoch parameters the trainer restored.
  auto p1 = model.params();
  auto p2 = loaded.params();
  for (size_t i = 0; i < p1.size(); ++i) {
    nn::Matrix quantized = p1[i]->w.unaryExpr(
        [](double v) { return static_cast<double>(static_cast<float>(v)); });
    EXPECT_TRUE(quantized.isApprox(p2[i]->w, 1e-12)) << p1[i]->name;
  }
  fs::remove(path);
}

TEST(WorkerPool, HonorsThreadEnvironment) {
  setenv("HIGEN_THREADS", "1", 1);
  EXPECT_EQ(worker_count(8), 1);
  setenv("HIGEN_THREADS", "4", 1);
  EXPECT_EQ(worker_count(8), 4);
  EXPECT_EQ(worker_count(2), 2);  // never more workers than cells
  setenv("HIGEN_THREADS", "banana", 1);
  EXPECT_THROW(worker_count(8), UsageError);
  unsetenv("HIGEN_THREADS");
}

TEST(WorkerPool, ParallelCellsRunAllAndPropagateErrors) {
  std::vector<int> hits(16, 0);
  parallel_cells(16, [&](int i) { hits[i] = i * i; });
  for (int i = 0; i < 16; ++i) EXPECT_EQ(hits[i], i * i);
  EXPECT_THROW(parallel_cells(4,
                              [&](int i) {
                                if (i == 2) throw Error("boom");
                              }),
               Error);
}

TEST(Harness, AblateProducesFiveVariants) {
  Config cfg = tiny_config();
  cfg.set("train.pretrain_epochs", "1");
  cfg.set("train.epochs", "1");
  DataBundle b = generate_bundle(cfg);
  std::vector<AblationRow> rows = ablate_run(cfg, b);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].variant, "full");
  EXPECT_EQ(rows[1].variant, "no_pretrain");
  EXPECT_EQ(rows[2].variant, "no_output_space");
  EXPECT_EQ(rows[3].variant, "no_token_constraint");
  EXPECT_EQ(rows[4].variant, "no_semantic");
  for (const auto& r : rows) {
    EXPECT_GE(r.micro_f1, 0.0);
    EXPECT_LE(r.micro_f1, 1.0);
  }
}

TEST(Harness, GridDeduplicatesAndSortsByMacro) {
  Config cfg = tiny_config();
  cfg.set("train.pretrain_epochs", "1");
  cfg.set("train.epochs", "1");
  cfg.set("grid.lambda1", "1e-3,1e-3");  // duplicate entries collapse
  cfg.set("grid.lambda2", "1e-5");
  DataBundle b = generate_bundle(cfg);
  std::vector<GridCell> cells = grid_run(cfg, b);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_DOUBLE_EQ(cells[0].lambda1, 1e-3);

  cfg.set("grid.lambda1", "1e-3,1e-4");
  cells = grid_run(cfg, b);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_GE(cells[0].macro_f1, cells[1].macro_f1);
}

TEST(Harness, DataEfficiencyIdentityAtFullProportion) {
  Config cfg = tiny_config();
  cfg.set("train.pretrain_epochs", "1");
  cfg.set("train.epochs", "1");
  cfg.set("de.proportions", "1.0");
  cfg.set("de.seeds", "1");
  DataBundle b = generate_bundle(cfg);
  std::vector<DataEffRow> rows = data_efficiency_run(cfg, b);
  ASSERT_EQ(rows.size(), 1u);

  // proportion 1.0 with the same seed equals a plain fine-tune run
  TrainConfig tc = TrainConfig::from_config(cfg);
  std::vector<nn::Matrix> pre = pretrain_snapshot(cfg, tc, b);
  PipelineResult direct = finetune_and_eval(cfg, tc, b, &pre);
  EXPECT_DOUBLE_EQ(rows[0].micro_f1, direct.micro_f1);
  EXPECT_DOUBLE_EQ(rows[0].macro_f1, direct.macro_f1);
}

}  // namespace
