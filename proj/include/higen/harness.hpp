#pragma once

// End-to-end pipeline pieces shared by the CLI, the tests and the acceptance
// suite: dataset bundles on disk, single pretrain+finetune+eval runs, the
// ablation matrix, the lambda grid and the data-efficiency curve.

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "higen/config.hpp"
#include "higen/corpus.hpp"
#include "higen/evaluator.hpp"
#include "higen/trainer.hpp"

namespace higen {

struct DataBundle {
  Taxonomy taxonomy;
  Vocabulary vocab;
  std::vector<Example> train, val, test, pretrain;
};

// Generates taxonomy, splits and the weakly-labeled pretraining corpus. The
// vocabulary covers the training split plus the pretraining corpus.
inline DataBundle generate_bundle(const Config& cfg) {
  DataBundle b;
  auto [t, data] = generate_synthetic(cfg.synthetic_spec());
  b.taxonomy = std::move(t);
  auto fr = cfg.get_double_list("data.split");
  if (fr.size() != 3) throw UsageError("data.split needs three fractions");
  SplitResult split =
      stratified_split(b.taxonomy, std::move(data), {fr[0], fr[1], fr[2]}, cfg.seed());
  b.train = std::move(split.train);
  b.val = std::move(split.val);
  b.test = std::move(split.test);
  b.pretrain = generate_synthetic(cfg.pretrain_spec()).second;

  std::vector<std::vector<std::string>> corpus;
  for (const auto& ex : b.train) corpus.push_back(ex.doc);
  for (const auto& ex : b.pretrain) corpus.push_back(ex.doc);
  b.vocab = build_vocab(corpus, b.taxonomy,
                        static_cast<int>(cfg.get_int("data.min_count")));
  return b;
}

inline void save_bundle(const DataBundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  b.taxonomy.save(dir + "/taxonomy.tsv");
  b.vocab.save(dir + "/vocab.tsv");
  save_dataset(b.train, dir + "/train.jsonl");
  save_dataset(b.val, dir + "/val.jsonl");
  save_dataset(b.test, dir + "/test.jsonl");
  save_dataset(b.pretrain, dir + "/pretrain.jsonl");
}

inline DataBundle load_bundle(const std::string& dir) {
  DataBundle b;
  b.taxonomy = Taxonomy::load(dir + "/taxonomy.tsv");
  b.vocab = Vocabulary::load(dir + "/vocab.tsv");
  b.train = load_dataset(dir + "/train.jsonl");
  b.val = load_dataset(dir + "/val.jsonl");
  b.test = load_dataset(dir + "/test.jsonl");
  b.pretrain = load_dataset(dir + "/pretrain.jsonl");
  return b;
}

inline Seq2SeqModel make_model(const Config& cfg, const DataBundle& data,
                               uint64_t init_seed) {
  return Seq2SeqModel(cfg.model_config(data.vocab.size()),
                      TokenInfo::from_vocab(data.vocab), init_seed);
}

// Pretrains a fresh model on the weakly-labeled corpus (with a 90/10
// train/val split for checkpoint selection) and returns the best parameters.
inline std::vector<nn::Matrix> pretrain_snapshot(const Config& cfg,
                                                 const TrainConfig& tc,
                                                 const DataBundle& data,
                                                 TrainResult* result_out = nullptr,
                                                 const std::string& ckpt_path = "") {
  SplitResult split = stratified_split(data.taxonomy, data.pretrain,
                                       {0.9, 0.1, 0.0}, tc.seed ^ 0x9d2c5680ULL);
  Seq2SeqModel model = make_model(cfg, data, tc.seed);
  TrainResult r = pretrain(model, tc, split.train, split.val, data.taxonomy,
                           data.vocab, ckpt_path);
  if (result_out) *result_out = r;
  return snapshot_params(model);
}

struct PipelineResult {
  double micro_f1 = 0;
  double macro_f1 = 0;
  double initial_val_lm = 0;  // fine-tuning epoch-0 validation LM loss
  TrainResult finetune_result;
  ScoreReport report;
};

// Fine-tunes (optionally from a pretrained snapshot) and scores the test set.
inline PipelineResult finetune_and_eval(const Config& cfg, const TrainConfig& tc,
                                        const DataBundle& data,
                                        const std::vector<nn::Matrix>* init,
                                        const std::vector<Example>* train_override = nullptr,
                                        const std::string& ckpt_path = "") {
  Seq2SeqModel model = make_model(cfg, data, tc.seed);
  if (init) restore_params(model, *init);
  const std::vector<Example>& train = train_override ? *train_override : data.train;
  PipelineResult out;
  out.finetune_result = finetune(model, tc, train, data.val, data.taxonomy,
                                 data.vocab, ckpt_path);
  out.initial_val_lm = out.finetune_result.initial_val_lm;
  std::vector<PredictionRecord> records =
      predict_records(model, data.test, data.taxonomy, data.vocab,
                      tc.constrained_decode, tc.eval_max_steps);
  out.report = micro_macro_f1(records);
  out.report.long_tail = long_tail_report(records, gold_frequencies(records));
  out.micro_f1 = out.report.micro_f1;
  out.macro_f1 = out.report.macro_f1;
  return out;
}

// --------------------------------------------------------------------------
// Ablation matrix: the full objective plus the four single-component removals.

struct AblationRow {
  std::string variant;
  double micro_f1 = 0;
  double macro_f1 = 0;
};

inline std::vector<AblationRow> ablate_run(const Config& cfg, const DataBundle& data) {
  TrainConfig base = TrainConfig::from_config(cfg);
  std::vector<nn::Matrix> pre = pretrain_snapshot(cfg, base, data);

  const std::vector<std::string> variants = {"full", "no_pretrain", "no_output_space",
                                             "no_token_constraint", "no_semantic"};
  std::vector<AblationRow> rows(variants.size());
  parallel_cells(static_cast<int>(variants.size()), [&](int i) {
    TrainConfig tc = base;
    const std::string& name = variants[i];
    if (name == "no_output_space") tc.no_output_space = true;
    if (name == "no_token_constraint") tc.no_token_constraint = true;
    if (name == "no_semantic") tc.no_semantic = true;
    bool use_pretrain = name != "no_pretrain";
    PipelineResult r =
        finetune_and_eval(cfg, tc, data, use_pretrain ? &pre : nullptr);
    rows[i] = {name, r.micro_f1, r.macro_f1};
  });
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(22) << "Variant" << std::right << std::setw(10)
      << "Micro-F1" << std::setw(10) << "Macro-F1" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(22) << r.variant << std::right << std::fixed
        << std::setprecision(4) << std::setw(10) << r.micro_f1 << std::setw(10)
        << r.macro_f1 << '\n';
  }
  return out.str();
}

// --------------------------------------------------------------------------
// Hyperparameter grid over lambda1 x lambda2, sharing one pretrained model.

struct GridCell {
  double lambda1 = 0;
  double lambda2 = 0;
  double micro_f1 = 0;
  double macro_f1 = 0;
};

inline std::vector<GridCell> grid_run(const Config& cfg, const DataBundle& data) {
  TrainConfig base = TrainConfig::from_config(cfg);
  std::vector<nn::Matrix> pre;
  if (!base.no_pretrain) pre = pretrain_snapshot(cfg, base, data);

  std::vector<std::pair<double, double>> cells;
  for (double l1 : cfg.get_double_list("grid.lambda1"))
    for (double l2 : cfg.get_double_list("grid.lambda2"))
      if (std::find(cells.begin(), cells.end(), std::make_pair(l1, l2)) == cells.end())
        cells.emplace_back(l1, l2);

  std::vector<GridCell> out(cells.size());
  parallel_cells(static_cast<int>(cells.size()), [&](int i) {
    TrainConfig tc = base;
    tc.weights.lambda1 = cells[i].first;
    tc.weights.lambda2 = cells[i].second;
    PipelineResult r =
        finetune_and_eval(cfg, tc, data, base.no_pretrain ? nullptr : &pre);
    out[i] = {cells[i].first, cells[i].second, r.micro_f1, r.macro_f1};
  });
  std::stable_sort(out.begin(), out.end(), [](const GridCell& a, const GridCell& b) {
    return a.macro_f1 > b.macro_f1;
  });
  return out;
}

inline std::string grid_table(const std::vector<GridCell>& cells) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "lambda1" << std::setw(12) << "lambda2"
      << std::right << std::setw(10) << "Micro-F1" << std::setw(10) << "Macro-F1"
      << '\n';
  for (const auto& c : cells) {
    out << std::left << std::setw(12) << c.lambda1 << std::setw(12) << c.lambda2
        << std::right << std::fixed << std::setprecision(4) << std::setw(10)
        << c.micro_f1 << std::setw(10) << c.macro_f1 << '\n';
  }
  return out.str();
}

// --------------------------------------------------------------------------
// Data-efficiency curve: subsample the training split at each proportion,
// fine-tune, and report the median score over seeds.

struct DataEffRow {
  double proportion = 0;
  double micro_f1 = 0;  // median over seeds
  double macro_f1 = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<DataEffRow> data_efficiency_run(const Config& cfg,
                                                   const DataBundle& data) {
  TrainConfig base = TrainConfig::from_config(cfg);
  std::vector<double> proportions = cfg.get_double_list("de.proportions");
  for (double p : proportions)
    if (p <= 0 || p > 1) throw InvalidFractions("de.proportions must lie in (0,1]");
  const int seeds = static_cast<int>(cfg.get_int("de.seeds"));
  if (seeds < 1) throw UsageError("de.seeds must be >= 1");

  // scores[seed][proportion]
  std::vector<std::vector<std::pair<double, double>>> scores(
      seeds, std::vector<std::pair<double, double>>(proportions.size()));
  parallel_cells(seeds, [&](int s) {
    TrainConfig tc = base;
    tc.seed = base.seed + static_cast<uint64_t>(s);
    std::vector<nn::Matrix> pre;
    if (!tc.no_pretrain) pre = pretrain_snapshot(cfg, tc, data);
    for (size_t pi = 0; pi < proportions.size(); ++pi) {
      std::vector<Example> sub =
          subsample(data.taxonomy, data.train, proportions[pi], tc.seed);
      PipelineResult r = finetune_and_eval(cfg, tc, data,
                                           tc.no_pretrain ? nullptr : &pre, &sub);
      scores[s][pi] = {r.micro_f1, r.macro_f1};
    }
  });

  std::vector<DataEffRow> rows;
  for (size_t pi = 0; pi < proportions.size(); ++pi) {
    std::vector<double> micro, macro;
    for (int s = 0; s < seeds; ++s) {
      micro.push_back(scores[s][pi].first);
      macro.push_back(scores[s][pi].second);
    }
    rows.push_back({proportions[pi], median(micro), median(macro)});
  }
  return rows;
}

inline std::string data_efficiency_table(const std::vector<DataEffRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "Proportion" << std::right << std::setw(10)
      << "Micro-F1" << std::setw(10) << "Macro-F1" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.proportion << std::right << std::fixed
        << std::setprecision(4) << std::setw(10) << r.micro_f1 << std::setw(10)
        << r.macro_f1 << '\n';
  }
  return out.str();
}

}  // namespace higen
