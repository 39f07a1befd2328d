#pragma once

// Training orchestration: denoising pretraining over masked label sequences,
// supervised fine-tuning with the composite objective, the linear-warmup /
// linear-decay schedule, Adam, ablation toggles, the hyperparameter grid and
// the data-efficiency curve. Runs are bit-reproducible given (seed, config,
// dataset); fan-out across grid cells uses one model per worker.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "higen/checkpoint.hpp"
#include "higen/config.hpp"
#include "higen/corpus.hpp"
#include "higen/errors.hpp"
#include "higen/evaluator.hpp"
#include "higen/model.hpp"
#include "higen/objectives.hpp"
#include "higen/rng.hpp"
#include "higen/taxonomy.hpp"
#include "higen/vocab.hpp"

namespace higen {

struct TrainConfig {
  int batch_size = 8;
  double lr = 3e-4;
  double warmup_frac = 0.1;
  int pretrain_epochs = 10;
  int epochs = 30;
  uint64_t seed = 1;
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights weights;
  MaskSpec mask;
  bool no_pretrain = false;
  bool no_output_space = false;
  bool no_token_constraint = false;
  bool no_semantic = false;
  bool restrict_edges_to_gold_path = false;
  bool constrained_decode = false;
  int eval_max_steps = 32;

  static TrainConfig from_config(const Config& c) {
    TrainConfig t;
    t.batch_size = static_cast<int>(c.get_int("train.batch_size"));
    t.lr = c.get_double("train.lr");
    t.warmup_frac = c.get_double("train.warmup_frac");
    t.pretrain_epochs = static_cast<int>(c.get_int("train.pretrain_epochs"));
    t.epochs = static_cast<int>(c.get_int("train.epochs"));
    t.seed = c.seed();
    t.grad_clip = c.get_double("train.grad_clip");
    t.adam_beta1 = c.get_double("train.adam_beta1");
    t.adam_beta2 = c.get_double("train.adam_beta2");
    t.adam_eps = c.get_double("train.adam_eps");
    t.weights = c.loss_weights();
    t.mask = c.mask_spec();
    t.no_pretrain = c.get_bool("train.no_pretrain");
    t.no_output_space = c.get_bool("train.no_output_space");
    t.no_token_constraint = c.get_bool("train.no_token_constraint");
    t.no_semantic = c.get_bool("train.no_semantic");
    t.restrict_edges_to_gold_path = c.get_bool("loss.restrict_edges_to_gold_path");
    t.constrained_decode = c.get_bool("eval.constrained");
    t.eval_max_steps = static_cast<int>(c.get_int("eval.max_steps"));
    t.validate();
    return t;
  }

  // Ablation flags are exactly equivalent to zeroing the matching weight.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (no_output_space) w.lambda1 = 0;
    if (no_token_constraint) w.lambda2 = 0;
    if (no_semantic) w.lambda3 = 0;
    return w;
  }
  bool semantic_enabled() const {
    return !no_semantic && weights.lambda3 > 0;
  }

  void validate() const {
    if (batch_size < 1) throw Error("train.batch_size must be >= 1");
    if (semantic_enabled() && batch_size < 2)
      throw BatchTooSmallForSemanticLoss(
          "semantic loss needs train.batch_size >= 2");
    if (lr <= 0) throw Error("train.lr must be positive");
    if (warmup_frac < 0 || warmup_frac >= 1) throw Error("train.warmup_frac must lie in [0,1)");
    if (epochs < 0 || pretrain_epochs < 0) throw Error("epoch counts must be >= 0");
    weights.validate();
    mask.validate();
  }
};

// Linear warmup to the peak rate, then linear decay to zero at total_steps.
inline double lr_at(long step, long total_steps, double peak, double warmup_frac) {
  if (total_steps <= 0) return 0.0;
  long warmup = static_cast<long>(std::floor(warmup_frac * total_steps));
  if (step < 0) step = 0;
  if (step > total_steps) step = total_steps;
  if (warmup > 0 && step < warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return peak;
  return peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

class Adam {
 public:
  Adam(double beta1, double beta2, double eps, double clip)
      : beta1_(beta1), beta2_(beta2), eps_(eps), clip_(clip) {}

  void step(const std::vector<nn::Tensor*>& params, double lr) {
    if (m_.empty()) {
      for (auto* t : params) {
        m_.push_back(nn::Matrix::Zero(t->w.rows(), t->w.cols()));
        v_.push_back(nn::Matrix::Zero(t->w.rows(), t->w.cols()));
      }
    }
    if (clip_ > 0) {
      double sq = 0;
      for (auto* t : params) sq += t->g.squaredNorm();
      double norm = std::sqrt(sq);
      if (norm > clip_) {
        double s = clip_ / norm;
        for (auto* t : params) t->g *= s;
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      nn::Tensor* t = params[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * t->g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * t->g.cwiseProduct(t->g);
      nn::Matrix mhat = m_[i] / bc1;
      nn::Matrix vhat = v_[i] / bc2;
      t->w -= lr * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
    }
  }

 private:
  double beta1_, beta2_, eps_, clip_;
  long t_ = 0;
  std::vector<nn::Matrix> m_, v_;
};

// --------------------------------------------------------------------------
// Parameter snapshots (for best-epoch restore without touching disk).

inline std::vector<nn::Matrix> snapshot_params(Seq2SeqModel& model) {
  std::vector<nn::Matrix> out;
  for (auto* t : model.params()) out.push_back(t->w);
  return out;
}
inline void restore_params(Seq2SeqModel& model, const std::vector<nn::Matrix>& snap) {
  auto params = model.params();
  if (params.size() != snap.size()) throw Error("parameter snapshot mismatch");
  for (size_t i = 0; i < params.size(); ++i) params[i]->w = snap[i];
}

// --------------------------------------------------------------------------

struct HistoryRow {
  long step = 0;
  double lm = 0, output_space = 0, token_constraint = 0, semantic = 0, total = 0;
  double lr = 0;
};

inline void save_history_csv(const std::vector<HistoryRow>& rows,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write history file: " + path);
  out << "step,lm,output_space,token_constraint,semantic,total,lr\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.lm << ',' << r.output_space << ','
        << r.token_constraint << ',' << r.semantic << ',' << r.total << ','
        << r.lr << '\n';
  }
}

struct TrainResult {
  std::vector<HistoryRow> history;
  std::vector<double> epoch_val;   // validation metric per epoch
  double initial_val_lm = 0;       // before the first optimizer step
  double best_val = 0;
  int best_epoch = -1;
};

// --------------------------------------------------------------------------
// Encoded views of the datasets.

struct EncodedSeq2Seq {
  std::vector<int> src;
  std::vector<int> tgt;  // <s> ... </s>
};

inline EncodedSeq2Seq encode_finetune_example(const Example& ex, const Taxonomy& t,
                                              const Vocabulary& v) {
  EncodedSeq2Seq e;
  for (const auto& w : ex.doc) e.src.push_back(v.id(w));
  e.tgt.push_back(v.bos_id());
  for (int id : v.encode_label_sequence(t.linearize(ex.labels))) e.tgt.push_back(id);
  e.tgt.push_back(v.eos_id());
  return e;
}

inline EncodedSeq2Seq encode_pretrain_example(const PretrainExample& pe,
                                              const Vocabulary& v) {
  EncodedSeq2Seq e;
  e.src = pe.input_ids;
  e.tgt.push_back(v.bos_id());
  for (int id : pe.target_ids) e.tgt.push_back(id);
  e.tgt.push_back(v.eos_id());
  return e;
}

// Root-to-leaf node ids of a single-path label set ordered by level; throws
// when any level holds more than one node.
inline std::vector<std::string> single_path_levels(const Taxonomy& t,
                                                   const LabelSet& labels) {
  std::map<int, std::vector<std::string>> by_level;
  for (const auto& id : labels.ids) by_level[t.node(id).level].push_back(id);
  std::vector<std::string> path;
  int expect = 1;
  for (const auto& [lvl, ids] : by_level) {
    if (ids.size() != 1 || lvl != expect)
      throw MultiPathUnsupported(
          "semantic loss requires single-path label sets spanning every level");
    path.push_back(ids[0]);
    ++expect;
  }
  return path;
}

// Mean teacher-forced LM loss over a dataset; the epoch-0 value of this on the
// validation split is what pretraining transfer is measured by.
inline double dataset_lm_loss(Seq2SeqModel& model,
                              const std::vector<EncodedSeq2Seq>& data) {
  double total = 0;
  for (const auto& e : data) {
    DistributionTrace trace = model.teacher_forced_forward(e.src, e.tgt);
    total += lm_loss(trace).value;
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

// Greedy decode + parse for every example.
inline std::vector<PredictionRecord> predict_records(
    Seq2SeqModel& model, const std::vector<Example>& data, const Taxonomy& t,
    const Vocabulary& v, bool constrained, int max_steps) {
  std::vector<int> allowed = constrained ? v.allowed_token_ids(t) : std::vector<int>{};
  std::vector<PredictionRecord> records;
  records.reserve(data.size());
  for (const auto& ex : data) {
    std::vector<int> src;
    for (const auto& w : ex.doc) src.push_back(v.id(w));
    std::vector<int> out = model.generate(src, max_steps, constrained, allowed);
    PredictionRecord rec;
    rec.id = ex.id;
    rec.gold = ex.labels;
    auto [pred, diag] = t.parse(v.decode(out));
    rec.predicted = pred;
    rec.diagnostics = diag;
    records.push_back(std::move(rec));
  }
  return records;
}

// --------------------------------------------------------------------------
// Pretraining: cross-entropy reconstruction of masked label sequences.

// Masks are redrawn each epoch from a per-epoch stream; the validation set
// keeps one fixed masking so epoch losses stay comparable.
inline TrainResult pretrain(Seq2SeqModel& model, const TrainConfig& cfg,
                            const std::vector<Example>& train,
                            const std::vector<Example>& val, const Taxonomy& t,
                            const Vocabulary& v,
                            const std::string& checkpoint_path = "") {
  cfg.validate();
  if (train.empty()) throw EmptyCorpus("pretraining dataset is empty");
  Rng run_rng(cfg.seed);
  Rng val_rng = run_rng.fork(0x7a11);

  std::vector<EncodedSeq2Seq> val_enc;
  for (const auto& ex : val)
    val_enc.push_back(encode_pretrain_example(
        build_pretrain_example(ex, t, cfg.mask, val_rng, v, model.config().max_len), v));

  const long steps_per_epoch =
      (static_cast<long>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.pretrain_epochs;
  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.grad_clip);
  TrainResult result;
  result.initial_val_lm = dataset_lm_loss(model, val_enc);
  result.best_val = result.initial_val_lm;
  std::vector<nn::Matrix> best = snapshot_params(model);

  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  long step = 0;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    Rng mask_rng = run_rng.fork(1000 + epoch);
    Rng drop_rng = run_rng.fork(2000 + epoch);
    run_rng.shuffle(order);
    for (long b = 0; b < steps_per_epoch; ++b) {
      model.zero_grad();
      const int lo = static_cast<int>(b * cfg.batch_size);
      const int hi = std::min<int>(lo + cfg.batch_size, static_cast<int>(train.size()));
      const int n = hi - lo;
      double batch_lm = 0;
      for (int i = lo; i < hi; ++i) {
        EncodedSeq2Seq e = encode_pretrain_example(
            build_pretrain_example(train[order[i]], t, cfg.mask, mask_rng, v,
                                   model.config().max_len),
            v);
        EncodeCache enc;
        DecodeCache dec;
        model.encode_cached(e.src, &drop_rng, enc);
        DistributionTrace trace = model.teacher_forced_cached(enc, e.tgt, &drop_rng, dec);
        TraceLoss lm = lm_loss(trace);
        batch_lm += lm.value / n;
        nn::Matrix dlogits = lm.dlogits / n;
        model.backward_example(enc, dec, dlogits, nullptr);
      }
      if (!std::isfinite(batch_lm)) {
        restore_params(model, best);
        throw DivergenceDetected("pretraining loss became non-finite at step " +
                                 std::to_string(step));
      }
      double lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_frac);
      adam.step(model.params(), lr);
      result.history.push_back({step, batch_lm, 0, 0, 0, batch_lm, lr});
      ++step;
    }
    double val_loss = dataset_lm_loss(model, val_enc);
    result.epoch_val.push_back(val_loss);
    if (result.best_epoch < 0 || val_loss < result.best_val) {
      result.best_val = val_loss;
      result.best_epoch = epoch;
      best = snapshot_params(model);
      if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
    }
  }
  restore_params(model, best);
  if (!checkpoint_path.empty() && result.best_epoch < 0)
    save_checkpoint(model, checkpoint_path);
  return result;
}

// --------------------------------------------------------------------------
// Fine-tuning with the composite objective.

inline TrainResult finetune(Seq2SeqModel& model, const TrainConfig& cfg,
                            const std::vector<Example>& train,
                            const std::vector<Example>& val, const Taxonomy& t,
                            const Vocabulary& v,
                            const std::string& checkpoint_path = "") {
  cfg.validate();
  if (train.empty()) throw EmptyCorpus("fine-tuning dataset is empty");
  const LossWeights w = cfg.effective_weights();
  const bool semantic = cfg.semantic_enabled() && w.lambda3 > 0;
  const bool output_space = !cfg.no_output_space && w.lambda1 > 0;
  const bool token_constraint = !cfg.no_token_constraint && w.lambda2 > 0;

  if (semantic && static_cast<int>(w.alphas.size()) < t.depth())
    throw Error("loss.alphas needs one margin per hierarchy level");

  // Pre-encode everything that does not change across epochs.
  std::vector<EncodedSeq2Seq> train_enc, val_enc;
  for (const auto& ex : train) train_enc.push_back(encode_finetune_example(ex, t, v));
  for (const auto& ex : val) val_enc.push_back(encode_finetune_example(ex, t, v));

  std::vector<char> in_allowed(v.size(), 0);
  for (int id : v.allowed_token_ids(t)) in_allowed[id] = 1;
  std::vector<std::pair<int, int>> edge_ids;
  for (const auto& [p, c] : t.edge_token_pairs()) edge_ids.emplace_back(v.id(p), v.id(c));

  // Per-example name token ids and class indices per level (semantic loss).
  std::unordered_map<std::string, int> node_index;
  for (int i = 0; i < t.size(); ++i) node_index[t.nodes()[i].id] = i;
  std::vector<std::vector<std::vector<int>>> name_ids(train.size());
  std::vector<std::vector<int>> level_class(train.size());
  if (semantic) {
    for (size_t i = 0; i < train.size(); ++i) {
      for (const auto& id : single_path_levels(t, train[i].labels)) {
        name_ids[i].push_back(v.encode_text(t.node(id).name));
        level_class[i].push_back(node_index[id]);
      }
    }
  }
  // Gold-path edges per example for the restricted variant.
  std::vector<std::vector<std::pair<int, int>>> gold_edges(train.size());
  if (output_space && cfg.restrict_edges_to_gold_path) {
    for (size_t i = 0; i < train.size(); ++i)
      for (const auto& [p, c] : t.edge_token_pairs())
        if (train[i].labels.contains(c)) gold_edges[i].emplace_back(v.id(p), v.id(c));
  }

  const long steps_per_epoch =
      (static_cast<long>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;
  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.grad_clip);
  TrainResult result;
  result.initial_val_lm = dataset_lm_loss(model, val_enc);
  std::vector<nn::Matrix> best = snapshot_params(model);

  Rng run_rng(cfg.seed * 0x5851f42d4c957f2dULL + 1);
  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng drop_rng = run_rng.fork(3000 + epoch);
    run_rng.shuffle(order);
    for (long b = 0; b < steps_per_epoch; ++b) {
      model.zero_grad();
      const int lo = static_cast<int>(b * cfg.batch_size);
      const int hi = std::min<int>(lo + cfg.batch_size, static_cast<int>(train.size()));
      const int n = hi - lo;
      // A trailing batch of one example cannot form pairs; the semantic term
      // is skipped for it.
      const bool batch_semantic = semantic && n >= 2;

      std::vector<EncodeCache> enc(n);
      std::vector<DecodeCache> dec(n);
      std::vector<DistributionTrace> traces(n);
      double lm_sum = 0, lo_sum = 0, lt_sum = 0;
      std::vector<nn::Matrix> dlogits(n);
      for (int i = 0; i < n; ++i) {
        const EncodedSeq2Seq& e = train_enc[order[lo + i]];
        model.encode_cached(e.src, &drop_rng, enc[i]);
        traces[i] = model.teacher_forced_cached(enc[i], e.tgt, &drop_rng, dec[i]);
        TraceLoss lm = lm_loss(traces[i]);
        lm_sum += lm.value / n;
        dlogits[i] = lm.dlogits / n;
        if (output_space) {
          const auto& edges = cfg.restrict_edges_to_gold_path
                                  ? gold_edges[order[lo + i]]
                                  : edge_ids;
          TraceLoss losp = output_space_loss(traces[i], edges);
          lo_sum += losp.value;
          dlogits[i] += (w.lambda1) * losp.dlogits;
        }
        if (token_constraint) {
          TraceLoss ltok = token_constraint_loss(traces[i], in_allowed);
          lt_sum += ltok.value / n;
          dlogits[i] += (w.lambda2 / n) * ltok.dlogits;
        }
      }

      double ls_value = 0;
      std::vector<nn::RowVector> dpooled_doc(n, nn::RowVector());
      std::vector<std::vector<EncodeCache>> name_enc(n);
      if (batch_semantic) {
        // Project documents and per-level label names into the joint space.
        std::vector<nn::Projection::Cache> text_cache(n);
        nn::Matrix e_t(n, model.config().proj_dim);
        for (int i = 0; i < n; ++i)
          e_t.row(i) = model.project_text(enc[i].pooled, text_cache[i]);
        const int depth = t.depth();
        std::vector<nn::Matrix> e_l(depth, nn::Matrix(n, model.config().proj_dim));
        std::vector<std::vector<nn::Projection::Cache>> label_cache(
            depth, std::vector<nn::Projection::Cache>(n));
        std::vector<std::vector<int>> batch_class(n, std::vector<int>(depth));
        for (int i = 0; i < n; ++i) {
          name_enc[i].resize(depth);
          for (int k = 0; k < depth; ++k) {
            model.encode_cached(name_ids[order[lo + i]][k], &drop_rng, name_enc[i][k]);
            e_l[k].row(i) =
                model.project_label(name_enc[i][k].pooled, label_cache[k][i]);
            batch_class[i][k] = level_class[order[lo + i]][k];
          }
        }
        SemanticResult sem = semantic_loss(e_t, e_l, batch_class, w.alphas);
        ls_value = sem.value;
        for (int i = 0; i < n; ++i) {
          dpooled_doc[i] = model.backward_project_text(
              w.lambda3 * sem.d_text.row(i), text_cache[i]);
          for (int k = 0; k < depth; ++k) {
            nn::RowVector dp = model.backward_project_label(
                w.lambda3 * sem.d_label[k].row(i), label_cache[k][i]);
            model.backward_encoder_only(name_enc[i][k], dp);
          }
        }
      }

      for (int i = 0; i < n; ++i) {
        model.backward_example(enc[i], dec[i], dlogits[i],
                               batch_semantic ? &dpooled_doc[i] : nullptr);
      }

      CompositeLoss batch_loss = composite(lm_sum, lo_sum, lt_sum, ls_value, w);
      if (!std::isfinite(batch_loss.total)) {
        restore_params(model, best);
        throw DivergenceDetected("fine-tuning loss became non-finite at step " +
                                 std::to_string(step));
      }
      double lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_frac);
      adam.step(model.params(), lr);
      result.history.push_back({step, batch_loss.lm, batch_loss.output_space,
                                batch_loss.token_constraint, batch_loss.semantic,
                                batch_loss.total, lr});
      ++step;
    }

    // Model selection by validation Micro-F1.
    std::vector<PredictionRecord> records = predict_records(
        model, val, t, v, cfg.constrained_decode, cfg.eval_max_steps);
    double val_f1 = val.empty() ? 0.0 : micro_macro_f1(records).micro_f1;
    result.epoch_val.push_back(val_f1);
    if (result.best_epoch < 0 || val_f1 > result.best_val) {
      result.best_val = val_f1;
      result.best_epoch = epoch;
      best = snapshot_params(model);
      if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
    }
  }
  restore_params(model, best);
  if (!checkpoint_path.empty() && result.best_epoch < 0)
    save_checkpoint(model, checkpoint_path);
  return result;
}

// --------------------------------------------------------------------------
// Bounded worker pool for independent cells (grid / data-efficiency / seeds).
// Results land in pre-assigned slots, so scheduling cannot affect output.

inline int worker_count(int cells) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("HIGEN_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n >= 1) hw = n;
    } catch (const std::exception&) {
      throw UsageError("HIGEN_THREADS must be a positive integer");
    }
  }
  return std::max(1, std::min(hw, cells));
}

inline void parallel_cells(int cells, const std::function<void(int)>& run) {
  int workers = worker_count(cells);
  if (workers <= 1) {
    for (int i = 0; i < cells; ++i) run(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int wkr = 0; wkr < workers; ++wkr) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < cells; i = next.fetch_add(1)) {
        try {
          run(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace higen
