#pragma once

// Compact encoder-decoder transformer with a weight-tied LM head and two
// projection heads into the joint text/label embedding space. Pre-norm blocks,
// sinusoidal positions, GELU activations; forward passes fill explicit caches
// so the matching backward passes can run per example.
//
// Padding semantics: <pad> positions are invisible — they are skipped by the
// positional index, masked out of attention keys, excluded from pooling, and
// they receive no gradient. Moving pads around therefore never changes the
// states of real tokens.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "higen/errors.hpp"
#include "higen/nn.hpp"
#include "higen/rng.hpp"
#include "higen/vocab.hpp"

namespace higen {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 2;  // encoder layers; the decoder uses the same count
  int n_heads = 4;
  int d_ffn = 256;
  int proj_dim = 64;
  int max_len = 256;
  double dropout = 0.0;

  void validate() const {
    if (vocab_size <= 0) throw Error("model.vocab_size must be positive");
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ffn <= 0 || proj_dim <= 0)
      throw Error("model dimensions must be positive");
    if (d_model % n_heads != 0) throw Error("model.d_model must be divisible by model.n_heads");
    if (max_len <= 2) throw Error("model.max_len too small");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("model.dropout must lie in [0,1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Token bookkeeping the model needs from the vocabulary.
struct TokenInfo {
  int bos = 0, eos = 1, pad = 2;
  std::vector<char> is_node;  // per token id

  static TokenInfo from_vocab(const Vocabulary& v) {
    TokenInfo info;
    info.bos = v.bos_id();
    info.eos = v.eos_id();
    info.pad = v.pad_id();
    info.is_node.assign(v.size(), 0);
    for (int i = 0; i < v.size(); ++i)
      info.is_node[i] = v.kind(i) == Vocabulary::Kind::kNode ? 1 : 0;
    return info;
  }
};

struct EncoderOutput {
  nn::Matrix states;        // T x d
  nn::RowVector pooled;     // mean over non-pad positions
  std::vector<char> valid;  // per position
};

// Per-position output distributions from a teacher-forced pass.
struct DistributionTrace {
  nn::Matrix logits;            // K x |V|
  nn::Matrix probs;             // row-wise softmax of logits
  std::vector<int> gold;        // K gold token ids
  std::vector<char> node_flag;  // gold token is a label-node token
};

struct EncodeCache {
  std::vector<int> ids;
  std::vector<char> valid;
  int n_valid = 0;
  nn::Matrix x0;
  nn::Matrix mask_drop;  // inverted dropout mask; empty when inactive
  std::vector<nn::EncoderLayer::Cache> layers;
  nn::LayerNorm::Cache final_ln;
  nn::Matrix states;
  nn::RowVector pooled;
};

struct DecodeCache {
  std::vector<int> dec_in;
  nn::Matrix x0;
  nn::Matrix mask_drop;
  std::vector<nn::DecoderLayer::Cache> layers;
  nn::LayerNorm::Cache final_ln;
  nn::Matrix states;
};

class Seq2SeqModel {
 public:
  Seq2SeqModel(const ModelConfig& cfg, TokenInfo info, uint64_t init_seed)
      : cfg_(cfg), info_(std::move(info)) {
    cfg_.validate();
    if (static_cast<int>(info_.is_node.size()) != cfg_.vocab_size)
      throw Error("token info does not match model.vocab_size");
    Rng rng(init_seed);
    embedding_.init("embedding", cfg_.vocab_size, cfg_.d_model);
    nn::init_normal(embedding_, rng);
    enc_layers_.resize(cfg_.n_layers);
    dec_layers_.resize(cfg_.n_layers);
    for (int l = 0; l < cfg_.n_layers; ++l)
      enc_layers_[l].init("enc" + std::to_string(l), cfg_.d_model, cfg_.n_heads,
                          cfg_.d_ffn, rng);
    enc_final_.init("enc.final", cfg_.d_model);
    for (int l = 0; l < cfg_.n_layers; ++l)
      dec_layers_[l].init("dec" + std::to_string(l), cfg_.d_model, cfg_.n_heads,
                          cfg_.d_ffn, rng);
    dec_final_.init("dec.final", cfg_.d_model);
    fc_t_.init("fc_t", cfg_.d_model, cfg_.proj_dim, rng);
    fc_l_.init("fc_l", cfg_.d_model, cfg_.proj_dim, rng);
    build_positional();
  }

  const ModelConfig& config() const { return cfg_; }
  const TokenInfo& token_info() const { return info_; }

  std::vector<nn::Tensor*> params() {
    std::vector<nn::Tensor*> out;
    out.push_back(&embedding_);
    for (auto& l : enc_layers_) l.collect(out);
    enc_final_.collect(out);
    for (auto& l : dec_layers_) l.collect(out);
    dec_final_.collect(out);
    fc_t_.collect(out);
    fc_l_.collect(out);
    return out;
  }
  void zero_grad() {
    for (auto* t : params()) t->zero_grad();
  }

  // --- forward -------------------------------------------------------------

  // Full encoder pass. `dropout_rng` non-null enables training mode.
  void encode_cached(const std::vector<int>& ids, Rng* dropout_rng,
                     EncodeCache& c) const {
    if (ids.empty()) throw Error("cannot encode an empty sequence");
    if (static_cast<int>(ids.size()) > cfg_.max_len)
      throw SequenceTooLong("encoder input longer than model.max_len");
    c.ids = ids;
    c.valid.assign(ids.size(), 1);
    c.n_valid = 0;
    const long t = static_cast<long>(ids.size());
    c.x0 = nn::Matrix::Zero(t, cfg_.d_model);
    const double scale = std::sqrt(static_cast<double>(cfg_.d_model));
    int pos = 0;
    for (long i = 0; i < t; ++i) {
      check_id(ids[i]);
      if (ids[i] == info_.pad) {
        c.valid[i] = 0;
        continue;
      }
      ++c.n_valid;
      c.x0.row(i) = embedding_.w.row(ids[i]) * scale + pos_.row(pos++);
    }
    if (c.n_valid == 0) throw Error("cannot encode an all-pad sequence");
    apply_dropout(c.x0, dropout_rng, c.mask_drop);

    nn::Matrix x = c.x0;
    c.layers.resize(enc_layers_.size());
    for (size_t l = 0; l < enc_layers_.size(); ++l)
      x = enc_layers_[l].forward(x, &c.valid, c.layers[l]);
    c.states = enc_final_.forward(x, c.final_ln);
    c.pooled = nn::RowVector::Zero(cfg_.d_model);
    for (long i = 0; i < t; ++i)
      if (c.valid[i]) c.pooled += c.states.row(i);
    c.pooled /= static_cast<double>(c.n_valid);
  }

  EncoderOutput encode(const std::vector<int>& ids) const {
    EncodeCache c;
    encode_cached(ids, nullptr, c);
    return EncoderOutput{c.states, c.pooled, c.valid};
  }

  // Decoder pass over `target` (which must begin with <s>); produces the trace
  // over target[1:]. The encoder cache must belong to the same example.
  DistributionTrace teacher_forced_cached(const EncodeCache& enc,
                                          const std::vector<int>& target,
                                          Rng* dropout_rng, DecodeCache& c) const {
    if (target.size() < 2) throw Error("teacher forcing needs at least <s> and one token");
    if (target.front() != info_.bos)
      throw Error("teacher forcing target must begin with <s>");
    if (static_cast<int>(target.size()) > cfg_.max_len)
      throw SequenceTooLong("decoder input longer than model.max_len");
    c.dec_in.assign(target.begin(), target.end() - 1);
    run_decoder(enc, c, dropout_rng);

    DistributionTrace trace;
    trace.logits = c.states * embedding_.w.transpose();
    trace.probs = nn::softmax_rows(trace.logits);
    trace.gold.assign(target.begin() + 1, target.end());
    trace.node_flag.resize(trace.gold.size());
    for (size_t i = 0; i < trace.gold.size(); ++i) {
      check_id(trace.gold[i]);
      trace.node_flag[i] = info_.is_node[trace.gold[i]];
    }
    return trace;
  }

  DistributionTrace teacher_forced_forward(const std::vector<int>& src,
                                           const std::vector<int>& target) const {
    EncodeCache enc;
    encode_cached(src, nullptr, enc);
    DecodeCache dec;
    return teacher_forced_cached(enc, target, nullptr, dec);
  }

  // Greedy autoregressive generation. Returns emitted tokens (without the
  // leading <s>; includes the final </s> when produced). When `constrained`,
  // the argmax is restricted to `allowed` plus </s>.
  std::vector<int> generate(const std::vector<int>& src, int max_steps,
                            bool constrained = false,
                            const std::vector<int>& allowed = {}) const {
    EncodeCache enc;
    encode_cached(src, nullptr, enc);
    std::vector<char> allow_mask;
    if (constrained) {
      allow_mask.assign(cfg_.vocab_size, 0);
      for (int id : allowed) {
        check_id(id);
        allow_mask[id] = 1;
      }
      allow_mask[info_.eos] = 1;
    }
    std::vector<int> out;
    std::vector<int> dec_tokens{info_.bos};
    for (int step = 0; step < max_steps; ++step) {
      DecodeCache c;
      c.dec_in = dec_tokens;
      run_decoder(enc, c, nullptr);
      nn::RowVector logits = c.states.row(c.states.rows() - 1) * embedding_.w.transpose();
      int best = -1;
      double best_v = 0;
      for (int v = 0; v < cfg_.vocab_size; ++v) {
        if (constrained && !allow_mask[v]) continue;
        if (best < 0 || logits(v) > best_v) {
          best = v;
          best_v = logits(v);
        }
      }
      out.push_back(best);
      if (best == info_.eos) break;
      dec_tokens.push_back(best);
      if (static_cast<int>(dec_tokens.size()) >= cfg_.max_len) break;
    }
    return out;
  }

  // Sequence log-probability under teacher forcing; exp of this equals the
  // stepwise product of emission probabilities.
  double sequence_log_prob(const std::vector<int>& src,
                           const std::vector<int>& target) const {
    DistributionTrace t = teacher_forced_forward(src, target);
    double lp = 0;
    for (long i = 0; i < t.probs.rows(); ++i)
      lp += std::log(std::max(t.probs(i, t.gold[i]), 1e-300));
    return lp;
  }

  nn::RowVector project_text(const nn::RowVector& pooled, nn::Projection::Cache& c) const {
    return fc_t_.forward(pooled, c);
  }
  nn::RowVector project_label(const nn::RowVector& pooled, nn::Projection::Cache& c) const {
    return fc_l_.forward(pooled, c);
  }
  nn::RowVector project_text(const nn::RowVector& pooled) const {
    nn::Projection::Cache c;
    return fc_t_.forward(pooled, c);
  }
  nn::RowVector project_label(const nn::RowVector& pooled) const {
    nn::Projection::Cache c;
    return fc_l_.forward(pooled, c);
  }

  // --- backward ------------------------------------------------------------

  // Backprop for one example given d(loss)/d(logits) and, optionally, the
  // gradient flowing into the pooled document vector from the semantic path.
  void backward_example(EncodeCache& enc, DecodeCache& dec,
                        const nn::Matrix& dlogits, const nn::RowVector* dpooled) {
    embedding_.g.noalias() += dlogits.transpose() * dec.states;
    nn::Matrix dstates = dlogits * embedding_.w;
    nn::Matrix dx = dec_final_.backward(dstates, dec.final_ln);
    nn::Matrix denc = nn::Matrix::Zero(enc.states.rows(), cfg_.d_model);
    for (int l = static_cast<int>(dec_layers_.size()) - 1; l >= 0; --l)
      dx = dec_layers_[l].backward(dx, dec.layers[l], denc);
    backward_dropout(dx, dec.mask_drop);
    embed_backward(dec.dec_in, std::vector<char>(dec.dec_in.size(), 1), dx);
    backward_encoder(enc, denc, dpooled);
  }

  // Backprop an encoder-only pass (label-name encoding) from the pooled
  // gradient alone.
  void backward_encoder_only(EncodeCache& enc, const nn::RowVector& dpooled) {
    nn::Matrix denc = nn::Matrix::Zero(enc.states.rows(), cfg_.d_model);
    backward_encoder(enc, denc, &dpooled);
  }

  nn::RowVector backward_project_text(const nn::RowVector& dy, const nn::Projection::Cache& c) {
    return fc_t_.backward(dy, c);
  }
  nn::RowVector backward_project_label(const nn::RowVector& dy, const nn::Projection::Cache& c) {
    return fc_l_.backward(dy, c);
  }

  nn::Tensor& embedding() { return embedding_; }
  nn::Projection& fc_t() { return fc_t_; }
  nn::Projection& fc_l() { return fc_l_; }

 private:
  void check_id(int id) const {
    if (id < 0 || id >= cfg_.vocab_size)
      throw UnknownSpecial("token id " + std::to_string(id) + " out of range");
  }

  void build_positional() {
    pos_ = nn::Matrix::Zero(cfg_.max_len, cfg_.d_model);
    for (int t = 0; t < cfg_.max_len; ++t) {
      for (int i = 0; i < cfg_.d_model; i += 2) {
        double angle = t / std::pow(10000.0, static_cast<double>(i) / cfg_.d_model);
        pos_(t, i) = std::sin(angle);
        if (i + 1 < cfg_.d_model) pos_(t, i + 1) = std::cos(angle);
      }
    }
  }

  void apply_dropout(nn::Matrix& x, Rng* rng, nn::Matrix& mask) const {
    mask.resize(0, 0);
    if (!rng || cfg_.dropout <= 0.0) return;
    const double keep = 1.0 - cfg_.dropout;
    mask = nn::Matrix(x.rows(), x.cols());
    for (long c = 0; c < x.cols(); ++c)
      for (long r = 0; r < x.rows(); ++r)
        mask(r, c) = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    x = x.cwiseProduct(mask);
  }
  static void backward_dropout(nn::Matrix& dx, const nn::Matrix& mask) {
    if (mask.size() > 0) dx = dx.cwiseProduct(mask);
  }

  void run_decoder(const EncodeCache& enc, DecodeCache& c, Rng* dropout_rng) const {
    const long t = static_cast<long>(c.dec_in.size());
    if (t > cfg_.max_len) throw SequenceTooLong("decoder input longer than model.max_len");
    c.x0 = nn::Matrix::Zero(t, cfg_.d_model);
    const double scale = std::sqrt(static_cast<double>(cfg_.d_model));
    for (long i = 0; i < t; ++i) {
      check_id(c.dec_in[i]);
      c.x0.row(i) = embedding_.w.row(c.dec_in[i]) * scale + pos_.row(i);
    }
    apply_dropout(c.x0, dropout_rng, c.mask_drop);
    nn::Matrix x = c.x0;
    c.layers.resize(dec_layers_.size());
    for (size_t l = 0; l < dec_layers_.size(); ++l)
      x = dec_layers_[l].forward(x, enc.states, &enc.valid, c.layers[l]);
    c.states = dec_final_.forward(x, c.final_ln);
  }

  void backward_encoder(EncodeCache& enc, nn::Matrix& dstates,
                        const nn::RowVector* dpooled) {
    if (dpooled) {
      const double inv = 1.0 / static_cast<double>(enc.n_valid);
      for (long i = 0; i < dstates.rows(); ++i)
        if (enc.valid[i]) dstates.row(i) += *dpooled * inv;
    }
    nn::Matrix dx = enc_final_.backward(dstates, enc.final_ln);
    for (int l = static_cast<int>(enc_layers_.size()) - 1; l >= 0; --l)
      dx = enc_layers_[l].backward(dx, enc.layers[l]);
    backward_dropout(dx, enc.mask_drop);
    embed_backward(enc.ids, enc.valid, dx);
  }

  void embed_backward(const std::vector<int>& ids, const std::vector<char>& valid,
                      const nn::Matrix& dx0) {
    const double scale = std::sqrt(static_cast<double>(cfg_.d_model));
    for (long i = 0; i < dx0.rows(); ++i)
      if (valid[i]) embedding_.g.row(ids[i]) += dx0.row(i) * scale;
  }

  ModelConfig cfg_;
  TokenInfo info_;
  nn::Tensor embedding_;
  nn::Matrix pos_;
  std::vector<nn::EncoderLayer> enc_layers_;
  nn::LayerNorm enc_final_;
  std::vector<nn::DecoderLayer> dec_layers_;
  nn::LayerNorm dec_final_;
  nn::Projection fc_t_, fc_l_;
};

}  // namespace higen
