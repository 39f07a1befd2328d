#pragma once

// The four training losses and their composite:
//   - language-modeling loss: token-level cross-entropy over the trace;
//   - output-space loss: hinge on parent/child probabilities per hierarchy
//     edge at label-node positions (distributional inclusion);
//   - token-constraint loss: probability mass leaking outside the hierarchy
//     vocabulary V^H, averaged over decoder positions;
//   - level-guided semantic loss: per-level margin between mean positive and
//     mean negative document/label-name pair distances in the joint space.
//
// Every loss returns its analytic gradient alongside the value; tests verify
// both against naive-loop oracles and central finite differences.

#include <cmath>
#include <string>
#include <vector>

#include "higen/errors.hpp"
#include "higen/model.hpp"
#include "higen/nn.hpp"

namespace higen {

struct LossWeights {
  double lambda1 = 1e-3;  // output-space
  double lambda2 = 1e-5;  // token-constraint
  double lambda3 = 1.0;   // semantic
  std::vector<double> alphas{0.05, 0.1};  // per-level margins

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
      throw Error("loss weights must be non-negative");
    for (size_t i = 0; i + 1 < alphas.size(); ++i)
      if (!(alphas[i] < alphas[i + 1]))
        throw Error("loss.alphas must be strictly increasing per level");
    for (double a : alphas)
      if (a < 0) throw Error("loss.alphas must be non-negative");
  }
};

// Per-level pair statistics behind the semantic loss.
struct PairStats {
  double gamma_pos = 0;  // mean positive-pair distance
  double gamma_neg = 0;  // mean negative-pair distance
  int n_pos = 0;
  int n_neg = 0;
};

struct TraceLoss {
  double value = 0;
  nn::Matrix dlogits;  // same shape as trace.logits
};

// Mean token-level cross-entropy; gradient is (softmax - onehot) / positions.
inline TraceLoss lm_loss(const DistributionTrace& trace) {
  const long k = trace.probs.rows();
  TraceLoss out;
  out.dlogits = trace.probs / static_cast<double>(k);
  for (long t = 0; t < k; ++t) {
    double p = std::max(trace.probs(t, trace.gold[t]), 1e-300);
    out.value -= std::log(p) / static_cast<double>(k);
    out.dlogits(t, trace.gold[t]) -= 1.0 / static_cast<double>(k);
  }
  return out;
}

// Hinge sum over label-node positions and hierarchy edges: max(0, pi_c - pi_p).
// Asymmetric by design; the subgradient at pi_c == pi_p is taken as 0.
inline TraceLoss output_space_loss(const DistributionTrace& trace,
                                   const std::vector<std::pair<int, int>>& edge_ids) {
  const long k = trace.probs.rows();
  TraceLoss out;
  nn::Matrix dprobs = nn::Matrix::Zero(k, trace.probs.cols());
  for (long t = 0; t < k; ++t) {
    if (!trace.node_flag[t]) continue;
    for (const auto& [p_id, c_id] : edge_ids) {
      double diff = trace.probs(t, c_id) - trace.probs(t, p_id);
      if (diff > 0) {
        out.value += diff;
        dprobs(t, c_id) += 1.0;
        dprobs(t, p_id) -= 1.0;
      }
    }
  }
  out.dlogits = nn::softmax_backward_rows(trace.probs, dprobs);
  return out;
}

// Mean over decoder positions of the probability mass on V^H' (the complement
// of the hierarchy vocabulary), so the value always lies in [0, 1].
inline TraceLoss token_constraint_loss(const DistributionTrace& trace,
                                       const std::vector<char>& in_allowed) {
  const long k = trace.probs.rows();
  const long v = trace.probs.cols();
  if (static_cast<long>(in_allowed.size()) != v)
    throw Error("allowed-vocabulary mask size does not match |V|");
  TraceLoss out;
  nn::Matrix dprobs = nn::Matrix::Zero(k, v);
  const double inv_k = 1.0 / static_cast<double>(k);
  for (long t = 0; t < k; ++t) {
    for (long l = 0; l < v; ++l) {
      if (!in_allowed[l]) {
        out.value += trace.probs(t, l) * inv_k;
        dprobs(t, l) = inv_k;
      }
    }
  }
  out.dlogits = nn::softmax_backward_rows(trace.probs, dprobs);
  return out;
}

struct SemanticResult {
  double value = 0;
  nn::Matrix d_text;                 // N x p
  std::vector<nn::Matrix> d_label;   // per level, N x p
  std::vector<PairStats> stats;      // per level
};

// Level-guided semantic loss over a batch of N documents. text_emb rows are
// the projected document embeddings; label_emb[k] rows are the projected
// level-(k+1) label-name embeddings of the same examples; level_class[i][k]
// identifies example i's class at level k+1. A pair (i, j) is positive when
// the two examples share the level's class. Levels without both positive and
// negative pairs contribute zero.
inline SemanticResult semantic_loss(const nn::Matrix& text_emb,
                                    const std::vector<nn::Matrix>& label_emb,
                                    const std::vector<std::vector<int>>& level_class,
                                    const std::vector<double>& alphas) {
  const long n = text_emb.rows();
  if (n < 2)
    throw BatchTooSmallForSemanticLoss(
        "semantic loss needs at least two examples per batch");
  const size_t levels = label_emb.size();
  if (alphas.size() < levels)
    throw Error("need one margin per hierarchy level");

  SemanticResult out;
  out.d_text = nn::Matrix::Zero(n, text_emb.cols());
  out.d_label.assign(levels, nn::Matrix::Zero(n, text_emb.cols()));
  out.stats.assign(levels, PairStats{});

  for (size_t k = 0; k < levels; ++k) {
    PairStats& st = out.stats[k];
    nn::Matrix dist(n, n);
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < n; ++j) {
        dist(i, j) = (text_emb.row(i) - label_emb[k].row(j)).norm();
        bool pos = level_class[i][k] == level_class[j][k];
        if (pos) {
          st.gamma_pos += dist(i, j);
          ++st.n_pos;
        } else {
          st.gamma_neg += dist(i, j);
          ++st.n_neg;
        }
      }
    }
    if (st.n_pos == 0 || st.n_neg == 0) continue;
    st.gamma_pos /= st.n_pos;
    st.gamma_neg /= st.n_neg;
    double hinge = st.gamma_pos - st.gamma_neg + alphas[k];
    if (hinge <= 0) continue;
    out.value += hinge;
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < n; ++j) {
        double d = dist(i, j);
        if (d < 1e-12) continue;  // coincident pair: subgradient 0
        bool pos = level_class[i][k] == level_class[j][k];
        double coeff = pos ? 1.0 / st.n_pos : -1.0 / st.n_neg;
        nn::RowVector dir = (text_emb.row(i) - label_emb[k].row(j)) / d;
        out.d_text.row(i) += coeff * dir;
        out.d_label[k].row(j) -= coeff * dir;
      }
    }
  }
  return out;
}

struct CompositeLoss {
  double total = 0;
  double lm = 0;
  double output_space = 0;
  double token_constraint = 0;
  double semantic = 0;
};

inline CompositeLoss composite(double lm, double output_space,
                               double token_constraint, double semantic,
                               const LossWeights& w) {
  CompositeLoss c;
  c.lm = lm;
  c.output_space = output_space;
  c.token_constraint = token_constraint;
  c.semantic = semantic;
  c.total = lm + w.lambda1 * output_space + w.lambda2 * token_constraint +
            w.lambda3 * semantic;
  return c;
}

}  // namespace higen
