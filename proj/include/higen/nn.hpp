#pragma once

// Dense building blocks for the sequence model: parameters with gradient
// buffers, linear / layer-norm / multi-head-attention / feed-forward layers,
// each with an explicit backward pass. Everything runs in double precision on
// Eigen matrices whose rows are sequence positions.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "higen/errors.hpp"
#include "higen/rng.hpp"

namespace higen::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Tensor {
  std::string name;
  Matrix w;
  Matrix g;

  void init(const std::string& n, int rows, int cols) {
    name = n;
    w = Matrix::Zero(rows, cols);
    g = Matrix::Zero(rows, cols);
  }
  void zero_grad() { g.setZero(); }
  long size() const { return w.size(); }
};

inline void init_normal(Tensor& t, Rng& rng, double stddev = 0.02) {
  for (long c = 0; c < t.w.cols(); ++c)
    for (long r = 0; r < t.w.rows(); ++r) t.w(r, c) = rng.normal(0.0, stddev);
}

// ---------------------------------------------------------------------------

inline double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  double u = c * (x + 0.044715 * x * x * x);
  double t = std::tanh(u);
  double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

inline Matrix gelu_mat(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& z) {
  Matrix p = z;
  for (long r = 0; r < p.rows(); ++r) {
    double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// d(loss)/d(logits) given softmax output p and d(loss)/d(p).
inline Matrix softmax_backward_rows(const Matrix& p, const Matrix& dp) {
  Matrix dz(p.rows(), p.cols());
  for (long r = 0; r < p.rows(); ++r) {
    double dot = p.row(r).dot(dp.row(r));
    dz.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
  }
  return dz;
}

// ---------------------------------------------------------------------------

struct Linear {
  Tensor W;  // in x out
  Tensor b;  // 1 x out

  void init(const std::string& name, int in, int out, Rng& rng) {
    W.init(name + ".W", in, out);
    b.init(name + ".b", 1, out);
    init_normal(W, rng);
  }
  Matrix forward(const Matrix& x) const {
    return (x * W.w).rowwise() + b.w.row(0);
  }
  // Accumulates parameter gradients and returns d(loss)/dx.
  Matrix backward(const Matrix& x, const Matrix& dy) {
    W.g.noalias() += x.transpose() * dy;
    b.g.row(0) += dy.colwise().sum();
    return dy * W.w.transpose();
  }
  void collect(std::vector<Tensor*>& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
};

struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Tensor gamma, beta;  // 1 x d

  struct Cache {
    Matrix xhat;
    Eigen::VectorXd inv_std;
  };

  void init(const std::string& name, int d) {
    gamma.init(name + ".gamma", 1, d);
    beta.init(name + ".beta", 1, d);
    gamma.w.setOnes();
  }
  Matrix forward(const Matrix& x, Cache& c) const {
    const long d = x.cols();
    c.xhat.resize(x.rows(), d);
    c.inv_std.resize(x.rows());
    Matrix y(x.rows(), d);
    for (long r = 0; r < x.rows(); ++r) {
      double mu = x.row(r).mean();
      double var = (x.row(r).array() - mu).square().mean();
      double inv = 1.0 / std::sqrt(var + kEps);
      c.inv_std(r) = inv;
      c.xhat.row(r) = (x.row(r).array() - mu) * inv;
      y.row(r) = c.xhat.row(r).cwiseProduct(gamma.w.row(0)) + beta.w.row(0);
    }
    return y;
  }
  Matrix backward(const Matrix& dy, const Cache& c) {
    const long d = dy.cols();
    Matrix dx(dy.rows(), d);
    for (long r = 0; r < dy.rows(); ++r) {
      RowVector dxhat = dy.row(r).cwiseProduct(gamma.w.row(0));
      double m1 = dxhat.mean();
      double m2 = dxhat.cwiseProduct(c.xhat.row(r)).mean();
      dx.row(r) =
          c.inv_std(r) * (dxhat.array() - m1 - c.xhat.row(r).array() * m2);
      gamma.g.row(0) += dy.row(r).cwiseProduct(c.xhat.row(r));
      beta.g.row(0) += dy.row(r);
    }
    return dx;
  }
  void collect(std::vector<Tensor*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Multi-head scaled dot-product attention. `causal` restricts queries to keys
// at the same or earlier positions; `key_valid`, when given, masks out padded
// key positions entirely.
struct Attention {
  Linear wq, wk, wv, wo;
  int n_heads = 1;
  int d_head = 0;

  struct Cache {
    Matrix xq, xkv;              // inputs
    Matrix q, k, v;              // after projections
    std::vector<Matrix> probs;   // per head, Tq x Tk
    Matrix concat;               // pre-output-projection
  };

  void init(const std::string& name, int d, int heads, Rng& rng) {
    n_heads = heads;
    d_head = d / heads;
    wq.init(name + ".wq", d, d, rng);
    wk.init(name + ".wk", d, d, rng);
    wv.init(name + ".wv", d, d, rng);
    wo.init(name + ".wo", d, d, rng);
  }

  Matrix forward(const Matrix& xq, const Matrix& xkv, bool causal,
                 const std::vector<char>* key_valid, Cache& c) const {
    c.xq = xq;
    c.xkv = xkv;
    c.q = wq.forward(xq);
    c.k = wk.forward(xkv);
    c.v = wv.forward(xkv);
    const long tq = xq.rows(), tk = xkv.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
    c.probs.assign(n_heads, Matrix());
    c.concat.resize(tq, n_heads * d_head);
    for (int h = 0; h < n_heads; ++h) {
      auto qh = c.q.middleCols(h * d_head, d_head);
      auto kh = c.k.middleCols(h * d_head, d_head);
      auto vh = c.v.middleCols(h * d_head, d_head);
      Matrix scores = qh * kh.transpose() * scale;
      for (long i = 0; i < tq; ++i) {
        for (long j = 0; j < tk; ++j) {
          bool blocked = (causal && j > i) || (key_valid && !(*key_valid)[j]);
          if (blocked) scores(i, j) = -1e30;
        }
      }
      c.probs[h] = softmax_rows(scores);
      c.concat.middleCols(h * d_head, d_head).noalias() = c.probs[h] * vh;
    }
    return wo.forward(c.concat);
  }

  // Accumulates parameter gradients; adds input gradients into dxq / dxkv
  // (which may alias for self-attention — contributions are kept separate and
  // summed by the caller in that case).
  void backward(const Matrix& dy, const Cache& c, Matrix& dxq, Matrix& dxkv) {
    Matrix dconcat = wo.backward(c.concat, dy);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
    Matrix dq = Matrix::Zero(c.q.rows(), c.q.cols());
    Matrix dk = Matrix::Zero(c.k.rows(), c.k.cols());
    Matrix dv = Matrix::Zero(c.v.rows(), c.v.cols());
    for (int h = 0; h < n_heads; ++h) {
      auto qh = c.q.middleCols(h * d_head, d_head);
      auto kh = c.k.middleCols(h * d_head, d_head);
      auto vh = c.v.middleCols(h * d_head, d_head);
      Matrix dout = dconcat.middleCols(h * d_head, d_head);
      Matrix dp = dout * vh.transpose();
      dv.middleCols(h * d_head, d_head).noalias() = c.probs[h].transpose() * dout;
      Matrix ds = softmax_backward_rows(c.probs[h], dp);
      dq.middleCols(h * d_head, d_head).noalias() = ds * kh * scale;
      dk.middleCols(h * d_head, d_head).noalias() = ds.transpose() * qh * scale;
    }
    dxq += wq.backward(c.xq, dq);
    dxkv += wk.backward(c.xkv, dk);
    dxkv += wv.backward(c.xkv, dv);
  }

  void collect(std::vector<Tensor*>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }
};

struct FeedForward {
  Linear w1, w2;

  struct Cache {
    Matrix x, pre, act;
  };

  void init(const std::string& name, int d, int d_ffn, Rng& rng) {
    w1.init(name + ".w1", d, d_ffn, rng);
    w2.init(name + ".w2", d_ffn, d, rng);
  }
  Matrix forward(const Matrix& x, Cache& c) const {
    c.x = x;
    c.pre = w1.forward(x);
    c.act = gelu_mat(c.pre);
    return w2.forward(c.act);
  }
  Matrix backward(const Matrix& dy, const Cache& c) {
    Matrix dact = w2.backward(c.act, dy);
    Matrix dpre =
        dact.cwiseProduct(c.pre.unaryExpr([](double v) { return gelu_grad(v); }));
    return w1.backward(c.x, dpre);
  }
  void collect(std::vector<Tensor*>& out) {
    w1.collect(out);
    w2.collect(out);
  }
};

// Pre-norm encoder block: x += Att(LN1(x)); x += FFN(LN2(x)).
struct EncoderLayer {
  LayerNorm ln1, ln2;
  Attention att;
  FeedForward ffn;

  struct Cache {
    LayerNorm::Cache ln1, ln2;
    Attention::Cache att;
    FeedForward::Cache ffn;
    Matrix x_in, x_mid;
  };

  void init(const std::string& name, int d, int heads, int d_ffn, Rng& rng) {
    ln1.init(name + ".ln1", d);
    att.init(name + ".att", d, heads, rng);
    ln2.init(name + ".ln2", d);
    ffn.init(name + ".ffn", d, d_ffn, rng);
  }
  Matrix forward(const Matrix& x, const std::vector<char>* key_valid, Cache& c) const {
    c.x_in = x;
    Matrix a = ln1.forward(x, c.ln1);
    Matrix x1 = x + att.forward(a, a, /*causal=*/false, key_valid, c.att);
    c.x_mid = x1;
    Matrix b = ln2.forward(x1, c.ln2);
    return x1 + ffn.forward(b, c.ffn);
  }
  Matrix backward(const Matrix& dy, Cache& c) {
    Matrix db = ffn.backward(dy, c.ffn);
    Matrix dx1 = dy + ln2.backward(db, c.ln2);
    Matrix da = Matrix::Zero(dx1.rows(), dx1.cols());
    Matrix da_kv = Matrix::Zero(dx1.rows(), dx1.cols());
    att.backward(dx1, c.att, da, da_kv);
    da += da_kv;
    return dx1 + ln1.backward(da, c.ln1);
  }
  void collect(std::vector<Tensor*>& out) {
    ln1.collect(out);
    att.collect(out);
    ln2.collect(out);
    ffn.collect(out);
  }
};

// Pre-norm decoder block: causal self-attention, cross-attention over the
// encoder states, then the feed-forward.
struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  Attention self_att, cross_att;
  FeedForward ffn;

  struct Cache {
    LayerNorm::Cache ln1, ln2, ln3;
    Attention::Cache self_att, cross_att;
    FeedForward::Cache ffn;
    Matrix x_in, x_mid1, x_mid2;
  };

  void init(const std::string& name, int d, int heads, int d_ffn, Rng& rng) {
    ln1.init(name + ".ln1", d);
    self_att.init(name + ".self", d, heads, rng);
    ln2.init(name + ".ln2", d);
    cross_att.init(name + ".cross", d, heads, rng);
    ln3.init(name + ".ln3", d);
    ffn.init(name + ".ffn", d, d_ffn, rng);
  }
  Matrix forward(const Matrix& x, const Matrix& enc,
                 const std::vector<char>* enc_valid, Cache& c) const {
    c.x_in = x;
    Matrix a = ln1.forward(x, c.ln1);
    Matrix x1 = x + self_att.forward(a, a, /*causal=*/true, nullptr, c.self_att);
    c.x_mid1 = x1;
    Matrix b = ln2.forward(x1, c.ln2);
    Matrix x2 = x1 + cross_att.forward(b, enc, /*causal=*/false, enc_valid, c.cross_att);
    c.x_mid2 = x2;
    Matrix d = ln3.forward(x2, c.ln3);
    return x2 + ffn.forward(d, c.ffn);
  }
  // denc accumulates the gradient flowing into the encoder states.
  Matrix backward(const Matrix& dy, Cache& c, Matrix& denc) {
    Matrix dd = ffn.backward(dy, c.ffn);
    Matrix dx2 = dy + ln3.backward(dd, c.ln3);
    Matrix db = Matrix::Zero(dx2.rows(), dx2.cols());
    cross_att.backward(dx2, c.cross_att, db, denc);
    Matrix dx1 = dx2 + ln2.backward(db, c.ln2);
    Matrix da = Matrix::Zero(dx1.rows(), dx1.cols());
    Matrix da_kv = Matrix::Zero(dx1.rows(), dx1.cols());
    self_att.backward(dx1, c.self_att, da, da_kv);
    da += da_kv;
    return dx1 + ln1.backward(da, c.ln1);
  }
  void collect(std::vector<Tensor*>& out) {
    ln1.collect(out);
    self_att.collect(out);
    ln2.collect(out);
    cross_att.collect(out);
    ln3.collect(out);
    ffn.collect(out);
  }
};

// One-hidden-layer projection head followed by L2 normalization; maps pooled
// encoder states into the joint text/label embedding space.
struct Projection {
  Linear l1, l2;

  struct Cache {
    Matrix in, pre, hid, u;  // 1 x *
    double inv_norm = 0;
  };

  void init(const std::string& name, int d_in, int d_out, Rng& rng) {
    l1.init(name + ".l1", d_in, d_out, rng);
    l2.init(name + ".l2", d_out, d_out, rng);
    // Non-zero biases keep the head well-defined on an all-zero input.
    init_normal(l1.b, rng);
    init_normal(l2.b, rng);
  }
  RowVector forward(const RowVector& x, Cache& c) const {
    c.in = x;
    c.pre = l1.forward(c.in);
    c.hid = gelu_mat(c.pre);
    c.u = l2.forward(c.hid);
    double n = c.u.row(0).norm();
    c.inv_norm = 1.0 / std::max(n, 1e-12);
    return c.u.row(0) * c.inv_norm;
  }
  // dy is the gradient w.r.t. the normalized output.
  RowVector backward(const RowVector& dy, const Cache& c) {
    RowVector y = c.u.row(0) * c.inv_norm;
    RowVector du = (dy - y * y.dot(dy)) * c.inv_norm;
    Matrix dhid = l2.backward(c.hid, du);
    Matrix dpre =
        dhid.cwiseProduct(c.pre.unaryExpr([](double v) { return gelu_grad(v); }));
    Matrix dx = l1.backward(c.in, dpre);
    return dx.row(0);
  }
  void collect(std::vector<Tensor*>& out) {
    l1.collect(out);
    l2.collect(out);
  }
};

}  // namespace higen::nn
