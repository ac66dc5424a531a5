#pragma once

#include <vector>

#include "gcd/nn/activation.hpp"
#include "gcd/nn/tensor.hpp"

namespace gcd::nn {

constexpr double kLayerNormEps = 1e-5;

// Per-feature affine layer norm over the hidden dimension, applied to each
// token column independently.
struct LayerNorm {
  Tensor gamma, beta;

  explicit LayerNorm(int h) {
    gamma.shape(h, 1, Tensor::kOneInit);
    beta.shape(h, 1, 0.0);
  }
  void visit(const TensorVisitor& f) {
    f(gamma);
    f(beta);
  }

  struct Ws {
    RMat xhat;       // normalized pre-affine values
    RVec inv_std;    // per column
  };

  RMat forward(Ws& w, const RMat& x) const {
    const Eigen::Index h = x.rows(), t = x.cols();
    w.xhat.resize(h, t);
    w.inv_std.resize(t);
    RMat out(h, t);
    for (Eigen::Index j = 0; j < t; ++j) {
      double mu = x.col(j).mean();
      double var = (x.col(j).array() - mu).square().mean();
      double is = 1.0 / std::sqrt(var + kLayerNormEps);
      w.inv_std(j) = is;
      w.xhat.col(j) = ((x.col(j).array() - mu) * is).matrix();
      out.col(j) =
          w.xhat.col(j).cwiseProduct(gamma.v.col(0)) + beta.v.col(0);
    }
    return out;
  }

  RMat backward(const Ws& w, const RMat& g) {
    const Eigen::Index h = g.rows(), t = g.cols();
    RMat gx(h, t);
    for (Eigen::Index j = 0; j < t; ++j) {
      RVec dy = g.col(j).cwiseProduct(gamma.v.col(0));
      double m1 = dy.mean();
      double m2 = dy.cwiseProduct(w.xhat.col(j)).mean();
      gx.col(j) =
          (w.inv_std(j) * (dy.array() - m1 - w.xhat.col(j).array() * m2))
              .matrix();
      gamma.g.col(0) += g.col(j).cwiseProduct(w.xhat.col(j));
      beta.g.col(0) += g.col(j);
    }
    return gx;
  }
};

// Pre-norm transformer encoder block: LN -> multi-head self-attention ->
// residual, LN -> position-wise feed-forward (2x expansion) -> residual.
// Tokens are columns.
struct EncoderLayer {
  int h, heads, dh;
  Activation act;
  LayerNorm ln1, ln2;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor w1, b1, w2, b2;

  EncoderLayer(int h_, int heads_, Activation a)
      : h(h_), heads(heads_), dh(h_ / heads_), act(a), ln1(h_), ln2(h_) {
    if (h % heads != 0) throw ConfigError("hidden width not divisible by heads");
    const double s = 1.0 / std::sqrt(static_cast<double>(h));
    wq.shape(h, h, s);
    bq.shape(h, 1, 0.0);
    wk.shape(h, h, s);
    bk.shape(h, 1, 0.0);
    wv.shape(h, h, s);
    bv.shape(h, 1, 0.0);
    wo.shape(h, h, s);
    bo.shape(h, 1, 0.0);
    w1.shape(2 * h, h, s);
    b1.shape(2 * h, 1, 0.0);
    w2.shape(h, 2 * h, 1.0 / std::sqrt(2.0 * h));
    b2.shape(h, 1, 0.0);
  }

  void visit(const TensorVisitor& f) {
    ln1.visit(f);
    f(wq);
    f(bq);
    f(wk);
    f(bk);
    f(wv);
    f(bv);
    f(wo);
    f(bo);
    ln2.visit(f);
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }

  struct Ws {
    LayerNorm::Ws ln1w, ln2w;
    RMat u;                    // ln1 output
    RMat q, k, v;              // projections
    std::vector<RMat> attn;    // per-head softmax weights, T x T
    RMat o;                    // concatenated head outputs
    RMat x1;                   // after attention residual
    RMat u2;                   // ln2 output
    RMat f1;                   // ffn pre-activation
    RMat fa;                   // ffn activation
  };

  RMat forward(Ws& w, const RMat& x) const {
    const Eigen::Index t = x.cols();
    w.u = ln1.forward(w.ln1w, x);
    w.q = wq.v * w.u;
    w.q.colwise() += bq.v.col(0);
    w.k = wk.v * w.u;
    w.k.colwise() += bk.v.col(0);
    w.v = wv.v * w.u;
    w.v.colwise() += bv.v.col(0);

    w.attn.assign(static_cast<std::size_t>(heads), RMat());
    w.o.resize(h, t);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int hd = 0; hd < heads; ++hd) {
      auto qh = w.q.middleRows(hd * dh, dh);
      auto kh = w.k.middleRows(hd * dh, dh);
      auto vh = w.v.middleRows(hd * dh, dh);
      RMat s = scale * (qh.transpose() * kh);  // T x T, row = query token
      RMat& a = w.attn[static_cast<std::size_t>(hd)];
      a.resize(t, t);
      for (Eigen::Index i = 0; i < t; ++i) {
        double mx = s.row(i).maxCoeff();
        RVec e = (s.row(i).transpose().array() - mx).exp().matrix();
        a.row(i) = e.transpose() / e.sum();
      }
      w.o.middleRows(hd * dh, dh) = vh * a.transpose();
    }
    RMat attnout = wo.v * w.o;
    attnout.colwise() += bo.v.col(0);
    w.x1 = x + attnout;

    w.u2 = ln2.forward(w.ln2w, w.x1);
    w.f1 = w1.v * w.u2;
    w.f1.colwise() += b1.v.col(0);
    w.fa = act_value(act, w.f1);
    RMat f2 = w2.v * w.fa;
    f2.colwise() += b2.v.col(0);
    return w.x1 + f2;
  }

  RMat backward(Ws& w, const RMat& gout) {
    // feed-forward branch
    w2.g.noalias() += gout * w.fa.transpose();
    b2.g.col(0) += gout.rowwise().sum();
    RMat gfa = w2.v.transpose() * gout;
    RMat gf1 = gfa.cwiseProduct(act_deriv(act, w.f1));
    w1.g.noalias() += gf1 * w.u2.transpose();
    b1.g.col(0) += gf1.rowwise().sum();
    RMat gu2 = w1.v.transpose() * gf1;
    RMat gx1 = gout + ln2.backward(w.ln2w, gu2);

    // attention branch
    wo.g.noalias() += gx1 * w.o.transpose();
    bo.g.col(0) += gx1.rowwise().sum();
    RMat go = wo.v.transpose() * gx1;

    const Eigen::Index t = gx1.cols();
    RMat gq(h, t), gk(h, t), gv(h, t);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int hd = 0; hd < heads; ++hd) {
      auto qh = w.q.middleRows(hd * dh, dh);
      auto kh = w.k.middleRows(hd * dh, dh);
      auto vh = w.v.middleRows(hd * dh, dh);
      auto goh = go.middleRows(hd * dh, dh);
      const RMat& a = w.attn[static_cast<std::size_t>(hd)];
      gv.middleRows(hd * dh, dh) = goh * a;
      RMat ga = goh.transpose() * vh;  // T x T
      RMat gs(t, t);
      for (Eigen::Index i = 0; i < t; ++i) {
        double dot = ga.row(i).dot(a.row(i));
        gs.row(i) = (a.row(i).array() * (ga.row(i).array() - dot)).matrix();
      }
      gq.middleRows(hd * dh, dh) = scale * (kh * gs.transpose());
      gk.middleRows(hd * dh, dh) = scale * (qh * gs);
    }
    wq.g.noalias() += gq * w.u.transpose();
    bq.g.col(0) += gq.rowwise().sum();
    wk.g.noalias() += gk * w.u.transpose();
    bk.g.col(0) += gk.rowwise().sum();
    wv.g.noalias() += gv * w.u.transpose();
    bv.g.col(0) += gv.rowwise().sum();
    RMat gu = wq.v.transpose() * gq + wk.v.transpose() * gk +
              wv.v.transpose() * gv;
    return gx1 + ln1.backward(w.ln1w, gu);
  }
};

}  // namespace gcd::nn
