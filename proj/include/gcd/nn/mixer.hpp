#pragma once

#include "gcd/nn/activation.hpp"
#include "gcd/nn/tensor.hpp"

namespace gcd::nn {

// One complex-mixing layer: a complex linear map along the antenna axis, then
// one along the subcarrier axis, each followed by a split-complex activation.
// Square layers add a residual connection; the lifting layer (shape change)
// does not. A layer built as the stack's read-out keeps its internal
// activation but leaves the subcarrier map linear, so the output range is not
// floor-limited by the activation. Complex weights are stored as (real, imag)
// matrix pairs.
struct MixerLayer {
  int ti, ci, to, co;  // in/out antenna and subcarrier dims
  bool residual;
  bool linear_out;
  Activation act;
  Tensor war, wai, bar, bai;  // antenna map, to x ti (+ bias to)
  Tensor wcr, wci, bcr, bci;  // subcarrier map, co x ci (+ bias co)

  MixerLayer(int ti_, int ci_, int to_, int co_, Activation a,
             bool linear_out_ = false)
      : ti(ti_), ci(ci_), to(to_), co(co_), residual(ti_ == to_ && ci_ == co_),
        linear_out(linear_out_), act(a) {
    const double sa = 1.0 / std::sqrt(2.0 * ti);
    const double sc = 1.0 / std::sqrt(2.0 * ci);
    war.shape(to, ti, sa);
    wai.shape(to, ti, sa);
    bar.shape(to, 1, 0.0);
    bai.shape(to, 1, 0.0);
    wcr.shape(co, ci, sc);
    wci.shape(co, ci, sc);
    bcr.shape(co, 1, 0.0);
    bci.shape(co, 1, 0.0);
  }

  void visit(const TensorVisitor& f) {
    f(war);
    f(wai);
    f(bar);
    f(bai);
    f(wcr);
    f(wci);
    f(bcr);
    f(bci);
  }

  struct Ws {
    RMat xr, xi;          // input
    RMat apre_r, apre_i;  // antenna-map pre-activation
    RMat ar, ai;          // antenna-map activation
    RMat cpre_r, cpre_i;  // subcarrier-map pre-activation
  };

  void forward(Ws& w, const RMat& xr, const RMat& xi, RMat& outr,
               RMat& outi) const {
    w.xr = xr;
    w.xi = xi;
    w.apre_r = war.v * xr - wai.v * xi;
    w.apre_r.colwise() += bar.v.col(0);
    w.apre_i = war.v * xi + wai.v * xr;
    w.apre_i.colwise() += bai.v.col(0);
    w.ar = act_value(act, w.apre_r);
    w.ai = act_value(act, w.apre_i);
    w.cpre_r = w.ar * wcr.v.transpose() - w.ai * wci.v.transpose();
    w.cpre_r.rowwise() += bcr.v.col(0).transpose();
    w.cpre_i = w.ar * wci.v.transpose() + w.ai * wcr.v.transpose();
    w.cpre_i.rowwise() += bci.v.col(0).transpose();
    if (linear_out) {
      outr = w.cpre_r;
      outi = w.cpre_i;
    } else {
      outr = act_value(act, w.cpre_r);
      outi = act_value(act, w.cpre_i);
    }
    if (residual) {
      outr += xr;
      outi += xi;
    }
  }

  // Accumulates parameter gradients, returns input gradients.
  void backward(const Ws& w, const RMat& gor, const RMat& goi, RMat& gxr,
                RMat& gxi) {
    RMat gcpre_r =
        linear_out ? gor : gor.cwiseProduct(act_deriv(act, w.cpre_r));
    RMat gcpre_i =
        linear_out ? goi : goi.cwiseProduct(act_deriv(act, w.cpre_i));
    wcr.g.noalias() += gcpre_r.transpose() * w.ar + gcpre_i.transpose() * w.ai;
    wci.g.noalias() += -gcpre_r.transpose() * w.ai + gcpre_i.transpose() * w.ar;
    bcr.g.col(0) += gcpre_r.colwise().sum().transpose();
    bci.g.col(0) += gcpre_i.colwise().sum().transpose();
    RMat gar = gcpre_r * wcr.v + gcpre_i * wci.v;
    RMat gai = -gcpre_r * wci.v + gcpre_i * wcr.v;
    RMat gapre_r = gar.cwiseProduct(act_deriv(act, w.apre_r));
    RMat gapre_i = gai.cwiseProduct(act_deriv(act, w.apre_i));
    war.g.noalias() += gapre_r * w.xr.transpose() + gapre_i * w.xi.transpose();
    wai.g.noalias() += -gapre_r * w.xi.transpose() + gapre_i * w.xr.transpose();
    bar.g.col(0) += gapre_r.rowwise().sum();
    bai.g.col(0) += gapre_i.rowwise().sum();
    gxr.noalias() = war.v.transpose() * gapre_r + wai.v.transpose() * gapre_i;
    gxi.noalias() = -wai.v.transpose() * gapre_r + war.v.transpose() * gapre_i;
    if (residual) {
      gxr += gor;
      gxi += goi;
    }
  }
};

}  // namespace gcd::nn
