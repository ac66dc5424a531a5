#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gcd/alignment.hpp"
#include "gcd/nn/encoder.hpp"
#include "gcd/nn/mixer.hpp"

namespace gcd::nn {

enum class ModelKind { deduction, pilot_mixer };

struct ModelConfig {
  ModelKind kind = ModelKind::deduction;
  int k_mixer = 3;        // front/back mixer depth
  int l_encoder = 6;      // encoder depth
  int hidden = 0;         // encoder width; 0 => n_t * n_c / 2
  int heads = 4;
  int n_t = 0, n_c = 0;   // full channel shape
  int n_t0 = 0, n_c0 = 0; // partial channel shape
  int n_max = 16;         // largest pseudo-token count seen in training
  int baseline_layers = 8;
  Activation act = Activation::gelu;
  std::uint64_t seed = 0;

  int hidden_or_default() const {
    return hidden > 0 ? hidden : n_t * n_c / 2;
  }
  void validate() const {
    if (n_t <= 0 || n_c <= 0 || n_t0 <= 0 || n_c0 <= 0)
      throw ConfigError("model shapes must be positive");
    if (n_t0 > n_t || n_c0 > n_c)
      throw ConfigError("partial shape exceeds the full channel shape");
    if (k_mixer < 1) throw ConfigError("mixer depth must be >= 1");
    if (kind == ModelKind::deduction) {
      if (l_encoder < 1) throw ConfigError("encoder depth must be >= 1");
      if (hidden_or_default() % heads != 0)
        throw ConfigError("hidden width must divide into heads");
      if (n_max < 0) throw ConfigError("n_max must be >= 0");
    }
    if (kind == ModelKind::pilot_mixer && baseline_layers < 1)
      throw ConfigError("baseline depth must be >= 1");
  }
};

// The deduction network: front mixer lifts the partial channel to full shape,
// the encoder fuses it with pseudo-channel tokens (type-tagged, unordered),
// and the back mixer refines the read-out token into the channel estimate.
// The pilot-only variant is the plain mixer stack with no encoder.
class Model {
public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int h = cfg.hidden_or_default();
    const int flat = 2 * cfg.n_t * cfg.n_c;

    if (cfg.kind == ModelKind::pilot_mixer) {
      front_.emplace_back(cfg.n_t0, cfg.n_c0, cfg.n_t, cfg.n_c, cfg.act,
                          cfg.baseline_layers == 1);
      for (int i = 1; i < cfg.baseline_layers; ++i)
        front_.emplace_back(cfg.n_t, cfg.n_c, cfg.n_t, cfg.n_c, cfg.act,
                            i == cfg.baseline_layers - 1);
    } else {
      front_.emplace_back(cfg.n_t0, cfg.n_c0, cfg.n_t, cfg.n_c, cfg.act);
      for (int i = 1; i < cfg.k_mixer; ++i)
        front_.emplace_back(cfg.n_t, cfg.n_c, cfg.n_t, cfg.n_c, cfg.act);

      tok_proj_.shape(h, flat, 1.0 / std::sqrt(static_cast<double>(flat)));
      tok_bias_.shape(h, 1, 0.0);
      type_partial_.shape(h, 1, 0.02);
      type_pseudo_.shape(h, 1, 0.02);
      for (int i = 0; i < cfg.l_encoder; ++i)
        enc_.emplace_back(h, cfg.heads, cfg.act);
      final_ln_ = std::make_unique<LayerNorm>(h);
      out_proj_.shape(flat, h, 1.0 / std::sqrt(static_cast<double>(h)));
      out_bias_.shape(flat, 1, 0.0);
      for (int i = 0; i < cfg.k_mixer; ++i)
        back_.emplace_back(cfg.n_t, cfg.n_c, cfg.n_t, cfg.n_c, cfg.act,
                           i == cfg.k_mixer - 1);
    }
    init_params();
  }

  const ModelConfig& config() const { return cfg_; }

  // Fixed traversal order: front mixer, tokenizer, encoder, final norm,
  // output head, back mixer. Everything that walks parameters uses this.
  void visit(const TensorVisitor& f) {
    for (auto& m : front_) m.visit(f);
    if (cfg_.kind == ModelKind::pilot_mixer) return;
    f(tok_proj_);
    f(tok_bias_);
    f(type_partial_);
    f(type_pseudo_);
    for (auto& e : enc_) e.visit(f);
    final_ln_->visit(f);
    f(out_proj_);
    f(out_bias_);
    for (auto& m : back_) m.visit(f);
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    visit([&](Tensor& t) { n += t.size(); });
    return n;
  }

  void zero_grad() {
    visit([](Tensor& t) { t.g.setZero(); });
  }

  // Per-sample forward workspace; reusable across calls.
  struct Ws {
    std::vector<MixerLayer::Ws> front, back;
    std::vector<RMat> mix_r, mix_i;  // mixer stage outputs (front then back)
    RMat lifted_r, lifted_i;
    std::vector<RMat> token_in_r, token_in_i;  // per-token source matrices
    RMat tokens;                                // h x T after projection
    std::vector<EncoderLayer::Ws> enc;
    std::vector<RMat> enc_x;  // encoder inputs per layer
    LayerNorm::Ws final_ln;
    RVec read;  // final-norm output of the read-out token
  };

  CMat forward(Ws& w, const PartialChannel& partial,
               const std::vector<PseudoChannel>& pseudos) const {
    check_shapes(partial, pseudos);
    RMat xr = partial.entries.real(), xi = partial.entries.imag();

    w.front.resize(front_.size());
    RMat cr, ci;
    for (std::size_t i = 0; i < front_.size(); ++i) {
      front_[i].forward(w.front[i], xr, xi, cr, ci);
      xr.swap(cr);
      xi.swap(ci);
    }
    if (cfg_.kind == ModelKind::pilot_mixer) return to_complex(xr, xi);
    w.lifted_r = xr;
    w.lifted_i = xi;

    const int h = cfg_.hidden_or_default();
    const int t_count = 1 + static_cast<int>(pseudos.size());
    const int flat = 2 * cfg_.n_t * cfg_.n_c;
    w.token_in_r.assign(static_cast<std::size_t>(t_count), RMat());
    w.token_in_i.assign(static_cast<std::size_t>(t_count), RMat());
    w.tokens.resize(h, t_count);
    for (int t = 0; t < t_count; ++t) {
      if (t > 0) {
        const auto& p = pseudos[static_cast<std::size_t>(t - 1)];
        w.token_in_r[static_cast<std::size_t>(t)] = p.entries.real();
        w.token_in_i[static_cast<std::size_t>(t)] = p.entries.imag();
      }
      const RMat& mr =
          t == 0 ? w.lifted_r : w.token_in_r[static_cast<std::size_t>(t)];
      const RMat& mi =
          t == 0 ? w.lifted_i : w.token_in_i[static_cast<std::size_t>(t)];
      RVec flatv(flat);
      flatv.head(flat / 2) = Eigen::Map<const RVec>(mr.data(), mr.size());
      flatv.tail(flat / 2) = Eigen::Map<const RVec>(mi.data(), mi.size());
      w.tokens.col(t) = tok_proj_.v * flatv + tok_bias_.v.col(0) +
                        (t == 0 ? type_partial_.v.col(0)
                                : type_pseudo_.v.col(0));
    }

    w.enc.resize(enc_.size());
    w.enc_x.assign(enc_.size(), RMat());
    RMat x = w.tokens;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      w.enc_x[i] = x;
      x = enc_[i].forward(w.enc[i], x);
    }

    RMat read_col = final_ln_->forward(w.final_ln, x.col(0));
    w.read = read_col.col(0);
    RVec flat_out = out_proj_.v * w.read + out_bias_.v.col(0);
    RMat br(cfg_.n_t, cfg_.n_c), bi(cfg_.n_t, cfg_.n_c);
    Eigen::Map<RVec>(br.data(), br.size()) = flat_out.head(flat / 2);
    Eigen::Map<RVec>(bi.data(), bi.size()) = flat_out.tail(flat / 2);

    w.back.resize(back_.size());
    w.mix_r.assign(back_.size(), RMat());
    w.mix_i.assign(back_.size(), RMat());
    for (std::size_t i = 0; i < back_.size(); ++i) {
      back_[i].forward(w.back[i], br, bi, cr, ci);
      br.swap(cr);
      bi.swap(ci);
    }
    return to_complex(br, bi);
  }

  // Reverse pass for d(loss)/d(output); accumulates into tensor .g fields.
  void backward(Ws& w, const CMat& gout) {
    RMat gr = gout.real(), gi = gout.imag();
    RMat pr, pi;
    if (cfg_.kind == ModelKind::pilot_mixer) {
      for (std::size_t i = front_.size(); i-- > 0;) {
        front_[i].backward(w.front[i], gr, gi, pr, pi);
        gr.swap(pr);
        gi.swap(pi);
      }
      return;
    }

    for (std::size_t i = back_.size(); i-- > 0;) {
      back_[i].backward(w.back[i], gr, gi, pr, pi);
      gr.swap(pr);
      gi.swap(pi);
    }
    const int flat = 2 * cfg_.n_t * cfg_.n_c;
    RVec gflat(flat);
    gflat.head(flat / 2) = Eigen::Map<RVec>(gr.data(), gr.size());
    gflat.tail(flat / 2) = Eigen::Map<RVec>(gi.data(), gi.size());
    out_proj_.g.noalias() += gflat * w.read.transpose();
    out_bias_.g.col(0) += gflat;
    RMat gread = out_proj_.v.transpose() * gflat;
    RMat gx0 = final_ln_->backward(w.final_ln, gread);

    RMat gx = RMat::Zero(w.tokens.rows(), w.tokens.cols());
    gx.col(0) = gx0.col(0);
    for (std::size_t i = enc_.size(); i-- > 0;) gx = enc_[i].backward(w.enc[i], gx);

    // tokenizer backward; only the partial-token path continues upstream
    RMat glift_r = RMat::Zero(cfg_.n_t, cfg_.n_c);
    RMat glift_i = RMat::Zero(cfg_.n_t, cfg_.n_c);
    for (Eigen::Index t = 0; t < gx.cols(); ++t) {
      RVec gtok = gx.col(t);
      const RMat& mr = t == 0 ? w.lifted_r
                              : w.token_in_r[static_cast<std::size_t>(t)];
      const RMat& mi = t == 0 ? w.lifted_i
                              : w.token_in_i[static_cast<std::size_t>(t)];
      RVec flatv(flat);
      flatv.head(flat / 2) = Eigen::Map<const RVec>(mr.data(), mr.size());
      flatv.tail(flat / 2) = Eigen::Map<const RVec>(mi.data(), mi.size());
      tok_proj_.g.noalias() += gtok * flatv.transpose();
      tok_bias_.g.col(0) += gtok;
      if (t == 0)
        type_partial_.g.col(0) += gtok;
      else
        type_pseudo_.g.col(0) += gtok;
      if (t == 0) {
        RVec gflatv = tok_proj_.v.transpose() * gtok;
        glift_r += Eigen::Map<RMat>(gflatv.data(), cfg_.n_t, cfg_.n_c);
        glift_i += Eigen::Map<RMat>(gflatv.data() + flat / 2, cfg_.n_t,
                                    cfg_.n_c);
      }
    }

    gr = glift_r;
    gi = glift_i;
    for (std::size_t i = front_.size(); i-- > 0;) {
      front_[i].backward(w.front[i], gr, gi, pr, pi);
      gr.swap(pr);
      gi.swap(pi);
    }
  }

private:
  static CMat to_complex(const RMat& r, const RMat& i) {
    CMat out(r.rows(), r.cols());
    out.real() = r;
    out.imag() = i;
    return out;
  }

  void check_shapes(const PartialChannel& partial,
                    const std::vector<PseudoChannel>& pseudos) const {
    if (partial.entries.rows() != cfg_.n_t0 ||
        partial.entries.cols() != cfg_.n_c0)
      throw ConfigError("partial channel shape mismatch");
    if (cfg_.kind == ModelKind::pilot_mixer) {
      if (!pseudos.empty())
        throw ConfigError("pilot-only model accepts no pseudo channels");
      return;
    }
    if (static_cast<int>(pseudos.size()) > cfg_.n_max)
      throw ConfigError("more pseudo channels than the trained maximum");
    for (const auto& p : pseudos)
      if (p.entries.rows() != cfg_.n_t || p.entries.cols() != cfg_.n_c)
        throw ConfigError("pseudo channel shape mismatch");
  }

  void init_params() {
    Rng rng(mix64(cfg_.seed, 0x12177));
    visit([&](Tensor& t) { init_tensor(t, rng); });
  }

  ModelConfig cfg_;
  std::vector<MixerLayer> front_, back_;
  Tensor tok_proj_, tok_bias_, type_partial_, type_pseudo_;
  std::vector<EncoderLayer> enc_;
  std::unique_ptr<LayerNorm> final_ln_;
  Tensor out_proj_, out_bias_;
};

// Training objective: mean squared entry error over the full channel shape.
inline double loss_mse(const CMat& truth, const CMat& out) {
  if (truth.rows() != out.rows() || truth.cols() != out.cols())
    throw ConfigError("loss shapes differ");
  return (truth - out).squaredNorm() /
         static_cast<double>(truth.rows() * truth.cols());
}

inline CMat loss_mse_grad(const CMat& truth, const CMat& out) {
  return (2.0 / static_cast<double>(truth.rows() * truth.cols())) *
         (out - truth);
}

}  // namespace gcd::nn
