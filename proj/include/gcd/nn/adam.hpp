#pragma once

#include <cmath>
#include <cstdint>

#include "gcd/nn/model.hpp"

namespace gcd::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over the model's fixed parameter traversal; moment buffers are stored
// flat so they serialize alongside the parameters.
class Adam {
public:
  Adam(Model& model, const AdamConfig& cfg) : cfg_(cfg) {
    std::int64_t n = model.param_count();
    m_ = RVec::Zero(n);
    v_ = RVec::Zero(n);
  }

  void step(Model& model, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::int64_t off = 0;
    model.visit([&](Tensor& p) {
      auto pm = Eigen::Map<RVec>(p.v.data(), p.size());
      auto pg = Eigen::Map<const RVec>(p.g.data(), p.size());
      auto mm = m_.segment(off, p.size());
      auto vm = v_.segment(off, p.size());
      mm = cfg_.beta1 * mm + (1.0 - cfg_.beta1) * pg;
      vm = cfg_.beta2 * vm.array().matrix() +
           (1.0 - cfg_.beta2) * pg.array().square().matrix();
      pm.array() -= lr * (mm.array() / bc1) /
                    ((vm.array() / bc2).sqrt() + cfg_.eps);
      off += p.size();
    });
  }

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  RVec& moment1() { return m_; }
  RVec& moment2() { return v_; }
  void restore(const RVec& m, const RVec& v, std::int64_t t) {
    if (m.size() != m_.size() || v.size() != v_.size())
      throw ConfigError("optimizer state size mismatch");
    m_ = m;
    v_ = v;
    t_ = t;
  }

private:
  AdamConfig cfg_;
  RVec m_, v_;
  std::int64_t t_ = 0;
};

inline RVec flatten_params(Model& model) {
  RVec out(model.param_count());
  std::int64_t off = 0;
  model.visit([&](Tensor& p) {
    out.segment(off, p.size()) = Eigen::Map<const RVec>(p.v.data(), p.size());
    off += p.size();
  });
  return out;
}

inline void unflatten_params(Model& model, const RVec& flat) {
  if (flat.size() != model.param_count())
    throw ConfigError("parameter vector size mismatch");
  std::int64_t off = 0;
  model.visit([&](Tensor& p) {
    Eigen::Map<RVec>(p.v.data(), p.size()) = flat.segment(off, p.size());
    off += p.size();
  });
}

}  // namespace gcd::nn
