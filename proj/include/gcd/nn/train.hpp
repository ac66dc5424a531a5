#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <thread>
#include <vector>

#include "gcd/nn/adam.hpp"
#include "gcd/nn/checkpoint.hpp"

namespace gcd::nn {

struct TrainConfig {
  int epochs = 150;
  int batch_size = 64;
  double lr_initial = 1e-3;
  double lr_decay_factor = 0.8;
  int lr_decay_every = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int n_max = 16;        // pseudo-token count drawn uniformly in 0..n_max
  double sigma_z = 0.5;  // placeholder std for pseudo-channel synthesis
  int threads = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (lr_initial < 0) throw ConfigError("learning rate must be >= 0");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1)
      throw ConfigError("lr decay factor must be in (0, 1]");
    if (lr_decay_every < 1) throw ConfigError("lr decay period must be >= 1");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ConfigError("Adam betas must be in [0, 1)");
    if (eps <= 0) throw ConfigError("Adam eps must be positive");
    if (n_max < 0) throw ConfigError("n_max must be >= 0");
    if (sigma_z <= 0) throw ConfigError("sigma_z must be positive");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

// One supervised sample: ground-truth channel, the pilot-observed partial
// channel, and the feature lists of the sample's nearest grid points
// (nearest first). Pseudo channels are re-synthesized from these every epoch.
struct TrainSample {
  ChannelMatrix h_full;
  PartialChannel h_partial;
  std::vector<std::vector<CompactPath>> neighbor_features;
  std::vector<int> neighbor_indices;  // grid indices, metadata only
};

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
  double wall_seconds = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> history;
};

namespace detail {

inline constexpr std::uint64_t kTagShuffle = 0x7ea58;
inline constexpr std::uint64_t kTagCount = 0xc0547;
inline constexpr std::uint64_t kTagPlaceholder = 0x91ace;
inline constexpr std::uint64_t kTagValidation = 0x7a11d;

// Builds the normalized (partial, pseudos, truth) bundle for one draw.
// `epoch < 0` selects the fixed validation protocol: n is always n_max and
// placeholder seeds do not vary across epochs.
struct DrawnBundle {
  PartialChannel partial;
  std::vector<PseudoChannel> pseudos;
  ChannelMatrix truth;
};

inline DrawnBundle make_draw(const TrainSample& s, const SystemConfig& sys,
                             const TrainConfig& tc, bool use_pseudos,
                             int epoch, std::size_t sample_index) {
  DrawnBundle b;
  b.partial = s.h_partial;
  b.truth = s.h_full;
  if (use_pseudos) {
    const auto e = static_cast<std::uint64_t>(epoch);
    const auto i = static_cast<std::uint64_t>(sample_index);
    std::size_t n;
    if (epoch < 0) {
      n = static_cast<std::size_t>(tc.n_max);
    } else {
      Rng count_rng(mix64(tc.seed, kTagCount, e, i));
      n = count_rng.uniform_index(static_cast<std::uint64_t>(tc.n_max) + 1);
    }
    n = std::min(n, s.neighbor_features.size());
    const std::uint64_t base = epoch < 0 ? mix64(tc.seed, kTagValidation)
                                         : mix64(tc.seed, kTagPlaceholder, e);
    b.pseudos.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      int src = j < s.neighbor_indices.size() ? s.neighbor_indices[j] : -1;
      b.pseudos.push_back(build_pseudo_channel(
          s.neighbor_features[j], sys, tc.sigma_z, mix64(base, i, j), src));
    }
  }
  normalize_bundle(&b.truth, b.partial, b.pseudos);
  return b;
}

inline RVec grad_flat(Model& model) {
  RVec out(model.param_count());
  std::int64_t off = 0;
  model.visit([&](Tensor& p) {
    out.segment(off, p.size()) = Eigen::Map<const RVec>(p.g.data(), p.size());
    off += p.size();
  });
  return out;
}

inline void set_grad_flat(Model& model, const RVec& flat) {
  std::int64_t off = 0;
  model.visit([&](Tensor& p) {
    Eigen::Map<RVec>(p.g.data(), p.size()) = flat.segment(off, p.size());
    off += p.size();
  });
}

}  // namespace detail

inline double evaluate_mean_loss(Model& model, const SystemConfig& sys,
                                 const std::vector<TrainSample>& set,
                                 const TrainConfig& tc) {
  const bool use_pseudos = model.config().kind == ModelKind::deduction;
  Model::Ws ws;
  double sum = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto b = detail::make_draw(set[i], sys, tc, use_pseudos, -1, i);
    CMat out = model.forward(ws, b.partial, b.pseudos);
    sum += loss_mse(b.truth, out);
  }
  return sum / static_cast<double>(set.size());
}

// Adam training with per-epoch reshuffling, fresh per-draw pseudo-channel
// placeholders, a fixed validation protocol, and best-validation selection.
// Deterministic for a fixed (seed, threads) pair; gradients are reduced in a
// fixed worker order, never in completion order.
inline TrainResult train(Model& model, const SystemConfig& sys,
                         const std::vector<TrainSample>& train_set,
                         const std::vector<TrainSample>& val_set,
                         const TrainConfig& tc) {
  tc.validate();
  sys.validate();
  if (train_set.empty() || val_set.empty())
    throw ConfigError("training and validation sets must be nonempty");
  const bool use_pseudos = model.config().kind == ModelKind::deduction;

  Adam adam(model, AdamConfig{tc.lr_initial, tc.beta1, tc.beta2, tc.eps});
  const int n_workers = tc.threads;
  std::vector<std::unique_ptr<Model>> replicas;
  for (int w = 1; w < n_workers; ++w)
    replicas.push_back(std::make_unique<Model>(model.config()));

  std::vector<std::size_t> order(train_set.size());
  TrainResult res;
  RVec best_params = flatten_params(model);
  double best_val = std::numeric_limits<double>::infinity();
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr =
        tc.lr_initial *
        std::pow(tc.lr_decay_factor, epoch / tc.lr_decay_every);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(
        mix64(tc.seed, detail::kTagShuffle, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0;
    std::size_t pos = 0;
    Model::Ws ws;
    while (pos < order.size()) {
      const std::size_t m =
          std::min(static_cast<std::size_t>(tc.batch_size),
                   order.size() - pos);
      model.zero_grad();
      double batch_loss = 0;
      if (n_workers == 1) {
        for (std::size_t b = 0; b < m; ++b) {
          const std::size_t i = order[pos + b];
          auto d = detail::make_draw(train_set[i], sys, tc, use_pseudos,
                                     epoch, i);
          CMat out = model.forward(ws, d.partial, d.pseudos);
          batch_loss += loss_mse(d.truth, out);
          model.backward(ws, loss_mse_grad(d.truth, out));
        }
      } else {
        const RVec params = flatten_params(model);
        for (auto& r : replicas) unflatten_params(*r, params);
        std::vector<double> worker_loss(static_cast<std::size_t>(n_workers), 0);
        auto run_worker = [&](int w, Model& wm) {
          wm.zero_grad();
          Model::Ws wws;
          for (std::size_t b = static_cast<std::size_t>(w); b < m;
               b += static_cast<std::size_t>(n_workers)) {
            const std::size_t i = order[pos + b];
            auto d = detail::make_draw(train_set[i], sys, tc, use_pseudos,
                                       epoch, i);
            CMat out = wm.forward(wws, d.partial, d.pseudos);
            worker_loss[static_cast<std::size_t>(w)] +=
                loss_mse(d.truth, out);
            wm.backward(wws, loss_mse_grad(d.truth, out));
          }
        };
        std::vector<std::thread> pool;
        for (int w = 1; w < n_workers; ++w)
          pool.emplace_back(run_worker, w, std::ref(*replicas[w - 1]));
        run_worker(0, model);
        for (auto& t : pool) t.join();
        RVec g = detail::grad_flat(model);
        for (int w = 1; w < n_workers; ++w)
          g += detail::grad_flat(*replicas[w - 1]);
        detail::set_grad_flat(model, g);
        for (double l : worker_loss) batch_loss += l;
      }
      const double inv_m = 1.0 / static_cast<double>(m);
      model.visit([&](Tensor& p) { p.g *= inv_m; });
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite training loss at epoch " +
                           std::to_string(epoch));
      adam.step(model, lr);
      epoch_loss += batch_loss;
      pos += m;
    }
    epoch_loss /= static_cast<double>(order.size());

    const double val_loss = evaluate_mean_loss(model, sys, val_set, tc);
    if (!std::isfinite(val_loss))
      throw NumericError("non-finite validation loss at epoch " +
                         std::to_string(epoch));
    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = flatten_params(model);
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.history.push_back({epoch, lr, epoch_loss, val_loss, wall});
  }

  unflatten_params(model, best_params);
  res.checkpoint.config = model.config();
  res.checkpoint.params = best_params;
  res.checkpoint.adam_m = adam.moment1();
  res.checkpoint.adam_v = adam.moment2();
  res.checkpoint.adam_t = adam.steps();
  res.checkpoint.epoch = tc.epochs;
  res.checkpoint.best_val = best_val;
  res.checkpoint.train_seed = tc.seed;
  return res;
}

inline Model model_from_checkpoint(const Checkpoint& c) {
  Model m(c.config);
  unflatten_params(m, c.params);
  return m;
}

}  // namespace gcd::nn
