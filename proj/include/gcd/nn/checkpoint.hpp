#pragma once

#include <string>

#include "gcd/io.hpp"
#include "gcd/nn/adam.hpp"

namespace gcd::nn {

// Checkpoint file: model config, flat parameters, optimizer moments, and
// training progress. Doubles are stored as raw IEEE bits, so a write/read
// cycle is exact.
inline constexpr const char* kCheckpointMagic = "GCDC";

struct Checkpoint {
  ModelConfig config;
  RVec params;
  RVec adam_m, adam_v;
  std::int64_t adam_t = 0;
  std::int64_t epoch = 0;
  double best_val = 0.0;
  std::uint64_t train_seed = 0;
};

inline void write_checkpoint(const std::string& path, const Checkpoint& c) {
  BinaryWriter w(path);
  w.bytes(kCheckpointMagic, 4);
  w.u32(1);  // format version
  w.u8(c.config.kind == ModelKind::deduction ? 0 : 1);
  w.i64(c.config.k_mixer);
  w.i64(c.config.l_encoder);
  w.i64(c.config.hidden);
  w.i64(c.config.heads);
  w.i64(c.config.n_t);
  w.i64(c.config.n_c);
  w.i64(c.config.n_t0);
  w.i64(c.config.n_c0);
  w.i64(c.config.n_max);
  w.i64(c.config.baseline_layers);
  w.u8(static_cast<std::uint8_t>(c.config.act));
  w.u64(c.config.seed);
  auto write_vec = [&w](const RVec& v) {
    w.varint(static_cast<std::uint64_t>(v.size()));
    w.f64_array(v.data(), static_cast<std::size_t>(v.size()));
  };
  write_vec(c.params);
  write_vec(c.adam_m);
  write_vec(c.adam_v);
  w.i64(c.adam_t);
  w.i64(c.epoch);
  w.f64(c.best_val);
  w.u64(c.train_seed);
  w.close();
}

inline Checkpoint read_checkpoint(const std::string& path) {
  BinaryReader r(path);
  expect_magic(r, kCheckpointMagic, "checkpoint");
  if (r.u32() != 1) throw ConfigError("unsupported checkpoint version");
  Checkpoint c;
  c.config.kind = r.u8() == 0 ? ModelKind::deduction : ModelKind::pilot_mixer;
  c.config.k_mixer = static_cast<int>(r.i64());
  c.config.l_encoder = static_cast<int>(r.i64());
  c.config.hidden = static_cast<int>(r.i64());
  c.config.heads = static_cast<int>(r.i64());
  c.config.n_t = static_cast<int>(r.i64());
  c.config.n_c = static_cast<int>(r.i64());
  c.config.n_t0 = static_cast<int>(r.i64());
  c.config.n_c0 = static_cast<int>(r.i64());
  c.config.n_max = static_cast<int>(r.i64());
  c.config.baseline_layers = static_cast<int>(r.i64());
  c.config.act = static_cast<Activation>(r.u8());
  c.config.seed = r.u64();
  auto read_vec = [&r]() {
    RVec v(static_cast<Eigen::Index>(r.varint()));
    r.f64_array(v.data(), static_cast<std::size_t>(v.size()));
    return v;
  };
  c.params = read_vec();
  c.adam_m = read_vec();
  c.adam_v = read_vec();
  c.adam_t = r.i64();
  c.epoch = r.i64();
  c.best_val = r.f64();
  c.train_seed = r.u64();
  return c;
}

}  // namespace gcd::nn
