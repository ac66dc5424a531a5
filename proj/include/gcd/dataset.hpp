#pragma once

#include <string>
#include <thread>
#include <vector>

#include "gcd/alignment.hpp"
#include "gcd/nn/train.hpp"
#include "gcd/raytracer.hpp"

namespace gcd {

// One generated supervision sample: a user drawn uniformly in the scene area
// (height 1..2 m, never inside a building, never in outage), the ray-traced
// ground-truth channel, its pilot-observed restriction, and the grid indices
// of the nearest virtual user positions retrieved with the true position.
struct DatasetSample {
  Vec3 user_position{0, 0, 0};
  Vec3 user_antenna_axis{0, 0, 1};  // dipole orientation drawn per sample
  std::uint64_t seed = 0;           // per-sample draw seed (position, antenna)
  ChannelMatrix h_full;
  PartialChannel h_partial;
  std::vector<int> neighbor_indices;
};

struct Dataset {
  SystemConfig system;
  std::uint64_t scene_digest = 0;
  std::vector<DatasetSample> samples;
};

struct DatasetConfig {
  int count = 0;
  int n_neighbors = 8;     // retrieved per sample (the training n_max)
  int max_order = 2;       // tracer bounce cap for ground truth
  double user_height_min = 1.0;
  double user_height_max = 2.0;
  int threads = 1;

  void validate() const {
    if (count < 1) throw ConfigError("dataset sample count must be >= 1");
    if (n_neighbors < 0) throw ConfigError("neighbor count must be >= 0");
    if (max_order < 0 || max_order > 3)
      throw ConfigError("max_order must be in [0, 3]");
    if (user_height_min <= 0 || user_height_max < user_height_min)
      throw ConfigError("bad user height range");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

namespace detail {

inline constexpr std::uint64_t kTagDatasetSample = 0xda7a5e7;
inline constexpr int kMaxSampleAttempts = 10000;

// Draws one sample. All randomness comes from the per-sample seed, so samples
// are independent of each other and of worker scheduling.
inline DatasetSample draw_sample(const Scene& scene, const FeatureSet& fs,
                                 const SystemConfig& sys,
                                 const DatasetConfig& dc,
                                 std::uint64_t sample_seed) {
  Rng rng(mix64(sample_seed, kTagDatasetSample));
  const AntennaModel bs_ant;  // isotropic reference pattern at the BS
  for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
    Vec3 pos;
    pos.x() = scene.area_center.x() +
              scene.area_side * (rng.uniform() - 0.5);
    pos.y() = scene.area_center.y() +
              scene.area_side * (rng.uniform() - 0.5);
    pos.z() = scene.ground_height +
              rng.uniform(dc.user_height_min, dc.user_height_max);
    AntennaModel user_ant;
    user_ant.kind = AntennaModel::Kind::dipole;
    user_ant.orientation = rng.unit_vector();
    if (point_in_building(scene, pos)) continue;
    PathSet paths =
        trace_paths(scene, scene.bs_position, pos, dc.max_order, true);
    if (paths.paths.empty()) continue;  // outage: NMSE undefined, redraw

    DatasetSample s;
    s.user_position = pos;
    s.user_antenna_axis = user_ant.orientation;
    s.seed = sample_seed;
    s.h_full = synthesize_channel(paths, sys, bs_ant, user_ant,
                                  MaterialModel{});
    s.h_partial = extract_partial(s.h_full, sys);
    if (dc.n_neighbors > 0) {
      NeighborQuery q{Vec2{pos.x(), pos.y()}, dc.n_neighbors};
      for (const Neighbor& nb : query_neighbors(fs, q))
        s.neighbor_indices.push_back(nb.index);
    }
    return s;
  }
  throw ConfigError("could not draw a non-outage sample; scene too closed");
}

}  // namespace detail

inline Dataset generate_dataset(const Scene& scene, const FeatureSet& fs,
                                const SystemConfig& sys,
                                const DatasetConfig& dc, std::uint64_t seed) {
  dc.validate();
  sys.validate();
  expect_scene_match(fs, scene);
  Dataset out;
  out.system = sys;
  out.scene_digest = fs.scene_digest;
  out.samples.resize(static_cast<std::size_t>(dc.count));

  auto fill_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      out.samples[i] = detail::draw_sample(
          scene, fs, sys, dc, mix64(seed, static_cast<std::uint64_t>(i)));
  };
  if (dc.threads == 1) {
    fill_range(0, out.samples.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t total = out.samples.size();
    const std::size_t chunk =
        (total + static_cast<std::size_t>(dc.threads) - 1) /
        static_cast<std::size_t>(dc.threads);
    for (int w = 0; w < dc.threads; ++w) {
      const std::size_t lo = std::min(total, static_cast<std::size_t>(w) * chunk);
      const std::size_t hi = std::min(total, lo + chunk);
      if (lo < hi) pool.emplace_back(fill_range, lo, hi);
    }
    for (auto& t : pool) t.join();
  }
  return out;
}

// Resolves stored neighbor indices against the feature set, producing the
// in-memory samples the trainer consumes.
inline std::vector<nn::TrainSample> to_train_samples(const Dataset& ds,
                                                     const FeatureSet& fs) {
  std::vector<nn::TrainSample> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    nn::TrainSample ts;
    ts.h_full = s.h_full;
    ts.h_partial = s.h_partial;
    for (int idx : s.neighbor_indices) {
      if (idx < 0 || idx >= fs.count())
        throw ConfigError("neighbor index outside the feature grid");
      ts.neighbor_features.push_back(
          fs.entries[static_cast<std::size_t>(idx)]);
      ts.neighbor_indices.push_back(idx);
    }
    out.push_back(std::move(ts));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file: "GCDD" magic, version, system config, scene digest, then per
// sample position, seed, full channel (interleaved re/im, antenna-major),
// partial channel, and neighbor indices.

inline constexpr const char* kDatasetMagic = "GCDD";

namespace detail {

inline void write_cmat_interleaved(BinaryWriter& w, const CMat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      w.f64(m(r, c).real());
      w.f64(m(r, c).imag());
    }
}

inline void read_cmat_interleaved(BinaryReader& r, CMat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double re = r.f64(), im = r.f64();
      m(i, c) = Complex{re, im};
    }
}

}  // namespace detail

inline void write_dataset(const std::string& path, const Dataset& ds) {
  BinaryWriter w(path);
  w.bytes(kDatasetMagic, 4);
  w.u32(1);
  w.f64(ds.system.f_center);
  w.f64(ds.system.bandwidth);
  w.i64(ds.system.n_subcarriers);
  w.i64(ds.system.n_bs_antennas);
  w.f64(ds.system.antenna_spacing);
  w.varint(ds.system.omega_t.size());
  for (int a : ds.system.omega_t) w.i64(a);
  w.varint(ds.system.omega_c.size());
  for (int c : ds.system.omega_c) w.i64(c);
  w.u64(ds.scene_digest);
  w.varint(ds.samples.size());
  for (const auto& s : ds.samples) {
    w.f64(s.user_position.x());
    w.f64(s.user_position.y());
    w.f64(s.user_position.z());
    w.f64(s.user_antenna_axis.x());
    w.f64(s.user_antenna_axis.y());
    w.f64(s.user_antenna_axis.z());
    w.u64(s.seed);
    detail::write_cmat_interleaved(w, s.h_full);
    detail::write_cmat_interleaved(w, s.h_partial.entries);
    w.varint(s.neighbor_indices.size());
    for (int idx : s.neighbor_indices)
      w.varint(static_cast<std::uint64_t>(idx));
  }
  w.close();
}

inline Dataset read_dataset(const std::string& path) {
  BinaryReader r(path);
  expect_magic(r, kDatasetMagic, "dataset");
  if (r.u32() != 1) throw ConfigError("unsupported dataset version");
  Dataset ds;
  ds.system.f_center = r.f64();
  ds.system.bandwidth = r.f64();
  ds.system.n_subcarriers = static_cast<int>(r.i64());
  ds.system.n_bs_antennas = static_cast<int>(r.i64());
  ds.system.antenna_spacing = r.f64();
  ds.system.omega_t.resize(r.varint());
  for (auto& a : ds.system.omega_t) a = static_cast<int>(r.i64());
  ds.system.omega_c.resize(r.varint());
  for (auto& c : ds.system.omega_c) c = static_cast<int>(r.i64());
  ds.system.validate();
  ds.scene_digest = r.u64();
  ds.samples.resize(r.varint());
  for (auto& s : ds.samples) {
    s.user_position.x() = r.f64();
    s.user_position.y() = r.f64();
    s.user_position.z() = r.f64();
    s.user_antenna_axis.x() = r.f64();
    s.user_antenna_axis.y() = r.f64();
    s.user_antenna_axis.z() = r.f64();
    s.seed = r.u64();
    s.h_full.resize(ds.system.n_bs_antennas, ds.system.n_subcarriers);
    detail::read_cmat_interleaved(r, s.h_full);
    s.h_partial.omega_t = ds.system.omega_t;
    s.h_partial.omega_c = ds.system.omega_c;
    s.h_partial.entries.resize(
        static_cast<Eigen::Index>(ds.system.omega_t.size()),
        static_cast<Eigen::Index>(ds.system.omega_c.size()));
    detail::read_cmat_interleaved(r, s.h_partial.entries);
    s.neighbor_indices.resize(r.varint());
    for (auto& idx : s.neighbor_indices) idx = static_cast<int>(r.varint());
  }
  return ds;
}

}  // namespace gcd
