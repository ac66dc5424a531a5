#pragma once

#include <string>
#include <thread>
#include <vector>

#include "gcd/io.hpp"
#include "gcd/raytracer.hpp"
#include "gcd/scene.hpp"

namespace gcd {

// What survives of a traced path in the scenario representation: length and
// BS-side departure direction only.
struct CompactPath {
  double length_m = 0.0;
  Vec3 depart_dir{0, 0, 0};
};

// Ray-traced features over a regular virtual-user grid. Row-major indexing:
// index = row * cols + col; point (row, col) sits at
// grid_origin + (col * step, row * step), z = grid_height.
struct FeatureSet {
  Vec2 grid_origin{0, 0};
  double grid_step = 0.0;
  int rows = 0, cols = 0;
  double grid_height = 0.0;
  std::uint64_t scene_digest = 0;
  std::vector<std::vector<CompactPath>> entries;

  int count() const { return rows * cols; }
  Vec2 position2(int index) const {
    int r = index / cols, c = index % cols;
    return grid_origin + Vec2{c * grid_step, r * grid_step};
  }
  Vec3 position3(int index) const {
    Vec2 p = position2(index);
    return Vec3{p.x(), p.y(), grid_height};
  }
};

struct NeighborQuery {
  Vec2 position{0, 0};  // reported 2D user position; height ignored
  int n = 0;
};

struct Neighbor {
  int index = 0;
  double distance = 0.0;
};

inline Vec2 grid_origin_for(const Scene& scene) {
  return scene.area_center - Vec2{scene.area_side / 2, scene.area_side / 2};
}

// Trace every grid point from the BS and keep (length, departure direction).
// Points inside buildings get empty entries. Each worker writes disjoint
// slots, so the result is independent of scheduling.
inline FeatureSet build_feature_set(const Scene& scene, double grid_step,
                                    double grid_height, int max_order,
                                    int threads = 1) {
  if (grid_step <= 0) throw ConfigError("grid step must be positive");
  if (threads < 1) throw ConfigError("thread count must be >= 1");
  validate_scene(scene);

  FeatureSet fs;
  fs.grid_step = grid_step;
  fs.grid_height = grid_height;
  fs.grid_origin = grid_origin_for(scene);
  int per_side = static_cast<int>(std::floor(scene.area_side / grid_step)) + 1;
  fs.rows = fs.cols = per_side;
  fs.scene_digest = scene_hash(scene);
  fs.entries.resize(static_cast<std::size_t>(fs.count()));

  auto work = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      Vec3 p = fs.position3(i);
      if (point_in_building(scene, p)) continue;
      PathSet ps = trace_paths(scene, scene.bs_position, p, max_order);
      auto& slot = fs.entries[static_cast<std::size_t>(i)];
      slot.reserve(ps.paths.size());
      for (const auto& path : ps.paths)
        slot.push_back({path.length_m, path.depart_dir});
    }
  };
  if (threads == 1) {
    work(0, fs.count());
  } else {
    std::vector<std::thread> pool;
    int total = fs.count(), chunk = (total + threads - 1) / threads;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back(work, std::min(t * chunk, total),
                        std::min((t + 1) * chunk, total));
    for (auto& th : pool) th.join();
  }
  return fs;
}

// n nearest non-empty grid points by 2D distance, ascending, ties broken by
// ascending index. Short results (fewer non-empty points than n) are returned
// as-is. Uniform-grid ring expansion; O(found) expected.
inline std::vector<Neighbor> query_neighbors(const FeatureSet& fs,
                                             const NeighborQuery& q) {
  if (q.n < 0) throw ConfigError("neighbor count must be >= 0");
  if (q.n > fs.count())
    throw ConfigError("neighbor count exceeds the grid size");
  std::vector<Neighbor> kept;
  if (q.n == 0 || fs.count() == 0) return kept;

  auto better = [](const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.index < b.index;
  };
  // center cell: nearest grid indices to the query, clamped into the grid
  int c0 = std::clamp(
      static_cast<int>(std::lround((q.position.x() - fs.grid_origin.x()) / fs.grid_step)),
      0, fs.cols - 1);
  int r0 = std::clamp(
      static_cast<int>(std::lround((q.position.y() - fs.grid_origin.y()) / fs.grid_step)),
      0, fs.rows - 1);
  Vec2 center = fs.position2(r0 * fs.cols + c0);

  auto consider = [&](int r, int c) {
    int idx = r * fs.cols + c;
    if (fs.entries[static_cast<std::size_t>(idx)].empty()) return;
    Neighbor nb{idx, (fs.position2(idx) - q.position).norm()};
    auto pos = std::upper_bound(kept.begin(), kept.end(), nb, better);
    kept.insert(pos, nb);
    if (static_cast<int>(kept.size()) > q.n) kept.pop_back();
  };

  int max_ring = std::max(std::max(r0, fs.rows - 1 - r0),
                          std::max(c0, fs.cols - 1 - c0));
  for (int k = 0; k <= max_ring; ++k) {
    if (k == 0) {
      consider(r0, c0);
    } else {
      int rlo = r0 - k, rhi = r0 + k, clo = c0 - k, chi = c0 + k;
      for (int c = std::max(clo, 0); c <= std::min(chi, fs.cols - 1); ++c) {
        if (rlo >= 0) consider(rlo, c);
        if (rhi < fs.rows) consider(rhi, c);
      }
      for (int r = std::max(rlo + 1, 0); r <= std::min(rhi - 1, fs.rows - 1); ++r) {
        if (clo >= 0) consider(r, clo);
        if (chi < fs.cols) consider(r, chi);
      }
    }
    if (static_cast<int>(kept.size()) == q.n) {
      // every point beyond ring k lies outside a centered square; if even its
      // nearest exterior point cannot beat our current worst, stop
      double half = (k + 1) * fs.grid_step;
      double dx = half - std::abs(q.position.x() - center.x());
      double dy = half - std::abs(q.position.y() - center.y());
      double beyond = std::min(dx, dy);
      if (beyond > 0 && kept.back().distance <= beyond) break;
    }
  }
  return kept;
}

// Uniform reporting error on the 2D position, one independent draw per axis.
inline Vec2 apply_position_error(const Vec2& x, double l, std::uint64_t seed) {
  if (l < 0) throw ConfigError("position error bound must be >= 0");
  Rng rng(mix64(seed, 0x905e7));
  return x + Vec2{rng.uniform(-l, l), rng.uniform(-l, l)};
}

// --- Persistence: "GCDF" little-endian binary ---

inline void write_feature_set(const std::string& path, const FeatureSet& fs) {
  BinaryWriter w(path);
  w.bytes("GCDF", 4);
  w.u32(1);  // version
  w.f64(fs.grid_origin.x());
  w.f64(fs.grid_origin.y());
  w.f64(fs.grid_step);
  w.u32(static_cast<std::uint32_t>(fs.rows));
  w.u32(static_cast<std::uint32_t>(fs.cols));
  w.f64(fs.grid_height);
  w.u64(fs.scene_digest);
  w.u32(static_cast<std::uint32_t>(fs.entries.size()));
  for (const auto& ent : fs.entries) {
    w.varint(ent.size());
    for (const auto& p : ent) {
      w.f64(p.length_m);
      w.f64(p.depart_dir.x());
      w.f64(p.depart_dir.y());
      w.f64(p.depart_dir.z());
    }
  }
  w.close();
}

inline FeatureSet read_feature_set(const std::string& path) {
  BinaryReader r(path);
  expect_magic(r, "GCDF", "feature-set");
  if (r.u32() != 1) throw ConfigError("unsupported feature-set version");
  FeatureSet fs;
  fs.grid_origin.x() = r.f64();
  fs.grid_origin.y() = r.f64();
  fs.grid_step = r.f64();
  fs.rows = static_cast<int>(r.u32());
  fs.cols = static_cast<int>(r.u32());
  fs.grid_height = r.f64();
  fs.scene_digest = r.u64();
  std::uint32_t count = r.u32();
  if (count != static_cast<std::uint32_t>(fs.rows) * static_cast<std::uint32_t>(fs.cols))
    throw ConfigError("feature-set entry count does not match the grid");
  fs.entries.resize(count);
  for (auto& ent : fs.entries) {
    auto n = r.varint();
    ent.resize(n);
    for (auto& p : ent) {
      p.length_m = r.f64();
      p.depart_dir.x() = r.f64();
      p.depart_dir.y() = r.f64();
      p.depart_dir.z() = r.f64();
      if (p.length_m <= 0) throw ConfigError("corrupt feature-set: bad length");
      if (std::abs(p.depart_dir.norm() - 1.0) > 1e-9)
        throw ConfigError("corrupt feature-set: non-unit direction");
    }
  }
  return fs;
}

// Guard against pairing features with the wrong map.
inline void expect_scene_match(const FeatureSet& fs, const Scene& scene) {
  if (fs.scene_digest != scene_hash(scene))
    throw ConfigError("feature set was built from a different scene");
}

}  // namespace gcd
