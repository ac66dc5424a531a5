#pragma once

#include <algorithm>
#include <climits>
#include <functional>
#include <vector>

#include "gcd/common.hpp"
#include "gcd/scene.hpp"

namespace gcd {

struct Interaction {
  int face_id = 0;  // -1 = ground plane, otherwise a wall face
  Vec3 point{0, 0, 0};
};

// One specular path: geometry only (length + endpoints' unit directions).
// depart_dir points from tx along the first segment; arrive_dir is the
// propagation direction of the last segment (into rx). For the direct path the
// two coincide.
struct PathRecord {
  double length_m = 0.0;
  Vec3 depart_dir{0, 0, 0};
  Vec3 arrive_dir{0, 0, 0};
  std::vector<Interaction> interactions;
  int order() const { return static_cast<int>(interactions.size()); }
};

struct PathSet {
  Vec3 tx{0, 0, 0};
  Vec3 rx{0, 0, 0};
  std::vector<PathRecord> paths;
};

namespace detail {

constexpr int kGroundFace = -1;
constexpr double kOcclusionEps = 1e-9;  // parametric window on segment hits

// Vertical wall rectangle from one footprint edge.
struct WallFace {
  int face_id;
  Vec2 a;       // edge start
  Vec2 edge;    // unit direction a -> b
  double len;   // edge length
  double z0, z1;
  Vec3 n;       // outward horizontal unit normal
};

struct RoofFace {
  const BuildingPrism* building;
  double z;
};

// Precomputed flat face lists for one scene.
struct FaceSet {
  std::vector<WallFace> walls;
  std::vector<RoofFace> roofs;
  double ground_z = 0.0;

  explicit FaceSet(const Scene& s) : ground_z(s.ground_height) {
    int next_face = 0;
    for (const auto& b : s.buildings) {
      const std::size_t n = b.footprint.size();
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2& p = b.footprint[i];
        const Vec2& q = b.footprint[(i + 1) % n];
        WallFace f;
        f.face_id = next_face++;
        f.a = p;
        Vec2 d = q - p;
        f.len = d.norm();
        f.edge = d / f.len;
        f.n = Vec3{f.edge.y(), -f.edge.x(), 0};  // outward for CCW winding
        f.z0 = s.ground_height;
        f.z1 = b.height;
        walls.push_back(f);
      }
      roofs.push_back({&b, b.height});
    }
  }
};

inline double signed_dist(const WallFace& f, const Vec3& p) {
  return (p.x() - f.a.x()) * f.n.x() + (p.y() - f.a.y()) * f.n.y();
}

inline Vec3 mirror_wall(const WallFace& f, const Vec3& p) {
  return p - 2.0 * signed_dist(f, p) * f.n;
}

inline Vec3 mirror_ground(double gz, const Vec3& p) {
  return Vec3{p.x(), p.y(), 2 * gz - p.z()};
}

inline bool on_wall_extent(const WallFace& f, const Vec3& q) {
  double s = (q.x() - f.a.x()) * f.edge.x() + (q.y() - f.a.y()) * f.edge.y();
  return s >= 0.0 && s <= f.len && q.z() >= f.z0 && q.z() <= f.z1;
}

// True if segment p -> q is blocked by any face. Hits within kOcclusionEps of
// either endpoint are ignored, so segments that legitimately start/end on a
// reflecting face are not self-occluded.
inline bool segment_blocked(const FaceSet& fs, const Vec3& p, const Vec3& q) {
  const Vec3 d = q - p;
  for (const auto& f : fs.walls) {
    double denom = d.x() * f.n.x() + d.y() * f.n.y();
    if (std::abs(denom) < 1e-300) continue;  // parallel to the wall plane
    double t = -signed_dist(f, p) / denom;
    if (t <= kOcclusionEps || t >= 1.0 - kOcclusionEps) continue;
    if (on_wall_extent(f, p + t * d)) return true;
  }
  for (const auto& r : fs.roofs) {
    if (d.z() == 0.0) continue;
    double t = (r.z - p.z()) / d.z();
    if (t <= kOcclusionEps || t >= 1.0 - kOcclusionEps) continue;
    Vec3 hit = p + t * d;
    if (point_in_polygon(r.building->footprint, Vec2{hit.x(), hit.y()}))
      return true;
  }
  if (d.z() != 0.0) {
    double t = (fs.ground_z - p.z()) / d.z();
    if (t > kOcclusionEps && t < 1.0 - kOcclusionEps) return true;
  }
  return false;
}

}  // namespace detail

// Specular multipath via recursive image mirroring: the direct path plus every
// unoccluded reflection sequence (vertical building walls + the ground plane)
// up to max_order bounces. Pure function of its arguments.
inline PathSet trace_paths(const Scene& scene, const Vec3& tx, const Vec3& rx,
                           int max_order, bool ground_reflection = true) {
  if (max_order < 0 || max_order > 3)
    throw ConfigError("reflection order must lie in [0, 3]");
  if ((tx - rx).norm() == 0.0) throw ConfigError("tx and rx coincide");
  if (tx.z() <= scene.ground_height || rx.z() <= scene.ground_height)
    throw ConfigError("endpoints must sit above the ground");
  if (point_in_building(scene, tx) || point_in_building(scene, rx))
    throw ConfigError("endpoint lies inside a building");

  const detail::FaceSet fs(scene);
  PathSet out;
  out.tx = tx;
  out.rx = rx;

  // direct path
  if (!detail::segment_blocked(fs, tx, rx)) {
    PathRecord p;
    p.length_m = (rx - tx).norm();
    p.depart_dir = (rx - tx) / p.length_m;
    p.arrive_dir = p.depart_dir;
    out.paths.push_back(std::move(p));
  }

  // face sequence under construction: indices into fs.walls, or kGroundFace
  std::vector<int> seq;
  std::vector<Vec3> images;  // images[j] = tx mirrored through seq[0..j]

  auto try_sequence = [&]() {
    const int k = static_cast<int>(seq.size());
    // walk backward from rx, intersecting each face plane with the line
    // toward the matching tx image
    std::vector<Vec3> pts(static_cast<std::size_t>(k) + 2);
    pts[static_cast<std::size_t>(k) + 1] = rx;
    pts[0] = tx;
    for (int j = k; j >= 1; --j) {
      const Vec3& from = pts[static_cast<std::size_t>(j) + 1];
      const Vec3& img = images[static_cast<std::size_t>(j) - 1];
      const Vec3 d = img - from;
      double t;
      Vec3 hit;
      if (seq[static_cast<std::size_t>(j) - 1] == detail::kGroundFace) {
        if (d.z() == 0.0) return;
        t = (fs.ground_z - from.z()) / d.z();
        if (t <= 0.0 || t >= 1.0) return;
        hit = from + t * d;
      } else {
        const auto& f = fs.walls[static_cast<std::size_t>(
            seq[static_cast<std::size_t>(j) - 1])];
        double denom = d.x() * f.n.x() + d.y() * f.n.y();
        if (std::abs(denom) < 1e-300) return;
        t = -detail::signed_dist(f, from) / denom;
        if (t <= 0.0 || t >= 1.0) return;
        hit = from + t * d;
        if (!detail::on_wall_extent(f, hit)) return;
      }
      pts[static_cast<std::size_t>(j)] = hit;
    }
    // both sides of every reflection must face the wall front (kills paths
    // that would chord through a building between two of its own faces)
    for (int j = 1; j <= k; ++j) {
      int fi = seq[static_cast<std::size_t>(j) - 1];
      const Vec3& prev = pts[static_cast<std::size_t>(j) - 1];
      const Vec3& next = pts[static_cast<std::size_t>(j) + 1];
      const Vec3& at = pts[static_cast<std::size_t>(j)];
      if (fi == detail::kGroundFace) {
        if (prev.z() <= fs.ground_z || next.z() <= fs.ground_z) return;
      } else {
        const auto& f = fs.walls[static_cast<std::size_t>(fi)];
        if (detail::signed_dist(f, prev) <= 0.0) return;
        if (detail::signed_dist(f, next) <= 0.0) return;
      }
      (void)at;
    }
    for (int j = 0; j <= k; ++j)
      if (detail::segment_blocked(fs, pts[static_cast<std::size_t>(j)],
                                  pts[static_cast<std::size_t>(j) + 1]))
        return;

    PathRecord p;
    double len = 0;
    for (int j = 0; j <= k; ++j)
      len += (pts[static_cast<std::size_t>(j) + 1] -
              pts[static_cast<std::size_t>(j)])
                 .norm();
    p.length_m = len;
    p.depart_dir = (pts[1] - pts[0]).normalized();
    p.arrive_dir =
        (rx - pts[static_cast<std::size_t>(k)]).normalized();
    for (int j = 1; j <= k; ++j) {
      int fi = seq[static_cast<std::size_t>(j) - 1];
      int public_id = fi == detail::kGroundFace
                          ? detail::kGroundFace
                          : fs.walls[static_cast<std::size_t>(fi)].face_id;
      p.interactions.push_back({public_id, pts[static_cast<std::size_t>(j)]});
    }
    out.paths.push_back(std::move(p));
  };

  std::function<void(int)> recurse = [&](int depth) {
    if (depth > 0) try_sequence();
    if (depth == max_order) return;
    // by value: push_back below may reallocate `images`
    const Vec3 src = images.empty() ? tx : images.back();
    int last = seq.empty() ? INT_MIN : seq.back();
    for (std::size_t wi = 0; wi < fs.walls.size(); ++wi) {
      if (static_cast<int>(wi) == last) continue;
      const auto& f = fs.walls[wi];
      // the virtual source must lie in front of the face to reflect off it
      if (detail::signed_dist(f, src) <= 0.0) continue;
      seq.push_back(static_cast<int>(wi));
      images.push_back(detail::mirror_wall(f, src));
      recurse(depth + 1);
      images.pop_back();
      seq.pop_back();
    }
    if (ground_reflection && last != detail::kGroundFace &&
        src.z() > fs.ground_z) {
      seq.push_back(detail::kGroundFace);
      images.push_back(detail::mirror_ground(fs.ground_z, src));
      recurse(depth + 1);
      images.pop_back();
      seq.pop_back();
    }
  };
  recurse(0);

  std::sort(out.paths.begin(), out.paths.end(),
            [](const PathRecord& a, const PathRecord& b) {
              if (a.length_m != b.length_m) return a.length_m < b.length_m;
              if (a.interactions.size() != b.interactions.size())
                return a.interactions.size() < b.interactions.size();
              for (std::size_t i = 0; i < a.interactions.size(); ++i)
                if (a.interactions[i].face_id != b.interactions[i].face_id)
                  return a.interactions[i].face_id < b.interactions[i].face_id;
              return false;
            });
  return out;
}

}  // namespace gcd
