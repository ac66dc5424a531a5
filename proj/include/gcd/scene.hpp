#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gcd/common.hpp"
#include "gcd/io.hpp"
#include "gcd/rng.hpp"

namespace gcd {

// Vertical prism over a simple CCW polygon. `height` is the top elevation
// (z extent is (scene.ground_height, height)).
struct BuildingPrism {
  std::vector<Vec2> footprint;
  double height = 0.0;
  int id = 0;
};

// 2.5D environment: axis-aligned square working area centered on `area_center`,
// a set of building prisms, and the BS antenna position.
struct Scene {
  std::vector<BuildingPrism> buildings;
  double ground_height = 0.0;
  Vec3 bs_position{0, 0, 0};
  Vec2 area_center{0, 0};
  double area_side = 0.0;
};

enum class PerturbKind { building_shift, add_vehicles };

struct ScenePerturbation {
  PerturbKind kind = PerturbKind::building_shift;
  double shift_scale = 0.0;           // per-axis uniform bound, meters
  std::vector<BuildingPrism> vehicles; // small boxes, for add_vehicles
};

// Winding-number containment (nonzero rule); boundary points unspecified.
inline bool point_in_polygon(const std::vector<Vec2>& poly, const Vec2& p) {
  int winding = 0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    if (a.y() <= p.y()) {
      if (b.y() > p.y() &&
          (b.x() - a.x()) * (p.y() - a.y()) - (p.x() - a.x()) * (b.y() - a.y()) > 0)
        ++winding;
    } else {
      if (b.y() <= p.y() &&
          (b.x() - a.x()) * (p.y() - a.y()) - (p.x() - a.x()) * (b.y() - a.y()) < 0)
        --winding;
    }
  }
  return winding != 0;
}

inline double polygon_signed_area(const std::vector<Vec2>& poly) {
  double s = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    s += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * s;
}

namespace detail {

inline bool segments_properly_intersect(const Vec2& a, const Vec2& b,
                                        const Vec2& c, const Vec2& d) {
  auto cross = [](const Vec2& o, const Vec2& p, const Vec2& q) {
    return (p.x() - o.x()) * (q.y() - o.y()) - (q.x() - o.x()) * (p.y() - o.y());
  };
  double d1 = cross(c, d, a), d2 = cross(c, d, b);
  double d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

}  // namespace detail

inline void validate_building(const BuildingPrism& b, double ground_height) {
  if (b.footprint.size() < 3)
    throw ConfigError("building footprint needs >= 3 vertices");
  const std::size_t n = b.footprint.size();
  for (std::size_t i = 0; i < n; ++i)
    if ((b.footprint[i] - b.footprint[(i + 1) % n]).norm() == 0.0)
      throw ConfigError("building footprint has repeated consecutive vertices");
  if (polygon_signed_area(b.footprint) <= 0)
    throw ConfigError("building footprint must wind counter-clockwise");
  // simplicity: non-adjacent edges must not cross
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (detail::segments_properly_intersect(
              b.footprint[i], b.footprint[(i + 1) % n], b.footprint[j],
              b.footprint[(j + 1) % n]))
        throw ConfigError("building footprint self-intersects");
    }
  if (b.height <= ground_height)
    throw ConfigError("building top must be above ground");
}

inline void validate_scene(const Scene& s) {
  if (s.area_side <= 0) throw ConfigError("area side must be positive");
  Vec2 bs2{s.bs_position.x(), s.bs_position.y()};
  if (std::abs(bs2.x() - s.area_center.x()) > s.area_side / 2 ||
      std::abs(bs2.y() - s.area_center.y()) > s.area_side / 2)
    throw ConfigError("BS lies outside the working area");
  if (s.bs_position.z() <= s.ground_height)
    throw ConfigError("BS must sit strictly above the ground");
  for (const auto& b : s.buildings) {
    validate_building(b, s.ground_height);
    if (point_in_polygon(b.footprint, bs2) && s.bs_position.z() < b.height)
      throw ConfigError("building covers the BS position");
  }
}

inline bool point_in_building(const Scene& s, const Vec3& p) {
  for (const auto& b : s.buildings) {
    if (p.z() <= s.ground_height || p.z() >= b.height) continue;
    if (point_in_polygon(b.footprint, Vec2{p.x(), p.y()})) return true;
  }
  return false;
}

// Axis-extents rectangle footprint centered at c, half sizes (hx, hy), rotated
// by `angle`; vertices CCW.
inline std::vector<Vec2> rect_footprint(const Vec2& c, double hx, double hy,
                                        double angle) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  auto corner = [&](double sx, double sy) {
    return Vec2{c.x() + sx * hx * ca - sy * hy * sa,
                c.y() + sx * hx * sa + sy * hy * ca};
  };
  return {corner(1, 1), corner(-1, 1), corner(-1, -1), corner(1, -1)};
}

inline BuildingPrism make_vehicle_box(const Vec2& center, double angle, int id,
                                      double ground_height = 0.0) {
  BuildingPrism v;
  v.footprint = rect_footprint(center, 2.25, 1.0, angle);  // ~4.5 m x 2 m car
  v.height = ground_height + 1.8;
  v.id = id;
  return v;
}

// Procedural scene: BS-centered square, rotated rectangular buildings placed by
// rejection sampling with a conservative circumscribed-circle separation test.
inline Scene generate_scene(std::uint64_t seed, int n_buildings,
                            double area_side, double bs_height) {
  if (n_buildings < 0) throw ConfigError("building count must be >= 0");
  if (area_side <= 0) throw ConfigError("area side must be positive");

  Scene s;
  s.area_center = Vec2{0, 0};
  s.area_side = area_side;
  s.bs_position = Vec3{0, 0, bs_height};
  validate_scene(s);

  Rng rng(mix64(seed, 0x5ce2e));
  const double bs_clearance = 10.0;  // keep faces off the BS even after shifts
  const double margin = 2.0;         // minimum building-to-building gap

  struct Placed {
    Vec2 c;
    double r;
  };
  std::vector<Placed> placed;

  for (int i = 0; i < n_buildings; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < 2000 && !ok; ++attempt) {
      double hx = rng.uniform(5.0, 20.0);
      double hy = rng.uniform(5.0, 20.0);
      double angle = rng.uniform(0.0, kPi);
      double r = std::hypot(hx, hy);
      double lim = area_side / 2 - r;
      if (lim <= 0) continue;
      Vec2 c{rng.uniform(-lim, lim), rng.uniform(-lim, lim)};
      if (c.norm() < r + bs_clearance) continue;  // too close to the BS
      bool clash = false;
      for (const auto& q : placed)
        if ((c - q.c).norm() < r + q.r + margin) {
          clash = true;
          break;
        }
      if (clash) continue;

      BuildingPrism b;
      b.footprint = rect_footprint(c, hx, hy, angle);
      b.height = s.ground_height + rng.uniform(10.0, 60.0);
      b.id = i;
      s.buildings.push_back(std::move(b));
      placed.push_back({c, r});
      ok = true;
    }
    if (!ok)
      throw ConfigError("could not place " + std::to_string(n_buildings) +
                        " buildings in a " + format_double(area_side) +
                        " m area (overcrowded parameters)");
  }
  validate_scene(s);
  return s;
}

inline Scene perturb_scene(const Scene& scene, const ScenePerturbation& p,
                           std::uint64_t seed) {
  validate_scene(scene);
  Scene out = scene;
  if (p.kind == PerturbKind::building_shift) {
    if (p.shift_scale < 0) throw ConfigError("shift scale must be >= 0");
    Rng rng(mix64(seed, 0x5417f));
    for (auto& b : out.buildings) {
      Vec2 off{rng.uniform(-p.shift_scale, p.shift_scale),
               rng.uniform(-p.shift_scale, p.shift_scale)};
      for (auto& v : b.footprint) v += off;
    }
  } else {
    int next_id = 0;
    for (const auto& b : out.buildings) next_id = std::max(next_id, b.id + 1);
    for (auto v : p.vehicles) {
      v.id = next_id++;
      out.buildings.push_back(std::move(v));
    }
  }
  validate_scene(out);  // rejects perturbations that land on the BS
  return out;
}

// --- Text serialization (bit-exact round-trip via shortest-round-trip doubles)

inline std::string scene_to_text(const Scene& s) {
  std::string t;
  auto num = [&](double v) { t += ' ' + format_double(v); };
  t += "gcd-scene format_version 1\n";
  t += "ground_height";
  num(s.ground_height);
  t += "\narea";
  num(s.area_center.x());
  num(s.area_center.y());
  num(s.area_side);
  t += "\nbs";
  num(s.bs_position.x());
  num(s.bs_position.y());
  num(s.bs_position.z());
  t += "\n";
  for (const auto& b : s.buildings) {
    t += "building " + std::to_string(b.id);
    num(b.height);
    t += ' ' + std::to_string(b.footprint.size()) + "\n";
    for (const auto& v : b.footprint) {
      t += "v";
      num(v.x());
      num(v.y());
      t += "\n";
    }
  }
  return t;
}

inline Scene scene_from_tokens(const TextTokens& tt) {
  Scene s;
  std::size_t i = 0;
  auto need = [&](std::size_t k, const char* what) {
    if (i >= tt.size() || tt.line(i).size() != k || tt.line(i)[0] != what)
      throw ConfigError(std::string("scene file: expected '") + what + "' line");
    return tt.line(i++);
  };
  auto hdr = need(3, "gcd-scene");
  if (hdr[1] != "format_version" || hdr[2] != "1")
    throw ConfigError("unsupported scene format version");
  s.ground_height = parse_double(need(2, "ground_height")[1]);
  auto area = need(4, "area");
  s.area_center = Vec2{parse_double(area[1]), parse_double(area[2])};
  s.area_side = parse_double(area[3]);
  auto bs = need(4, "bs");
  s.bs_position =
      Vec3{parse_double(bs[1]), parse_double(bs[2]), parse_double(bs[3])};
  while (i < tt.size()) {
    auto bl = need(4, "building");
    BuildingPrism b;
    b.id = static_cast<int>(parse_int(bl[1]));
    b.height = parse_double(bl[2]);
    auto nv = parse_int(bl[3]);
    for (std::int64_t k = 0; k < nv; ++k) {
      auto vl = need(3, "v");
      b.footprint.emplace_back(parse_double(vl[1]), parse_double(vl[2]));
    }
    s.buildings.push_back(std::move(b));
  }
  validate_scene(s);
  return s;
}

inline void write_scene(const std::string& path, const Scene& s) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << scene_to_text(s);
  if (!out) throw ConfigError("write failure: " + path);
}

inline Scene read_scene(const std::string& path) {
  return scene_from_tokens(TextTokens::from_file(path));
}

// Digest used to pair feature files with the scene they were built from.
inline std::uint64_t scene_hash(const Scene& s) { return fnv1a(scene_to_text(s)); }

}  // namespace gcd
