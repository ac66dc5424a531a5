#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gcd/feature_store.hpp"

using namespace gcd;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// linear-scan oracle with the same ordering rule
std::vector<Neighbor> brute_neighbors(const FeatureSet& fs, const Vec2& q,
                                      int n) {
  std::vector<Neighbor> all;
  for (int i = 0; i < fs.count(); ++i) {
    if (fs.entries[static_cast<std::size_t>(i)].empty()) continue;
    all.push_back({i, (fs.position2(i) - q).norm()});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.index < b.index;
  });
  if (static_cast<int>(all.size()) > n) all.resize(static_cast<std::size_t>(n));
  return all;
}

}  // namespace

TEST_CASE("feature build on an empty scene") {
  Scene s = generate_scene(1, 0, 400, 10);
  FeatureSet fs = build_feature_set(s, 200, 1.5, 1);
  REQUIRE(fs.rows == 3);
  REQUIRE(fs.cols == 3);
  REQUIRE(fs.entries.size() == 9);
  for (const auto& e : fs.entries) CHECK(e.size() >= 1);
  // center point sits right under the BS
  int center = 1 * fs.cols + 1;
  CHECK((fs.position2(center) - Vec2{0, 0}).norm() < 1e-12);
  CHECK(fs.entries[static_cast<std::size_t>(center)][0].length_m ==
        Catch::Approx(8.5).epsilon(1e-9));
}

TEST_CASE("grid points inside buildings get empty entries") {
  Scene s;
  s.area_side = 40;
  s.bs_position = Vec3{0, 0, 10};
  BuildingPrism b;
  b.footprint = rect_footprint({10, 10}, 6, 6, 0);
  b.height = 30;
  s.buildings.push_back(b);
  validate_scene(s);
  FeatureSet fs = build_feature_set(s, 10, 1.5, 0);
  // grid spans -20..20 step 10; the point (10, 10) falls inside the box
  bool found_empty = false;
  for (int i = 0; i < fs.count(); ++i) {
    Vec2 p = fs.position2(i);
    bool inside = (p - Vec2{10, 10}).norm() < 1e-9;
    if (inside) {
      CHECK(fs.entries[static_cast<std::size_t>(i)].empty());
      found_empty = true;
    }
  }
  CHECK(found_empty);
}

TEST_CASE("feature files are bit-identical across rebuilds and threads") {
  Scene s = generate_scene(9, 6, 200, 10);
  auto p1 = std::filesystem::temp_directory_path() / "gcd_fs1.bin";
  auto p2 = std::filesystem::temp_directory_path() / "gcd_fs2.bin";
  write_feature_set(p1.string(), build_feature_set(s, 20, 1.5, 2, 1));
  write_feature_set(p2.string(), build_feature_set(s, 20, 1.5, 2, 3));
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("neighbor query basics") {
  Scene s = generate_scene(1, 0, 100, 10);
  FeatureSet fs = build_feature_set(s, 10, 1.5, 0);

  // exact hit
  auto r = query_neighbors(fs, {fs.position2(27), 1});
  REQUIRE(r.size() == 1);
  CHECK(r[0].index == 27);
  CHECK(r[0].distance == 0.0);

  // midpoint of two adjacent points: both at step/2, lower index first
  Vec2 a = fs.position2(0), b = fs.position2(1);
  auto mid = query_neighbors(fs, {(a + b) / 2, 2});
  REQUIRE(mid.size() == 2);
  CHECK(mid[0].index == 0);
  CHECK(mid[1].index == 1);
  CHECK(mid[0].distance == Catch::Approx(5.0).epsilon(1e-12));
  CHECK(mid[1].distance == Catch::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("ring search matches the linear-scan oracle") {
  Scene s = generate_scene(33, 12, 300, 10);
  FeatureSet fs = build_feature_set(s, 15, 1.5, 1);
  Rng rng(77);
  for (int trial = 0; trial < 10000; ++trial) {
    Vec2 q{rng.uniform(-180, 180), rng.uniform(-180, 180)};
    int n = 1 + static_cast<int>(rng.uniform_index(8));
    auto fast = query_neighbors(fs, {q, n});
    auto slow = brute_neighbors(fs, q, n);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      REQUIRE(fast[i].index == slow[i].index);
      REQUIRE(fast[i].distance == slow[i].distance);
    }
    for (std::size_t i = 1; i < fast.size(); ++i)
      REQUIRE(fast[i].distance >= fast[i - 1].distance);
  }
}

TEST_CASE("interior single-neighbor distance bound") {
  Scene s = generate_scene(1, 0, 100, 10);
  FeatureSet fs = build_feature_set(s, 10, 1.5, 0);
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    Vec2 q{rng.uniform(-45, 45), rng.uniform(-45, 45)};
    auto r = query_neighbors(fs, {q, 1});
    REQUIRE(r.size() == 1);
    CHECK(r[0].distance <= 10 * std::sqrt(2.0) / 2 + 1e-12);
  }
}

TEST_CASE("neighbor search skips empty entries and can come up short") {
  Scene s;
  s.area_side = 40;
  s.bs_position = Vec3{0, 0, 10};
  BuildingPrism b;
  b.footprint = rect_footprint({10, 10}, 6, 6, 0);
  b.height = 30;
  s.buildings.push_back(b);
  validate_scene(s);
  FeatureSet fs = build_feature_set(s, 10, 1.5, 0);

  int blocked = -1;
  for (int i = 0; i < fs.count(); ++i)
    if (fs.entries[static_cast<std::size_t>(i)].empty()) blocked = i;
  REQUIRE(blocked >= 0);
  auto r = query_neighbors(fs, {fs.position2(blocked), 1});
  REQUIRE(r.size() == 1);
  CHECK(r[0].index != blocked);
  CHECK(r[0].distance > 0);

  int nonempty = 0;
  for (const auto& e : fs.entries)
    if (!e.empty()) nonempty++;
  auto all = query_neighbors(fs, {Vec2{0, 0}, fs.count()});
  CHECK(static_cast<int>(all.size()) == nonempty);  // short result
  CHECK_THROWS_AS(query_neighbors(fs, {Vec2{0, 0}, fs.count() + 1}),
                  ConfigError);
}

TEST_CASE("position error model") {
  Vec2 x{3, -4};
  CHECK((apply_position_error(x, 0, 9) - x).norm() == 0.0);
  CHECK((apply_position_error(x, 5, 9) - apply_position_error(x, 5, 9)).norm() ==
        0.0);
  CHECK((apply_position_error(x, 5, 9) - apply_position_error(x, 5, 10)).norm() >
        0.0);

  double sx = 0, sy = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    Vec2 d = apply_position_error(Vec2{0, 0}, 5, static_cast<std::uint64_t>(i));
    REQUIRE(std::abs(d.x()) <= 5.0);
    REQUIRE(std::abs(d.y()) <= 5.0);
    sx += d.x();
    sy += d.y();
  }
  CHECK(std::abs(sx / n) < 0.05);
  CHECK(std::abs(sy / n) < 0.05);
}

TEST_CASE("feature-set persistence round-trip and scene pairing") {
  Scene s = generate_scene(13, 8, 200, 10);
  FeatureSet fs = build_feature_set(s, 25, 1.5, 2);
  auto p1 = std::filesystem::temp_directory_path() / "gcd_fs_rt1.bin";
  auto p2 = std::filesystem::temp_directory_path() / "gcd_fs_rt2.bin";
  write_feature_set(p1.string(), fs);
  FeatureSet back = read_feature_set(p1.string());
  write_feature_set(p2.string(), back);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(back.rows == fs.rows);
  CHECK(back.scene_digest == fs.scene_digest);

  CHECK_NOTHROW(expect_scene_match(back, s));
  Scene other = generate_scene(14, 8, 200, 10);
  CHECK_THROWS_AS(expect_scene_match(back, other), ConfigError);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("stored features carry unit directions and positive lengths") {
  Scene s = generate_scene(55, 10, 250, 10);
  FeatureSet fs = build_feature_set(s, 25, 1.5, 2);
  int nonempty = 0;
  for (const auto& e : fs.entries)
    for (const auto& p : e) {
      nonempty++;
      REQUIRE(p.length_m > 0);
      REQUIRE(std::abs(p.depart_dir.norm() - 1.0) < 1e-9);
    }
  CHECK(nonempty > 0);
}
