#include <catch2/catch_amalgamated.hpp>

#include "gcd/channel.hpp"

using namespace gcd;

namespace {

SystemConfig small_cfg() {
  SystemConfig cfg;
  cfg.f_center = 3.5e9;
  cfg.bandwidth = 20e6;
  cfg.n_subcarriers = 8;
  cfg.n_bs_antennas = 4;
  cfg.antenna_spacing = cfg.wavelength() / 2;
  cfg.omega_t = {0, 2};
  cfg.omega_c = {0, 4};
  cfg.validate();
  return cfg;
}

PathSet manual_path(double length, const Vec3& dir) {
  PathSet ps;
  ps.tx = Vec3{0, 0, 0};
  ps.rx = ps.tx + length * dir;
  PathRecord p;
  p.length_m = length;
  p.depart_dir = dir;
  p.arrive_dir = dir;
  ps.paths.push_back(p);
  return ps;
}

const AntennaModel kIso{AntennaModel::Kind::isotropic, Vec3{0, 0, 1}};

}  // namespace

TEST_CASE("empty path set synthesizes the zero matrix") {
  SystemConfig cfg = small_cfg();
  PathSet ps;
  ps.tx = Vec3{0, 0, 0};
  ps.rx = Vec3{1, 0, 0};
  ChannelMatrix h = synthesize_channel(ps, cfg, kIso, kIso, MaterialModel{});
  CHECK(h.norm() == 0.0);
  CHECK(h.rows() == 4);
  CHECK(h.cols() == 8);
}

TEST_CASE("single direct path closed form") {
  SystemConfig cfg = small_cfg();
  const double df = cfg.delta_f();
  const double d = kSpeedOfLight / (4 * df);  // tau * delta_f = 1/4
  PathSet ps = manual_path(d, Vec3{0, 1, 0});
  ChannelMatrix h = synthesize_channel(ps, cfg, kIso, kIso, MaterialModel{});

  const double amp = cfg.wavelength() / (4 * kPi * d);
  for (int a = 0; a < 4; ++a)
    for (int c = 0; c < 8; ++c)
      REQUIRE(std::abs(h(a, c)) == Catch::Approx(amp).epsilon(1e-12));
  for (int c = 0; c + 1 < 8; ++c) {
    Complex ratio = h(0, c + 1) / h(0, c);
    // adjacent subcarriers step the delay phase by exactly -pi/2
    REQUIRE(ratio.real() == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(ratio.imag() == Catch::Approx(-1.0).epsilon(1e-9));
  }
}

TEST_CASE("two-path interference matches an independent phasor sum") {
  SystemConfig cfg = small_cfg();
  cfg.bandwidth = 400e6;  // wide spacing keeps the offset path comparable
  const double df = cfg.delta_f();
  const double d1 = 120.0;
  const double d2 = d1 + kSpeedOfLight / (2 * df);  // delays differ by 1/(2 df)
  Vec3 dir{1, 0, 0};

  PathSet ps = manual_path(d1, dir);
  {
    PathRecord p2;
    p2.length_m = d2;
    p2.depart_dir = dir;
    p2.arrive_dir = dir;
    ps.rx = ps.tx + d1 * dir;
    ps.paths.push_back(p2);
  }
  ChannelMatrix h = synthesize_channel(ps, cfg, kIso, kIso, MaterialModel{});

  // independent scalar phasor oracle
  const double lambda = cfg.wavelength();
  auto term = [&](double d, int a, int c) {
    double tau = d / kSpeedOfLight;
    Complex v = std::polar(lambda / (4 * kPi * d),
                           -2 * kPi * cfg.f_center * tau);
    v *= std::polar(1.0, -2 * kPi * c * df * tau);
    v *= std::polar(1.0, 2 * kPi / lambda * cfg.antenna_spacing * a * dir.x());
    return v;
  };
  for (int a = 0; a < 4; ++a)
    for (int c = 0; c < 8; ++c) {
      Complex expect = term(d1, a, c) + term(d2, a, c);
      REQUIRE(std::abs(h(a, c) - expect) < 1e-12);
    }

  // the half-cycle delay offset flips the relative sign between adjacent
  // subcarriers: |H| alternates between constructive and destructive levels
  double m0 = std::abs(h(0, 0)), m1 = std::abs(h(0, 1));
  double m2 = std::abs(h(0, 2)), m3 = std::abs(h(0, 3));
  CHECK(std::abs(m0 - m2) < 1e-6 * m0);
  CHECK(std::abs(m1 - m3) < 1e-6 * m1);
  CHECK(std::abs(m0 - m1) > 0.3 * std::max(m0, m1));
}

TEST_CASE("dipole pattern closed forms") {
  Vec3 axis{0, 0, 1};
  // broadside: magnitude 1, polarization parallel to the axis
  Vec3 c = dipole_pattern(axis, Vec3{1, 0, 0});
  CHECK(c.norm() == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(c.dot(axis)) == Catch::Approx(1.0).epsilon(1e-12));
  // axial null
  CHECK(dipole_pattern(axis, Vec3{0, 0, 1}).norm() < 1e-15);
  CHECK(dipole_pattern(axis, Vec3{0, 0, -1}).norm() < 1e-15);
  // 30 degrees off axis -> sin(30) = 1/2
  Vec3 dir{std::sin(kPi / 6), 0, std::cos(kPi / 6)};
  CHECK(dipole_pattern(axis, dir).norm() == Catch::Approx(0.5).epsilon(1e-12));
  // pattern is orthogonal to the propagation direction
  CHECK(std::abs(dipole_pattern(axis, dir).dot(dir)) < 1e-12);
  // magnitude never exceeds 1
  Rng r(5);
  for (int i = 0; i < 200; ++i) {
    Vec3 a = r.unit_vector(), d = r.unit_vector();
    CHECK(dipole_pattern(a, d).norm() <= 1.0 + 1e-12);
    // even under direction flip
    CHECK((dipole_pattern(a, d) - dipole_pattern(a, -d)).norm() < 1e-12);
  }
}

TEST_CASE("channel is linear in the path list") {
  Scene s = generate_scene(41, 8, 300, 10);
  SystemConfig cfg = small_cfg();
  AntennaModel dip{AntennaModel::Kind::dipole, Vec3{0, 0, 1}};
  MaterialModel mat;
  Vec3 tx = s.bs_position, rx{70, -40, 1.5};
  PathSet all = trace_paths(s, tx, rx, 2);
  REQUIRE(all.paths.size() >= 2);
  PathSet a = all, b = all;
  a.paths.assign(all.paths.begin(), all.paths.begin() + 1);
  b.paths.assign(all.paths.begin() + 1, all.paths.end());
  ChannelMatrix ha = synthesize_channel(a, cfg, kIso, dip, mat);
  ChannelMatrix hb = synthesize_channel(b, cfg, kIso, dip, mat);
  ChannelMatrix hall = synthesize_channel(all, cfg, kIso, dip, mat);
  CHECK((hall - ha - hb).norm() < 1e-12 * hall.norm());
}

TEST_CASE("single-path channels have constant power and antenna ratio") {
  Scene s = generate_scene(43, 6, 300, 10);
  SystemConfig cfg = small_cfg();
  AntennaModel dip{AntennaModel::Kind::dipole,
                   Vec3{0.36, 0.48, 0.8}.normalized()};
  Vec3 tx = s.bs_position, rx{60, 45, 1.5};
  PathSet all = trace_paths(s, tx, rx, 2);
  REQUIRE(!all.paths.empty());
  // reflected path exercises the Fresnel operator too
  for (std::size_t pi : {std::size_t{0}, all.paths.size() - 1}) {
    PathSet one = all;
    one.paths.assign(all.paths.begin() + pi, all.paths.begin() + pi + 1);
    ChannelMatrix h = synthesize_channel(one, cfg, dip, kIso, MaterialModel{});
    double a0 = std::abs(h(0, 0));
    if (a0 == 0.0) continue;  // deep polarization null
    for (int a = 0; a < 4; ++a)
      for (int c = 0; c < 8; ++c)
        REQUIRE(std::abs(h(a, c)) == Catch::Approx(a0).epsilon(1e-12));
    Complex r0 = h(1, 0) / h(0, 0);
    for (int a = 0; a + 1 < 4; ++a)
      for (int c = 0; c < 8; ++c)
        REQUIRE(std::abs(h(a + 1, c) / h(a, c) - r0) < 1e-12);
  }
}

TEST_CASE("Fresnel reflection matches an independent scalar computation") {
  SystemConfig cfg = small_cfg();
  const double eps = 5.0;
  // one ground bounce, s-polarized by construction: dipole axes along y,
  // propagation in the xz plane -> field stays along y (the s direction)
  double ground_range = 100, h_tx = 10, h_rx = 2;
  PathSet ps;
  ps.tx = Vec3{0, 0, h_tx};
  ps.rx = Vec3{ground_range, 0, h_rx};
  PathRecord p;
  double x_ref = ground_range * h_tx / (h_tx + h_rx);
  p.interactions.push_back({-1, Vec3{x_ref, 0, 0}});
  p.length_m = std::hypot(ground_range, h_tx + h_rx);
  p.depart_dir = (p.interactions[0].point - ps.tx).normalized();
  p.arrive_dir = (ps.rx - p.interactions[0].point).normalized();
  ps.paths.push_back(p);

  AntennaModel ydip{AntennaModel::Kind::dipole, Vec3{0, 1, 0}};
  MaterialModel mat;
  mat.relative_permittivity = eps;
  ChannelMatrix h = synthesize_channel(ps, cfg, ydip, ydip, mat);

  double cos_i = (h_tx + h_rx) / p.length_m;  // incidence from vertical
  double sin2 = 1 - cos_i * cos_i;
  double g = std::sqrt(eps - sin2);
  double gamma_s = (cos_i - g) / (cos_i + g);
  // both dipoles broadside to the path in the xz plane: patterns = -axis,
  // coupling = gamma_s * (axis . axis) = gamma_s
  double amp_expect =
      cfg.wavelength() / (4 * kPi * p.length_m) * std::abs(gamma_s);
  CHECK(std::abs(h(0, 0)) == Catch::Approx(amp_expect).epsilon(1e-9));

  // p-polarized null at the Brewster angle: vertical-plane dipoles, incidence
  // with tan(theta) = sqrt(eps)
  double tan_b = std::sqrt(eps);
  double h2 = 5.0;
  double half_range = h2 * tan_b;
  PathSet pb;
  pb.tx = Vec3{0, 0, h2};
  pb.rx = Vec3{2 * half_range, 0, h2};
  PathRecord q;
  q.interactions.push_back({-1, Vec3{half_range, 0, 0}});
  q.length_m = 2 * std::hypot(half_range, h2);
  q.depart_dir = (q.interactions[0].point - pb.tx).normalized();
  q.arrive_dir = (pb.rx - q.interactions[0].point).normalized();
  pb.paths.push_back(q);
  // dipole axis in the incidence plane, orthogonal to the departing ray
  Vec3 axis = Vec3{-q.depart_dir.z(), 0, q.depart_dir.x()};
  AntennaModel pdip{AntennaModel::Kind::dipole, axis.normalized()};
  ChannelMatrix hb = synthesize_channel(pb, cfg, pdip, pdip, mat);
  CHECK(hb.norm() < 1e-12);

  // near-PEC limit: |reflection| -> 1 for both polarizations
  MaterialModel pec;
  pec.relative_permittivity = 1e12;
  ChannelMatrix hp = synthesize_channel(ps, cfg, ydip, ydip, pec);
  double amp_pec = cfg.wavelength() / (4 * kPi * p.length_m);
  CHECK(std::abs(hp(0, 0)) == Catch::Approx(amp_pec).epsilon(1e-5));
}

TEST_CASE("partial extraction indexes the pilot grid") {
  SystemConfig cfg;
  cfg.f_center = 3.5e9;
  cfg.bandwidth = 100e6;
  cfg.n_subcarriers = 256;
  cfg.n_bs_antennas = 16;
  cfg.antenna_spacing = cfg.wavelength() / 2;
  for (int i = 0; i < 16; i += 4) cfg.omega_t.push_back(i);
  for (int i = 0; i < 256; i += 16) cfg.omega_c.push_back(i);
  cfg.validate();
  REQUIRE(cfg.omega_t.size() == 4);
  REQUIRE(cfg.omega_c.size() == 16);

  ChannelMatrix h(16, 256);
  for (int a = 0; a < 16; ++a)
    for (int c = 0; c < 256; ++c) h(a, c) = Complex(a, c);
  PartialChannel hp = extract_partial(h, cfg);
  REQUIRE(hp.entries.rows() == 4);
  REQUIRE(hp.entries.cols() == 16);
  CHECK(hp.entries(0, 0) == h(0, 0));
  CHECK(hp.entries(3, 15) == h(12, 240));
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 16; ++b)
      REQUIRE(hp.entries(a, b) == h(cfg.omega_t[a], cfg.omega_c[b]));
}

TEST_CASE("full-mask extraction is the identity") {
  SystemConfig cfg = small_cfg();
  cfg.omega_t = {0, 1, 2, 3};
  cfg.omega_c = {0, 1, 2, 3, 4, 5, 6, 7};
  ChannelMatrix h(4, 8);
  Rng r(6);
  for (int a = 0; a < 4; ++a)
    for (int c = 0; c < 8; ++c) h(a, c) = r.cnormal(1.0);
  CHECK((extract_partial(h, cfg).entries - h).norm() == 0.0);
}

TEST_CASE("disturbance model moments and determinism") {
  PartialChannel hp;
  hp.entries = CMat::Ones(250, 400);  // 1e5 entries
  PartialChannel zero = disturb_partial(hp, 0.0, 123);
  CHECK((zero.entries - hp.entries).norm() == 0.0);

  PartialChannel d1 = disturb_partial(hp, 0.1, 123);
  PartialChannel d2 = disturb_partial(hp, 0.1, 123);
  CHECK((d1.entries - d2.entries).norm() == 0.0);
  PartialChannel d3 = disturb_partial(hp, 0.1, 124);
  CHECK((d1.entries - d3.entries).norm() > 0.0);

  double sum = 0, sum2 = 0;
  const double n = 250.0 * 400;
  for (Eigen::Index a = 0; a < 250; ++a)
    for (Eigen::Index b = 0; b < 400; ++b) {
      double m = d1.entries(a, b).real();
      sum += m;
      sum2 += m * m;
    }
  double mean = sum / n;
  double stdev = std::sqrt(sum2 / n - mean * mean);
  CHECK(mean >= 0.999);
  CHECK(mean <= 1.001);
  CHECK(stdev >= 0.099);
  CHECK(stdev <= 0.101);
}

TEST_CASE("NMSE definition") {
  CMat t(2, 2);
  t << Complex(1, 0), Complex(0, 2), Complex(-1, 1), Complex(3, -1);
  CHECK(nmse(t, t) == 0.0);
  CHECK(nmse(t, CMat::Zero(2, 2)) == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(nmse(t, 2 * t) == Catch::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(nmse(CMat::Zero(2, 2), t), NumericError);
  CHECK(nmse_db(0.1) == Catch::Approx(-10.0).epsilon(1e-12));
}

TEST_CASE("config validation rejects malformed pilot sets") {
  SystemConfig cfg = small_cfg();
  cfg.omega_t = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.omega_t = {0, 0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.omega_t = {0, 4};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.omega_t = {3, 1};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_cfg();
  cfg.bandwidth = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
