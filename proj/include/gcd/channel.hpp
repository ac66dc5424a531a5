#pragma once

#include <map>
#include <vector>

#include "gcd/common.hpp"
#include "gcd/raytracer.hpp"
#include "gcd/rng.hpp"

namespace gcd {

// OFDM/array dimensions and the pilot index sets. The BS array is a ULA along
// the x axis with element n_t at x = n_t * antenna_spacing.
struct SystemConfig {
  double f_center = 0.0;    // Hz
  double bandwidth = 0.0;   // Hz
  int n_subcarriers = 0;    // N_c
  int n_bs_antennas = 0;    // N_t
  double antenna_spacing = 0.0;  // meters
  std::vector<int> omega_t;      // pilot antenna rows, strictly increasing
  std::vector<int> omega_c;      // pilot subcarrier cols, strictly increasing

  double delta_f() const { return bandwidth / n_subcarriers; }
  double wavelength() const { return kSpeedOfLight / f_center; }

  void validate() const {
    if (f_center <= 0 || bandwidth <= 0)
      throw ConfigError("carrier and bandwidth must be positive");
    if (n_subcarriers <= 0 || n_bs_antennas <= 0)
      throw ConfigError("array/subcarrier counts must be positive");
    if (antenna_spacing <= 0) throw ConfigError("antenna spacing must be positive");
    auto check_omega = [](const std::vector<int>& om, int n, const char* name) {
      if (om.empty()) throw ConfigError(std::string(name) + " must be nonempty");
      for (std::size_t i = 0; i < om.size(); ++i) {
        if (om[i] < 0 || om[i] >= n)
          throw ConfigError(std::string(name) + " index out of range");
        if (i > 0 && om[i] <= om[i - 1])
          throw ConfigError(std::string(name) + " must be strictly increasing");
      }
    };
    check_omega(omega_t, n_bs_antennas, "pilot antenna set");
    check_omega(omega_c, n_subcarriers, "pilot subcarrier set");
  }
};

struct AntennaModel {
  enum class Kind { isotropic, dipole };
  Kind kind = Kind::isotropic;
  Vec3 orientation{0, 0, 1};  // dipole axis

  void validate() const {
    if (kind == Kind::dipole && std::abs(orientation.norm() - 1.0) > 1e-12)
      throw ConfigError("dipole axis must be a unit vector");
  }
};

struct MaterialModel {
  double relative_permittivity = 5.0;
  std::map<int, double> face_override;  // face id -> permittivity

  double permittivity_for(int face_id) const {
    auto it = face_override.find(face_id);
    return it == face_override.end() ? relative_permittivity : it->second;
  }
  void validate() const {
    if (relative_permittivity < 1.0)
      throw ConfigError("relative permittivity must be >= 1");
    for (const auto& [id, eps] : face_override)
      if (eps < 1.0) throw ConfigError("relative permittivity must be >= 1");
  }
};

using ChannelMatrix = CMat;  // N_t x N_c

struct PartialChannel {
  CMat entries;  // |omega_t| x |omega_c|
  std::vector<int> omega_t, omega_c;
};

// Far-field vector of a Hertzian dipole along `axis` toward `dir`: magnitude
// sin(theta), polarized in the (axis, dir) plane orthogonal to dir. Zero when
// dir is parallel to axis.
inline Vec3 dipole_pattern(const Vec3& axis, const Vec3& dir) {
  return axis.dot(dir) * dir - axis;
}

inline Vec3 antenna_pattern(const AntennaModel& ant, const Vec3& dir) {
  if (ant.kind == AntennaModel::Kind::isotropic) return Vec3{0, 0, 1};
  return dipole_pattern(ant.orientation, dir);
}

namespace detail {

// 3x3 Fresnel reflection operator for incident propagation direction u
// (pointing into the surface), unit normal n (front side, u.n < 0), and
// relative permittivity eps. Maps the incident field vector (in the plane
// orthogonal to u) to the reflected field vector (orthogonal to the reflected
// direction u').
inline Eigen::Matrix3d fresnel_operator(const Vec3& u, const Vec3& n,
                                        double eps) {
  double cos_i = -u.dot(n);
  double sin2 = std::max(0.0, 1.0 - cos_i * cos_i);
  double g = std::sqrt(std::max(0.0, eps - sin2));
  double gamma_s = (cos_i - g) / (cos_i + g);
  double gamma_p = (eps * cos_i - g) / (eps * cos_i + g);

  Vec3 s = u.cross(n);
  double sn = s.norm();
  if (sn < 1e-12) {
    // normal incidence: any transverse frame works
    Vec3 helper = std::abs(u.x()) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    s = u.cross(helper).normalized();
  } else {
    s /= sn;
  }
  Vec3 up = u - 2.0 * u.dot(n) * n;  // reflected direction
  Vec3 p_in = s.cross(u);
  Vec3 p_out = s.cross(up);
  return gamma_s * (s * s.transpose()) + gamma_p * (p_out * p_in.transpose());
}

}  // namespace detail

// Geometric-optics channel synthesis: each traced path contributes an
// amplitude (free-space spread x antenna patterns x stacked Fresnel
// reflections), a carrier/delay phase, a per-subcarrier delay ramp, and a
// per-antenna ULA phase ramp. Static snapshot: the mobility phase factor is
// identically 1. Empty path sets yield the all-zero matrix (deep outage).
inline ChannelMatrix synthesize_channel(const PathSet& paths,
                                        const SystemConfig& cfg,
                                        const AntennaModel& bs_ant,
                                        const AntennaModel& user_ant,
                                        const MaterialModel& material) {
  cfg.validate();
  bs_ant.validate();
  user_ant.validate();
  material.validate();

  const int nt = cfg.n_bs_antennas, nc = cfg.n_subcarriers;
  ChannelMatrix h = ChannelMatrix::Zero(nt, nc);
  const double lambda = cfg.wavelength();
  const double k_wave = 2 * kPi / lambda;
  const double df = cfg.delta_f();

  Eigen::VectorXcd ant_ramp(nt), sub_ramp(nc);
  for (const auto& p : paths.paths) {
    // polyline tx -> bounce points -> rx
    std::vector<Vec3> pts;
    pts.push_back(paths.tx);
    for (const auto& in : p.interactions) pts.push_back(in.point);
    pts.push_back(paths.rx);

    // stacked reflection operators, applied in bounce order
    Eigen::Matrix3d xi = Eigen::Matrix3d::Identity();
    for (std::size_t j = 0; j < p.interactions.size(); ++j) {
      Vec3 u_in = (pts[j + 1] - pts[j]).normalized();
      Vec3 u_out = (pts[j + 2] - pts[j + 1]).normalized();
      // specular geometry determines the face normal: u_out = u_in - 2(u.n)n
      Vec3 d = u_out - u_in;
      Vec3 n;
      if (d.norm() < 1e-12) {
        // grazing limit: both coefficients -> -1, field transverse to u
        xi = (-(Eigen::Matrix3d::Identity() - u_in * u_in.transpose())) * xi;
        continue;
      }
      n = d.normalized();
      if (u_in.dot(n) > 0) n = -n;
      double eps = material.permittivity_for(p.interactions[j].face_id);
      xi = (detail::fresnel_operator(u_in, n, eps) * xi).eval();
    }

    Vec3 c_t = antenna_pattern(bs_ant, p.depart_dir);
    Vec3 c_r = antenna_pattern(user_ant, p.arrive_dir);
    double coupling = c_r.dot(xi * c_t);
    double alpha = lambda / (4 * kPi * p.length_m) * coupling;

    const double tau = p.length_m / kSpeedOfLight;
    const Complex carrier = std::exp(Complex{0, -2 * kPi * cfg.f_center * tau});
    const double ant_phase = k_wave * cfg.antenna_spacing * p.depart_dir.x();
    for (int a = 0; a < nt; ++a)
      ant_ramp(a) = std::exp(Complex{0, ant_phase * a});
    const double sub_phase = -2 * kPi * df * tau;
    for (int c = 0; c < nc; ++c)
      sub_ramp(c) = std::exp(Complex{0, sub_phase * c});

    h.noalias() += (alpha * carrier) * (ant_ramp * sub_ramp.transpose());
  }
  if (!h.allFinite()) throw NumericError("non-finite channel entries");
  return h;
}

inline PartialChannel extract_partial(const ChannelMatrix& h,
                                      const SystemConfig& cfg) {
  cfg.validate();
  if (h.rows() != cfg.n_bs_antennas || h.cols() != cfg.n_subcarriers)
    throw ConfigError("channel shape does not match the system config");
  PartialChannel out;
  out.omega_t = cfg.omega_t;
  out.omega_c = cfg.omega_c;
  out.entries.resize(static_cast<Eigen::Index>(cfg.omega_t.size()),
                     static_cast<Eigen::Index>(cfg.omega_c.size()));
  for (std::size_t a = 0; a < cfg.omega_t.size(); ++a)
    for (std::size_t b = 0; b < cfg.omega_c.size(); ++b)
      out.entries(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          h(cfg.omega_t[a], cfg.omega_c[b]);
  return out;
}

// Multiplicative measurement disturbance: every entry scaled by an independent
// real N(1, sigma_d^2) draw. Row-major (antenna-major) draw order.
inline PartialChannel disturb_partial(const PartialChannel& hp, double sigma_d,
                                      std::uint64_t seed) {
  if (sigma_d < 0) throw ConfigError("disturbance sigma must be >= 0");
  PartialChannel out = hp;
  if (sigma_d == 0) return out;
  Rng rng(mix64(seed, 0xd15707b));
  for (Eigen::Index a = 0; a < out.entries.rows(); ++a)
    for (Eigen::Index b = 0; b < out.entries.cols(); ++b)
      out.entries(a, b) *= rng.normal(1.0, sigma_d);
  return out;
}

inline double nmse(const CMat& truth, const CMat& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
    throw ConfigError("NMSE shapes differ");
  double denom = truth.squaredNorm();
  if (denom == 0.0)
    throw NumericError("NMSE undefined for a zero-power reference");
  return (truth - estimate).squaredNorm() / denom;
}

inline double nmse_db(double v) { return 10.0 * std::log10(v); }

}  // namespace gcd
