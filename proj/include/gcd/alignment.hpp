#pragma once

#include <vector>

#include "gcd/channel.hpp"
#include "gcd/feature_store.hpp"

namespace gcd {

// Channel-shaped embedding of one retrieved grid point's geometry. Built from
// (length, departure direction) pairs and random placeholders only — carrier
// phase, antenna patterns, and material responses are structurally absent.
struct PseudoChannel {
  CMat entries;  // N_t x N_c
  int source_grid_index = -1;
  std::uint64_t placeholder_seed = 0;
};

struct NormalizationState {
  double power = 1.0;  // mean per-entry power of the partial channel
};

// Pseudo-channel synthesis: per path, amplitude lambda/(4 pi d) times a
// circularly-symmetric complex Gaussian placeholder (std sigma_z total), a
// subcarrier delay ramp, and the ULA departure ramp. No carrier-phase term.
// `forced_z` (test hook) substitutes fixed placeholder values.
inline PseudoChannel build_pseudo_channel(
    const std::vector<CompactPath>& features, const SystemConfig& cfg,
    double sigma_z, std::uint64_t seed, int source_grid_index = -1,
    const std::vector<Complex>* forced_z = nullptr) {
  cfg.validate();
  if (sigma_z <= 0) throw ConfigError("placeholder sigma must be positive");
  if (forced_z && forced_z->size() != features.size())
    throw ConfigError("forced placeholder count mismatch");

  const int nt = cfg.n_bs_antennas, nc = cfg.n_subcarriers;
  PseudoChannel out;
  out.source_grid_index = source_grid_index;
  out.placeholder_seed = seed;
  out.entries = CMat::Zero(nt, nc);

  Rng rng(mix64(seed, 0xa11971));
  const double lambda = cfg.wavelength();
  const double k_wave = 2 * kPi / lambda;
  const double df = cfg.delta_f();
  Eigen::VectorXcd ant_ramp(nt), sub_ramp(nc);

  for (std::size_t p = 0; p < features.size(); ++p) {
    const auto& f = features[p];
    if (f.length_m <= 0) throw ConfigError("feature path with bad length");
    Complex z = forced_z ? (*forced_z)[p] : rng.cnormal(sigma_z);
    double tau = f.length_m / kSpeedOfLight;
    double amp = lambda / (4 * kPi * f.length_m);
    double ant_phase = k_wave * cfg.antenna_spacing * f.depart_dir.x();
    for (int a = 0; a < nt; ++a)
      ant_ramp(a) = std::exp(Complex{0, ant_phase * a});
    double sub_phase = -2 * kPi * df * tau;
    for (int c = 0; c < nc; ++c)
      sub_ramp(c) = std::exp(Complex{0, sub_phase * c});
    out.entries.noalias() += (amp * z) * (ant_ramp * sub_ramp.transpose());
  }
  if (!out.entries.allFinite())
    throw NumericError("non-finite pseudo-channel entries");
  return out;
}

// Power normalization: P_H is the mean per-entry power of the partial channel
// (the only matrix whose power is observable at inference); every matrix in
// the bundle is divided by sqrt(P_H). `h_full` may be null outside training.
inline NormalizationState normalize_bundle(ChannelMatrix* h_full,
                                           PartialChannel& h_partial,
                                           std::vector<PseudoChannel>& pseudos) {
  const double n_entries =
      static_cast<double>(h_partial.entries.rows() * h_partial.entries.cols());
  if (n_entries == 0) throw ConfigError("empty partial channel");
  NormalizationState st;
  st.power = h_partial.entries.squaredNorm() / n_entries;
  if (st.power <= 0.0)
    throw NumericError("zero-power partial channel (outage sample)");
  // Divide rather than multiply by a precomputed reciprocal: the per-entry
  // real quotients are then invariant under any common scaling of the bundle
  // whose effect on sqrt(power) is exact, which keeps normalized inputs
  // bit-identical across such rescalings of the raw data.
  const double root = std::sqrt(st.power);
  if (h_full) *h_full = *h_full / root;
  h_partial.entries = h_partial.entries / root;
  for (auto& ps : pseudos) ps.entries = ps.entries / root;
  return st;
}

inline ChannelMatrix denormalize(const ChannelMatrix& h,
                                 const NormalizationState& st) {
  if (st.power <= 0) throw ConfigError("invalid normalization state");
  return h * std::sqrt(st.power);
}

}  // namespace gcd
