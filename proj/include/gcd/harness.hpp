#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gcd/dataset.hpp"

namespace gcd {

// ---------------------------------------------------------------------------
// Experiment specification
// ---------------------------------------------------------------------------

struct ScenarioSpec {
  std::uint64_t scene_seed = 1;
  int n_buildings = 6;
  double area_side = 120.0;
  double bs_height = 25.0;
};

// Everything a full reproduction needs. Together with the seeds embedded in
// it, a spec determines every emitted byte: datasets, checkpoints, reports.
struct ExperimentSpec {
  std::vector<ScenarioSpec> scenarios;  // >= 1; cross-scenario ops use several
  SystemConfig system;

  double grid_step = 4.0;    // virtual-user grid pitch, meters
  double grid_height = 1.5;  // virtual-user antenna height
  int max_order = 2;         // tracer bounce cap

  int train_count = 0, val_count = 0, test_count = 0;
  int n_neighbors = 8;  // neighbor features stored per sample

  nn::ModelConfig model;  // free architecture knobs; sizes filled in later
  nn::TrainConfig train;

  std::vector<int> sweep_neighbors;
  std::vector<double> sweep_position_error;  // meters
  std::vector<double> sweep_disturbance;     // relative sigma
  std::vector<double> sweep_building_shift;  // meters
  std::vector<int> sweep_vehicles;           // vehicle counts

  int cross_train_count = 3;     // scenarios trained on jointly
  int finetune_steps = 200;      // optimizer updates on the new scenario
  int finetune_eval_every = 25;  // trajectory sampling interval

  std::uint64_t seed = 1;  // master seed; all derived seeds hash off it
  int threads = 1;         // generation/evaluation workers (result-invariant)

  void validate() const;
};

namespace detail {

inline constexpr std::uint64_t kTagSplit = 0xd57a5;      // dataset split seeds
inline constexpr std::uint64_t kTagModel = 0x3eed5;      // model init seed
inline constexpr std::uint64_t kTagTrain = 0x7ea15;      // trainer seed
inline constexpr std::uint64_t kTagEval = 0xe7a15;       // evaluation draws
inline constexpr std::uint64_t kTagPerturb = 0x5caf7;    // building shifts
inline constexpr std::uint64_t kTagVehicles = 0xca225;   // vehicle placement
inline constexpr std::uint64_t kTagFinetune = 0xf17e5;   // finetune shuffles

}  // namespace detail

// The model sizes follow the radio configuration; only architecture knobs
// (depths, width, heads, activation) come from the spec's model block.
inline nn::ModelConfig model_for(const ExperimentSpec& spec,
                                 nn::ModelKind kind) {
  nn::ModelConfig mc = spec.model;
  mc.kind = kind;
  mc.n_t = spec.system.n_bs_antennas;
  mc.n_c = spec.system.n_subcarriers;
  mc.n_t0 = static_cast<int>(spec.system.omega_t.size());
  mc.n_c0 = static_cast<int>(spec.system.omega_c.size());
  mc.n_max = spec.train.n_max;
  mc.seed = mix64(spec.seed, detail::kTagModel);
  mc.validate();
  return mc;
}

// Both schemes train with the same seed so they see identical shuffles and
// draw protocols; their per-sample data is identical by construction.
inline nn::TrainConfig train_config_for(const ExperimentSpec& spec) {
  nn::TrainConfig tc = spec.train;
  tc.seed = mix64(spec.seed, detail::kTagTrain);
  return tc;
}

inline void ExperimentSpec::validate() const {
  if (scenarios.empty()) throw ConfigError("spec needs at least one scenario");
  for (const auto& sc : scenarios) {
    if (sc.n_buildings < 0) throw ConfigError("building count must be >= 0");
    if (sc.area_side <= 0) throw ConfigError("area side must be positive");
    if (sc.bs_height <= 0) throw ConfigError("BS height must be positive");
  }
  system.validate();
  if (grid_step <= 0) throw ConfigError("grid step must be positive");
  if (grid_height <= 0) throw ConfigError("grid height must be positive");
  if (max_order < 0 || max_order > 3)
    throw ConfigError("max_order must be in [0, 3]");
  if (train_count < 1 || val_count < 1 || test_count < 1)
    throw ConfigError("dataset sizes must be >= 1");
  if (n_neighbors < 0) throw ConfigError("neighbor count must be >= 0");
  if (n_neighbors < train.n_max)
    throw ConfigError("stored neighbors must cover the training n_max");
  train.validate();
  model_for(*this, nn::ModelKind::deduction);    // validates sizes
  model_for(*this, nn::ModelKind::pilot_mixer);  // validates baseline depth
  for (int v : sweep_neighbors)
    if (v < 0) throw ConfigError("sweep values must be >= 0");
  for (double v : sweep_position_error)
    if (v < 0) throw ConfigError("sweep values must be >= 0");
  for (double v : sweep_disturbance)
    if (v < 0) throw ConfigError("sweep values must be >= 0");
  for (double v : sweep_building_shift)
    if (v < 0) throw ConfigError("sweep values must be >= 0");
  for (int v : sweep_vehicles)
    if (v < 0) throw ConfigError("sweep values must be >= 0");
  if (cross_train_count < 1)
    throw ConfigError("cross-scenario training count must be >= 1");
  if (finetune_steps < 0) throw ConfigError("finetune steps must be >= 0");
  if (finetune_eval_every < 1)
    throw ConfigError("finetune eval interval must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

// Default benchmark profile: an 8x32 array/subcarrier system observing one
// pilot entry in sixteen, five procedurally generated 120 m scenarios.
inline ExperimentSpec desk_profile() {
  ExperimentSpec s;
  s.system.f_center = 5e9;
  s.system.bandwidth = 40e6;
  s.system.n_subcarriers = 32;
  s.system.n_bs_antennas = 8;
  s.system.antenna_spacing = s.system.wavelength() / 2;
  s.system.omega_t = {0, 4};
  s.system.omega_c = {0, 4, 8, 12, 16, 20, 24, 28};

  s.grid_step = 4.0;
  s.grid_height = 1.5;
  s.max_order = 2;

  s.train_count = 2000;
  s.val_count = 500;
  s.test_count = 500;
  s.n_neighbors = 8;

  s.model.k_mixer = 3;
  s.model.l_encoder = 6;
  s.model.hidden = 0;  // -> n_t * n_c / 2 = 128
  s.model.heads = 4;
  s.model.baseline_layers = 8;

  s.train.epochs = 150;
  s.train.batch_size = 64;
  s.train.lr_initial = 1e-3;
  s.train.lr_decay_factor = 0.8;
  s.train.lr_decay_every = 100;
  s.train.n_max = 8;
  s.train.sigma_z = 0.5;
  s.train.threads = 4;

  s.sweep_neighbors = {0, 1, 2, 4, 8};
  s.sweep_position_error = {0, 1, 2, 4};
  s.sweep_disturbance = {0, 0.05, 0.1};
  s.sweep_building_shift = {0, 1, 2};
  s.sweep_vehicles = {0, 10, 25};

  s.cross_train_count = 3;
  s.finetune_steps = 200;
  s.finetune_eval_every = 25;

  s.seed = 1;
  s.threads = 4;
  for (std::uint64_t k = 0; k < 5; ++k)
    s.scenarios.push_back({k + 1, 6, 120.0, 25.0});
  return s;
}

// ---------------------------------------------------------------------------
// Spec file: line/token text, '#' comments, canonical field order on write.
// ---------------------------------------------------------------------------

inline std::string experiment_to_text(const ExperimentSpec& s) {
  std::string t = "gcd-experiment format_version 1\n";
  auto num = [&](double v) { t += ' ' + format_double(v); };
  auto count = [&](std::int64_t v) { t += ' ' + std::to_string(v); };
  t += "seed " + std::to_string(s.seed) + "\n";
  t += "threads";
  count(s.threads);
  t += "\nsystem";
  num(s.system.f_center);
  num(s.system.bandwidth);
  count(s.system.n_subcarriers);
  count(s.system.n_bs_antennas);
  num(s.system.antenna_spacing);
  t += "\nomega_t";
  for (int v : s.system.omega_t) count(v);
  t += "\nomega_c";
  for (int v : s.system.omega_c) count(v);
  t += "\ngrid";
  num(s.grid_step);
  num(s.grid_height);
  count(s.max_order);
  t += "\nsizes";
  count(s.train_count);
  count(s.val_count);
  count(s.test_count);
  t += "\nneighbors";
  count(s.n_neighbors);
  t += "\nmodel";
  count(s.model.k_mixer);
  count(s.model.l_encoder);
  count(s.model.hidden);
  count(s.model.heads);
  count(s.model.baseline_layers);
  t += s.model.act == nn::Activation::gelu
           ? " gelu"
           : (s.model.act == nn::Activation::tanh_act ? " tanh" : " relu");
  t += "\ntrain";
  count(s.train.epochs);
  count(s.train.batch_size);
  num(s.train.lr_initial);
  num(s.train.lr_decay_factor);
  count(s.train.lr_decay_every);
  count(s.train.n_max);
  num(s.train.sigma_z);
  count(s.train.threads);
  t += "\ncross_train";
  count(s.cross_train_count);
  t += "\nfinetune";
  count(s.finetune_steps);
  count(s.finetune_eval_every);
  t += "\n";
  auto int_list = [&](const char* key, const std::vector<int>& vs) {
    if (vs.empty()) return;
    t += key;
    for (int v : vs) count(v);
    t += "\n";
  };
  auto dbl_list = [&](const char* key, const std::vector<double>& vs) {
    if (vs.empty()) return;
    t += key;
    for (double v : vs) num(v);
    t += "\n";
  };
  int_list("sweep_neighbors", s.sweep_neighbors);
  dbl_list("sweep_position_error", s.sweep_position_error);
  dbl_list("sweep_disturbance", s.sweep_disturbance);
  dbl_list("sweep_building_shift", s.sweep_building_shift);
  int_list("sweep_vehicles", s.sweep_vehicles);
  for (const auto& sc : s.scenarios) {
    t += "scenario " + std::to_string(sc.scene_seed);
    count(sc.n_buildings);
    num(sc.area_side);
    num(sc.bs_height);
    t += "\n";
  }
  return t;
}

inline ExperimentSpec experiment_from_tokens(const TextTokens& tt) {
  if (tt.size() == 0 || tt.line(0).size() != 3 ||
      tt.line(0)[0] != "gcd-experiment" || tt.line(0)[1] != "format_version")
    throw ConfigError("experiment file: bad header");
  if (tt.line(0)[2] != "1")
    throw ConfigError("unsupported experiment format version");

  ExperimentSpec s;
  s.scenarios.clear();
  bool saw_system = false, saw_sizes = false, saw_model = false,
       saw_train = false;
  auto want = [](const std::vector<std::string>& l, std::size_t n) {
    if (l.size() != n)
      throw ConfigError("experiment file: '" + l[0] + "' expects " +
                        std::to_string(n - 1) + " values");
  };
  for (std::size_t i = 1; i < tt.size(); ++i) {
    const auto& l = tt.line(i);
    const std::string& key = l[0];
    if (key == "seed") {
      want(l, 2);
      s.seed = static_cast<std::uint64_t>(parse_int(l[1]));
    } else if (key == "threads") {
      want(l, 2);
      s.threads = static_cast<int>(parse_int(l[1]));
    } else if (key == "system") {
      want(l, 6);
      s.system.f_center = parse_double(l[1]);
      s.system.bandwidth = parse_double(l[2]);
      s.system.n_subcarriers = static_cast<int>(parse_int(l[3]));
      s.system.n_bs_antennas = static_cast<int>(parse_int(l[4]));
      s.system.antenna_spacing = parse_double(l[5]);
      saw_system = true;
    } else if (key == "omega_t" || key == "omega_c") {
      auto& om = key == "omega_t" ? s.system.omega_t : s.system.omega_c;
      om.clear();
      for (std::size_t k = 1; k < l.size(); ++k)
        om.push_back(static_cast<int>(parse_int(l[k])));
    } else if (key == "grid") {
      want(l, 4);
      s.grid_step = parse_double(l[1]);
      s.grid_height = parse_double(l[2]);
      s.max_order = static_cast<int>(parse_int(l[3]));
    } else if (key == "sizes") {
      want(l, 4);
      s.train_count = static_cast<int>(parse_int(l[1]));
      s.val_count = static_cast<int>(parse_int(l[2]));
      s.test_count = static_cast<int>(parse_int(l[3]));
      saw_sizes = true;
    } else if (key == "neighbors") {
      want(l, 2);
      s.n_neighbors = static_cast<int>(parse_int(l[1]));
    } else if (key == "model") {
      want(l, 7);
      s.model.k_mixer = static_cast<int>(parse_int(l[1]));
      s.model.l_encoder = static_cast<int>(parse_int(l[2]));
      s.model.hidden = static_cast<int>(parse_int(l[3]));
      s.model.heads = static_cast<int>(parse_int(l[4]));
      s.model.baseline_layers = static_cast<int>(parse_int(l[5]));
      if (l[6] == "gelu")
        s.model.act = nn::Activation::gelu;
      else if (l[6] == "tanh")
        s.model.act = nn::Activation::tanh_act;
      else if (l[6] == "relu")
        s.model.act = nn::Activation::relu;
      else
        throw ConfigError("unknown activation '" + l[6] + "'");
      saw_model = true;
    } else if (key == "train") {
      want(l, 9);
      s.train.epochs = static_cast<int>(parse_int(l[1]));
      s.train.batch_size = static_cast<int>(parse_int(l[2]));
      s.train.lr_initial = parse_double(l[3]);
      s.train.lr_decay_factor = parse_double(l[4]);
      s.train.lr_decay_every = static_cast<int>(parse_int(l[5]));
      s.train.n_max = static_cast<int>(parse_int(l[6]));
      s.train.sigma_z = parse_double(l[7]);
      s.train.threads = static_cast<int>(parse_int(l[8]));
      saw_train = true;
    } else if (key == "cross_train") {
      want(l, 2);
      s.cross_train_count = static_cast<int>(parse_int(l[1]));
    } else if (key == "finetune") {
      want(l, 3);
      s.finetune_steps = static_cast<int>(parse_int(l[1]));
      s.finetune_eval_every = static_cast<int>(parse_int(l[2]));
    } else if (key == "sweep_neighbors" || key == "sweep_vehicles") {
      auto& vs =
          key == "sweep_neighbors" ? s.sweep_neighbors : s.sweep_vehicles;
      vs.clear();
      for (std::size_t k = 1; k < l.size(); ++k)
        vs.push_back(static_cast<int>(parse_int(l[k])));
    } else if (key == "sweep_position_error" || key == "sweep_disturbance" ||
               key == "sweep_building_shift") {
      auto& vs = key == "sweep_position_error"
                     ? s.sweep_position_error
                     : (key == "sweep_disturbance" ? s.sweep_disturbance
                                                   : s.sweep_building_shift);
      vs.clear();
      for (std::size_t k = 1; k < l.size(); ++k)
        vs.push_back(parse_double(l[k]));
    } else if (key == "scenario") {
      want(l, 5);
      ScenarioSpec sc;
      sc.scene_seed = static_cast<std::uint64_t>(parse_int(l[1]));
      sc.n_buildings = static_cast<int>(parse_int(l[2]));
      sc.area_side = parse_double(l[3]);
      sc.bs_height = parse_double(l[4]);
      s.scenarios.push_back(sc);
    } else {
      throw ConfigError("experiment file: unknown key '" + key + "'");
    }
  }
  if (!saw_system || !saw_sizes || !saw_model || !saw_train ||
      s.scenarios.empty())
    throw ConfigError(
        "experiment file: system, sizes, model, train, and at least one "
        "scenario are required");
  s.validate();
  return s;
}

inline void write_experiment(const std::string& path,
                             const ExperimentSpec& s) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << experiment_to_text(s);
  if (!out) throw ConfigError("write failure: " + path);
}

inline ExperimentSpec read_experiment(const std::string& path) {
  return experiment_from_tokens(TextTokens::from_file(path));
}

// ---------------------------------------------------------------------------
// Reports: per-sample NMSE arrays plus order statistics and empirical CDFs.
// NMSE values are linear; convert with nmse_db for presentation.
// ---------------------------------------------------------------------------

struct ReportSection {
  std::string label;       // scheme or scheme+condition name
  double axis_value = 0;   // sweep value / scenario index / step
  std::vector<double> nmse;  // one entry per evaluated test sample
};

struct Report {
  std::vector<ReportSection> sections;
};

struct Summary {
  std::size_t count = 0;
  double median = 0, q1 = 0, q3 = 0, p10 = 0, p90 = 0;
};

namespace detail {

// Linear interpolation between closest ranks on pre-sorted data.
inline double percentile_sorted(const std::vector<double>& v, double p) {
  double idx = (p / 100.0) * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(idx);
  auto hi = std::min(lo + 1, v.size() - 1);
  double frac = idx - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

}  // namespace detail

inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) throw ConfigError("percentile of an empty sample set");
  if (p < 0 || p > 100) throw ConfigError("percentile must be in [0, 100]");
  std::sort(v.begin(), v.end());
  return detail::percentile_sorted(v, p);
}

inline Summary summarize(std::vector<double> v) {
  if (v.empty()) throw ConfigError("summary of an empty sample set");
  std::sort(v.begin(), v.end());
  Summary s;
  s.count = v.size();
  s.p10 = detail::percentile_sorted(v, 10);
  s.q1 = detail::percentile_sorted(v, 25);
  s.median = detail::percentile_sorted(v, 50);
  s.q3 = detail::percentile_sorted(v, 75);
  s.p90 = detail::percentile_sorted(v, 90);
  return s;
}

// Empirical CDF: (value, fraction of samples <= value) at each sorted sample.
inline std::vector<std::pair<double, double>> cdf_points(
    std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<std::pair<double, double>> pts;
  pts.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    pts.emplace_back(v[i], static_cast<double>(i + 1) /
                               static_cast<double>(v.size()));
  return pts;
}

inline const ReportSection* find_section(const Report& r,
                                         const std::string& label,
                                         double axis_value) {
  for (const auto& s : r.sections)
    if (s.label == label && s.axis_value == axis_value) return &s;
  return nullptr;
}

namespace detail {

inline std::ofstream open_text_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // fixed '\n' on every platform
  if (!out) throw ConfigError("cannot open for writing: " + path);
  return out;
}

}  // namespace detail

// Three files per report: raw per-sample values, order statistics, CDFs.
// Every number is written in shortest-round-trip form, so identical reports
// serialize to identical bytes.
inline void write_report_csv(const std::string& dir, const std::string& name,
                             const Report& rep) {
  std::filesystem::create_directories(dir);
  auto path = [&](const char* suffix) {
    return (std::filesystem::path(dir) / (name + suffix)).string();
  };
  {
    auto out = detail::open_text_out(path("_samples.csv"));
    out << "label,axis,sample,nmse\n";
    for (const auto& s : rep.sections)
      for (std::size_t i = 0; i < s.nmse.size(); ++i)
        out << s.label << ',' << format_double(s.axis_value) << ',' << i << ','
            << format_double(s.nmse[i]) << '\n';
  }
  {
    auto out = detail::open_text_out(path("_summary.csv"));
    out << "label,axis,count,median,q1,q3,p10,p90,median_db\n";
    for (const auto& s : rep.sections) {
      Summary m = summarize(s.nmse);
      out << s.label << ',' << format_double(s.axis_value) << ',' << m.count
          << ',' << format_double(m.median) << ',' << format_double(m.q1)
          << ',' << format_double(m.q3) << ',' << format_double(m.p10) << ','
          << format_double(m.p90) << ',' << format_double(nmse_db(m.median))
          << '\n';
    }
  }
  {
    auto out = detail::open_text_out(path("_cdf.csv"));
    out << "label,axis,nmse,fraction\n";
    for (const auto& s : rep.sections)
      for (const auto& [v, f] : cdf_points(s.nmse))
        out << s.label << ',' << format_double(s.axis_value) << ','
            << format_double(v) << ',' << format_double(f) << '\n';
  }
}

// Wall-clock time is deliberately not emitted: files must be rerun-identical.
inline void write_history_csv(const std::string& dir, const std::string& name,
                              const std::vector<nn::EpochStats>& history) {
  std::filesystem::create_directories(dir);
  auto out = detail::open_text_out(
      (std::filesystem::path(dir) / (name + "_history.csv")).string());
  out << "epoch,lr,train_loss,val_loss\n";
  for (const auto& e : history)
    out << e.epoch << ',' << format_double(e.lr) << ','
        << format_double(e.train_loss) << ',' << format_double(e.val_loss)
        << '\n';
}

// ---------------------------------------------------------------------------
// Scenario preparation and on-disk layout
// ---------------------------------------------------------------------------

struct ScenarioData {
  Scene scene;
  FeatureSet features;
  Dataset train, val, test;
};

inline ScenarioData prepare_scenario(const ExperimentSpec& spec,
                                     std::size_t index) {
  spec.validate();
  if (index >= spec.scenarios.size())
    throw ConfigError("scenario index out of range");
  const ScenarioSpec& sc = spec.scenarios[index];
  ScenarioData sd;
  sd.scene = generate_scene(sc.scene_seed, sc.n_buildings, sc.area_side,
                            sc.bs_height);
  sd.features = build_feature_set(sd.scene, spec.grid_step, spec.grid_height,
                                  spec.max_order, spec.threads);
  DatasetConfig dc;
  dc.n_neighbors = spec.n_neighbors;
  dc.max_order = spec.max_order;
  dc.threads = spec.threads;
  auto gen = [&](int count, std::uint64_t split) {
    dc.count = count;
    return generate_dataset(sd.scene, sd.features, spec.system, dc,
                            mix64(spec.seed, detail::kTagSplit, split, index));
  };
  sd.train = gen(spec.train_count, 0);
  sd.val = gen(spec.val_count, 1);
  sd.test = gen(spec.test_count, 2);
  return sd;
}

namespace detail {

inline std::string scenario_file(const std::string& dir, const char* stem,
                                 std::size_t index, const char* ext) {
  return (std::filesystem::path(dir) /
          (std::string(stem) + "_" + std::to_string(index) + ext))
      .string();
}

}  // namespace detail

inline void save_scenario_data(const std::string& dir, std::size_t index,
                               const ScenarioData& sd) {
  std::filesystem::create_directories(dir);
  write_scene(detail::scenario_file(dir, "scene", index, ".txt"), sd.scene);
  write_feature_set(detail::scenario_file(dir, "features", index, ".gcdf"),
                    sd.features);
  write_dataset(detail::scenario_file(dir, "train", index, ".gcdd"), sd.train);
  write_dataset(detail::scenario_file(dir, "val", index, ".gcdd"), sd.val);
  write_dataset(detail::scenario_file(dir, "test", index, ".gcdd"), sd.test);
}

inline ScenarioData load_scenario_data(const std::string& dir,
                                       std::size_t index) {
  ScenarioData sd;
  sd.scene = read_scene(detail::scenario_file(dir, "scene", index, ".txt"));
  sd.features =
      read_feature_set(detail::scenario_file(dir, "features", index, ".gcdf"));
  expect_scene_match(sd.features, sd.scene);
  sd.train = read_dataset(detail::scenario_file(dir, "train", index, ".gcdd"));
  sd.val = read_dataset(detail::scenario_file(dir, "val", index, ".gcdd"));
  sd.test = read_dataset(detail::scenario_file(dir, "test", index, ".gcdd"));
  return sd;
}

// ---------------------------------------------------------------------------
// Evaluation core
// ---------------------------------------------------------------------------

// One test sample ready for any scheme: the (unnormalized) ground truth, the
// observed partial channel, and the per-token feature lists. `draw_seed`
// fixes the placeholder randomness, so a sample is evaluated on identical
// draws in every section and for every scheme.
struct EvalCase {
  ChannelMatrix truth;
  PartialChannel partial;
  std::vector<std::vector<CompactPath>> features;
  std::vector<int> feature_sources;
  std::uint64_t draw_seed = 0;
};

// Metric plumbing shared by all schemes (and the truth-injection dummy).
inline std::vector<double> evaluate_estimates(
    const std::vector<ChannelMatrix>& truths,
    const std::vector<ChannelMatrix>& estimates) {
  if (truths.size() != estimates.size())
    throw ConfigError("truth/estimate counts differ");
  std::vector<double> out(truths.size());
  for (std::size_t i = 0; i < truths.size(); ++i)
    out[i] = nmse(truths[i], estimates[i]);
  return out;
}

// Runs the model over the cases and returns per-sample NMSE against the
// unnormalized truth. Parallel across samples with disjoint writes: the
// result is independent of the worker count.
inline std::vector<double> evaluate_model(const nn::Model& model,
                                          const SystemConfig& sys,
                                          const std::vector<EvalCase>& cases,
                                          double sigma_z, int threads = 1) {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  const bool use_pseudos =
      model.config().kind == nn::ModelKind::deduction;
  std::vector<double> out(cases.size(), 0.0);

  auto worker = [&](std::size_t first, std::size_t stride,
                    std::exception_ptr& err) {
    try {
      nn::Model::Ws ws;
      for (std::size_t i = first; i < cases.size(); i += stride) {
        const EvalCase& c = cases[i];
        PartialChannel partial = c.partial;
        std::vector<PseudoChannel> pseudos;
        if (use_pseudos) {
          pseudos.reserve(c.features.size());
          for (std::size_t j = 0; j < c.features.size(); ++j)
            pseudos.push_back(build_pseudo_channel(
                c.features[j], sys, sigma_z, mix64(c.draw_seed, j),
                c.feature_sources[j]));
        }
        NormalizationState st = normalize_bundle(nullptr, partial, pseudos);
        CMat est = model.forward(ws, partial, pseudos);
        out[i] = nmse(c.truth, denormalize(est, st));
      }
    } catch (...) {
      err = std::current_exception();
    }
  };

  if (threads == 1 || cases.size() <= 1) {
    std::exception_ptr err;
    worker(0, 1, err);
    if (err) std::rethrow_exception(err);
    return out;
  }
  auto n_workers = std::min<std::size_t>(
      static_cast<std::size_t>(threads), cases.size());
  std::vector<std::exception_ptr> errs(n_workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w)
    pool.emplace_back(worker, w, n_workers, std::ref(errs[w]));
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

namespace detail {

inline std::uint64_t eval_draw_seed(const ExperimentSpec& spec,
                                    std::size_t scenario_index,
                                    std::size_t sample_index) {
  return mix64(spec.seed, kTagEval, scenario_index, sample_index);
}

inline EvalCase stored_eval_case(const ExperimentSpec& spec,
                                 std::size_t scenario_index,
                                 const DatasetSample& s, std::size_t i,
                                 const FeatureSet& fs, int n_tokens) {
  if (n_tokens > static_cast<int>(s.neighbor_indices.size()))
    throw ConfigError("requested more neighbors than the dataset stores");
  EvalCase c;
  c.truth = s.h_full;
  c.partial = s.h_partial;
  c.draw_seed = eval_draw_seed(spec, scenario_index, i);
  for (int j = 0; j < n_tokens; ++j) {
    int idx = s.neighbor_indices[static_cast<std::size_t>(j)];
    if (idx < 0 || idx >= fs.count())
      throw ConfigError("stored neighbor index out of range");
    c.features.push_back(fs.entries[static_cast<std::size_t>(idx)]);
    c.feature_sources.push_back(idx);
  }
  return c;
}

}  // namespace detail

// Baseline protocol: the stored nearest-neighbor features, n_tokens of them.
inline std::vector<EvalCase> eval_cases_stored(const ExperimentSpec& spec,
                                               std::size_t scenario_index,
                                               const Dataset& test,
                                               const FeatureSet& fs,
                                               int n_tokens) {
  if (n_tokens < 0) throw ConfigError("token count must be >= 0");
  std::vector<EvalCase> cases;
  cases.reserve(test.samples.size());
  for (std::size_t i = 0; i < test.samples.size(); ++i)
    cases.push_back(detail::stored_eval_case(spec, scenario_index,
                                             test.samples[i], i, fs,
                                             n_tokens));
  return cases;
}

// Re-queries neighbors at the (optionally error-displaced) reported position.
// With l=0 and the original feature set this reproduces the stored protocol
// exactly; with a perturbed-map feature set it serves the map-mismatch axes.
inline std::vector<EvalCase> eval_cases_requery(const ExperimentSpec& spec,
                                                std::size_t scenario_index,
                                                const Dataset& test,
                                                const FeatureSet& fs,
                                                double position_error) {
  std::vector<EvalCase> cases;
  cases.reserve(test.samples.size());
  for (std::size_t i = 0; i < test.samples.size(); ++i) {
    const DatasetSample& s = test.samples[i];
    EvalCase c;
    c.truth = s.h_full;
    c.partial = s.h_partial;
    c.draw_seed = detail::eval_draw_seed(spec, scenario_index, i);
    Vec2 reported{s.user_position.x(), s.user_position.y()};
    reported = apply_position_error(reported, position_error, c.draw_seed);
    NeighborQuery q{reported, spec.train.n_max};
    for (const Neighbor& nb : query_neighbors(fs, q)) {
      c.features.push_back(fs.entries[static_cast<std::size_t>(nb.index)]);
      c.feature_sources.push_back(nb.index);
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

// Multiplicative pilot-measurement disturbance on the observed entries.
inline std::vector<EvalCase> eval_cases_disturbed(const ExperimentSpec& spec,
                                                  std::size_t scenario_index,
                                                  const Dataset& test,
                                                  const FeatureSet& fs,
                                                  double sigma_d) {
  auto cases =
      eval_cases_stored(spec, scenario_index, test, fs, spec.train.n_max);
  for (auto& c : cases)
    c.partial = disturb_partial(c.partial, sigma_d, c.draw_seed);
  return cases;
}

// Environment-change axis: ground truths are re-traced in the augmented scene
// (parked vehicles present) while features still come from the static map.
// Samples that end up inside a vehicle or in outage are dropped.
inline std::vector<EvalCase> eval_cases_vehicles(const ExperimentSpec& spec,
                                                 std::size_t scenario_index,
                                                 const Dataset& test,
                                                 const FeatureSet& fs,
                                                 const Scene& augmented) {
  std::vector<EvalCase> cases;
  cases.reserve(test.samples.size());
  const AntennaModel bs_ant;
  for (std::size_t i = 0; i < test.samples.size(); ++i) {
    const DatasetSample& s = test.samples[i];
    if (point_in_building(augmented, s.user_position)) continue;
    PathSet paths = trace_paths(augmented, augmented.bs_position,
                                s.user_position, spec.max_order, true);
    if (paths.paths.empty()) continue;
    AntennaModel user_ant;
    user_ant.kind = AntennaModel::Kind::dipole;
    user_ant.orientation = s.user_antenna_axis;
    EvalCase c = detail::stored_eval_case(spec, scenario_index, s, i, fs,
                                          spec.train.n_max);
    c.truth = synthesize_channel(paths, spec.system, bs_ant, user_ant,
                                 MaterialModel{});
    c.partial = extract_partial(c.truth, spec.system);
    cases.push_back(std::move(c));
  }
  return cases;
}

// Deterministic parked-vehicle placement: uniform positions and headings,
// rejecting spots inside buildings, close to other vehicles, or near the BS.
inline std::vector<BuildingPrism> make_vehicles(const Scene& scene, int count,
                                                std::uint64_t seed) {
  if (count < 0) throw ConfigError("vehicle count must be >= 0");
  Rng rng(mix64(seed, detail::kTagVehicles));
  std::vector<BuildingPrism> out;
  std::vector<Vec2> centers;
  const double margin = 3.0;
  const double lim = scene.area_side / 2 - margin;
  const Vec2 bs2{scene.bs_position.x(), scene.bs_position.y()};
  for (int k = 0; k < count; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      Vec2 c = scene.area_center +
               Vec2{rng.uniform(-lim, lim), rng.uniform(-lim, lim)};
      double angle = rng.uniform(0.0, kPi);
      if ((c - bs2).norm() < 6.0) continue;
      if (point_in_building(scene,
                            Vec3{c.x(), c.y(), scene.ground_height + 0.5}))
        continue;
      bool clash = false;
      for (const auto& p : centers)
        if ((c - p).norm() < 5.5) {
          clash = true;
          break;
        }
      if (clash) continue;
      out.push_back(make_vehicle_box(c, angle, k, scene.ground_height));
      centers.push_back(c);
      ok = true;
    }
    if (!ok)
      throw ConfigError("could not place " + std::to_string(count) +
                        " vehicles in the scene");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Top-level protocol runs
// ---------------------------------------------------------------------------

struct SingleScenarioResult {
  Report report;        // sections: "gcd" and "pilot", axis 0
  nn::TrainResult gcd;
  nn::TrainResult pilot;
};

// Trains both schemes on the same data with the same seeds and evaluates
// them on bit-identical test cases.
inline SingleScenarioResult run_single_scenario_full(
    const ExperimentSpec& spec, const ScenarioData& sd) {
  spec.validate();
  const nn::TrainConfig tc = train_config_for(spec);
  const auto train_samples = to_train_samples(sd.train, sd.features);
  const auto val_samples = to_train_samples(sd.val, sd.features);
  const auto cases =
      eval_cases_stored(spec, 0, sd.test, sd.features, tc.n_max);

  SingleScenarioResult res;
  auto run_scheme = [&](nn::ModelKind kind, const char* label,
                        nn::TrainResult& slot) {
    nn::Model model(model_for(spec, kind));
    slot = nn::train(model, spec.system, train_samples, val_samples, tc);
    nn::Model best = nn::model_from_checkpoint(slot.checkpoint);
    res.report.sections.push_back(
        {label, 0.0,
         evaluate_model(best, spec.system, cases, tc.sigma_z, spec.threads)});
  };
  run_scheme(nn::ModelKind::deduction, "gcd", res.gcd);
  run_scheme(nn::ModelKind::pilot_mixer, "pilot", res.pilot);
  return res;
}

inline Report run_single_scenario(const ExperimentSpec& spec) {
  return run_single_scenario_full(spec, prepare_scenario(spec, 0)).report;
}

enum class SweepAxis {
  neighbors,
  position_error,
  disturbance,
  building_shift,
  vehicles
};

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "neighbors") return SweepAxis::neighbors;
  if (s == "position_error") return SweepAxis::position_error;
  if (s == "disturbance") return SweepAxis::disturbance;
  if (s == "building_shift") return SweepAxis::building_shift;
  if (s == "vehicles") return SweepAxis::vehicles;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

// Evaluates a fixed trained checkpoint across one robustness axis. No
// retraining; one report section per axis value.
inline Report run_sweep(const ExperimentSpec& spec, SweepAxis axis,
                        const nn::Checkpoint& ckpt, const ScenarioData& sd) {
  spec.validate();
  const nn::Model model = nn::model_from_checkpoint(ckpt);
  Report rep;
  auto push = [&](double value, const std::vector<EvalCase>& cases) {
    rep.sections.push_back(
        {"gcd", value,
         evaluate_model(model, spec.system, cases, spec.train.sigma_z,
                        spec.threads)});
  };
  switch (axis) {
    case SweepAxis::neighbors:
      if (spec.sweep_neighbors.empty())
        throw ConfigError("sweep axis has no values in the spec");
      for (int n : spec.sweep_neighbors)
        push(n, eval_cases_stored(spec, 0, sd.test, sd.features, n));
      break;
    case SweepAxis::position_error:
      if (spec.sweep_position_error.empty())
        throw ConfigError("sweep axis has no values in the spec");
      for (double l : spec.sweep_position_error)
        push(l, eval_cases_requery(spec, 0, sd.test, sd.features, l));
      break;
    case SweepAxis::disturbance:
      if (spec.sweep_disturbance.empty())
        throw ConfigError("sweep axis has no values in the spec");
      for (double s : spec.sweep_disturbance)
        push(s, eval_cases_disturbed(spec, 0, sd.test, sd.features, s));
      break;
    case SweepAxis::building_shift: {
      if (spec.sweep_building_shift.empty())
        throw ConfigError("sweep axis has no values in the spec");
      // A fixed seed makes the shift field a scaled version of one draw, so
      // the axis measures graded mismatch rather than resampled maps.
      const std::uint64_t pseed = mix64(spec.seed, detail::kTagPerturb);
      for (double s : spec.sweep_building_shift) {
        ScenePerturbation p;
        p.kind = PerturbKind::building_shift;
        p.shift_scale = s;
        Scene shifted = perturb_scene(sd.scene, p, pseed);
        FeatureSet pfs =
            build_feature_set(shifted, spec.grid_step, spec.grid_height,
                              spec.max_order, spec.threads);
        push(s, eval_cases_requery(spec, 0, sd.test, pfs, 0.0));
      }
      break;
    }
    case SweepAxis::vehicles: {
      if (spec.sweep_vehicles.empty())
        throw ConfigError("sweep axis has no values in the spec");
      const std::uint64_t vseed = mix64(spec.seed, detail::kTagVehicles);
      for (int count : spec.sweep_vehicles) {
        ScenePerturbation p;
        p.kind = PerturbKind::add_vehicles;
        p.vehicles = make_vehicles(sd.scene, count, vseed);
        Scene augmented = perturb_scene(sd.scene, p, vseed);
        push(count,
             eval_cases_vehicles(spec, 0, sd.test, sd.features, augmented));
      }
      break;
    }
  }
  return rep;
}

struct CrossScenarioResult {
  Report report;  // per scenario: "gcd zero-shot" / "pilot zero-shot"
  nn::TrainResult gcd;
  nn::TrainResult pilot;
};

// Joint training on the first cross_train_count scenarios, then zero-shot
// evaluation on every scenario (trained-on and held-out alike).
inline CrossScenarioResult run_cross_scenario_full(
    const ExperimentSpec& spec, const std::vector<ScenarioData>& data) {
  spec.validate();
  if (data.size() != spec.scenarios.size())
    throw ConfigError("scenario data count does not match the spec");
  const auto k = static_cast<std::size_t>(spec.cross_train_count);
  if (k < 2) throw ConfigError("cross-scenario training needs >= 2 scenarios");
  if (data.size() <= k)
    throw ConfigError("cross-scenario evaluation needs a held-out scenario");

  const nn::TrainConfig tc = train_config_for(spec);
  std::vector<nn::TrainSample> train_samples, val_samples;
  for (std::size_t s = 0; s < k; ++s) {
    auto tr = to_train_samples(data[s].train, data[s].features);
    auto va = to_train_samples(data[s].val, data[s].features);
    std::move(tr.begin(), tr.end(), std::back_inserter(train_samples));
    std::move(va.begin(), va.end(), std::back_inserter(val_samples));
  }

  CrossScenarioResult res;
  auto run_scheme = [&](nn::ModelKind kind, const char* label,
                        nn::TrainResult& slot) {
    nn::Model model(model_for(spec, kind));
    slot = nn::train(model, spec.system, train_samples, val_samples, tc);
    nn::Model best = nn::model_from_checkpoint(slot.checkpoint);
    for (std::size_t s = 0; s < data.size(); ++s) {
      auto cases = eval_cases_stored(spec, s, data[s].test, data[s].features,
                                     tc.n_max);
      res.report.sections.push_back(
          {std::string(label) + " zero-shot", static_cast<double>(s),
           evaluate_model(best, spec.system, cases, tc.sigma_z,
                          spec.threads)});
    }
  };
  run_scheme(nn::ModelKind::deduction, "gcd", res.gcd);
  run_scheme(nn::ModelKind::pilot_mixer, "pilot", res.pilot);
  return res;
}

inline Report run_cross_scenario(const ExperimentSpec& spec) {
  spec.validate();
  std::vector<ScenarioData> data;
  for (std::size_t s = 0; s < spec.scenarios.size(); ++s)
    data.push_back(prepare_scenario(spec, s));
  return run_cross_scenario_full(spec, data).report;
}

// Applies `steps` optimizer updates on the new scenario's training data and
// records NMSE trajectories (at step 0, every eval interval, and the final
// step) on the new scenario and on one previously trained scenario.
inline Report run_finetune(const ExperimentSpec& spec, int steps,
                           const nn::Checkpoint& start,
                           const ScenarioData& fresh, std::size_t fresh_index,
                           const ScenarioData& previous,
                           std::size_t previous_index) {
  spec.validate();
  if (steps < 0) throw ConfigError("finetune steps must be >= 0");

  nn::Model model = nn::model_from_checkpoint(start);
  nn::TrainConfig tc = train_config_for(spec);
  // A separate seed stream: finetune draws must not replay training draws.
  tc.seed = mix64(tc.seed, detail::kTagFinetune);

  const auto train_samples = to_train_samples(fresh.train, fresh.features);
  const auto cases_new = eval_cases_stored(spec, fresh_index, fresh.test,
                                           fresh.features, tc.n_max);
  const auto cases_prev = eval_cases_stored(spec, previous_index,
                                            previous.test, previous.features,
                                            tc.n_max);

  Report rep;
  auto record = [&](int step) {
    rep.sections.push_back(
        {"gcd finetune new", static_cast<double>(step),
         evaluate_model(model, spec.system, cases_new, tc.sigma_z,
                        spec.threads)});
    rep.sections.push_back(
        {"gcd finetune previous", static_cast<double>(step),
         evaluate_model(model, spec.system, cases_prev, tc.sigma_z,
                        spec.threads)});
  };
  record(0);
  if (steps == 0) return rep;

  nn::Adam adam(model, {tc.lr_initial, tc.beta1, tc.beta2, tc.eps});
  nn::Model::Ws ws;
  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle before first use
  std::uint64_t pass = 0;

  for (int step = 1; step <= steps; ++step) {
    model.zero_grad();
    double batch_loss = 0;
    const int m = std::min<int>(tc.batch_size,
                                static_cast<int>(train_samples.size()));
    for (int b = 0; b < m; ++b) {
      if (cursor == order.size()) {
        Rng shuffle_rng(mix64(tc.seed, detail::kTagFinetune, pass));
        shuffle_rng.shuffle(order);
        ++pass;
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      auto bundle = nn::detail::make_draw(train_samples[i], spec.system, tc,
                                          true, static_cast<int>(pass - 1),
                                          i);
      CMat out = model.forward(ws, bundle.partial, bundle.pseudos);
      batch_loss += nn::loss_mse(bundle.truth, out);
      CMat gout = nn::loss_mse_grad(bundle.truth, out);
      model.backward(ws, gout);
    }
    if (!std::isfinite(batch_loss))
      throw NumericError("non-finite loss at finetune step " +
                         std::to_string(step));
    const double inv_m = 1.0 / static_cast<double>(m);
    model.visit([&](nn::Tensor& p) { p.g *= inv_m; });
    adam.step(model, tc.lr_initial);
    if (step % spec.finetune_eval_every == 0 || step == steps) record(step);
  }
  return rep;
}

}  // namespace gcd
