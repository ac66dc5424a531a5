#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcd/harness.hpp"

using namespace gcd;

namespace {

// Small but non-trivial experiment: three buildings, 4x16 system, a few
// dozen samples, and a model tiny enough to train in milliseconds.
ExperimentSpec tiny_spec() {
  ExperimentSpec s;
  s.system.f_center = 5e9;
  s.system.bandwidth = 40e6;
  s.system.n_subcarriers = 16;
  s.system.n_bs_antennas = 4;
  s.system.antenna_spacing = s.system.wavelength() / 2;
  s.system.omega_t = {0, 2};
  s.system.omega_c = {0, 4, 8, 12};
  s.grid_step = 8.0;
  s.grid_height = 1.5;
  s.max_order = 2;
  s.train_count = 24;
  s.val_count = 8;
  s.test_count = 8;
  s.n_neighbors = 4;
  s.model.k_mixer = 1;
  s.model.l_encoder = 1;
  s.model.hidden = 16;
  s.model.heads = 2;
  s.model.baseline_layers = 2;
  s.train.epochs = 2;
  s.train.batch_size = 8;
  s.train.n_max = 2;
  s.train.threads = 1;
  s.threads = 1;
  s.cross_train_count = 2;
  s.finetune_eval_every = 2;
  s.scenarios = {{11, 3, 80.0, 20.0}};
  s.validate();
  return s;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tmp_dir(const char* name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

}  // namespace

TEST_CASE("experiment spec file round-trips byte-exactly") {
  ExperimentSpec s = desk_profile();
  std::string text = experiment_to_text(s);
  ExperimentSpec parsed = experiment_from_tokens(TextTokens(text));
  CHECK(experiment_to_text(parsed) == text);
  CHECK(parsed.seed == s.seed);
  CHECK(parsed.scenarios.size() == s.scenarios.size());
  CHECK(parsed.system.omega_c == s.system.omega_c);
  CHECK(parsed.sweep_disturbance == s.sweep_disturbance);
  CHECK(parsed.train.epochs == s.train.epochs);
  CHECK(parsed.model.baseline_layers == s.model.baseline_layers);

  auto dir = tmp_dir("gcd_spec_rt");
  write_experiment(dir + "/spec.txt", s);
  ExperimentSpec from_file = read_experiment(dir + "/spec.txt");
  CHECK(experiment_to_text(from_file) == text);
}

TEST_CASE("experiment spec parser accepts comments and rejects junk") {
  std::string text = experiment_to_text(tiny_spec());
  ExperimentSpec ok = experiment_from_tokens(
      TextTokens("# reproduction spec\n" + text + "\n# trailing comment\n"));
  CHECK(ok.train_count == 24);

  CHECK_THROWS_AS(experiment_from_tokens(TextTokens("nonsense 1\n")),
                  ConfigError);
  CHECK_THROWS_AS(
      experiment_from_tokens(TextTokens("gcd-experiment format_version 2\n")),
      ConfigError);
  CHECK_THROWS_AS(experiment_from_tokens(
                      TextTokens(text + "wrong_key 1 2 3\n")),
                  ConfigError);
  // activation must be one of the known names
  std::string bad = text;
  auto pos = bad.find(" gelu");
  REQUIRE(pos != std::string::npos);
  bad.replace(pos, 5, " selu");
  CHECK_THROWS_AS(experiment_from_tokens(TextTokens(bad)), ConfigError);
  // required blocks must be present
  CHECK_THROWS_AS(experiment_from_tokens(
                      TextTokens("gcd-experiment format_version 1\nseed 1\n")),
                  ConfigError);
}

TEST_CASE("experiment spec validation catches bad values") {
  ExperimentSpec s = tiny_spec();
  s.train_count = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.scenarios.clear();
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.sweep_position_error = {1.0, -0.5};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.n_neighbors = 1;  // below the training n_max of 2
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.finetune_eval_every = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("percentiles interpolate and order statistics are monotone") {
  std::vector<double> v = {4.0, 1.0, 3.0, 2.0};
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 4.0);
  CHECK(percentile(v, 50) == Catch::Approx(2.5));
  CHECK(percentile(v, 25) == Catch::Approx(1.75));

  std::vector<double> w;
  Rng rng(77);
  for (int i = 0; i < 101; ++i) w.push_back(rng.uniform(0.0, 5.0));
  Summary m = summarize(w);
  CHECK(m.count == w.size());
  CHECK(m.p10 <= m.q1);
  CHECK(m.q1 <= m.median);
  CHECK(m.median <= m.q3);
  CHECK(m.q3 <= m.p90);

  CHECK_THROWS_AS(percentile({}, 50), ConfigError);
  CHECK_THROWS_AS(percentile({1.0}, 101), ConfigError);
  CHECK_THROWS_AS(summarize({}), ConfigError);
}

TEST_CASE("empirical CDF is non-decreasing and reaches one") {
  std::vector<double> v = {0.3, 0.1, 0.2, 0.2};
  auto pts = cdf_points(v);
  REQUIRE(pts.size() == v.size());
  for (std::size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].first >= pts[i - 1].first);
    CHECK(pts[i].second >= pts[i - 1].second);
  }
  CHECK(pts.back().first == 0.3);
  CHECK(pts.back().second == 1.0);
}

TEST_CASE("truth injected as a dummy scheme gives a CDF step at zero") {
  Rng rng(5);
  std::vector<ChannelMatrix> truths;
  for (int i = 0; i < 10; ++i) {
    CMat h(2, 3);
    for (int a = 0; a < 2; ++a)
      for (int c = 0; c < 3; ++c) h(a, c) = rng.cnormal(1.0);
    truths.push_back(h);
  }
  auto nm = evaluate_estimates(truths, truths);
  for (double x : nm) CHECK(x == 0.0);
  auto pts = cdf_points(nm);
  for (auto& [value, fraction] : pts) CHECK(value == 0.0);
  CHECK(pts.back().second == 1.0);

  CHECK_THROWS_AS(
      evaluate_estimates(truths, std::vector<ChannelMatrix>(truths.begin(),
                                                            truths.end() - 1)),
      ConfigError);
}

TEST_CASE("report CSV emission is byte-deterministic") {
  Report rep;
  rep.sections.push_back({"gcd", 0.0, {0.5, 0.25, 1.0}});
  rep.sections.push_back({"pilot", 0.0, {0.75, 2.0, 0.125}});
  auto d1 = tmp_dir("gcd_csv_1");
  auto d2 = tmp_dir("gcd_csv_2");
  write_report_csv(d1, "single", rep);
  write_report_csv(d2, "single", rep);
  for (const char* f :
       {"single_samples.csv", "single_summary.csv", "single_cdf.csv"}) {
    auto a = file_bytes(d1 + "/" + f);
    CHECK(a == file_bytes(d2 + "/" + f));
    CHECK(a.find("label,axis") == 0);
  }
  // four data lines per section in samples: header + 3 rows each
  auto samples = file_bytes(d1 + "/single_samples.csv");
  CHECK(std::count(samples.begin(), samples.end(), '\n') == 7);

  std::vector<nn::EpochStats> hist = {{0, 1e-3, 0.5, 0.6, 12.0},
                                      {1, 1e-3, 0.4, 0.5, 11.0}};
  write_history_csv(d1, "gcd", hist);
  write_history_csv(d2, "gcd", hist);
  CHECK(file_bytes(d1 + "/gcd_history.csv") ==
        file_bytes(d2 + "/gcd_history.csv"));
  // wall-clock time must not leak into the file
  CHECK(file_bytes(d1 + "/gcd_history.csv").find("12") == std::string::npos);
}

TEST_CASE("scenario preparation is reproducible and saves round-trip") {
  ExperimentSpec spec = tiny_spec();
  ScenarioData a = prepare_scenario(spec, 0);
  ScenarioData b = prepare_scenario(spec, 0);

  CHECK(scene_to_text(a.scene) == scene_to_text(b.scene));
  CHECK(a.features.scene_digest == b.features.scene_digest);
  REQUIRE(a.train.samples.size() == static_cast<std::size_t>(spec.train_count));
  REQUIRE(a.val.samples.size() == static_cast<std::size_t>(spec.val_count));
  REQUIRE(a.test.samples.size() == static_cast<std::size_t>(spec.test_count));
  for (std::size_t i = 0; i < a.train.samples.size(); ++i)
    CHECK(a.train.samples[i].seed == b.train.samples[i].seed);
  // splits draw from distinct seed streams
  CHECK(a.train.samples[0].seed != a.val.samples[0].seed);
  CHECK(a.val.samples[0].seed != a.test.samples[0].seed);

  auto d1 = tmp_dir("gcd_sd_1");
  auto d2 = tmp_dir("gcd_sd_2");
  save_scenario_data(d1, 0, a);
  ScenarioData loaded = load_scenario_data(d1, 0);
  save_scenario_data(d2, 0, loaded);
  for (const char* f : {"scene_0.txt", "features_0.gcdf", "train_0.gcdd",
                        "val_0.gcdd", "test_0.gcdd"})
    CHECK(file_bytes(d1 + "/" + f) == file_bytes(d2 + "/" + f));
}

TEST_CASE("single-scenario run evaluates both schemes on paired samples") {
  ExperimentSpec spec = tiny_spec();
  ScenarioData sd = prepare_scenario(spec, 0);
  SingleScenarioResult res = run_single_scenario_full(spec, sd);

  const auto* g = find_section(res.report, "gcd", 0.0);
  const auto* p = find_section(res.report, "pilot", 0.0);
  REQUIRE(g != nullptr);
  REQUIRE(p != nullptr);
  CHECK(g->nmse.size() == static_cast<std::size_t>(spec.test_count));
  CHECK(p->nmse.size() == static_cast<std::size_t>(spec.test_count));
  for (double x : g->nmse) {
    CHECK(x >= 0.0);
    CHECK(std::isfinite(x));
  }
  for (double x : p->nmse) {
    CHECK(x >= 0.0);
    CHECK(std::isfinite(x));
  }
  CHECK(res.gcd.history.size() == static_cast<std::size_t>(spec.train.epochs));
  CHECK(res.pilot.history.size() ==
        static_cast<std::size_t>(spec.train.epochs));
  // both schemes trained from the same seed stream
  CHECK(res.gcd.checkpoint.train_seed == res.pilot.checkpoint.train_seed);

  // identical rerun, identical report
  SingleScenarioResult res2 = run_single_scenario_full(spec, sd);
  CHECK(res2.report.sections.size() == res.report.sections.size());
  for (std::size_t s = 0; s < res.report.sections.size(); ++s)
    CHECK(res2.report.sections[s].nmse == res.report.sections[s].nmse);
}

TEST_CASE("null sweep points reproduce the baseline evaluation exactly") {
  ExperimentSpec spec = tiny_spec();
  spec.sweep_neighbors = {0, 2};
  spec.sweep_position_error = {0.0, 2.0};
  spec.sweep_disturbance = {0.0, 0.1};
  spec.sweep_building_shift = {0.0, 1.0};
  spec.sweep_vehicles = {0, 6};
  ScenarioData sd = prepare_scenario(spec, 0);
  SingleScenarioResult base = run_single_scenario_full(spec, sd);
  const auto& baseline = find_section(base.report, "gcd", 0.0)->nmse;

  auto rep_n = run_sweep(spec, SweepAxis::neighbors, base.gcd.checkpoint, sd);
  REQUIRE(find_section(rep_n, "gcd", 2.0) != nullptr);
  CHECK(find_section(rep_n, "gcd", 2.0)->nmse == baseline);
  // fewer tokens changes the evaluation
  CHECK(find_section(rep_n, "gcd", 0.0)->nmse != baseline);

  auto rep_l =
      run_sweep(spec, SweepAxis::position_error, base.gcd.checkpoint, sd);
  CHECK(find_section(rep_l, "gcd", 0.0)->nmse == baseline);

  auto rep_d =
      run_sweep(spec, SweepAxis::disturbance, base.gcd.checkpoint, sd);
  CHECK(find_section(rep_d, "gcd", 0.0)->nmse == baseline);

  auto rep_b =
      run_sweep(spec, SweepAxis::building_shift, base.gcd.checkpoint, sd);
  CHECK(find_section(rep_b, "gcd", 0.0)->nmse == baseline);

  auto rep_v = run_sweep(spec, SweepAxis::vehicles, base.gcd.checkpoint, sd);
  CHECK(find_section(rep_v, "gcd", 0.0)->nmse == baseline);
  // with vehicles present the ground truth changes for at least one sample
  const auto* with = find_section(rep_v, "gcd", 6.0);
  REQUIRE(with != nullptr);
  CHECK(with->nmse.size() <= baseline.size());
  CHECK(with->nmse != baseline);
}

TEST_CASE("sweep rejects more neighbors than the dataset stores") {
  ExperimentSpec spec = tiny_spec();
  spec.sweep_neighbors = {spec.n_neighbors + 1};
  ScenarioData sd = prepare_scenario(spec, 0);
  nn::Model m(model_for(spec, nn::ModelKind::deduction));
  nn::Checkpoint c;
  c.config = m.config();
  c.params = nn::flatten_params(m);
  CHECK_THROWS_AS(run_sweep(spec, SweepAxis::neighbors, c, sd), ConfigError);
}

TEST_CASE("evaluation is invariant to the worker count") {
  ExperimentSpec spec = tiny_spec();
  ScenarioData sd = prepare_scenario(spec, 0);
  nn::Model m(model_for(spec, nn::ModelKind::deduction));
  auto cases = eval_cases_stored(spec, 0, sd.test, sd.features,
                                 spec.train.n_max);
  auto serial = evaluate_model(m, spec.system, cases, spec.train.sigma_z, 1);
  auto parallel = evaluate_model(m, spec.system, cases, spec.train.sigma_z, 3);
  CHECK(serial == parallel);
}

TEST_CASE("vehicle placement is deterministic and respects the scene") {
  Scene scene = generate_scene(11, 3, 80.0, 20.0);
  auto a = make_vehicles(scene, 6, 42);
  auto b = make_vehicles(scene, 6, 42);
  auto c = make_vehicles(scene, 6, 43);
  REQUIRE(a.size() == 6);
  bool any_difference = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].footprint.size() == 4);
    for (int k = 0; k < 4; ++k) {
      CHECK(a[i].footprint[k].x() == b[i].footprint[k].x());
      if (a[i].footprint[k].x() != c[i].footprint[k].x())
        any_difference = true;
    }
    Vec2 center{0, 0};
    for (const auto& v : a[i].footprint) center += v / 4.0;
    CHECK_FALSE(point_in_building(
        scene, Vec3{center.x(), center.y(), scene.ground_height + 0.5}));
  }
  CHECK(any_difference);

  ScenePerturbation p;
  p.kind = PerturbKind::add_vehicles;
  p.vehicles = a;
  Scene augmented = perturb_scene(scene, p, 1);
  CHECK(augmented.buildings.size() == scene.buildings.size() + 6);

  CHECK(make_vehicles(scene, 0, 1).empty());
  CHECK_THROWS_AS(make_vehicles(scene, -1, 1), ConfigError);
}

TEST_CASE("cross-scenario run trains jointly and evaluates every scenario") {
  ExperimentSpec spec = tiny_spec();
  spec.train_count = 16;
  spec.val_count = 6;
  spec.test_count = 32;
  // the held-out scenario is a re-generation of the first one: statistics of
  // the two evaluations must agree up to sampling noise (leakage control)
  spec.scenarios = {{11, 3, 80.0, 20.0}, {12, 3, 80.0, 20.0},
                    {11, 3, 80.0, 20.0}};
  spec.cross_train_count = 2;
  std::vector<ScenarioData> data;
  for (std::size_t s = 0; s < spec.scenarios.size(); ++s)
    data.push_back(prepare_scenario(spec, s));

  CrossScenarioResult res = run_cross_scenario_full(spec, data);
  REQUIRE(res.report.sections.size() == 6);
  for (const char* label : {"gcd zero-shot", "pilot zero-shot"})
    for (double s : {0.0, 1.0, 2.0}) {
      const auto* sec = find_section(res.report, label, s);
      REQUIRE(sec != nullptr);
      CHECK(sec->nmse.size() == static_cast<std::size_t>(spec.test_count));
      for (double x : sec->nmse) CHECK(std::isfinite(x));
    }

  double trained = summarize(find_section(res.report, "gcd zero-shot", 0.0)->nmse).median;
  double heldout = summarize(find_section(res.report, "gcd zero-shot", 2.0)->nmse).median;
  CHECK(heldout < trained * 4.0);
  CHECK(trained < heldout * 4.0);

  CrossScenarioResult res2 = run_cross_scenario_full(spec, data);
  for (std::size_t s = 0; s < res.report.sections.size(); ++s)
    CHECK(res2.report.sections[s].nmse == res.report.sections[s].nmse);

  // not enough held-out scenarios
  ExperimentSpec bad = spec;
  bad.cross_train_count = 3;
  CHECK_THROWS_AS(run_cross_scenario_full(bad, data), ConfigError);
}

TEST_CASE("finetune trajectories start at the zero-shot values") {
  ExperimentSpec spec = tiny_spec();
  spec.train_count = 16;
  spec.val_count = 6;
  spec.test_count = 8;
  spec.scenarios = {{11, 3, 80.0, 20.0}, {12, 3, 80.0, 20.0},
                    {13, 3, 80.0, 20.0}};
  spec.cross_train_count = 2;
  std::vector<ScenarioData> data;
  for (std::size_t s = 0; s < spec.scenarios.size(); ++s)
    data.push_back(prepare_scenario(spec, s));
  CrossScenarioResult cross = run_cross_scenario_full(spec, data);

  // steps=0: one record per scenario, equal to the zero-shot evaluation
  Report r0 = run_finetune(spec, 0, cross.gcd.checkpoint, data[2], 2,
                           data[0], 0);
  REQUIRE(r0.sections.size() == 2);
  CHECK(find_section(r0, "gcd finetune new", 0.0)->nmse ==
        find_section(cross.report, "gcd zero-shot", 2.0)->nmse);
  CHECK(find_section(r0, "gcd finetune previous", 0.0)->nmse ==
        find_section(cross.report, "gcd zero-shot", 0.0)->nmse);

  // a few steps: trajectory recorded at 0, eval_every, ..., final step
  Report r5 = run_finetune(spec, 5, cross.gcd.checkpoint, data[2], 2,
                           data[0], 0);
  for (double step : {0.0, 2.0, 4.0, 5.0}) {
    REQUIRE(find_section(r5, "gcd finetune new", step) != nullptr);
    REQUIRE(find_section(r5, "gcd finetune previous", step) != nullptr);
  }
  CHECK(r5.sections.size() == 8);
  for (const auto& s : r5.sections)
    for (double x : s.nmse) {
      CHECK(std::isfinite(x));
      CHECK(x >= 0.0);
    }
  // the updates actually move the model
  CHECK(find_section(r5, "gcd finetune new", 5.0)->nmse !=
        find_section(r5, "gcd finetune new", 0.0)->nmse);

  Report r5b = run_finetune(spec, 5, cross.gcd.checkpoint, data[2], 2,
                            data[0], 0);
  for (std::size_t s = 0; s < r5.sections.size(); ++s)
    CHECK(r5b.sections[s].nmse == r5.sections[s].nmse);
}
