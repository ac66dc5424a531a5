#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "gcd/harness.hpp"

namespace {

using namespace gcd;

// --spec plus the overrides every spec-driven subcommand shares.
struct SpecArgs {
  std::string path;
  std::uint64_t seed = 0;
  int threads = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--spec", path, "experiment spec file")->required();
    seed_opt = cmd->add_option("--seed", seed, "override the spec master seed");
    threads_opt = cmd->add_option("--threads", threads,
                                  "override generation/training workers");
  }

  ExperimentSpec load() const {
    ExperimentSpec s = read_experiment(path);
    if (seed_opt->count()) s.seed = seed;
    if (threads_opt->count()) {
      s.threads = threads;
      s.train.threads = threads;
    }
    s.validate();
    return s;
  }
};

void ensure_dir(const std::string& dir) {
  std::filesystem::create_directories(dir);
}

void ensure_parent(const std::string& file) {
  auto parent = std::filesystem::path(file).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

nn::ModelKind scheme_kind(const std::string& scheme) {
  if (scheme == "gcd") return nn::ModelKind::deduction;
  if (scheme == "pilot") return nn::ModelKind::pilot_mixer;
  throw ConfigError("unknown scheme '" + scheme + "' (use gcd or pilot)");
}

const char* kind_label(nn::ModelKind kind) {
  return kind == nn::ModelKind::deduction ? "gcd" : "pilot";
}

void save_train_result(const std::string& dir, const std::string& stem,
                       const nn::TrainResult& res) {
  auto ckpt = (std::filesystem::path(dir) / (stem + ".gcdc")).string();
  nn::write_checkpoint(ckpt, res.checkpoint);
  write_history_csv(dir, stem, res.history);
  std::printf("wrote %s (best val %.6g at epoch %lld)\n", ckpt.c_str(),
              res.checkpoint.best_val,
              static_cast<long long>(res.checkpoint.epoch));
}

void print_report(const Report& rep) {
  for (const auto& s : rep.sections) {
    Summary m = summarize(s.nmse);
    std::printf("  %-22s axis %-6g median %.6g (%.2f dB) n=%zu\n",
                s.label.c_str(), s.axis_value, m.median, nmse_db(m.median),
                m.count);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geometry-aided channel deduction toolkit"};
  app.require_subcommand(1);

  // ---- scene-gen: procedural scene to a text file ----
  struct {
    std::uint64_t seed = 1;
    int buildings = 6;
    double area = 120.0;
    double bs_height = 25.0;
    std::string out;
  } sg;
  auto* scene_gen = app.add_subcommand(
      "scene-gen", "generate a random scene and write it as text");
  scene_gen->add_option("--seed", sg.seed, "scene seed");
  scene_gen->add_option("--buildings", sg.buildings, "building count");
  scene_gen->add_option("--area", sg.area, "working area side, meters");
  scene_gen->add_option("--bs-height", sg.bs_height, "BS antenna height");
  scene_gen->add_option("--out", sg.out, "output scene file")->required();
  scene_gen->callback([&] {
    Scene sc = generate_scene(sg.seed, sg.buildings, sg.area, sg.bs_height);
    ensure_parent(sg.out);
    write_scene(sg.out, sc);
    std::printf("wrote %s (%zu buildings)\n", sg.out.c_str(),
                sc.buildings.size());
  });

  // ---- build-featureset: trace the virtual-user grid of a scene ----
  struct {
    std::string scene;
    double grid_step = 4.0;
    double grid_height = 1.5;
    int max_order = 2;
    int threads = 1;
    std::string out;
  } bf;
  auto* build_fs = app.add_subcommand(
      "build-featureset", "trace path features on a grid over a scene");
  build_fs->add_option("--scene", bf.scene, "scene file")->required();
  build_fs->add_option("--grid-step", bf.grid_step, "grid pitch, meters");
  build_fs->add_option("--grid-height", bf.grid_height, "grid antenna height");
  build_fs->add_option("--max-order", bf.max_order, "bounce cap");
  build_fs->add_option("--threads", bf.threads, "tracing workers");
  build_fs->add_option("--out", bf.out, "output feature file")->required();
  build_fs->callback([&] {
    Scene sc = read_scene(bf.scene);
    FeatureSet fs = build_feature_set(sc, bf.grid_step, bf.grid_height,
                                      bf.max_order, bf.threads);
    ensure_parent(bf.out);
    write_feature_set(bf.out, fs);
    std::printf("wrote %s (%dx%d grid)\n", bf.out.c_str(), fs.rows, fs.cols);
  });

  // ---- gen-dataset: scene + features + all three splits for a scenario ----
  struct {
    SpecArgs spec;
    std::size_t scenario = 0;
    std::string out;
  } gd;
  auto* gen_ds = app.add_subcommand(
      "gen-dataset", "generate one scenario's scene, features, and splits");
  gd.spec.attach(gen_ds);
  gen_ds->add_option("--scenario", gd.scenario, "scenario index in the spec");
  gen_ds->add_option("--out", gd.out, "output directory")->required();
  gen_ds->callback([&] {
    ExperimentSpec spec = gd.spec.load();
    ScenarioData sd = prepare_scenario(spec, gd.scenario);
    save_scenario_data(gd.out, gd.scenario, sd);
    std::printf("wrote scenario %zu data to %s (%zu/%zu/%zu samples)\n",
                gd.scenario, gd.out.c_str(), sd.train.samples.size(),
                sd.val.samples.size(), sd.test.samples.size());
  });

  // ---- train: one scheme on one scenario's stored data ----
  struct {
    SpecArgs spec;
    std::string data;
    std::size_t scenario = 0;
    std::string scheme;
    std::string out;
  } tr;
  auto* train_cmd = app.add_subcommand(
      "train", "train one scheme on a stored scenario dataset");
  tr.spec.attach(train_cmd);
  train_cmd->add_option("--data", tr.data, "scenario data directory")
      ->required();
  train_cmd->add_option("--scenario", tr.scenario, "scenario index");
  train_cmd->add_option("--scheme", tr.scheme, "gcd or pilot")->required();
  train_cmd->add_option("--out", tr.out, "output directory")->required();
  train_cmd->callback([&] {
    ExperimentSpec spec = tr.spec.load();
    nn::ModelKind kind = scheme_kind(tr.scheme);
    ScenarioData sd = load_scenario_data(tr.data, tr.scenario);
    nn::Model model(model_for(spec, kind));
    nn::TrainResult res =
        nn::train(model, spec.system, to_train_samples(sd.train, sd.features),
                  to_train_samples(sd.val, sd.features),
                  train_config_for(spec));
    ensure_dir(tr.out);
    save_train_result(tr.out,
                      tr.scheme + "_" + std::to_string(tr.scenario), res);
  });

  // ---- eval: a stored checkpoint on a stored test split ----
  struct {
    SpecArgs spec;
    std::string data;
    std::size_t scenario = 0;
    std::string checkpoint;
    std::string out;
    std::string name = "eval";
  } ev;
  auto* eval_cmd = app.add_subcommand(
      "eval", "evaluate a checkpoint on a stored test split");
  ev.spec.attach(eval_cmd);
  eval_cmd->add_option("--data", ev.data, "scenario data directory")
      ->required();
  eval_cmd->add_option("--scenario", ev.scenario, "scenario index");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--out", ev.out, "report directory")->required();
  eval_cmd->add_option("--name", ev.name, "report file prefix");
  eval_cmd->callback([&] {
    ExperimentSpec spec = ev.spec.load();
    ScenarioData sd = load_scenario_data(ev.data, ev.scenario);
    nn::Checkpoint ckpt = nn::read_checkpoint(ev.checkpoint);
    nn::Model model = nn::model_from_checkpoint(ckpt);
    auto cases = eval_cases_stored(spec, ev.scenario, sd.test, sd.features,
                                   spec.train.n_max);
    Report rep;
    rep.sections.push_back(
        {kind_label(ckpt.config.kind), 0.0,
         evaluate_model(model, spec.system, cases, spec.train.sigma_z,
                        spec.threads)});
    ensure_dir(ev.out);
    write_report_csv(ev.out, ev.name, rep);
    print_report(rep);
  });

  // ---- sweep: robustness axis over a trained checkpoint ----
  struct {
    SpecArgs spec;
    std::string data;
    std::size_t scenario = 0;
    std::string checkpoint;
    std::string axis;
    std::string out;
  } sw;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "evaluate a checkpoint across one robustness axis");
  sw.spec.attach(sweep_cmd);
  sweep_cmd->add_option("--data", sw.data, "scenario data directory")
      ->required();
  sweep_cmd->add_option("--scenario", sw.scenario, "scenario index");
  sweep_cmd->add_option("--checkpoint", sw.checkpoint, "checkpoint file")
      ->required();
  sweep_cmd
      ->add_option("--axis", sw.axis,
                   "neighbors | position_error | disturbance | "
                   "building_shift | vehicles")
      ->required();
  sweep_cmd->add_option("--out", sw.out, "report directory")->required();
  sweep_cmd->callback([&] {
    ExperimentSpec spec = sw.spec.load();
    SweepAxis axis = sweep_axis_from_string(sw.axis);
    ScenarioData sd = load_scenario_data(sw.data, sw.scenario);
    nn::Checkpoint ckpt = nn::read_checkpoint(sw.checkpoint);
    Report rep = run_sweep(spec, axis, ckpt, sd);
    ensure_dir(sw.out);
    write_report_csv(sw.out, "sweep_" + sw.axis, rep);
    print_report(rep);
  });

  // ---- single-scenario: full protocol, both schemes, one scenario ----
  struct {
    SpecArgs spec;
    std::size_t scenario = 0;
    std::string out;
  } ss;
  auto* single_cmd = app.add_subcommand(
      "single-scenario",
      "generate data, train both schemes, and report paired test NMSE");
  ss.spec.attach(single_cmd);
  single_cmd->add_option("--scenario", ss.scenario, "scenario index");
  single_cmd->add_option("--out", ss.out, "output directory")->required();
  single_cmd->callback([&] {
    ExperimentSpec spec = ss.spec.load();
    ScenarioData sd = prepare_scenario(spec, ss.scenario);
    save_scenario_data(ss.out, ss.scenario, sd);
    SingleScenarioResult res = run_single_scenario_full(spec, sd);
    std::string k = std::to_string(ss.scenario);
    save_train_result(ss.out, "gcd_" + k, res.gcd);
    save_train_result(ss.out, "pilot_" + k, res.pilot);
    write_report_csv(ss.out, "single", res.report);
    print_report(res.report);
  });

  // ---- cross-scenario: joint training, zero-shot everywhere ----
  struct {
    SpecArgs spec;
    std::string out;
  } cs;
  auto* cross_cmd = app.add_subcommand(
      "cross-scenario",
      "train jointly on the first scenarios, evaluate zero-shot on all");
  cs.spec.attach(cross_cmd);
  cross_cmd->add_option("--out", cs.out, "output directory")->required();
  cross_cmd->callback([&] {
    ExperimentSpec spec = cs.spec.load();
    std::vector<ScenarioData> data;
    for (std::size_t s = 0; s < spec.scenarios.size(); ++s) {
      data.push_back(prepare_scenario(spec, s));
      save_scenario_data(cs.out, s, data.back());
    }
    CrossScenarioResult res = run_cross_scenario_full(spec, data);
    save_train_result(cs.out, "cross_gcd", res.gcd);
    save_train_result(cs.out, "cross_pilot", res.pilot);
    write_report_csv(cs.out, "cross", res.report);
    print_report(res.report);
  });

  // ---- finetune: adapt a cross-scenario checkpoint to a new scenario ----
  struct {
    SpecArgs spec;
    std::string checkpoint;
    int steps = -1;
    std::size_t fresh = 0;
    std::size_t previous = 0;
    CLI::Option* fresh_opt = nullptr;
    std::string out;
  } ft;
  auto* fine_cmd = app.add_subcommand(
      "finetune",
      "update a trained checkpoint on a new scenario and track both NMSEs");
  ft.spec.attach(fine_cmd);
  fine_cmd->add_option("--checkpoint", ft.checkpoint, "starting checkpoint")
      ->required();
  fine_cmd->add_option("--steps", ft.steps,
                       "optimizer updates (default: spec finetune count)");
  ft.fresh_opt = fine_cmd->add_option(
      "--new", ft.fresh, "new-scenario index (default: first held-out)");
  fine_cmd->add_option("--previous", ft.previous,
                       "previously trained scenario to track");
  fine_cmd->add_option("--out", ft.out, "report directory")->required();
  fine_cmd->callback([&] {
    ExperimentSpec spec = ft.spec.load();
    int steps = ft.steps >= 0 ? ft.steps : spec.finetune_steps;
    std::size_t fresh_index = ft.fresh_opt->count()
                                  ? ft.fresh
                                  : static_cast<std::size_t>(
                                        spec.cross_train_count);
    nn::Checkpoint ckpt = nn::read_checkpoint(ft.checkpoint);
    ScenarioData fresh = prepare_scenario(spec, fresh_index);
    ScenarioData previous = prepare_scenario(spec, ft.previous);
    Report rep = run_finetune(spec, steps, ckpt, fresh, fresh_index, previous,
                              ft.previous);
    ensure_dir(ft.out);
    write_report_csv(ft.out, "finetune", rep);
    print_report(rep);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const gcd::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const gcd::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  }
  return 0;
}
