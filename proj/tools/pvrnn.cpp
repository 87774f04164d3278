// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// pvrnn: data generation, training, online inference, ablation and the
// three experiment protocols.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pvrnn/analysis.hpp"
#include "pvrnn/config.hpp"
#include "pvrnn/datagen.hpp"
#include "pvrnn/experiments.hpp"
#include "pvrnn/grad_engine.hpp"
#include "pvrnn/infer.hpp"
#include "pvrnn/io.hpp"
#include "pvrnn/parallel.hpp"
#include "pvrnn/runs.hpp"
#include "pvrnn/train.hpp"

namespace fs = std::filesystem;
using namespace pvrnn;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  bool deterministic = false;
};

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  const auto buf = detail::read_file(path);
  return parse_run_config(std::string(buf.begin(), buf.end()));
}

int thread_count(const Common& c) {
  if (c.threads) {
    if (*c.threads < 1) throw ConfigError("--threads must be >= 1");
    return *c.threads;
  }
  return default_threads();
}

/// Outputs are write-once: the run directory must be new or empty.
fs::path prepare_out(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  const fs::path p(dir);
  if (fs::exists(p) && !(fs::is_directory(p) && fs::is_empty(p)))
    throw ConfigError("output directory " + dir + " already exists and is not empty");
  fs::create_directories(p);
  return p;
}

void apply_deterministic(InferConfig& c) {
  c.record_mean = true;
  c.deterministic_rollout = true;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c, bool csv) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.experiments.data_seed = *c.seed;
  const fs::path out = prepare_out(c.out);
  const auto& e = cfg.experiments;
  const TrainTestSplit split = make_split(cfg.world, e.train_per_task, e.test_per_task, e.data_seed);
  SequenceBatch train = split.all, test = split.all;
  train.sequences = split.train;
  test.sequences = split.test;
  Manifest m("gen-data");
  m.set("config", to_json(cfg));
  m.set("seed", e.data_seed);
  save_dataset(split.all, out / "dataset.bin");
  save_dataset(train, out / "train.bin");
  save_dataset(test, out / "test.bin");
  m.output(out / "dataset.bin", out);
  m.output(out / "train.bin", out);
  m.output(out / "test.bin", out);
  if (csv) {
    detail::write_text(out / "dataset.csv", dataset_csv(split.all));
    m.output(out / "dataset.csv", out);
  }
  m.set("dataset_hash", hex64(dataset_hash(split.all.sequences)));
  m.save(out / "manifest.json");
  std::cout << "wrote " << split.all.sequences.size() << " sequences (" << split.train.size() << " train, "
            << split.test.size() << " test) to " << out.string() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data_path) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.train.seed = *c.seed;
  const int threads = thread_count(c);
  const SequenceBatch data = load_dataset(data_path);
  const fs::path out = prepare_out(c.out);
  FitOptions fo;
  fo.threads = threads;
  FitResult res = fit(data.sequences, cfg.topology(), cfg.train, fo);
  res.checkpoint.provenance.config = to_json(cfg).dump();
  save_checkpoint(res.checkpoint, out / "checkpoint.bin");
  detail::write_text(out / "loss.csv", loss_history_csv(res.history));

  CsvWriter rec({"sequence", "task", "condition", "extero", "proprio", "combined"});
  for (const auto& s : data.sequences) {
    const auto e = reconstruction_error(res.checkpoint.params, res.checkpoint.topology, *res.checkpoint.adaptive_for(s.id), s);
    rec.row(s.id, task_name(s.task), s.condition, e.extero, e.proprio, e.combined());
  }
  rec.save(out / "reconstruction.csv");

  Manifest m("train");
  m.set("config", to_json(cfg));
  m.set("threads", threads);
  m.input(data_path);
  m.output(out / "checkpoint.bin", out);
  m.output(out / "loss.csv", out);
  m.output(out / "reconstruction.csv", out);
  m.save(out / "manifest.json");
  const auto& last = res.history.back().terms;
  std::cout << "trained " << cfg.train.iterations << " iterations on " << data.sequences.size()
            << " sequences, final free energy " << fmt(last.total) << "\n";
  return 0;
}

int cmd_infer(const Common& c, const std::string& ck_path, const std::string& data_path, bool frames) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.infer.seed = *c.seed;
  if (c.deterministic) apply_deterministic(cfg.infer);
  const int threads = thread_count(c);
  const NetworkTopology expected = cfg.topology();
  auto ck = std::make_shared<const Checkpoint>(load_checkpoint(ck_path, c.config.empty() ? nullptr : &expected));
  const SequenceBatch data = load_dataset(data_path);
  const fs::path out = prepare_out(c.out);
  const TrialSet ts = run_trials(ck, data.sequences, cfg.infer, threads);

  Manifest m("infer");
  m.set("config", to_json(cfg));
  m.set("threads", threads);
  m.input(ck_path);
  m.input(data_path);
  save_trials(ts, *ck, out / "trials.bin");
  m.output(out / "trials.bin", out);
  CsvWriter summary({"sequence", "task", "condition", "trial", "mask", "highest_vision", "combined"});
  fs::create_directories(out / "trials");
  for (const auto& l : ts.trials) {
    const std::string stem = "seq" + std::to_string(l.sequence_id) + "_trial" + std::to_string(l.trial);
    detail::write_text(out / "trials" / (stem + "_latents.csv"), trial_latents_csv(l));
    detail::write_text(out / "trials" / (stem + "_errors.csv"), trial_errors_csv(l, ck->topology));
    m.output(out / "trials" / (stem + "_latents.csv"), out);
    m.output(out / "trials" / (stem + "_errors.csv"), out);
    summary.row(l.sequence_id, task_name(l.task), l.condition, l.trial, l.mask_label,
                trial_error(l, ErrorMeasure::HighestVision), trial_error(l, ErrorMeasure::Combined));
  }
  summary.save(out / "summary.csv");
  m.output(out / "summary.csv", out);

  if (frames) {
    const int side = ck->topology.vision.highest();
    fs::create_directories(out / "frames");
    for (std::size_t i = 0; i < ts.trials.size(); ++i) {
      const auto& l = ts.trials[i];
      if (l.trial != 0) continue;
      const Sequence& seq = data.sequences[i / static_cast<std::size_t>(cfg.infer.trials)];
      for (std::size_t t = 9; t < l.steps.size(); t += 10) {
        const std::string stem = "seq" + std::to_string(l.sequence_id) + "_t" + std::to_string(t + 1);
        const fs::path pred = out / "frames" / (stem + "_pred.pgm"), obs = out / "frames" / (stem + "_obs.pgm");
        export_frame(highest_plane(ck->topology, l.steps[t].extero), side, pred);
        export_frame(highest_plane(ck->topology, seq.vision.col(static_cast<Eigen::Index>(t))), side, obs);
        m.output(pred, out);
        m.output(obs, out);
      }
    }
  }
  m.save(out / "manifest.json");
  std::cout << "ran " << ts.size() << " trials over " << data.sequences.size() << " sequences\n";
  return 0;
}

int cmd_ablate(const Common& c, const std::string& ck_path, const std::string& trials_path,
               const std::vector<std::string>& modules, const std::string& style) {
  const Checkpoint ck = load_checkpoint(ck_path);
  const TrialSet ts = load_trials(trials_path, ck);
  const fs::path out = prepare_out(c.out);
  std::vector<int> ids;
  for (const auto& name : modules) {
    if (name == "none") continue;
    ids.push_back(module_index(name));
  }
  const AblationMap map = ablate(ck, ts.trials, ids, style == "prior-mean" ? AblationStyle::PriorMean : AblationStyle::Zero);

  Manifest m("ablate");
  m.set("modules", modules);
  m.set("style", style);
  m.set("trials", map.trials);
  m.set("energy", map.energy());
  m.input(ck_path);
  m.input(trials_path);
  CsvWriter w({"step", "pixel", "value"});
  for (std::size_t t = 0; t < map.steps.size(); ++t)
    for (Eigen::Index i = 0; i < map.steps[t].size(); ++i) w.row(static_cast<int>(t + 1), static_cast<long>(i), map.steps[t][i]);
  w.save(out / "ablation.csv");
  m.output(out / "ablation.csv", out);
  fs::create_directories(out / "maps");
  const double scale = map.max();
  for (std::size_t t = 9; t < map.steps.size(); t += 10) {
    const fs::path p = out / "maps" / ("t" + std::to_string(t + 1) + ".pgm");
    export_frame(map.steps[t], map.side, p, FrameScale::Map, scale);
    m.output(p, out);
  }
  m.save(out / "manifest.json");
  std::cout << "ablation map over " << map.trials << " trials, mean energy " << fmt(map.energy()) << "\n";
  return 0;
}

int cmd_exp(const Common& c, int which) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.experiments.first_seed = *c.seed;
  if (c.deterministic) apply_deterministic(cfg.infer);
  const int threads = thread_count(c);
  const fs::path out = prepare_out(c.out);
  RunWorkspace ws(cfg, threads, out);
  json extra;
  extra["experiment"] = which;
  if (which == 1) {
    const auto r = run_exp1(ws);
    for (const auto& s : r.seeds)
      std::cout << "network " << s.seed << ": variability R " << fmt(s.stats.variability(Task::Reposition)) << ", W "
                << fmt(s.stats.variability(Task::Wipe)) << "\n";
  } else if (which == 2) {
    const auto r = run_exp2(ws);
    for (const auto& row : r.table.rows)
      if (row.network == "all") std::cout << row.condition << ": " << fmt(row.mean) << " +- " << fmt(row.stderr_) << "\n";
  } else {
    const auto r = run_exp3(ws);
    for (const auto& row : r.table.rows)
      if (row.network == "all")
        std::cout << row.table << " " << row.condition << ": " << fmt(row.mean) << " +- " << fmt(row.stderr_) << "\n";
  }
  ws.save_manifest("exp", extra);
  return 0;
}

int cmd_check(double tolerance, std::uint64_t seed) {
  if (!(tolerance > 0.0)) throw ConfigError("tolerance must be > 0");
  const NetworkTopology topo = NetworkTopology::tiny(3);
  bool pass = true;
  for (auto objective : {CheckObjective::Sequence, CheckObjective::Window}) {
    GradientCheckOptions o;
    o.tolerance = tolerance;
    o.objective = objective;
    const GradientReport r = check_gradients(topo, seed, o);
    const char* name = objective == CheckObjective::Sequence ? "sequence" : "window";
    for (const auto& g : r.groups)
      std::cout << name << " " << g.name << " n=" << g.count << " max_rel=" << fmt(g.max_rel_error)
                << (g.pass ? " ok" : " FAIL") << "\n";
    std::cout << name << " objective: " << (r.pass ? "pass" : "fail") << " (max relative error "
              << fmt(r.max_rel_error()) << ", tolerance " << fmt(tolerance) << ")\n";
    pass = pass && r.pass;
  }
  if (!pass) throw ValidationError("gradient check failed at tolerance " + fmt(tolerance));
  return 0;
}

void report(const std::string& kind, const std::string& message) {
  std::string flat = message;
  for (char& ch : flat)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "error: kind=" << kind << " message=" << json(flat).dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical variational RNN: data generation, training, online inference and experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  Common c;
  auto add_config = [&](CLI::App* s) { s->add_option("--config", c.config, "Run configuration (JSON)")->check(CLI::ExistingFile); };
  auto add_seed = [&](CLI::App* s, const std::string& what) { s->add_option("--seed", c.seed, what); };
  auto add_out = [&](CLI::App* s) { s->add_option("--out", c.out, "Run directory (must be new or empty)")->required(); };
  auto add_threads = [&](CLI::App* s) {
    s->add_option("--threads", c.threads, "Worker threads (default: PVRNN_THREADS or 1)");
  };
  auto add_det = [&](CLI::App* s) {
    s->add_flag("--deterministic", c.deterministic, "Record posterior-mean passes and roll out prior means");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/test dataset");
  bool csv = false;
  add_config(gen);
  add_seed(gen, "Dataset seed");
  add_out(gen);
  gen->add_flag("--csv", csv, "Also write the dataset as CSV");

  auto* train = app.add_subcommand("train", "Train a network on a dataset");
  std::string data_path;
  add_config(train);
  add_seed(train, "Training seed");
  add_out(train);
  add_threads(train);
  train->add_option("--data", data_path, "Dataset container")->required()->check(CLI::ExistingFile);

  auto* infer = app.add_subcommand("infer", "Run online inference trials over a dataset");
  std::string ck_path;
  bool frames = false;
  add_config(infer);
  add_seed(infer, "Inference noise seed");
  add_out(infer);
  add_threads(infer);
  add_det(infer);
  infer->add_option("--checkpoint", ck_path, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--data", data_path, "Dataset container")->required()->check(CLI::ExistingFile);
  infer->add_flag("--frames", frames, "Export predicted and observed frames every tenth step");

  auto* abl = app.add_subcommand("ablate", "Ablation map from recorded inference trials");
  std::string trials_path, style = "zero";
  std::vector<std::string> modules;
  add_out(abl);
  abl->add_option("--checkpoint", ck_path, "Checkpoint the trials were recorded with")->required()->check(CLI::ExistingFile);
  abl->add_option("--trials", trials_path, "trials.bin written by infer")->required()->check(CLI::ExistingFile);
  abl->add_option("--module", modules, "Module(s) to ablate: Exe, Mul, Ext, Pro or none")->required();
  abl->add_option("--style", style, "Replacement for the ablated z")->check(CLI::IsMember({"zero", "prior-mean"}));

  auto* exp = app.add_subcommand("exp", "Run experiment 1, 2 or 3 end to end");
  int which = 1;
  exp->add_option("experiment", which, "Experiment number")->required()->check(CLI::IsMember({1, 2, 3}));
  add_config(exp);
  add_seed(exp, "First network seed");
  add_out(exp);
  add_threads(exp);
  add_det(exp);

  auto* check = app.add_subcommand("check", "Finite-difference gradient check");
  double tolerance = 1e-4;
  std::uint64_t check_seed = 1;
  check->add_option("tolerance", tolerance, "Maximum relative error")->capture_default_str();
  check->add_option("--seed", check_seed, "Seed for the random network and data")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("usage", e.what());
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(c, csv);
    if (*train) return cmd_train(c, data_path);
    if (*infer) return cmd_infer(c, ck_path, data_path, frames);
    if (*abl) return cmd_ablate(c, ck_path, trials_path, modules, style);
    if (*exp) return cmd_exp(c, which);
    if (*check) return cmd_check(tolerance, check_seed);
  } catch (const NumericError& e) {
    report(e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    report(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report("internal", e.what());
    return 2;
  }
  return 2;
}
