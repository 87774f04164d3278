// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end experiment runs: data generation, training of every network a
// protocol needs, evaluation, and the tables, maps and manifests written to
// one run directory.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pvrnn/analysis.hpp"
#include "pvrnn/config.hpp"
#include "pvrnn/experiments.hpp"
#include "pvrnn/io.hpp"

namespace pvrnn {

namespace fs = std::filesystem;

/// Shared state of one run directory. Trained networks are cached so the
/// protocols of one run reuse them.
class RunWorkspace {
 public:
  RunWorkspace(RunConfig cfg, int threads, fs::path out)
      : cfg_(std::move(cfg)), out_(std::move(out)), cache_(cfg_, threads) {
    if (!out_.empty()) {
      fs::create_directories(out_ / "models");
      cache_.on_trained = [this](const ModelCache::Key& k, const Checkpoint& ck, const std::vector<LossRecord>& h) {
        const std::string stem = model_stem(k);
        save_checkpoint(ck, out_ / "models" / (stem + ".bin"));
        detail::write_text(out_ / "models" / (stem + "_loss.csv"), loss_history_csv(h));
        outputs_.push_back(out_ / "models" / (stem + ".bin"));
        outputs_.push_back(out_ / "models" / (stem + "_loss.csv"));
      };
    }
  }

  RunWorkspace(const RunWorkspace&) = delete;
  RunWorkspace& operator=(const RunWorkspace&) = delete;

  static std::string model_stem(const ModelCache::Key& k) {
    return "seed-" + std::to_string(std::get<2>(k)) + "_R" + std::to_string(std::get<0>(k)) + "_W" +
           std::to_string(std::get<1>(k));
  }

  const RunConfig& config() const { return cfg_; }
  const fs::path& out() const { return out_; }
  ModelCache& cache() { return cache_; }
  int threads() const { return cache_.threads(); }

  const TrainTestSplit& split() {
    if (!split_) {
      const auto& e = cfg_.experiments;
      split_ = make_split(cfg_.world, e.train_per_task, e.test_per_task, e.data_seed);
      if (!out_.empty()) {
        fs::create_directories(out_ / "data");
        save_dataset(split_->all, out_ / "data" / "dataset.bin");
        outputs_.push_back(out_ / "data" / "dataset.bin");
      }
    }
    return *split_;
  }

  /// Network trained on the full training set.
  std::shared_ptr<const Checkpoint> full_model(std::uint64_t seed) {
    const auto& e = cfg_.experiments;
    return cache_.get(split().train, e.train_per_task, e.train_per_task, seed);
  }

  std::vector<Sequence> full_training_set() {
    const auto& e = cfg_.experiments;
    std::vector<Sequence> d = take_balanced(split().train, Task::Reposition, e.train_per_task);
    for (auto& s : take_balanced(split().train, Task::Wipe, e.train_per_task)) d.push_back(std::move(s));
    return d;
  }

  void write(const std::string& rel, const std::string& text) {
    if (out_.empty()) return;
    const fs::path p = out_ / rel;
    fs::create_directories(p.parent_path());
    detail::write_text(p, text);
    outputs_.push_back(p);
  }

  void frame(const std::string& rel, const Eigen::VectorXd& px, int side, FrameScale mode, double scale) {
    if (out_.empty()) return;
    const fs::path p = out_ / rel;
    fs::create_directories(p.parent_path());
    export_frame(px, side, p, mode, scale);
    outputs_.push_back(p);
  }

  /// Manifest with the effective configuration and hashes of every output
  /// written so far.
  void save_manifest(const std::string& command, const json& extra = json::object()) {
    if (out_.empty()) return;
    Manifest m(command);
    m.set("config", to_json(cfg_));
    m.set("threads", threads());
    for (auto it = extra.begin(); it != extra.end(); ++it) m.set(it.key(), it.value());
    for (const auto& p : outputs_) m.output(p, out_);
    m.save(out_ / "manifest.json");
  }

 private:
  RunConfig cfg_;
  fs::path out_;
  ModelCache cache_;
  std::optional<TrainTestSplit> split_;
  std::vector<fs::path> outputs_;
};

/// Paired t-test that reports a degenerate comparison instead of failing.
struct TTestRow {
  std::string comparison;
  double mean_a = 0.0, mean_b = 0.0;
  std::optional<TTestResult> test;
  std::string note;
};

inline TTestRow compare(const std::string& name, const std::vector<double>& a, const std::vector<double>& b) {
  TTestRow r;
  r.comparison = name;
  r.mean_a = mean_stderr(a).mean;
  r.mean_b = mean_stderr(b).mean;
  try {
    r.test = paired_t_test(a, b);
  } catch (const Error& e) {
    r.note = e.what();
  }
  return r;
}

inline std::string ttest_csv(const std::vector<TTestRow>& rows) {
  CsvWriter w({"comparison", "mean_a", "mean_b", "t", "df", "p", "note"});
  for (const auto& r : rows) {
    if (r.test)
      w.row(r.comparison, r.mean_a, r.mean_b, r.test->t, r.test->df, r.test->p, std::string());
    else
      w.row(r.comparison, r.mean_a, r.mean_b, std::string("nan"), std::string(""), std::string("nan"), r.note);
  }
  return w.str();
}

inline std::string error_table_csv(const ErrorTable& t) {
  CsvWriter w({"table", "condition", "network", "mean", "stderr", "count"});
  for (const auto& r : t.rows) w.row(r.table, r.condition, r.network, r.mean, r.stderr_, r.count);
  return w.str();
}

// ---------------------------------------------------------------------------
// Experiment 1

struct Exp1Result {
  std::vector<UncertaintyResult> seeds;
  TTestRow variability_test;  ///< W vs R variability across networks

  /// Mean over networks of the ablation map of one (task, module).
  AblationMap mean_map(Task task, int module) const {
    AblationMap m;
    for (const auto& s : seeds) {
      const auto& a = s.ablation[static_cast<std::size_t>(task)][static_cast<std::size_t>(module)];
      if (m.steps.empty()) {
        m = a;
        m.trials = 0;
        for (auto& v : m.steps) v.setZero();
      }
      for (std::size_t t = 0; t < a.steps.size(); ++t) m.steps[t] += a.steps[t] / static_cast<double>(seeds.size());
      m.trials += a.trials;
    }
    return m;
  }
};

inline Exp1Result run_exp1(RunWorkspace& ws) {
  const auto& cfg = ws.config();
  std::vector<Sequence> test = ws.split().test;
  Exp1Result r;
  for (auto seed : experiment_seeds(cfg.experiments)) {
    auto ck = ws.full_model(seed);
    r.seeds.push_back(uncertainty_protocol(*ck, ck, test, cfg.infer, ws.threads()));
  }

  CsvWriter u({"network", "task", "module", "mean_sigma", "mean_abs_delta", "trials"});
  std::vector<double> var_r, var_w;
  for (const auto& s : r.seeds) {
    for (Task task : {Task::Reposition, Task::Wipe})
      for (int m = 0; m < kNumModules; ++m) {
        const auto& c = s.stats.at(task, m);
        u.row(std::to_string(s.seed), task_name(task), std::string(kModuleNames[m]), c.mean_sigma, c.mean_abs_delta,
              c.count);
      }
    var_r.push_back(s.stats.variability(Task::Reposition));
    var_w.push_back(s.stats.variability(Task::Wipe));
  }
  for (Task task : {Task::Reposition, Task::Wipe})
    for (int m = 0; m < kNumModules; ++m) {
      double sig = 0.0, del = 0.0;
      int n = 0;
      for (const auto& s : r.seeds) {
        sig += s.stats.at(task, m).mean_sigma;
        del += s.stats.at(task, m).mean_abs_delta;
        n += s.stats.at(task, m).count;
      }
      const double k = static_cast<double>(r.seeds.size());
      u.row(std::string("all"), task_name(task), std::string(kModuleNames[m]), sig / k, del / k, n);
    }
  ws.write("exp1/uncertainty.csv", u.str());
  r.variability_test = compare("variability W vs R", var_w, var_r);
  ws.write("exp1/ttest.csv", ttest_csv({r.variability_test}));

  CsvWriter e({"network", "task", "module", "energy", "max"});
  for (const auto& s : r.seeds)
    for (Task task : {Task::Reposition, Task::Wipe})
      for (int m = 0; m < kNumModules; ++m) {
        const auto& a = s.ablation[static_cast<std::size_t>(task)][static_cast<std::size_t>(m)];
        e.row(std::to_string(s.seed), task_name(task), std::string(kModuleNames[m]), a.energy(), a.max());
      }
  ws.write("exp1/ablation_energy.csv", e.str());

  // Network-averaged maps: raw values in CSV, frames every tenth step with
  // one intensity scale per task.
  CsvWriter mc({"task", "module", "step", "pixel", "value"});
  for (Task task : {Task::Reposition, Task::Wipe}) {
    std::array<AblationMap, kNumModules> maps;
    double scale = 0.0;
    for (int m = 0; m < kNumModules; ++m) {
      maps[static_cast<std::size_t>(m)] = r.seeds.empty() ? AblationMap{} : r.mean_map(task, m);
      scale = std::max(scale, maps[static_cast<std::size_t>(m)].max());
    }
    for (int m = 0; m < kNumModules; ++m) {
      const auto& a = maps[static_cast<std::size_t>(m)];
      for (std::size_t t = 0; t < a.steps.size(); ++t) {
        for (Eigen::Index i = 0; i < a.steps[t].size(); ++i)
          mc.row(task_name(task), std::string(kModuleNames[m]), static_cast<int>(t + 1), static_cast<long>(i),
                 a.steps[t][i]);
        if ((t + 1) % 10 == 0)
          ws.frame("exp1/maps/" + task_name(task) + "_" + std::string(kModuleNames[m]) + "_t" + std::to_string(t + 1) +
                       ".pgm",
                   a.steps[t], a.side, FrameScale::Map, scale);
      }
    }
  }
  ws.write("exp1/ablation_maps.csv", mc.str());
  return r;
}

// ---------------------------------------------------------------------------
// Experiment 2

struct Exp2Result {
  std::vector<MaskPolicy> conditions;
  std::vector<std::uint64_t> seeds;
  ErrorTable table;
  std::vector<TTestRow> tests;

  /// Per-network mean error of a condition.
  double error(const MaskPolicy& c, const NetworkTopology& topo, std::uint64_t seed) const {
    const ErrorRow* row = table.find("robustness", c.label(topo), std::to_string(seed));
    if (!row) throw ConfigError("no robustness row for " + c.label(topo));
    return row->mean;
  }
};

inline Exp2Result run_exp2(RunWorkspace& ws) {
  const auto& cfg = ws.config();
  const NetworkTopology topo = cfg.topology();
  Exp2Result r;
  r.conditions = robustness_conditions(topo);
  r.seeds = experiment_seeds(cfg.experiments);
  for (auto seed : r.seeds) {
    auto ck = ws.full_model(seed);
    const ErrorTable t = robustness_protocol(ck, ws.split().test, r.conditions, cfg.infer, ws.threads(), std::to_string(seed));
    r.table.rows.insert(r.table.rows.end(), t.rows.begin(), t.rows.end());
  }
  r.table.aggregate();
  for (std::size_t i = 0; i + 1 < r.conditions.size(); i += 2) {
    std::vector<double> with, without;
    for (auto seed : r.seeds) {
      with.push_back(r.error(r.conditions[i], topo, seed));
      without.push_back(r.error(r.conditions[i + 1], topo, seed));
    }
    r.tests.push_back(compare(r.conditions[i].label(topo) + " vs " + r.conditions[i + 1].label(topo), with, without));
  }
  ws.write("exp2/robustness.csv", error_table_csv(r.table));
  ws.write("exp2/ttest.csv", ttest_csv(r.tests));
  return r;
}

// ---------------------------------------------------------------------------
// Experiment 3

struct Exp3Result {
  std::vector<InterferenceCell> cells;
  ErrorTable table;
  std::vector<TTestRow> tests;

  const InterferenceCell* cell(Task fixed, int count, std::uint64_t seed) const {
    for (const auto& c : cells)
      if (c.fixed == fixed && c.varied_count == count && c.seed == seed) return &c;
    return nullptr;
  }
};

inline Exp3Result run_exp3(RunWorkspace& ws) {
  const auto& cfg = ws.config();
  const auto& e = cfg.experiments;
  Exp3Result r;
  const auto seeds = experiment_seeds(e);
  for (auto seed : seeds) {
    auto cells = interference_protocol(ws.cache(), ws.split(), seed, r.table);
    r.cells.insert(r.cells.end(), cells.begin(), cells.end());
  }
  r.table.aggregate();
  CsvWriter spread({"table", "min", "max", "spread"});
  for (Task fixed : {Task::Reposition, Task::Wipe}) {
    const std::string tn = interference_table_name(fixed);
    const std::string varied = task_name(fixed == Task::Reposition ? Task::Wipe : Task::Reposition);
    auto series = [&](int count) {
      std::vector<double> v;
      for (auto seed : seeds) v.push_back(r.cell(fixed, count, seed)->fixed_error);
      return v;
    };
    const int first = e.varied_counts.front();
    for (std::size_t i = 1; i < e.varied_counts.size(); ++i) {
      const int n = e.varied_counts[i];
      r.tests.push_back(compare(tn + " " + varied + "=" + std::to_string(n) + " vs " + varied + "=" + std::to_string(first),
                                series(n), series(first)));
    }
    if (const auto* c0 = r.cell(fixed, 0, seeds.front()); c0 && c0->unseen_error >= 0.0) {
      std::vector<double> unseen;
      for (auto seed : seeds) unseen.push_back(r.cell(fixed, 0, seed)->unseen_error);
      r.tests.push_back(compare(tn + " unseen:" + varied + " vs " + varied + "=0", unseen, series(0)));
    }
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto& row : r.table.rows)
      if (row.table == tn && row.network == "all" && row.condition.rfind("unseen", 0) != 0) {
        lo = any ? std::min(lo, row.mean) : row.mean;
        hi = any ? std::max(hi, row.mean) : row.mean;
        any = true;
      }
    spread.row(tn, lo, hi, hi - lo);
  }
  ws.write("exp3/interference.csv", error_table_csv(r.table));
  ws.write("exp3/ttest.csv", ttest_csv(r.tests));
  ws.write("exp3/spread.csv", spread.str());
  return r;
}

}  // namespace pvrnn
