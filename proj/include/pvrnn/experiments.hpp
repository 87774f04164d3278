// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale experiment protocols:
//   1. prior uncertainty per task and module ablation maps
//   2. prediction error under reduced vision, with and without proprioception
//   3. data-balance interference grid

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "pvrnn/analysis.hpp"
#include "pvrnn/checkpoint.hpp"
#include "pvrnn/config.hpp"
#include "pvrnn/datagen.hpp"
#include "pvrnn/infer.hpp"
#include "pvrnn/train.hpp"

namespace pvrnn {

struct TrainTestSplit {
  SequenceBatch all;
  std::vector<Sequence> train, test;
};

/// Generates train and test sequences in one batch (shared proprio scaling).
/// Per task, sequences are spread round-robin over the three conditions;
/// within each (task, condition) cell the first ones go to training.
inline TrainTestSplit make_split(const WorldSpec& world, int train_per_task, int test_per_task, std::uint64_t seed) {
  const auto tr = TaskCounts::spread(train_per_task), te = TaskCounts::spread(test_per_task);
  TaskCounts counts;
  for (int task = 0; task < 2; ++task)
    for (int c = 0; c < 3; ++c) counts.per_condition[task][c] = tr[c] + te[c];
  TrainTestSplit s;
  s.all = generate(world, counts, seed);
  std::array<std::array<int, 3>, 2> seen{};
  for (const auto& q : s.all.sequences) {
    int& k = seen[static_cast<std::size_t>(q.task)][static_cast<std::size_t>(q.condition)];
    (k < tr[static_cast<std::size_t>(q.condition)] ? s.train : s.test).push_back(q);
    ++k;
  }
  return s;
}

/// First `n` sequences of `task`, taken round-robin over conditions so any
/// prefix stays balanced across conditions.
inline std::vector<Sequence> take_balanced(const std::vector<Sequence>& pool, Task task, int n) {
  std::array<std::vector<const Sequence*>, 3> by_cond;
  for (const auto& s : pool)
    if (s.task == task) by_cond[static_cast<std::size_t>(s.condition)].push_back(&s);
  std::vector<Sequence> out;
  for (std::size_t round = 0; static_cast<int>(out.size()) < n; ++round) {
    bool any = false;
    for (auto& c : by_cond)
      if (round < c.size() && static_cast<int>(out.size()) < n) {
        out.push_back(*c[round]);
        any = true;
      }
    if (!any) throw ConfigError("requested " + std::to_string(n) + " " + task_name(task) + " sequences, only " +
                                std::to_string(out.size()) + " available");
  }
  return out;
}

/// Trained networks keyed by (R count, W count, seed), shared between
/// protocols of one run.
class ModelCache {
 public:
  using Key = std::tuple<int, int, std::uint64_t>;

  ModelCache(RunConfig cfg, int threads) : cfg_(std::move(cfg)), threads_(threads) {}

  std::shared_ptr<const Checkpoint> get(const std::vector<Sequence>& pool, int r_count, int w_count, std::uint64_t seed) {
    const Key key{r_count, w_count, seed};
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    std::vector<Sequence> data = take_balanced(pool, Task::Reposition, r_count);
    for (auto& s : take_balanced(pool, Task::Wipe, w_count)) data.push_back(std::move(s));
    TrainConfig tc = cfg_.train;
    tc.seed = seed;
    tc.log_every = std::max(1, tc.log_every);
    FitOptions fo;
    fo.threads = threads_;
    FitResult res = fit(data, cfg_.topology(), tc, fo);
    res.checkpoint.provenance.config = to_json(cfg_).dump();
    auto ck = std::make_shared<const Checkpoint>(std::move(res.checkpoint));
    cache_[key] = ck;
    histories_[key] = std::move(res.history);
    if (on_trained) on_trained(key, *ck, histories_[key]);
    return ck;
  }

  void put(const Key& key, std::shared_ptr<const Checkpoint> ck) { cache_[key] = std::move(ck); }

  const std::vector<LossRecord>* history(const Key& k) const {
    auto it = histories_.find(k);
    return it == histories_.end() ? nullptr : &it->second;
  }

  const RunConfig& config() const { return cfg_; }
  int threads() const { return threads_; }

  std::function<void(const Key&, const Checkpoint&, const std::vector<LossRecord>&)> on_trained;

 private:
  RunConfig cfg_;
  int threads_;
  std::map<Key, std::shared_ptr<const Checkpoint>> cache_;
  std::map<Key, std::vector<LossRecord>> histories_;
};

inline std::vector<std::uint64_t> experiment_seeds(const ExperimentConfig& e) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < e.seeds; ++i) s.push_back(e.first_seed + static_cast<std::uint64_t>(i));
  return s;
}

// ---------------------------------------------------------------------------
// Experiment 1

struct UncertaintyResult {
  std::uint64_t seed = 0;
  UncertaintyStats stats;
  /// Per task: ablation map of each module.
  std::array<std::array<AblationMap, kNumModules>, 2> ablation;
};

inline UncertaintyResult uncertainty_protocol(const Checkpoint& ck, const std::shared_ptr<const Checkpoint>& shared,
                                              const std::vector<Sequence>& test, InferConfig icfg, int threads) {
  UncertaintyResult r;
  r.seed = ck.provenance.seed;
  icfg.seed = derive_seed(ck.provenance.seed, {101});
  const TrialSet ts = run_trials(shared, test, icfg, threads);
  r.stats = uncertainty_stats(ts.trials);
  for (int task = 0; task < 2; ++task) {
    std::vector<TrialLog> logs;
    for (const auto& l : ts.trials)
      if (static_cast<int>(l.task) == task) logs.push_back(l);
    for (int m = 0; m < kNumModules; ++m)
      r.ablation[static_cast<std::size_t>(task)][static_cast<std::size_t>(m)] = ablate(ck, logs, {m});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Experiment 2

/// All vision, then progressively dropping the highest remaining
/// resolution, each with and without proprioception.
inline std::vector<MaskPolicy> robustness_conditions(const NetworkTopology& topo) {
  std::vector<MaskPolicy> out;
  const int G = static_cast<int>(topo.vision.resolutions.size());
  for (int keep = G; keep >= 1; --keep) {
    for (bool proprio : {true, false}) {
      MaskPolicy p;
      p.all_vision = false;
      for (int g = 0; g < keep; ++g) p.vision_groups.push_back(g);
      p.proprio = proprio;
      out.push_back(p);
    }
  }
  return out;
}

/// Highest-resolution prediction error per condition: mean over steps
/// within a trial, then over trials. One row per condition.
inline ErrorTable robustness_protocol(const std::shared_ptr<const Checkpoint>& ck, const std::vector<Sequence>& test,
                                      const std::vector<MaskPolicy>& conditions, InferConfig icfg, int threads,
                                      const std::string& network) {
  if (conditions.empty()) throw ConfigError("robustness protocol: empty condition list");
  ErrorTable table;
  for (const auto& c : conditions) {
    icfg.mask = c;
    icfg.seed = derive_seed(ck->provenance.seed, {102});
    const TrialSet ts = run_trials(ck, test, icfg, threads);
    std::vector<double> errs;
    for (const auto& l : ts.trials) errs.push_back(trial_error(l, ErrorMeasure::HighestVision));
    table.add("robustness", c.label(ck->topology), network, errs);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Experiment 3

struct InterferenceCell {
  Task fixed = Task::Reposition;
  int varied_count = 0;
  std::uint64_t seed = 0;
  double fixed_error = 0.0;    ///< fixed-task test error
  double unseen_error = -1.0;  ///< varied-task test error (varied_count == 0 only)
};

inline std::string interference_table_name(Task fixed) { return task_name(fixed) + "-fixed"; }

/// Trains one network per (direction, varied count) for one seed and
/// evaluates the fixed task's test error; with a varied count of 0 the
/// never-seen task is evaluated as well.
inline std::vector<InterferenceCell> interference_protocol(ModelCache& cache, const TrainTestSplit& split,
                                                          std::uint64_t seed, ErrorTable& table) {
  const auto& cfg = cache.config();
  const auto& e = cfg.experiments;
  InferConfig icfg = cfg.infer;
  icfg.trials = e.interference_trials;
  icfg.mask = MaskPolicy{};
  icfg.seed = derive_seed(seed, {103});
  std::vector<InterferenceCell> cells;
  for (Task fixed : {Task::Reposition, Task::Wipe}) {
    const Task varied = fixed == Task::Reposition ? Task::Wipe : Task::Reposition;
    std::vector<Sequence> fixed_test, varied_test;
    for (const auto& s : split.test) (s.task == fixed ? fixed_test : varied_test).push_back(s);
    for (int n : e.varied_counts) {
      const int r = fixed == Task::Reposition ? e.fixed_count : n;
      const int w = fixed == Task::Reposition ? n : e.fixed_count;
      auto ck = cache.get(split.train, r, w, seed);
      InterferenceCell cell;
      cell.fixed = fixed;
      cell.varied_count = n;
      cell.seed = seed;
      std::vector<double> errs;
      for (const auto& l : run_trials(ck, fixed_test, icfg, cache.threads()).trials)
        errs.push_back(trial_error(l, ErrorMeasure::Combined));
      table.add(interference_table_name(fixed), task_name(varied) + "=" + std::to_string(n), std::to_string(seed), errs);
      cell.fixed_error = mean_stderr(errs).mean;
      if (n == 0) {
        std::vector<double> u;
        for (const auto& l : run_trials(ck, varied_test, icfg, cache.threads()).trials)
          u.push_back(trial_error(l, ErrorMeasure::Combined));
        table.add(interference_table_name(fixed), "unseen:" + task_name(varied), std::to_string(seed), u);
        cell.unseen_error = mean_stderr(u).mean;
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

}  // namespace pvrnn
