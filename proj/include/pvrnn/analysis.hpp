// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc analyses over inference trials: module ablation maps, prior
// uncertainty statistics, error tables and the paired t-test.

#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pvrnn/checkpoint.hpp"
#include "pvrnn/datagen.hpp"
#include "pvrnn/error.hpp"
#include "pvrnn/infer.hpp"
#include "pvrnn/net_core.hpp"

namespace pvrnn {

// ---------------------------------------------------------------------------
// Ablation

struct AblationMap {
  std::vector<int> modules;  ///< ablated modules (empty: none)
  int side = 0;              ///< highest resolution
  int trials = 0;
  /// Per step (index t - 1): per-pixel mean |standard - ablated|, row-major.
  std::vector<Eigen::VectorXd> steps;

  double energy() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& v : steps) {
      s += v.sum();
      n += static_cast<std::size_t>(v.size());
    }
    return n ? s / static_cast<double>(n) : 0.0;
  }
  double max() const {
    double m = 0.0;
    for (const auto& v : steps)
      if (v.size()) m = std::max(m, v.maxCoeff());
    return m;
  }
};

/// Highest-resolution group of an extero prediction column, averaged over
/// channels into one grayscale plane.
inline Eigen::VectorXd highest_plane(const NetworkTopology& topo, const Eigen::VectorXd& extero) {
  const auto g = topo.vision.highest_group();
  const int side = topo.vision.highest(), px = side * side, ch = topo.vision.channels;
  const int off = topo.vision.group_offset(g);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(px);
  for (int c = 0; c < ch; ++c) out += extero.segment(off + c * px, px);
  return out / static_cast<double>(ch);
}

/// Replays each trial from its inferred posteriors and recorded eps twice,
/// once as recorded and once with the listed modules' z replaced, and
/// averages the per-pixel absolute difference of the highest-resolution
/// predictions over trials.
inline AblationMap ablate(const Checkpoint& ck, const std::vector<TrialLog>& logs, const std::vector<int>& modules,
                          AblationStyle style = AblationStyle::Zero) {
  for (int m : modules)
    if (m < 0 || m >= kNumModules) throw ConfigError("ablate: unknown module id " + std::to_string(m));
  if (logs.empty()) throw ConfigError("ablate: no trials");
  const auto& topo = ck.topology;
  AblationMap map;
  map.modules = modules;
  map.side = topo.vision.highest();
  map.trials = static_cast<int>(logs.size());
  const int T = logs.front().posterior.length();
  for (const auto& l : logs)
    if (l.posterior.length() != T) throw ShapeError("ablate: trials differ in length");
  map.steps.assign(static_cast<std::size_t>(T), Eigen::VectorXd::Zero(map.side * map.side));
  if (modules.empty()) return map;

  ForwardOptions abl;
  abl.ablation_style = style;
  for (int m : modules) abl.ablate[static_cast<std::size_t>(m)] = true;
  for (const auto& l : logs) {
    const Trajectory a = forward_sequence(ck.params, topo, &l.posterior, T, l.noise);
    const Trajectory b = forward_sequence(ck.params, topo, &l.posterior, T, l.noise, abl);
    for (int t = 0; t < T; ++t)
      map.steps[static_cast<std::size_t>(t)] +=
          (highest_plane(topo, a.extero.output.col(t)) - highest_plane(topo, b.extero.output.col(t))).cwiseAbs();
  }
  for (auto& v : map.steps) v /= static_cast<double>(logs.size());
  return map;
}

// ---------------------------------------------------------------------------
// Prior uncertainty

struct SigmaSummary {
  double mean_sigma = 0.0;
  double mean_abs_delta = 0.0;
  int count = 0;
};

/// Within-trial statistics of one module's prior sd: mean over steps and
/// latents, and mean over consecutive-step pairs and latents of |delta|.
inline SigmaSummary trial_sigma_summary(const TrialLog& log, int module) {
  const auto& s = log.steps;
  if (s.size() < 2) throw ValidationError("prior sigma variability needs at least two steps");
  double total = 0.0, delta = 0.0;
  std::size_t n = 0, nd = 0;
  for (std::size_t t = 0; t < s.size(); ++t) {
    const auto& sp = s[t].sigma_p[static_cast<std::size_t>(module)];
    total += sp.sum();
    n += static_cast<std::size_t>(sp.size());
    if (t > 0) {
      delta += (sp - s[t - 1].sigma_p[static_cast<std::size_t>(module)]).cwiseAbs().sum();
      nd += static_cast<std::size_t>(sp.size());
    }
  }
  return {total / static_cast<double>(n), delta / static_cast<double>(nd), 1};
}

struct UncertaintyStats {
  /// [task][module]
  std::array<std::array<SigmaSummary, kNumModules>, 2> cells{};

  const SigmaSummary& at(Task task, int module) const { return cells[static_cast<std::size_t>(task)][static_cast<std::size_t>(module)]; }
  /// Mean over modules of the per-module variability.
  double variability(Task task) const {
    double s = 0.0;
    for (int m = 0; m < kNumModules; ++m) s += at(task, m).mean_abs_delta;
    return s / kNumModules;
  }
  double mean_sigma(Task task) const {
    double s = 0.0;
    for (int m = 0; m < kNumModules; ++m) s += at(task, m).mean_sigma;
    return s / kNumModules;
  }
};

/// Two-stage average: statistics within each trial first, then the plain
/// mean across trials (and thereby sequences and networks).
inline UncertaintyStats uncertainty_stats(const std::vector<const TrialLog*>& logs) {
  UncertaintyStats st;
  for (const TrialLog* l : logs) {
    for (int m = 0; m < kNumModules; ++m) {
      const SigmaSummary s = trial_sigma_summary(*l, m);
      auto& c = st.cells[static_cast<std::size_t>(l->task)][static_cast<std::size_t>(m)];
      c.mean_sigma += s.mean_sigma;
      c.mean_abs_delta += s.mean_abs_delta;
      c.count += 1;
    }
  }
  for (auto& task : st.cells)
    for (auto& c : task)
      if (c.count > 0) {
        c.mean_sigma /= c.count;
        c.mean_abs_delta /= c.count;
      }
  return st;
}

inline UncertaintyStats uncertainty_stats(const std::vector<TrialLog>& logs) {
  std::vector<const TrialLog*> p;
  for (const auto& l : logs) p.push_back(&l);
  return uncertainty_stats(p);
}

// ---------------------------------------------------------------------------
// Error tables

enum class ErrorMeasure {
  HighestVision,  ///< highest-resolution vision group
  Combined,       ///< mean of the vision and proprio errors
};

/// Mean over steps of one trial's prediction error.
inline double trial_error(const TrialLog& log, ErrorMeasure measure, bool ahead = false) {
  if (log.steps.empty()) throw ValidationError("trial has no steps");
  double s = 0.0;
  for (const auto& st : log.steps) {
    if (measure == ErrorMeasure::HighestVision)
      s += ahead ? st.ahead_error_groups.back() : st.error_groups.back();
    else
      s += ahead ? 0.5 * (st.ahead_error_extero + st.ahead_error_proprio) : 0.5 * (st.error_extero + st.error_proprio);
  }
  return s / static_cast<double>(log.steps.size());
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
  int count = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr r;
  r.count = static_cast<int>(v.size());
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double q = 0.0;
    for (double x : v) q += (x - r.mean) * (x - r.mean);
    r.stderr_ = std::sqrt(q / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

struct ErrorRow {
  std::string table;      ///< e.g. "robustness", "R-fixed"
  std::string condition;  ///< condition label
  std::string network;    ///< network seed, or "all" for the aggregate
  double mean = 0.0;
  double stderr_ = 0.0;   ///< across trials for per-network rows, across networks for aggregates
  int count = 0;
};

struct ErrorTable {
  std::vector<ErrorRow> rows;

  void add(const std::string& table, const std::string& condition, const std::string& network,
           const std::vector<double>& samples) {
    const auto ms = mean_stderr(samples);
    rows.push_back({table, condition, network, ms.mean, ms.stderr_, ms.count});
  }

  /// Appends one "all" row per (table, condition): mean and standard error
  /// of the per-network means. Insertion order of conditions is preserved.
  void aggregate() {
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
    for (const auto& r : rows) {
      if (r.network == "all") continue;
      const auto key = std::make_pair(r.table, r.condition);
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(r.mean);
    }
    for (const auto& k : order) add(k.first, k.second, "all", groups[k]);
  }

  const ErrorRow* find(const std::string& table, const std::string& condition, const std::string& network) const {
    for (const auto& r : rows)
      if (r.table == table && r.condition == condition && r.network == network) return &r;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Statistics

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
};

/// Paired two-tailed t-test on a - b.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("paired t-test: samples differ in length");
  if (a.size() < 2) throw ConfigError("paired t-test: need at least two pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (!(var > 0.0) || !std::isfinite(var)) throw NumericError("paired t-test: differences have zero variance");
  TTestResult r;
  r.df = static_cast<int>(n - 1);
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  const boost::math::students_t dist(static_cast<double>(r.df));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace pvrnn
