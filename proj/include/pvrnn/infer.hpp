// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Online inference with frozen weights. Each incoming observation opens a
// new step; the adaptive posteriors of the last H steps are then refined
// for a fixed number of rounds by descending the window free energy. Steps
// that slide out of the window keep their final values and define the
// state cached at the window's left edge.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pvrnn/adaptive.hpp"
#include "pvrnn/checkpoint.hpp"
#include "pvrnn/datagen.hpp"
#include "pvrnn/error.hpp"
#include "pvrnn/free_energy.hpp"
#include "pvrnn/grad_engine.hpp"
#include "pvrnn/net_core.hpp"
#include "pvrnn/optimizer.hpp"
#include "pvrnn/parallel.hpp"
#include "pvrnn/rng.hpp"

namespace pvrnn {

enum class InferenceOptimizer { Sgd, RAdam };

/// Which observation dimensions enter the accuracy term.
struct MaskPolicy {
  bool all_vision = true;
  std::vector<int> vision_groups;  ///< used when all_vision is false
  bool proprio = true;

  ObservationMask build(const NetworkTopology& topo, int length) const {
    if (all_vision) {
      ObservationMask m = ObservationMask::all(topo, length);
      if (!proprio) m.proprio.setZero();
      return m;
    }
    return ObservationMask::resolutions(topo, length, vision_groups, proprio);
  }

  std::string label(const NetworkTopology& topo) const {
    std::string s;
    if (all_vision) {
      s = "all";
    } else if (vision_groups.empty()) {
      s = "none";
    } else {
      for (std::size_t i = 0; i < vision_groups.size(); ++i) {
        if (i > 0) s += "+";
        const int g = vision_groups[i];
        const int r = g >= 0 && g < static_cast<int>(topo.vision.resolutions.size()) ? topo.vision.resolutions[g] : -1;
        s += std::to_string(r);
      }
    }
    return s + (proprio ? "/proprio" : "/noproprio");
  }
};

struct InferConfig {
  int H = 30;
  int iterations = 50;
  double lr = 1.0;
  int trials = 5;
  int horizon = 0;
  double W = kDefaultMetaPrior;
  InferenceOptimizer optimizer = InferenceOptimizer::Sgd;
  /// Reuse one eps draw for every round of a step (descent diagnostics).
  bool fixed_eps = false;
  /// Rollouts use z = prior mean.
  bool deterministic_rollout = false;
  /// The recorded pass of each step uses z = posterior mean.
  bool record_mean = false;
  /// Keep the window free energy of every round in the step results.
  bool record_rounds = false;
  MaskPolicy mask;
  std::uint64_t seed = 1;

  void validate() const {
    std::vector<std::string> errs;
    if (H < 1) errs.push_back("H must be >= 1");
    if (iterations < 1) errs.push_back("iterations must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) errs.push_back("lr must be > 0");
    if (trials < 1) errs.push_back("trials must be >= 1");
    if (horizon < 0) errs.push_back("horizon must be >= 0");
    if (!(W >= 0.0) || !std::isfinite(W)) errs.push_back("W must be finite and >= 0");
    if (!errs.empty()) {
      std::string msg = "infer config:";
      for (const auto& e : errs) msg += " " + e + ";";
      throw ConfigError(msg);
    }
  }
};

/// Snapshot of one processed step, taken from the final pass of that step.
struct StepResult {
  int t = 0;
  StepWindow window;
  VectorXd extero, proprio;  ///< predictions for step t
  std::array<VectorXd, kNumModules> mu_p, sigma_p, mu_q, sigma_q, z;
  FreeEnergyTerms terms;     ///< terms of step t
  double window_free_energy = 0.0;
  /// Mean squared error per dimension against the full observation
  /// (masked dimensions included).
  double error_extero = 0.0;
  double error_proprio = 0.0;
  std::vector<double> error_groups;  ///< per vision resolution group
  /// Same errors for the one-step-ahead prediction made at step t - 1
  /// (prior-mean continuation of that step's final pass).
  double ahead_error_extero = 0.0;
  double ahead_error_proprio = 0.0;
  std::vector<double> ahead_error_groups;
  std::vector<double> rounds;        ///< window free energy per round (optional)
};

class InferenceSession {
 public:
  InferenceSession(std::shared_ptr<const Checkpoint> ck, InferConfig cfg, std::uint64_t stream_seed)
      : ck_(std::move(ck)), cfg_(std::move(cfg)), seed_(stream_seed) {
    if (!ck_) throw ConfigError("inference session needs a checkpoint");
    cfg_.validate();
    topo().validate();
    boundary_ = RecurrentState::zero(topo());
    rng_ = make_rng(seed_, {static_cast<std::uint64_t>(Stream::InferNoise)});
    window_ = AdaptivePosterior::zeros(topo(), 0, 1);
    frozen_ = AdaptivePosterior::zeros(topo(), 0, 1);
    for (int m = 0; m < kNumModules; ++m) frozen_eps_.eps[m].resize(topo().module(m).z_size, 0);
    x_ = {MatrixXd(topo().extero_dims(), 0), MatrixXd(topo().proprio_dims, 0)};
    mask_ = {Eigen::ArrayXXd(topo().extero_dims(), 0), Eigen::ArrayXXd(topo().proprio_dims, 0)};
  }

  const NetworkTopology& topo() const { return ck_->topology; }
  const Parameters& params() const { return ck_->params; }
  const InferConfig& config() const { return cfg_; }
  int t() const { return t_; }
  const RecurrentState& boundary() const { return boundary_; }
  const AdaptivePosterior& window() const { return window_; }
  StepWindow current_window() const { return {window_.first_step, t_}; }
  /// Final values of the steps that left the window (steps 1..boundary.t).
  const AdaptivePosterior& frozen() const { return frozen_; }
  const NoiseBlock& frozen_eps() const { return frozen_eps_; }
  const Trajectory& last_pass() const { return last_; }

  /// Processes one observation. Throws without modifying the session if the
  /// observation or mask is malformed.
  StepResult step(const VectorXd& extero, const VectorXd& proprio, const Eigen::ArrayXd& mask_extero,
                  const Eigen::ArrayXd& mask_proprio) {
    const auto& tp = topo();
    if (extero.size() != tp.extero_dims() || proprio.size() != tp.proprio_dims)
      throw ShapeError("observation dims (" + std::to_string(extero.size()) + ", " + std::to_string(proprio.size()) +
                       ") do not match the checkpoint topology (" + std::to_string(tp.extero_dims()) + ", " +
                       std::to_string(tp.proprio_dims) + ")");
    if (mask_extero.size() != extero.size() || mask_proprio.size() != proprio.size())
      throw ShapeError("mask dims do not match the observation");
    if (!extero.allFinite() || !proprio.allFinite()) throw ValidationError("non-finite observation rejected");
    if (!mask_extero.allFinite() || !mask_proprio.allFinite()) throw ValidationError("non-finite mask rejected");

    StepResult res;
    {
      const Prediction ahead = predict_next();
      res.ahead_error_extero = (ahead.extero - extero).array().square().mean();
      res.ahead_error_proprio = (ahead.proprio - proprio).array().square().mean();
      res.ahead_error_groups = group_errors(ahead.extero, extero);
    }

    ++t_;
    if (window_.length() >= cfg_.H) slide();
    window_.append_zero_step();
    append_col(x_.extero, extero);
    append_col(x_.proprio, proprio);
    append_col(mask_.extero, mask_extero);
    append_col(mask_.proprio, mask_proprio);

    const int L = window_.length();
    res.t = t_;
    res.window = current_window();
    NoiseBlock fixed;
    if (cfg_.fixed_eps) fixed = draw_noise(tp, L, rng_);
    RAdam radam(RAdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
    BackwardOptions bo;
    bo.weights = false;
    for (int r = 0; r < cfg_.iterations; ++r) {
      const NoiseBlock noise = cfg_.fixed_eps ? fixed : draw_noise(tp, L, rng_);
      const Trajectory tr = forward_sequence(params(), tp, &window_, L, noise, {}, boundary_);
      const GradientSet g = backward(params(), tp, window_, tr, x_, mask_, cfg_.W, bo);
      if (cfg_.record_rounds) res.rounds.push_back(g.objective);
      apply(g, radam);
    }
    const NoiseBlock noise = cfg_.record_mean ? zero_noise(tp, L) : cfg_.fixed_eps ? fixed : draw_noise(tp, L, rng_);
    last_ = forward_sequence(params(), tp, &window_, L, noise, {}, boundary_);
    const auto terms = trajectory_free_energy(last_, x_, mask_, cfg_.W);
    if (cfg_.record_rounds) res.rounds.push_back(sequence_free_energy(terms));

    const int k = L - 1;
    res.extero = last_.extero.output.col(k);
    res.proprio = last_.proprio.output.col(k);
    for (int m = 0; m < kNumModules; ++m) {
      const auto& mt = last_.modules[m];
      res.mu_p[m] = mt.mu_p.col(k);
      res.sigma_p[m] = mt.sigma_p.col(k);
      res.mu_q[m] = mt.mu_q.col(k);
      res.sigma_q[m] = mt.sigma_q.col(k);
      res.z[m] = mt.z.col(k);
    }
    res.terms = terms.back();
    res.window_free_energy = sequence_free_energy(terms);
    res.error_extero = (res.extero - extero).array().square().mean();
    res.error_proprio = tp.proprio_dims > 0 ? (res.proprio - proprio).array().square().mean() : 0.0;
    res.error_groups = group_errors(res.extero, extero);
    return res;
  }

  StepResult step(const VectorXd& extero, const VectorXd& proprio) {
    return step(extero, proprio, Eigen::ArrayXd::Ones(extero.size()), Eigen::ArrayXd::Ones(proprio.size()));
  }

  /// Prediction for step t + 1 from the state at t with z = prior mean.
  Prediction predict_next() const {
    const RecurrentState s = t_ == 0 ? boundary_ : last_.state_at(last_.length - 1);
    ForwardOptions fo;
    fo.mode = LatentMode::Prior;
    fo.deterministic = true;
    const Trajectory tr = forward_sequence(params(), topo(), nullptr, 1, zero_noise(topo(), 1), fo, s);
    return tr.prediction_at(0);
  }

  /// Prior-mode continuation for `horizon` steps after step t. Does not
  /// modify the session; repeated calls return identical predictions.
  Observations rollout(int horizon) const {
    if (horizon < 0) throw ConfigError("rollout horizon must be >= 0");
    if (t_ < 1) throw ConfigError("rollout needs at least one processed step");
    Observations out{MatrixXd(topo().extero_dims(), 0), MatrixXd(topo().proprio_dims, 0)};
    if (horizon == 0) return out;
    Rng rng = make_rng(seed_, {static_cast<std::uint64_t>(Stream::Rollout), static_cast<std::uint64_t>(t_)});
    const NoiseBlock noise = draw_noise(topo(), horizon, rng);
    ForwardOptions fo;
    fo.mode = LatentMode::Prior;
    fo.deterministic = cfg_.deterministic_rollout;
    const Trajectory tr = forward_sequence(params(), topo(), nullptr, horizon, noise, fo, last_.state_at(last_.length - 1));
    return {tr.extero.output, tr.proprio.output};
  }

  /// Adaptive values and eps of every processed step: frozen steps as they
  /// left the window, window steps from the last recorded pass.
  std::pair<AdaptivePosterior, NoiseBlock> history() const {
    AdaptivePosterior a = frozen_;
    NoiseBlock nb = frozen_eps_;
    for (int m = 0; m < kNumModules; ++m) {
      const auto n = frozen_.mu[m].cols(), w = window_.mu[m].cols();
      a.mu[m].conservativeResize(Eigen::NoChange, n + w);
      a.sigma[m].conservativeResize(Eigen::NoChange, n + w);
      nb.eps[m].conservativeResize(Eigen::NoChange, n + w);
      a.mu[m].rightCols(w) = window_.mu[m];
      a.sigma[m].rightCols(w) = window_.sigma[m];
      if (w > 0) nb.eps[m].rightCols(w) = last_.noise.eps[m];
    }
    a.first_step = 1;
    return {a, nb};
  }

 private:
  std::vector<double> group_errors(const VectorXd& pred, const VectorXd& obs) const {
    std::vector<double> out;
    const auto& v = topo().vision;
    for (std::size_t g = 0; g < v.resolutions.size(); ++g) {
      const int off = v.group_offset(g), n = v.group_dims(g);
      out.push_back((pred.segment(off, n) - obs.segment(off, n)).array().square().mean());
    }
    return out;
  }

  template <class M, class V>
  static void append_col(M& m, const V& v) {
    m.conservativeResize(Eigen::NoChange, m.cols() + 1);
    m.col(m.cols() - 1) = v;
  }
  template <class M>
  static void drop_col(M& m) {
    M r = m.rightCols(m.cols() - 1);
    m = std::move(r);
  }

  /// Freezes the leftmost window step and advances the boundary past it.
  void slide() {
    boundary_ = last_.state_at(0);
    for (int m = 0; m < kNumModules; ++m) {
      append_col(frozen_.mu[m], window_.mu[m].col(0));
      append_col(frozen_.sigma[m], window_.sigma[m].col(0));
      append_col(frozen_eps_.eps[m], last_.noise.eps[m].col(0));
    }
    window_.drop_front();
    drop_col(x_.extero);
    drop_col(x_.proprio);
    drop_col(mask_.extero);
    drop_col(mask_.proprio);
  }

  void apply(const GradientSet& g, RAdam& radam) {
    std::vector<std::span<double>> targets;
    std::vector<std::span<const double>> grads;
    for (int m = 0; m < kNumModules; ++m) {
      targets.push_back(as_span(window_.mu[m]));
      targets.push_back(as_span(window_.sigma[m]));
      grads.push_back(as_cspan(g.adaptive.mu[m]));
      grads.push_back(as_cspan(g.adaptive.sigma[m]));
    }
    if (cfg_.optimizer == InferenceOptimizer::Sgd)
      sgd_step(targets, grads, cfg_.lr);
    else
      radam.step(targets, grads);
  }

  std::shared_ptr<const Checkpoint> ck_;
  InferConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  int t_ = 0;
  RecurrentState boundary_;
  AdaptivePosterior window_;
  AdaptivePosterior frozen_;
  NoiseBlock frozen_eps_;
  Observations x_;
  ObservationMask mask_;
  Trajectory last_;
};

inline InferenceSession open_session(std::shared_ptr<const Checkpoint> ck, const InferConfig& cfg,
                                     std::uint64_t stream_seed) {
  return InferenceSession(std::move(ck), cfg, stream_seed);
}

/// One inference run over a test sequence.
struct TrialLog {
  int sequence_id = 0;
  Task task = Task::Reposition;
  int condition = 0;
  int trial = 0;
  std::string mask_label;
  std::vector<StepResult> steps;
  /// Final adaptive values and eps of every step (for exact replays).
  AdaptivePosterior posterior;
  NoiseBlock noise;
};

struct TrialSet {
  std::vector<TrialLog> trials;
  std::size_t size() const { return trials.size(); }
};

inline std::uint64_t trial_seed(std::uint64_t seed, int sequence_id, int trial) {
  return derive_seed(seed, {static_cast<std::uint64_t>(Stream::InferNoise), static_cast<std::uint64_t>(sequence_id),
                            static_cast<std::uint64_t>(trial)});
}

/// Runs a session over the whole of `seq` with the config's mask policy.
inline TrialLog run_trial(std::shared_ptr<const Checkpoint> ck, const Sequence& seq, const InferConfig& cfg, int trial) {
  InferenceSession s(ck, cfg, trial_seed(cfg.seed, seq.id, trial));
  const ObservationMask mask = cfg.mask.build(ck->topology, seq.length());
  TrialLog log;
  log.sequence_id = seq.id;
  log.task = seq.task;
  log.condition = seq.condition;
  log.trial = trial;
  log.mask_label = cfg.mask.label(ck->topology);
  for (int t = 0; t < seq.length(); ++t)
    log.steps.push_back(s.step(seq.vision.col(t), seq.proprio.col(t), mask.extero.col(t), mask.proprio.col(t)));
  auto [a, nb] = s.history();
  log.posterior = std::move(a);
  log.posterior.sequence_id = seq.id;
  log.noise = std::move(nb);
  return log;
}

/// `cfg.trials` independent sessions per sequence, ordered by (sequence,
/// trial) regardless of thread count.
inline TrialSet run_trials(std::shared_ptr<const Checkpoint> ck, const std::vector<Sequence>& seqs,
                           const InferConfig& cfg, int threads = 1) {
  cfg.validate();
  TrialSet out;
  out.trials.resize(seqs.size() * static_cast<std::size_t>(cfg.trials));
  ThreadPool pool(threads);
  pool.run(out.trials.size(), [&](std::size_t i) {
    const std::size_t s = i / static_cast<std::size_t>(cfg.trials);
    const int k = static_cast<int>(i % static_cast<std::size_t>(cfg.trials));
    out.trials[i] = run_trial(ck, seqs[s], cfg, k);
  });
  return out;
}

}  // namespace pvrnn
