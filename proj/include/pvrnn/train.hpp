// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Full-batch learning: every iteration runs all training sequences with
// fresh noise, sums their free energy, and applies one rectified-Adam step
// to the weights and every sequence's adaptive posterior jointly.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <span>
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
#include "pvrnn/parameters.hpp"
#include "pvrnn/rng.hpp"

namespace pvrnn {

struct TrainConfig {
  int iterations = 3000;
  RAdamConfig optimizer{};
  double W = kDefaultMetaPrior;
  std::uint64_t seed = 1;
  /// Loss-history cadence in iterations (the final iteration is always logged).
  int log_every = 1;
  /// Intermediate checkpoint cadence; 0 disables.
  int checkpoint_every = 0;
  /// Global-norm gradient clipping; 0 disables.
  double clip_norm = 0.0;

  void validate() const {
    std::vector<std::string> errs;
    if (iterations < 1) errs.push_back("iterations must be >= 1");
    if (!(optimizer.lr > 0.0 && optimizer.lr < 1.0)) errs.push_back("lr must be in (0,1)");
    if (!(optimizer.beta1 > 0.0 && optimizer.beta1 < 1.0)) errs.push_back("beta1 must be in (0,1)");
    if (!(optimizer.beta2 > 0.0 && optimizer.beta2 < 1.0)) errs.push_back("beta2 must be in (0,1)");
    if (!(W >= 0.0) || !std::isfinite(W)) errs.push_back("W must be finite and >= 0");
    if (log_every < 1) errs.push_back("log_every must be >= 1");
    if (checkpoint_every < 0) errs.push_back("checkpoint_every must be >= 0");
    if (!(clip_norm >= 0.0)) errs.push_back("clip_norm must be >= 0");
    if (!errs.empty()) {
      std::string msg = "train config:";
      for (const auto& e : errs) msg += " " + e + ";";
      throw ConfigError(msg);
    }
  }
};

/// Free energy of one iteration's forward passes, summed over sequences
/// and steps (complexity columns unweighted; `total` includes W).
struct LossRecord {
  int iteration = 0;
  FreeEnergyTerms terms;
};

struct FitOptions {
  int threads = 1;
  std::function<void(const LossRecord&)> on_log;
  std::function<void(int iteration, const Checkpoint&)> on_checkpoint;
};

struct FitResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> history;
};

/// a = 0 at every step: posterior (0, 1), equal to the prior at t = 1.
inline AdaptivePosterior init_adaptive(const NetworkTopology& topo, int T, int sequence_id = 0) {
  if (T < 1) throw ConfigError("init_adaptive: T must be >= 1");
  return AdaptivePosterior::zeros(topo, T, 1, sequence_id);
}

/// Shape, finiteness and range checks for training data.
inline void validate_training_data(const std::vector<Sequence>& data, const NetworkTopology& topo) {
  if (data.empty()) throw ValidationError("training data is empty");
  std::set<int> ids;
  for (const auto& s : data) {
    const std::string tag = "sequence " + std::to_string(s.id);
    if (!ids.insert(s.id).second) throw ValidationError("duplicate " + tag);
    if (s.vision.rows() != topo.extero_dims() || s.proprio.rows() != topo.proprio_dims)
      throw ShapeError(tag + ": dims (" + std::to_string(s.vision.rows()) + ", " + std::to_string(s.proprio.rows()) +
                       ") do not match topology (" + std::to_string(topo.extero_dims()) + ", " +
                       std::to_string(topo.proprio_dims) + ")");
    if (s.vision.cols() != s.proprio.cols() || s.vision.cols() < 1) throw ShapeError(tag + ": inconsistent length");
    for (const auto* m : {&s.vision, &s.proprio}) {
      if (!m->allFinite()) throw ValidationError(tag + ": non-finite value");
      if (m->size() > 0 && m->cwiseAbs().maxCoeff() > kDataMax + 1e-9)
        throw ValidationError(tag + ": value outside [-0.9, 0.9]");
    }
  }
}

namespace detail {

inline void collect_spans(Parameters& p, std::vector<std::span<double>>& out) {
  p.for_each_trainable([&](const std::string&, auto& t) { out.push_back(as_span(t)); });
}
inline void collect_cspans(const Parameters& p, std::vector<std::span<const double>>& out) {
  p.for_each_trainable([&](const std::string&, const auto& t) { out.push_back(as_cspan(t)); });
}

}  // namespace detail

inline Rng training_noise_rng(std::uint64_t seed, int sequence_id, int iteration) {
  return make_rng(seed, {static_cast<std::uint64_t>(Stream::TrainNoise), static_cast<std::uint64_t>(sequence_id),
                         static_cast<std::uint64_t>(iteration)});
}

/// Trains from scratch. Results depend only on (data as a set keyed by
/// sequence id, topology, config): noise streams are keyed by sequence id
/// and iteration, and gradients are reduced in ascending id order.
inline FitResult fit(const std::vector<Sequence>& data_in, const NetworkTopology& topo, const TrainConfig& cfg,
                     const FitOptions& opts = {}) {
  topo.validate();
  cfg.validate();
  validate_training_data(data_in, topo);

  std::vector<Sequence> data = data_in;
  std::sort(data.begin(), data.end(), [](const Sequence& a, const Sequence& b) { return a.id < b.id; });
  const std::size_t S = data.size();

  FitResult res;
  Checkpoint& ck = res.checkpoint;
  ck.topology = topo;
  ck.params = init_parameters(topo, cfg.seed);
  ck.provenance.seed = cfg.seed;
  ck.provenance.dataset_hash = dataset_hash(data);
  for (const auto& s : data) ck.adaptive.push_back(init_adaptive(topo, s.length(), s.id));

  std::vector<ObservationMask> masks;
  std::vector<Observations> obs;
  for (const auto& s : data) {
    masks.push_back(ObservationMask::all(topo, s.length()));
    obs.push_back(s.observations());
  }

  RAdam opt(cfg.optimizer);
  ThreadPool pool(opts.threads);
  std::vector<GradientSet> grads(S);

  for (int it = 0; it < cfg.iterations; ++it) {
    pool.run(S, [&](std::size_t i) {
      Rng rng = training_noise_rng(cfg.seed, data[i].id, it);
      const NoiseBlock noise = draw_noise(topo, data[i].length(), rng);
      const Trajectory tr = forward_sequence(ck.params, topo, &ck.adaptive[i], data[i].length(), noise);
      grads[i] = backward(ck.params, topo, ck.adaptive[i], tr, obs[i], masks[i], cfg.W);
    });

    GradientSet total;
    for (std::size_t i = 0; i < S; ++i) accumulate_weights(total, grads[i]);
    if (!std::isfinite(total.objective)) throw NumericError("training diverged at iteration " + std::to_string(it));

    LossRecord rec{it, total.terms};
    rec.terms.W = cfg.W;
    if (it % cfg.log_every == 0 || it + 1 == cfg.iterations) {
      res.history.push_back(rec);
      if (opts.on_log) opts.on_log(rec);
    }

    std::vector<std::span<double>> targets;
    std::vector<std::span<const double>> g;
    detail::collect_spans(ck.params, targets);
    detail::collect_cspans(total.weights, g);
    for (std::size_t i = 0; i < S; ++i) {
      for (int m = 0; m < kNumModules; ++m) {
        targets.push_back(as_span(ck.adaptive[i].mu[m]));
        targets.push_back(as_span(ck.adaptive[i].sigma[m]));
        g.push_back(as_cspan(grads[i].adaptive.mu[m]));
        g.push_back(as_cspan(grads[i].adaptive.sigma[m]));
      }
    }
    if (cfg.clip_norm > 0.0) {
      std::vector<std::span<double>> mutable_g;
      detail::collect_spans(total.weights, mutable_g);
      for (std::size_t i = 0; i < S; ++i)
        for (int m = 0; m < kNumModules; ++m) {
          mutable_g.push_back(as_span(grads[i].adaptive.mu[m]));
          mutable_g.push_back(as_span(grads[i].adaptive.sigma[m]));
        }
      clip_by_global_norm(mutable_g, cfg.clip_norm);
    }
    opt.step(targets, g);
    ck.provenance.iterations = it + 1;

    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations &&
        opts.on_checkpoint)
      opts.on_checkpoint(it + 1, ck);
  }
  if (!ck.params.all_finite()) throw NumericError("training produced non-finite parameters");
  return res;
}

/// Reconstruction error of one sequence under a deterministic posterior-mean
/// pass: per modality the mean squared error per dimension and step, then
/// the average of the two modalities.
struct ReconstructionError {
  double extero = 0.0;
  double proprio = 0.0;
  double combined() const { return 0.5 * (extero + proprio); }
};

inline ReconstructionError reconstruction_error(const Parameters& params, const NetworkTopology& topo,
                                               const AdaptivePosterior& adaptive, const Sequence& seq) {
  const int T = seq.length();
  if (adaptive.length() != T) throw ShapeError("reconstruction_error: adaptive length differs from the sequence");
  ForwardOptions fo;
  fo.deterministic = true;
  const Trajectory tr = forward_sequence(params, topo, &adaptive, T, zero_noise(topo, T), fo);
  ReconstructionError e;
  e.extero = (tr.extero.output - seq.vision).array().square().mean();
  e.proprio = (tr.proprio.output - seq.proprio).array().square().mean();
  return e;
}

/// Largest combined reconstruction error over the training sequences stored
/// in the checkpoint.
inline double max_reconstruction_error(const Checkpoint& ck, const std::vector<Sequence>& data) {
  double worst = 0.0;
  for (const auto& s : data) {
    const AdaptivePosterior* a = ck.adaptive_for(s.id);
    if (a == nullptr) throw ValidationError("checkpoint has no posterior for sequence " + std::to_string(s.id));
    worst = std::max(worst, reconstruction_error(ck.params, ck.topology, *a, s).combined());
  }
  return worst;
}

}  // namespace pvrnn
