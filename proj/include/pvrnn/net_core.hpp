// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Top-down generative pass of the hierarchical variational RNN.
//
// Per step t and module m (executive first):
//   prior      mu_p = tanh(Wpm d_{t-1}),  sigma_p = exp(clamp(Wps d_{t-1}))
//   posterior  mu_q = tanh(a_mu),         sigma_q = exp(clamp(a_sigma))
//   sample     z = mu + sigma * eps
//   state      h_t = (1/tau)(Wrec d_{t-1} + Wz z + Wtop d_t^parent + b) + (1 - 1/tau) h_{t-1}
//              d_t = tanh(h_t)
// then the perceptual outputs d_t^Ext, d_t^Pro are decoded into vision and
// proprioception by tanh feedforward heads.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pvrnn/adaptive.hpp"
#include "pvrnn/error.hpp"
#include "pvrnn/parameters.hpp"
#include "pvrnn/rng.hpp"
#include "pvrnn/topology.hpp"

namespace pvrnn {

/// Bound on the log-sd pre-activation of both prior and posterior.
inline constexpr double kLogSigmaBound = 8.0;

inline double clamp_log_sigma(double x) { return std::clamp(x, -kLogSigmaBound, kLogSigmaBound); }

/// Derivative of clamp_log_sigma: 1 inside the bound (inclusive), else 0.
inline double clamp_log_sigma_grad(double x) { return (x >= -kLogSigmaBound && x <= kLogSigmaBound) ? 1.0 : 0.0; }

/// tanh through the vectorized exponential; saturates cleanly to +-1.
template <class Derived>
auto tanh_fast(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / ((2.0 * x.derived()).exp() + 1.0);
}

template <class Derived>
Eigen::ArrayXXd exp_clamped(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().max(-kLogSigmaBound).min(kLogSigmaBound).exp();
}

struct RecurrentState {
  std::array<VectorXd, kNumModules> h;
  std::array<VectorXd, kNumModules> d;
  int t = 0;

  static RecurrentState zero(const NetworkTopology& topo) {
    RecurrentState s;
    for (int m = 0; m < kNumModules; ++m) {
      s.h[m] = VectorXd::Zero(topo.module(m).d_size);
      s.d[m] = VectorXd::Zero(topo.module(m).d_size);
    }
    return s;
  }

  bool all_finite() const {
    for (int m = 0; m < kNumModules; ++m)
      if (!h[m].allFinite() || !d[m].allFinite()) return false;
    return true;
  }
};

struct Gaussian {
  VectorXd mu;
  VectorXd sigma;
};

struct LatentMoments {
  std::array<VectorXd, kNumModules> mu;
  std::array<VectorXd, kNumModules> sigma;
};

struct LatentSample {
  std::array<VectorXd, kNumModules> z;
  std::array<VectorXd, kNumModules> eps;
};

struct Prediction {
  VectorXd extero;
  VectorXd proprio;
  std::vector<VectorXd> extero_hidden;
  std::vector<VectorXd> proprio_hidden;
};

// ---------------------------------------------------------------------------
// Single-step building blocks

inline Gaussian prior_moments(const ModuleWeights& w, const VectorXd& d_prev) {
  Gaussian g;
  g.mu = tanh_fast((w.prior_mu * d_prev).array()).matrix();
  g.sigma = exp_clamped(w.prior_sigma * d_prev).matrix();
  return g;
}

/// Prior of every module from the previous step's outputs.
inline LatentMoments compute_prior(const RecurrentState& prev, const Parameters& params) {
  LatentMoments out;
  for (int m = 0; m < kNumModules; ++m) {
    auto g = prior_moments(params.modules[m], prev.d[m]);
    out.mu[m] = std::move(g.mu);
    out.sigma[m] = std::move(g.sigma);
  }
  return out;
}

inline Gaussian posterior_moments(const VectorXd& a_mu, const VectorXd& a_sigma) {
  return {tanh_fast(a_mu.array()).matrix(), exp_clamped(a_sigma).matrix()};
}

/// Posterior of every module at global step `step`.
inline LatentMoments compute_posterior(const AdaptivePosterior& a, int step) {
  if (!a.covers(step)) throw ConfigError("adaptive posterior does not cover step " + std::to_string(step));
  const int k = step - a.first_step;
  LatentMoments out;
  for (int m = 0; m < kNumModules; ++m) {
    auto g = posterior_moments(a.mu[m].col(k), a.sigma[m].col(k));
    out.mu[m] = std::move(g.mu);
    out.sigma[m] = std::move(g.sigma);
  }
  return out;
}

inline LatentSample sample_latent(const LatentMoments& moments, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentSample s;
  for (int m = 0; m < kNumModules; ++m) {
    s.eps[m].resize(moments.mu[m].size());
    for (Eigen::Index i = 0; i < s.eps[m].size(); ++i) s.eps[m][i] = normal(rng);
    s.z[m] = moments.mu[m] + moments.sigma[m].cwiseProduct(s.eps[m]);
  }
  return s;
}

/// Synaptic input of module `m` before the leak:
/// Wrec d_prev + Wz z + Wtop d_parent + b. `d_parent` is ignored for the root.
inline VectorXd module_preactivation(const ModuleWeights& w, const VectorXd& d_prev, const VectorXd& z,
                                     const VectorXd* d_parent) {
  VectorXd pre = w.recurrent * d_prev;
  pre.noalias() += w.latent * z;
  if (d_parent != nullptr && w.top_down.size() > 0) pre.noalias() += w.top_down * *d_parent;
  pre += w.bias;
  return pre;
}

/// Leaky integration: h = inv_tau * pre + (1 - inv_tau) * h_prev.
inline VectorXd leaky_integrate(const VectorXd& pre, const VectorXd& h_prev, const Eigen::ArrayXd& inv_tau,
                                const Eigen::ArrayXd& leak) {
  return (inv_tau * pre.array() + leak * h_prev.array()).matrix();
}

inline void check_finite_state(const RecurrentState& s) {
  if (!s.all_finite()) throw NumericError("non-finite recurrent state at step " + std::to_string(s.t));
}

/// One top-down step of all modules given this step's latent samples.
inline RecurrentState leaky_step(const RecurrentState& prev, const LatentSample& z, const Parameters& params,
                                 const NetworkTopology& topo) {
  check_finite_state(prev);
  RecurrentState next;
  next.t = prev.t + 1;
  for (int m : kTopDown) {
    const Eigen::ArrayXd inv_tau = topo.tau(m).array().inverse();
    const Eigen::ArrayXd leak = 1.0 - inv_tau;
    const VectorXd* parent = kParent[m] >= 0 ? &next.d[kParent[m]] : nullptr;
    const VectorXd pre = module_preactivation(params.modules[m], prev.d[m], z.z[m], parent);
    next.h[m] = leaky_integrate(pre, prev.h[m], inv_tau, leak);
    next.d[m] = tanh_fast(next.h[m].array()).matrix();
  }
  return next;
}

namespace detail {

template <class In>
MatrixXd head_layer(const MatrixXd& w, const VectorXd& b, const In& x) {
  MatrixXd out = w * x;
  out.colwise() += b;
  out.array() = tanh_fast(out.array());
  return out;
}

}  // namespace detail

/// Decodes perceptual outputs of one step into predicted sensations.
inline Prediction decode(const VectorXd& d_extero, const VectorXd& d_proprio, const Parameters& params) {
  Prediction p;
  VectorXd x = d_extero;
  for (std::size_t l = 0; l < params.extero.hidden.size(); ++l) {
    x = detail::head_layer(params.extero.hidden[l], params.extero.hidden_bias[l], x);
    p.extero_hidden.push_back(x);
  }
  p.extero = tanh_fast((params.extero.output * x).array()).matrix();
  x = d_proprio;
  for (std::size_t l = 0; l < params.proprio.hidden.size(); ++l) {
    x = detail::head_layer(params.proprio.hidden[l], params.proprio.hidden_bias[l], x);
    p.proprio_hidden.push_back(x);
  }
  p.proprio = tanh_fast((params.proprio.output * x).array()).matrix();
  return p;
}

// ---------------------------------------------------------------------------
// Sequence pass

enum class LatentMode { Posterior, Prior };

/// What replaces an ablated module's latent sample.
enum class AblationStyle { Zero, PriorMean };

struct ForwardOptions {
  LatentMode mode = LatentMode::Posterior;
  /// z equals the mean of the distribution it would be sampled from.
  bool deterministic = false;
  std::array<bool, kNumModules> ablate{};
  AblationStyle ablation_style = AblationStyle::Zero;

  bool any_ablation() const { return std::any_of(ablate.begin(), ablate.end(), [](bool b) { return b; }); }
};

/// Standard-normal draws per module (z x steps). Drawn step-major, so a
/// longer block extends a shorter one drawn from the same generator state.
struct NoiseBlock {
  std::array<MatrixXd, kNumModules> eps;
  int length() const { return static_cast<int>(eps[0].cols()); }
};

inline NoiseBlock draw_noise(const NetworkTopology& topo, int length, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  NoiseBlock nb;
  for (int m = 0; m < kNumModules; ++m) nb.eps[m].resize(topo.module(m).z_size, length);
  for (int t = 0; t < length; ++t)
    for (int m = 0; m < kNumModules; ++m)
      for (Eigen::Index i = 0; i < nb.eps[m].rows(); ++i) nb.eps[m](i, t) = normal(rng);
  return nb;
}

inline NoiseBlock zero_noise(const NetworkTopology& topo, int length) {
  NoiseBlock nb;
  for (int m = 0; m < kNumModules; ++m) nb.eps[m] = MatrixXd::Zero(topo.module(m).z_size, length);
  return nb;
}

struct ModuleTrace {
  MatrixXd h, d;              ///< d_size x L
  MatrixXd mu_p, sigma_p;     ///< prior moments
  MatrixXd log_sigma_p_raw;   ///< unclamped prior log-sd pre-activation
  MatrixXd mu_q, sigma_q;     ///< posterior moments (copies of the prior on prior-mode steps)
  MatrixXd z;                 ///< latent samples actually fed to the recurrence
};

struct HeadTrace {
  std::vector<MatrixXd> hidden;  ///< per layer, units x L
  MatrixXd output;               ///< dims x L
};

/// Everything produced by a sequence pass. Local column k is global step
/// `first_step + k`; `boundary` is the state at `first_step - 1`.
struct Trajectory {
  RecurrentState boundary;
  int first_step = 1;
  int length = 0;
  int posterior_steps = 0;
  bool deterministic = false;
  bool ablated = false;
  std::array<ModuleTrace, kNumModules> modules;
  HeadTrace extero, proprio;
  NoiseBlock noise;

  /// State after local step k (k = -1 gives the boundary).
  RecurrentState state_at(int k) const {
    if (k < 0) return boundary;
    RecurrentState s;
    s.t = first_step + k;
    for (int m = 0; m < kNumModules; ++m) {
      s.h[m] = modules[m].h.col(k);
      s.d[m] = modules[m].d.col(k);
    }
    return s;
  }

  /// d of module m at local step k-1 (the boundary for k = 0).
  VectorXd d_prev(int m, int k) const { return k == 0 ? boundary.d[m] : VectorXd(modules[m].d.col(k - 1)); }

  Prediction prediction_at(int k) const {
    Prediction p;
    p.extero = extero.output.col(k);
    p.proprio = proprio.output.col(k);
    for (const auto& hdn : extero.hidden) p.extero_hidden.push_back(hdn.col(k));
    for (const auto& hdn : proprio.hidden) p.proprio_hidden.push_back(hdn.col(k));
    return p;
  }
};

/// Runs `length` steps from `boundary`. Steps covered by `adaptive` (in
/// posterior mode) sample z from the posterior; remaining steps sample from
/// the prior. `noise` supplies eps and must span at least `length` steps.
inline Trajectory forward_sequence(const Parameters& params, const NetworkTopology& topo,
                                   const AdaptivePosterior* adaptive, int length, const NoiseBlock& noise,
                                   const ForwardOptions& opts, const RecurrentState& boundary) {
  if (length <= 0) throw ConfigError("sequence length must be positive, got " + std::to_string(length));
  if (noise.length() < length) throw ConfigError("noise block shorter than requested sequence length");
  check_finite_state(boundary);
  Trajectory tr;
  tr.boundary = boundary;
  tr.first_step = boundary.t + 1;
  tr.length = length;
  int posterior_steps = 0;
  if (opts.mode == LatentMode::Posterior && adaptive != nullptr) {
    adaptive->check_shape(topo);
    if (adaptive->length() > 0 && adaptive->first_step != tr.first_step)
      throw ConfigError("adaptive posterior starts at step " + std::to_string(adaptive->first_step) +
                        " but the pass starts at step " + std::to_string(tr.first_step));
    posterior_steps = std::min(adaptive->length(), length);
  }
  tr.posterior_steps = posterior_steps;
  tr.deterministic = opts.deterministic;
  tr.ablated = opts.any_ablation();
  for (int m = 0; m < kNumModules; ++m) tr.noise.eps[m] = noise.eps[m].leftCols(length);

  std::array<Eigen::ArrayXd, kNumModules> inv_tau, leak;
  for (int m = 0; m < kNumModules; ++m) {
    const auto& s = topo.module(m);
    inv_tau[m] = topo.tau(m).array().inverse();
    leak[m] = 1.0 - inv_tau[m];
    auto& mt = tr.modules[m];
    mt.h.resize(s.d_size, length);
    mt.d.resize(s.d_size, length);
    mt.mu_p.resize(s.z_size, length);
    mt.sigma_p.resize(s.z_size, length);
    mt.log_sigma_p_raw.resize(s.z_size, length);
    mt.mu_q.resize(s.z_size, length);
    mt.sigma_q.resize(s.z_size, length);
    mt.z.resize(s.z_size, length);
  }

  VectorXd pre;
  for (int t = 0; t < length; ++t) {
    for (int m : kTopDown) {
      const ModuleWeights& w = params.modules[m];
      auto& mt = tr.modules[m];
      const Eigen::Ref<const VectorXd> d_prev = t == 0 ? Eigen::Ref<const VectorXd>(boundary.d[m])
                                                       : Eigen::Ref<const VectorXd>(mt.d.col(t - 1));
      const Eigen::Ref<const VectorXd> h_prev = t == 0 ? Eigen::Ref<const VectorXd>(boundary.h[m])
                                                       : Eigen::Ref<const VectorXd>(mt.h.col(t - 1));

      mt.mu_p.col(t).noalias() = w.prior_mu * d_prev;
      mt.mu_p.col(t).array() = tanh_fast(mt.mu_p.col(t).array());
      mt.log_sigma_p_raw.col(t).noalias() = w.prior_sigma * d_prev;
      mt.sigma_p.col(t).array() = mt.log_sigma_p_raw.col(t).array().max(-kLogSigmaBound).min(kLogSigmaBound).exp();

      if (t < posterior_steps) {
        mt.mu_q.col(t).array() = tanh_fast(adaptive->mu[m].col(t).array());
        mt.sigma_q.col(t).array() = adaptive->sigma[m].col(t).array().max(-kLogSigmaBound).min(kLogSigmaBound).exp();
      } else {
        mt.mu_q.col(t) = mt.mu_p.col(t);
        mt.sigma_q.col(t) = mt.sigma_p.col(t);
      }
      auto z = mt.z.col(t);
      if (opts.ablate[m]) {
        if (opts.ablation_style == AblationStyle::Zero)
          z.setZero();
        else
          z = mt.mu_p.col(t);
      } else if (opts.deterministic) {
        z = mt.mu_q.col(t);
      } else {
        z = mt.mu_q.col(t) + mt.sigma_q.col(t).cwiseProduct(tr.noise.eps[m].col(t));
      }

      pre.noalias() = w.recurrent * d_prev;
      pre.noalias() += w.latent * z;
      if (kParent[m] >= 0) pre.noalias() += w.top_down * tr.modules[kParent[m]].d.col(t);
      pre += w.bias;
      mt.h.col(t).array() = inv_tau[m] * pre.array() + leak[m] * h_prev.array();
      mt.d.col(t).array() = tanh_fast(mt.h.col(t).array());
    }
  }

  auto run_head = [](const HeadWeights& hw, const MatrixXd& in, HeadTrace& out) {
    out.hidden.clear();
    const MatrixXd* x = &in;
    for (std::size_t l = 0; l < hw.hidden.size(); ++l) {
      out.hidden.push_back(detail::head_layer(hw.hidden[l], hw.hidden_bias[l], *x));
      x = &out.hidden.back();
    }
    out.output.noalias() = hw.output * *x;
    out.output.array() = tanh_fast(out.output.array());
  };
  run_head(params.extero, tr.modules[2].d, tr.extero);
  run_head(params.proprio, tr.modules[3].d, tr.proprio);
  return tr;
}

/// Convenience overload starting from the zero state at t = 0.
inline Trajectory forward_sequence(const Parameters& params, const NetworkTopology& topo,
                                   const AdaptivePosterior* adaptive, int length, const NoiseBlock& noise,
                                   const ForwardOptions& opts = {}) {
  return forward_sequence(params, topo, adaptive, length, noise, opts, RecurrentState::zero(topo));
}

}  // namespace pvrnn
