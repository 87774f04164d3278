// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-derived reverse-mode adjoints of the summed free energy of one
// posterior-mode pass, with respect to the weights, the adaptive posterior
// variables and the state entering the pass (backpropagation through time
// with pathwise gradients through z = mu + sigma * eps).

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pvrnn/adaptive.hpp"
#include "pvrnn/error.hpp"
#include "pvrnn/free_energy.hpp"
#include "pvrnn/net_core.hpp"
#include "pvrnn/parameters.hpp"

namespace pvrnn {

struct GradientSet {
  /// Same layout as Parameters; only trainable tensors carry meaning (the
  /// fixed recurrent biases stay zero and are never visited as trainable).
  Parameters weights;
  bool has_weights = false;
  /// Same layout as the adaptive posterior of the pass.
  AdaptivePosterior adaptive;
  /// dF/dh of the state entering the pass. Reported, never applied.
  std::array<VectorXd, kNumModules> boundary_h;
  double objective = 0.0;
  /// Step terms of the pass summed over its steps.
  FreeEnergyTerms terms;
  int sequences = 1;
  int steps = 0;
};

struct BackwardOptions {
  bool weights = true;  ///< also accumulate weight gradients
};

namespace detail {

inline void head_backward(const HeadWeights& hw, const HeadTrace& ht, const MatrixXd& input, const MatrixXd& d_out,
                          HeadWeights* grad, MatrixXd& d_input) {
  // d_out: dF/d(output activation), dims x L
  MatrixXd delta = d_out.array() * (1.0 - ht.output.array().square());
  const MatrixXd& last_in = ht.hidden.empty() ? input : ht.hidden.back();
  if (grad != nullptr) grad->output.noalias() += delta * last_in.transpose();
  MatrixXd upstream = hw.output.transpose() * delta;
  for (int l = static_cast<int>(hw.hidden.size()) - 1; l >= 0; --l) {
    delta = upstream.array() * (1.0 - ht.hidden[static_cast<std::size_t>(l)].array().square());
    const MatrixXd& in = l == 0 ? input : ht.hidden[static_cast<std::size_t>(l - 1)];
    if (grad != nullptr) {
      grad->hidden[static_cast<std::size_t>(l)].noalias() += delta * in.transpose();
      grad->hidden_bias[static_cast<std::size_t>(l)] += delta.rowwise().sum();
    }
    upstream = hw.hidden[static_cast<std::size_t>(l)].transpose() * delta;
  }
  d_input = std::move(upstream);
}

inline MatrixXd d_prev_matrix(const Trajectory& tr, int m) {
  const auto& d = tr.modules[m].d;
  MatrixXd out(d.rows(), d.cols());
  out.col(0) = tr.boundary.d[m];
  if (d.cols() > 1) out.rightCols(d.cols() - 1) = d.leftCols(d.cols() - 1);
  return out;
}

}  // namespace detail

/// Gradient of sum_t F_t over every step of `tr` (all posterior-mode).
/// `adaptive` must be the posterior the pass was run with; `x`/`mask` are
/// aligned with the pass's columns.
inline GradientSet backward(const Parameters& params, const NetworkTopology& topo, const AdaptivePosterior& adaptive,
                            const Trajectory& tr, const Observations& x, const ObservationMask& mask, double W,
                            const BackwardOptions& opts = {}) {
  const int L = tr.length;
  if (tr.posterior_steps != L)
    throw ConfigError("backward requires a posterior-mode pass over every step (missing adaptive/eps record)");
  if (tr.ablated) throw ConfigError("backward is undefined for ablated passes");
  if (tr.noise.length() < L) throw ConfigError("backward: missing eps record");
  if (adaptive.length() != L || adaptive.first_step != tr.first_step)
    throw ShapeError("backward: adaptive posterior does not match the pass");
  if (x.length() != L || mask.length() != L) throw ShapeError("backward: observations do not match the pass");

  GradientSet g;
  g.steps = L;
  g.adaptive = AdaptivePosterior::zeros(topo, L, adaptive.first_step, adaptive.sequence_id);
  g.has_weights = opts.weights;
  if (opts.weights) g.weights = params.zeros_like();

  {
    const auto terms = trajectory_free_energy(tr, x, mask, W);
    g.terms = sum_terms(terms);
    g.terms.W = W;
    g.objective = sequence_free_energy(terms);
  }

  // Output heads, all steps at once.
  std::array<MatrixXd, kNumModules> gd_heads;
  {
    const double ne = static_cast<double>(x.extero.rows());
    const double np = static_cast<double>(x.proprio.rows());
    MatrixXd d_out_e = ((tr.extero.output - x.extero).array() * mask.extero / ne).matrix();
    MatrixXd d_out_p = ((tr.proprio.output - x.proprio).array() * mask.proprio / np).matrix();
    detail::head_backward(params.extero, tr.extero, tr.modules[2].d, d_out_e, opts.weights ? &g.weights.extero : nullptr,
                          gd_heads[2]);
    detail::head_backward(params.proprio, tr.proprio, tr.modules[3].d, d_out_p,
                          opts.weights ? &g.weights.proprio : nullptr, gd_heads[3]);
  }

  // KL terms: gradients w.r.t. posterior and prior moments, then through
  // the prior's nonlinearities onto the previous step's outputs.
  std::array<MatrixXd, kNumModules> g_mu_q, g_sigma_q, gu_mu, gu_sigma, gd_prior, d_prev;
  for (int m = 0; m < kNumModules; ++m) {
    const auto& mt = tr.modules[m];
    const auto& w = params.modules[m];
    const double c = W / static_cast<double>(topo.module(m).z_size);
    const Eigen::ArrayXXd diff = mt.mu_q.array() - mt.mu_p.array();
    const Eigen::ArrayXXd sp2 = mt.sigma_p.array().square();
    const Eigen::ArrayXXd sq = mt.sigma_q.array();
    g_mu_q[m] = (c * diff / sp2).matrix();
    g_sigma_q[m] = (c * (sq / sp2 - sq.inverse())).matrix();
    const Eigen::ArrayXXd g_mu_p = -c * diff / sp2;
    const Eigen::ArrayXXd g_sigma_p =
        c * (mt.sigma_p.array().inverse() - (diff.square() + sq.square()) / (sp2 * mt.sigma_p.array()));
    gu_mu[m] = (g_mu_p * (1.0 - mt.mu_p.array().square())).matrix();
    const Eigen::ArrayXXd in_bound = mt.log_sigma_p_raw.unaryExpr([](double v) { return clamp_log_sigma_grad(v); });
    gu_sigma[m] = (g_sigma_p * mt.sigma_p.array() * in_bound).matrix();
    gd_prior[m].noalias() = w.prior_mu.transpose() * gu_mu[m];
    gd_prior[m].noalias() += w.prior_sigma.transpose() * gu_sigma[m];
    d_prev[m] = detail::d_prev_matrix(tr, m);
  }

  // Recurrence, reverse in time; children before parents within a step.
  std::array<Eigen::ArrayXd, kNumModules> inv_tau, leak;
  std::array<VectorXd, kNumModules> gd_carry, gh_carry, gd_step;
  std::array<MatrixXd, kNumModules> g_pre;
  for (int m = 0; m < kNumModules; ++m) {
    inv_tau[m] = topo.tau(m).array().inverse();
    leak[m] = 1.0 - inv_tau[m];
    const auto n = topo.module(m).d_size;
    gd_carry[m] = VectorXd::Zero(n);
    gh_carry[m] = VectorXd::Zero(n);
    g_pre[m].resize(n, L);
  }
  VectorXd gh;
  for (int t = L - 1; t >= 0; --t) {
    for (int m = 0; m < kNumModules; ++m) {
      gd_step[m] = gd_carry[m];
      if (gd_heads[m].size() > 0) gd_step[m] += gd_heads[m].col(t);
    }
    for (int i = kNumModules - 1; i >= 0; --i) {
      const int m = kTopDown[static_cast<std::size_t>(i)];
      const auto& mt = tr.modules[m];
      const auto& w = params.modules[m];
      gh = (gd_step[m].array() * (1.0 - mt.d.col(t).array().square())).matrix() + gh_carry[m];
      g_pre[m].col(t) = (gh.array() * inv_tau[m]).matrix();
      if (kParent[m] >= 0) gd_step[kParent[m]].noalias() += w.top_down.transpose() * g_pre[m].col(t);
      gh_carry[m] = (gh.array() * leak[m]).matrix();
      gd_carry[m].noalias() = w.recurrent.transpose() * g_pre[m].col(t);
      gd_carry[m] += gd_prior[m].col(t);
    }
  }
  for (int m = 0; m < kNumModules; ++m) {
    g.boundary_h[m] =
        gh_carry[m] + (gd_carry[m].array() * (1.0 - tr.boundary.d[m].array().square())).matrix();
  }

  // Latent samples -> posterior moments -> adaptive variables.
  for (int m = 0; m < kNumModules; ++m) {
    const auto& mt = tr.modules[m];
    const auto& w = params.modules[m];
    MatrixXd gz = w.latent.transpose() * g_pre[m];
    Eigen::ArrayXXd gmu = gz.array() + g_mu_q[m].array();
    Eigen::ArrayXXd gsig = g_sigma_q[m].array();
    if (!tr.deterministic) gsig += gz.array() * tr.noise.eps[m].leftCols(L).array();
    g.adaptive.mu[m] = (gmu * (1.0 - mt.mu_q.array().square())).matrix();
    const Eigen::ArrayXXd in_bound = adaptive.sigma[m].unaryExpr([](double v) { return clamp_log_sigma_grad(v); });
    g.adaptive.sigma[m] = (gsig * mt.sigma_q.array() * in_bound).matrix();

    if (opts.weights) {
      auto& gw = g.weights.modules[m];
      gw.recurrent.noalias() += g_pre[m] * d_prev[m].transpose();
      gw.latent.noalias() += g_pre[m] * mt.z.transpose();
      if (kParent[m] >= 0) gw.top_down.noalias() += g_pre[m] * tr.modules[kParent[m]].d.transpose();
      gw.prior_mu.noalias() += gu_mu[m] * d_prev[m].transpose();
      gw.prior_sigma.noalias() += gu_sigma[m] * d_prev[m].transpose();
    }
  }
  return g;
}

/// Adds the weight gradients of `g` into `into` (adaptive parts are per
/// sequence and are not summed).
inline void accumulate_weights(GradientSet& into, const GradientSet& g) {
  if (!g.has_weights) return;
  if (!into.has_weights) {
    into.weights = g.weights;
    into.has_weights = true;
    into.objective = g.objective;
    into.terms = g.terms;
    into.sequences = g.sequences;
    into.steps = g.steps;
    return;
  }
  std::vector<const double*> src;
  g.weights.for_each_trainable([&](const std::string&, const auto& t) { src.push_back(t.data()); });
  std::size_t i = 0;
  into.weights.for_each_trainable([&](const std::string&, auto& t) {
    const double* s = src[i++];
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] += s[k];
  });
  into.objective += g.objective;
  into.terms += g.terms;
  into.sequences += g.sequences;
  into.steps += g.steps;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

struct GroupCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t count = 0;
  bool pass = true;
};

struct GradientReport {
  double tolerance = 1e-4;
  std::vector<GroupCheck> groups;
  bool pass = true;

  std::vector<std::string> failed_groups() const {
    std::vector<std::string> out;
    for (const auto& g : groups)
      if (!g.pass) out.push_back(g.name);
    return out;
  }
  double max_rel_error() const {
    double e = 0.0;
    for (const auto& g : groups) e = std::max(e, g.max_rel_error);
    return e;
  }
};

enum class CheckObjective { Sequence, Window };

struct GradientCheckOptions {
  int length = 5;
  double W = kDefaultMetaPrior;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-6;
  CheckObjective objective = CheckObjective::Sequence;
  /// Window objective: number of steps run before the window (held fixed).
  int prefix = 3;
  /// Called on the analytic gradients before comparison (fault injection).
  std::function<void(GradientSet&)> tamper;
};

/// Compares `backward` against central finite differences of the summed
/// free energy for every trainable tensor, every adaptive group and the
/// boundary state.
inline GradientReport check_gradients(const NetworkTopology& topo, std::uint64_t seed,
                                      const GradientCheckOptions& opt = {}) {
  topo.validate();
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(Stream::Check)});
  Parameters params = init_parameters(topo, seed);
  const int L = opt.length;
  std::uniform_real_distribution<double> obs(-0.9, 0.9), adapt(-1.0, 1.0);

  // Boundary: zero for the sequence objective, the end of a fixed prefix
  // pass for the window objective.
  RecurrentState boundary = RecurrentState::zero(topo);
  if (opt.objective == CheckObjective::Window && opt.prefix > 0) {
    AdaptivePosterior pre = AdaptivePosterior::zeros(topo, opt.prefix);
    for (int m = 0; m < kNumModules; ++m) {
      pre.mu[m] = pre.mu[m].unaryExpr([&](double) { return adapt(rng); });
      pre.sigma[m] = pre.sigma[m].unaryExpr([&](double) { return adapt(rng); });
    }
    const NoiseBlock pn = draw_noise(topo, opt.prefix, rng);
    const Trajectory ptr = forward_sequence(params, topo, &pre, opt.prefix, pn);
    boundary = ptr.state_at(opt.prefix - 1);
  }

  AdaptivePosterior a = AdaptivePosterior::zeros(topo, L, boundary.t + 1);
  for (int m = 0; m < kNumModules; ++m) {
    a.mu[m] = a.mu[m].unaryExpr([&](double) { return adapt(rng); });
    a.sigma[m] = a.sigma[m].unaryExpr([&](double) { return adapt(rng); });
  }
  Observations x{MatrixXd(topo.extero_dims(), L), MatrixXd(topo.proprio_dims, L)};
  x.extero = x.extero.unaryExpr([&](double) { return obs(rng); });
  x.proprio = x.proprio.unaryExpr([&](double) { return obs(rng); });
  const ObservationMask mask = ObservationMask::all(topo, L);
  const NoiseBlock noise = draw_noise(topo, L, rng);

  auto objective = [&](const Parameters& p, const AdaptivePosterior& ad, const RecurrentState& b) {
    const Trajectory tr = forward_sequence(p, topo, &ad, L, noise, {}, b);
    return sequence_free_energy(trajectory_free_energy(tr, x, mask, opt.W));
  };

  const Trajectory tr = forward_sequence(params, topo, &a, L, noise, {}, boundary);
  GradientSet g = backward(params, topo, a, tr, x, mask, opt.W);
  if (opt.tamper) opt.tamper(g);

  GradientReport report;
  report.tolerance = opt.tolerance;
  auto compare = [&](GroupCheck& gc, double analytic, double numeric) {
    const double abs_err = std::abs(analytic - numeric);
    const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    gc.max_abs_error = std::max(gc.max_abs_error, abs_err);
    gc.max_rel_error = std::max(gc.max_rel_error, rel);
    ++gc.count;
  };
  auto finish = [&](GroupCheck gc) {
    gc.pass = gc.max_rel_error < opt.tolerance;
    report.pass = report.pass && gc.pass;
    report.groups.push_back(std::move(gc));
  };

  // Weights.
  std::vector<const double*> analytic;
  g.weights.for_each_trainable([&](const std::string&, const auto& t) { analytic.push_back(t.data()); });
  std::size_t ti = 0;
  Parameters probe = params;
  probe.for_each_trainable([&](const std::string& name, auto& t) {
    GroupCheck gc{name};
    const double* an = analytic[ti++];
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double v = t.data()[k];
      t.data()[k] = v + opt.step;
      const double fp = objective(probe, a, boundary);
      t.data()[k] = v - opt.step;
      const double fm = objective(probe, a, boundary);
      t.data()[k] = v;
      compare(gc, an[k], (fp - fm) / (2.0 * opt.step));
    }
    finish(std::move(gc));
  });

  // Adaptive variables.
  AdaptivePosterior ap = a;
  for (int m = 0; m < kNumModules; ++m) {
    for (int which = 0; which < 2; ++which) {
      MatrixXd& target = which == 0 ? ap.mu[m] : ap.sigma[m];
      const MatrixXd& an = which == 0 ? g.adaptive.mu[m] : g.adaptive.sigma[m];
      GroupCheck gc{"adaptive." + std::string(kModuleNames[m]) + (which == 0 ? ".mu" : ".sigma")};
      for (Eigen::Index k = 0; k < target.size(); ++k) {
        const double v = target.data()[k];
        target.data()[k] = v + opt.step;
        const double fp = objective(params, ap, boundary);
        target.data()[k] = v - opt.step;
        const double fm = objective(params, ap, boundary);
        target.data()[k] = v;
        compare(gc, an.data()[k], (fp - fm) / (2.0 * opt.step));
      }
      finish(std::move(gc));
    }
  }

  // State entering the pass (d follows h through tanh).
  {
    GroupCheck gc{"boundary.h"};
    RecurrentState b = boundary;
    for (int m = 0; m < kNumModules; ++m) {
      for (Eigen::Index k = 0; k < b.h[m].size(); ++k) {
        const double v = b.h[m][k];
        b.h[m][k] = v + opt.step;
        b.d[m][k] = std::tanh(b.h[m][k]);
        const double fp = objective(params, a, b);
        b.h[m][k] = v - opt.step;
        b.d[m][k] = std::tanh(b.h[m][k]);
        const double fm = objective(params, a, b);
        b.h[m][k] = v;
        b.d[m][k] = std::tanh(v);
        compare(gc, g.boundary_h[m][k], (fp - fm) / (2.0 * opt.step));
      }
    }
    finish(std::move(gc));
  }
  return report;
}

}  // namespace pvrnn
