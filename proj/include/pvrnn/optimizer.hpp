// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pvrnn/error.hpp"

namespace pvrnn {

struct RAdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Length of the approximated simple moving average, rho_t.
inline double radam_rho(double beta2, long t) {
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double b2t = std::pow(beta2, static_cast<double>(t));
  return rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
}

/// The variance rectification term is only defined for rho_t > 4.
inline bool radam_adaptive(double beta2, long t) { return radam_rho(beta2, t) > 4.0; }

inline double radam_rectifier(double beta2, long t) {
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double rho = radam_rho(beta2, t);
  return std::sqrt((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
}

/// Moment accumulators for a fixed list of tensors, one shared step count.
struct OptimizerState {
  std::vector<Eigen::ArrayXd> m;
  std::vector<Eigen::ArrayXd> v;
  long step = 0;
};

/// Rectified Adam (Liu et al.). Falls back to bias-corrected momentum SGD
/// while the rectification term is undefined.
class RAdam {
 public:
  explicit RAdam(RAdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg.lr > 0.0) || !(cfg.beta1 > 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 > 0.0 && cfg.beta2 < 1.0))
      throw ConfigError("RAdam: lr must be > 0 and betas in (0,1)");
  }

  const RAdamConfig& config() const { return cfg_; }
  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }

  /// One update of every target from its gradient. Target i and grad i must
  /// have equal size, and the list shape must match previous calls.
  void step(const std::vector<std::span<double>>& targets, const std::vector<std::span<const double>>& grads) {
    if (targets.size() != grads.size()) throw ShapeError("RAdam: target/gradient list sizes differ");
    if (state_.step == 0 && state_.m.empty()) {
      for (const auto& t : targets) {
        state_.m.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(t.size())));
        state_.v.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(t.size())));
      }
    }
    if (state_.m.size() != targets.size()) throw ShapeError("RAdam: number of tensors changed between steps");
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i].size() != grads[i].size() || static_cast<Eigen::Index>(targets[i].size()) != state_.m[i].size())
        throw ShapeError("RAdam: shape mismatch for tensor " + std::to_string(i));
    }
    ++state_.step;
    const long t = state_.step;
    const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    const bool adaptive = radam_adaptive(cfg_.beta2, t);
    const double r = adaptive ? radam_rectifier(cfg_.beta2, t) : 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      Eigen::Map<Eigen::ArrayXd> x(targets[i].data(), static_cast<Eigen::Index>(targets[i].size()));
      Eigen::Map<const Eigen::ArrayXd> g(grads[i].data(), static_cast<Eigen::Index>(grads[i].size()));
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.square();
      if (adaptive) {
        x -= cfg_.lr * r * (m / b1t) / ((v / b2t).sqrt() + cfg_.eps);
      } else {
        x -= cfg_.lr * (m / b1t);
      }
    }
  }

 private:
  RAdamConfig cfg_;
  OptimizerState state_;
};

/// Plain gradient descent.
inline void sgd_step(const std::vector<std::span<double>>& targets, const std::vector<std::span<const double>>& grads,
                     double lr) {
  if (targets.size() != grads.size()) throw ShapeError("sgd: target/gradient list sizes differ");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].size() != grads[i].size()) throw ShapeError("sgd: shape mismatch for tensor " + std::to_string(i));
    for (std::size_t k = 0; k < targets[i].size(); ++k) targets[i][k] -= lr * grads[i][k];
  }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_by_global_norm(const std::vector<std::span<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

template <class T>
std::span<double> as_span(T& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}
template <class T>
std::span<const double> as_cspan(const T& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}

}  // namespace pvrnn
