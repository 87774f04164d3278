// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <array>

#include "pvrnn/error.hpp"
#include "pvrnn/topology.hpp"

namespace pvrnn {

/// Per-sequence variables that parameterize the posterior: for every step
/// and module, mean pre-activation `mu` (posterior mean = tanh(mu)) and log
/// standard deviation `sigma` (posterior sd = exp(sigma)).
///
/// Column k holds global step `first_step + k`. Steps are 1-based.
struct AdaptivePosterior {
  int sequence_id = 0;
  int first_step = 1;
  std::array<Eigen::MatrixXd, kNumModules> mu;
  std::array<Eigen::MatrixXd, kNumModules> sigma;

  int length() const { return static_cast<int>(mu[0].cols()); }
  int last_step() const { return first_step + length() - 1; }
  bool covers(int step) const { return step >= first_step && step <= last_step(); }

  /// Zero-initialized (posterior = unit Gaussian) for `length` steps.
  static AdaptivePosterior zeros(const NetworkTopology& topo, int length, int first_step = 1, int sequence_id = 0) {
    if (length < 0) throw ConfigError("adaptive posterior length must be >= 0");
    AdaptivePosterior a;
    a.sequence_id = sequence_id;
    a.first_step = first_step;
    for (int m = 0; m < kNumModules; ++m) {
      a.mu[m] = Eigen::MatrixXd::Zero(topo.module(m).z_size, length);
      a.sigma[m] = Eigen::MatrixXd::Zero(topo.module(m).z_size, length);
    }
    return a;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (int m = 0; m < kNumModules; ++m) n += static_cast<std::size_t>(mu[m].size() + sigma[m].size());
    return n;
  }

  bool all_finite() const {
    for (int m = 0; m < kNumModules; ++m)
      if (!mu[m].allFinite() || !sigma[m].allFinite()) return false;
    return true;
  }

  /// Appends one zero-initialized step on the right.
  void append_zero_step() {
    for (int m = 0; m < kNumModules; ++m) {
      mu[m].conservativeResize(Eigen::NoChange, mu[m].cols() + 1);
      mu[m].col(mu[m].cols() - 1).setZero();
      sigma[m].conservativeResize(Eigen::NoChange, sigma[m].cols() + 1);
      sigma[m].col(sigma[m].cols() - 1).setZero();
    }
  }

  /// Removes the leftmost step.
  void drop_front() {
    if (length() == 0) throw ConfigError("drop_front on empty adaptive posterior");
    for (int m = 0; m < kNumModules; ++m) {
      const auto cols = mu[m].cols() - 1;
      Eigen::MatrixXd a = mu[m].rightCols(cols), b = sigma[m].rightCols(cols);
      mu[m] = std::move(a);
      sigma[m] = std::move(b);
    }
    ++first_step;
  }

  void check_shape(const NetworkTopology& topo) const {
    for (int m = 0; m < kNumModules; ++m) {
      const auto z = topo.module(m).z_size;
      if (mu[m].rows() != z || sigma[m].rows() != z || sigma[m].cols() != mu[m].cols() ||
          mu[m].cols() != mu[0].cols())
        throw ShapeError("adaptive posterior shape does not match topology for module " +
                         std::string(kModuleNames[m]));
    }
  }
};

}  // namespace pvrnn
