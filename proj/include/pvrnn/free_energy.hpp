// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Variational free energy per step:
//   F_t = A_ext + A_pro + W * (C_Exe + C_Mul + C_Ext + C_Pro)
// A: half squared prediction error over included dims, divided by the
//    modality's full dimensionality (unit-variance Gaussian likelihood).
// C: KL(q || p) of the module's diagonal Gaussians, divided by its latent size.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "pvrnn/error.hpp"
#include "pvrnn/net_core.hpp"
#include "pvrnn/topology.hpp"

namespace pvrnn {

inline constexpr double kDefaultMetaPrior = 0.005;

/// Observed sensations aligned with a pass: dims x steps.
struct Observations {
  MatrixXd extero;
  MatrixXd proprio;

  int length() const { return static_cast<int>(extero.cols()); }
  Observations slice(int first_col, int count) const {
    return {extero.middleCols(first_col, count), proprio.middleCols(first_col, count)};
  }
};

/// Per-step, per-dimension inclusion flags (1 included, 0 excluded).
struct ObservationMask {
  Eigen::ArrayXXd extero;
  Eigen::ArrayXXd proprio;

  int length() const { return static_cast<int>(extero.cols()); }

  static ObservationMask all(const NetworkTopology& topo, int length) {
    return {Eigen::ArrayXXd::Ones(topo.extero_dims(), length), Eigen::ArrayXXd::Ones(topo.proprio_dims, length)};
  }
  static ObservationMask none(const NetworkTopology& topo, int length) {
    return {Eigen::ArrayXXd::Zero(topo.extero_dims(), length), Eigen::ArrayXXd::Zero(topo.proprio_dims, length)};
  }
  /// Admits only the listed vision resolution groups (indices into
  /// topo.vision.resolutions) and optionally proprioception.
  static ObservationMask resolutions(const NetworkTopology& topo, int length, const std::vector<int>& groups,
                                     bool proprio) {
    ObservationMask mk = none(topo, length);
    for (int g : groups) {
      if (g < 0 || g >= static_cast<int>(topo.vision.resolutions.size()))
        throw ConfigError("resolution group " + std::to_string(g) + " out of range");
      mk.extero.middleRows(topo.vision.group_offset(g), topo.vision.group_dims(g)).setOnes();
    }
    if (proprio) mk.proprio.setOnes();
    return mk;
  }

  ObservationMask slice(int first_col, int count) const {
    return {extero.middleCols(first_col, count), proprio.middleCols(first_col, count)};
  }
};

struct FreeEnergyTerms {
  double accuracy_extero = 0.0;
  double accuracy_proprio = 0.0;
  std::array<double, kNumModules> complexity{};
  double W = kDefaultMetaPrior;
  double total = 0.0;

  double accuracy() const { return accuracy_extero + accuracy_proprio; }
  double complexity_sum() const { return std::accumulate(complexity.begin(), complexity.end(), 0.0); }

  FreeEnergyTerms& operator+=(const FreeEnergyTerms& o) {
    accuracy_extero += o.accuracy_extero;
    accuracy_proprio += o.accuracy_proprio;
    for (int m = 0; m < kNumModules; ++m) complexity[m] += o.complexity[m];
    total += o.total;
    return *this;
  }
};

/// Half squared error over included dims divided by the modality's full
/// dimensionality.
template <class X, class Y, class M>
double accuracy_term(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& xhat, const Eigen::DenseBase<M>& mask) {
  if (x.size() != xhat.size() || x.size() != mask.size())
    throw ShapeError("accuracy_term: shape mismatch (" + std::to_string(x.size()) + " observed, " +
                     std::to_string(xhat.size()) + " predicted, " + std::to_string(mask.size()) + " mask)");
  if (x.size() == 0) return 0.0;
  const auto diff = (x - xhat).array();
  return 0.5 * (diff.square() * mask.derived().array()).sum() / static_cast<double>(x.size());
}

/// KL(q || p) for diagonal Gaussians, divided by the latent dimensionality.
template <class A, class B, class C, class D>
double complexity_term(const Eigen::MatrixBase<A>& mu_q, const Eigen::MatrixBase<B>& sigma_q,
                       const Eigen::MatrixBase<C>& mu_p, const Eigen::MatrixBase<D>& sigma_p) {
  const auto n = mu_q.size();
  if (sigma_q.size() != n || mu_p.size() != n || sigma_p.size() != n)
    throw ShapeError("complexity_term: latent sizes differ");
  if (!mu_q.allFinite() || !sigma_q.allFinite() || !mu_p.allFinite() || !sigma_p.allFinite())
    throw NumericError("complexity_term: non-finite moments");
  if ((sigma_q.array() <= 0.0).any() || (sigma_p.array() <= 0.0).any())
    throw NumericError("complexity_term: sigma must be positive");
  if (n == 0) return 0.0;
  const auto sp2 = sigma_p.array().square();
  const auto kl = (sigma_p.array() / sigma_q.array()).log() +
                  ((mu_p - mu_q).array().square() + sigma_q.array().square()) / (2.0 * sp2) - 0.5;
  return kl.sum() / static_cast<double>(n);
}

inline FreeEnergyTerms step_free_energy(const Observations& x, const Prediction& xhat, const LatentMoments& posterior,
                                        const LatentMoments& prior, const ObservationMask& mask, int col, double W) {
  FreeEnergyTerms f;
  f.W = W;
  f.accuracy_extero = accuracy_term(x.extero.col(col), xhat.extero, mask.extero.col(col));
  f.accuracy_proprio = accuracy_term(x.proprio.col(col), xhat.proprio, mask.proprio.col(col));
  for (int m = 0; m < kNumModules; ++m)
    f.complexity[m] = complexity_term(posterior.mu[m], posterior.sigma[m], prior.mu[m], prior.sigma[m]);
  f.total = f.accuracy() + W * f.complexity_sum();
  return f;
}

/// Per-step terms of a pass against observations aligned with its columns.
inline std::vector<FreeEnergyTerms> trajectory_free_energy(const Trajectory& tr, const Observations& x,
                                                           const ObservationMask& mask, double W) {
  if (x.length() != tr.length || mask.length() != tr.length || x.extero.rows() != tr.extero.output.rows() ||
      x.proprio.rows() != tr.proprio.output.rows() || mask.extero.rows() != x.extero.rows() ||
      mask.proprio.rows() != x.proprio.rows())
    throw ShapeError("trajectory_free_energy: observations/mask do not match the trajectory");
  std::vector<FreeEnergyTerms> out(static_cast<std::size_t>(tr.length));
  for (int t = 0; t < tr.length; ++t) {
    auto& f = out[static_cast<std::size_t>(t)];
    f.W = W;
    f.accuracy_extero = accuracy_term(x.extero.col(t), tr.extero.output.col(t), mask.extero.col(t));
    f.accuracy_proprio = accuracy_term(x.proprio.col(t), tr.proprio.output.col(t), mask.proprio.col(t));
    for (int m = 0; m < kNumModules; ++m) {
      const auto& mt = tr.modules[m];
      f.complexity[m] = complexity_term(mt.mu_q.col(t), mt.sigma_q.col(t), mt.mu_p.col(t), mt.sigma_p.col(t));
    }
    f.total = f.accuracy() + W * f.complexity_sum();
  }
  return out;
}

inline FreeEnergyTerms sum_terms(const std::vector<FreeEnergyTerms>& terms, std::size_t first = 0,
                                 std::size_t count = static_cast<std::size_t>(-1)) {
  FreeEnergyTerms s;
  s.total = 0.0;
  if (!terms.empty()) s.W = terms.front().W;
  const std::size_t end = std::min(terms.size(), count == static_cast<std::size_t>(-1) ? terms.size() : first + count);
  for (std::size_t i = first; i < end; ++i) s += terms[i];
  return s;
}

/// Sum over all steps.
inline double sequence_free_energy(const std::vector<FreeEnergyTerms>& terms) {
  double f = 0.0;
  for (const auto& t : terms) f += t.total;
  return f;
}

/// Inclusive window [max(1, t - H + 1), t] of 1-based steps.
struct StepWindow {
  int first = 1;
  int last = 1;
  int length() const { return last - first + 1; }
};

inline StepWindow sliding_window(int t, int H) {
  if (t < 1) throw ConfigError("window end must be >= 1, got " + std::to_string(t));
  if (H < 1) throw ConfigError("window length must be >= 1, got " + std::to_string(H));
  return {std::max(1, t - H + 1), t};
}

/// Sum of the step terms in the window ending at `t`. `terms[0]` is step 1.
inline double window_free_energy(const std::vector<FreeEnergyTerms>& terms, int t, int H) {
  const StepWindow w = sliding_window(t, H);
  if (w.last > static_cast<int>(terms.size())) throw ConfigError("window extends past the available steps");
  double f = 0.0;
  for (int s = w.first; s <= w.last; ++s) f += terms[static_cast<std::size_t>(s - 1)].total;
  return f;
}

}  // namespace pvrnn
