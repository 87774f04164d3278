// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit suites.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include <unistd.h>

#include "pvrnn/adaptive.hpp"
#include "pvrnn/checkpoint.hpp"
#include "pvrnn/datagen.hpp"
#include "pvrnn/free_energy.hpp"
#include "pvrnn/net_core.hpp"
#include "pvrnn/parameters.hpp"
#include "pvrnn/train.hpp"

namespace pvrnn::test {

inline Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

inline AdaptivePosterior random_adaptive(const NetworkTopology& topo, int length, Rng& rng, int first_step = 1,
                                         double scale = 1.0) {
  AdaptivePosterior a = AdaptivePosterior::zeros(topo, length, first_step);
  for (int m = 0; m < kNumModules; ++m) {
    a.mu[m] = uniform_matrix(a.mu[m].rows(), length, -scale, scale, rng);
    a.sigma[m] = uniform_matrix(a.sigma[m].rows(), length, -scale, scale, rng);
  }
  return a;
}

inline Observations random_observations(const NetworkTopology& topo, int length, Rng& rng) {
  return {uniform_matrix(topo.extero_dims(), length, -0.9, 0.9, rng),
          uniform_matrix(topo.proprio_dims, length, -0.9, 0.9, rng)};
}

inline RecurrentState random_state(const NetworkTopology& topo, Rng& rng, double scale = 1.0) {
  RecurrentState s = RecurrentState::zero(topo);
  for (int m = 0; m < kNumModules; ++m) {
    s.h[m] = uniform_matrix(s.h[m].size(), 1, -scale, scale, rng);
    s.d[m] = s.h[m].array().tanh().matrix();
  }
  return s;
}

/// Small topology with a two-resolution vision stack, for session and
/// training tests that need real images but must run fast.
inline NetworkTopology small_topology() {
  NetworkTopology t;
  const int sizes[kNumModules] = {6, 6, 8, 6};
  for (int m = 0; m < kNumModules; ++m) {
    t.modules[static_cast<std::size_t>(m)].d_size = sizes[m];
    t.modules[static_cast<std::size_t>(m)].z_size = 4;
  }
  t.vision.resolutions = {2, 4};
  t.proprio_dims = 4;
  t.extero_head = {8};
  t.proprio_head = {6};
  return t;
}

inline WorldSpec small_world(int length = 16) {
  WorldSpec w;
  w.length = length;
  w.resolutions = {2, 4};
  return w;
}

/// Checkpoint with freshly initialized weights (no training).
inline std::shared_ptr<const Checkpoint> untrained_checkpoint(const NetworkTopology& topo, std::uint64_t seed) {
  Checkpoint ck;
  ck.topology = topo;
  ck.params = init_parameters(topo, seed);
  ck.provenance.seed = seed;
  return std::make_shared<const Checkpoint>(std::move(ck));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pvrnn_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace pvrnn::test
