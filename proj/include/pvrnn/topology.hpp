// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Network shape: four recurrent modules arranged as a tree
//
//        Exe (executive)
//         |
//        Mul (multimodal associative)
//       /   \
//     Ext   Pro  (exteroceptive / proprioceptive)
//
// plus two feedforward decoding heads that map the perceptual modules to
// vision and proprioception.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "pvrnn/error.hpp"

namespace pvrnn {

inline constexpr int kNumModules = 4;

enum class ModuleId : int { Executive = 0, Associative = 1, Exteroceptive = 2, Proprioceptive = 3 };

/// Short names used in tensor names, CSV headers and logs.
inline constexpr std::array<std::string_view, kNumModules> kModuleNames{"Exe", "Mul", "Ext", "Pro"};

/// Parent of each module in the hierarchy (-1 for the root).
inline constexpr std::array<int, kNumModules> kParent{-1, 0, 1, 1};

/// Modules listed top-down; a module always appears after its parent.
inline constexpr std::array<int, kNumModules> kTopDown{0, 1, 2, 3};

/// Level in the hierarchy (1 = perceptual, 3 = executive).
inline constexpr std::array<int, kNumModules> kLevel{3, 2, 1, 1};

inline int module_index(std::string_view name) {
  for (int m = 0; m < kNumModules; ++m) {
    if (kModuleNames[m] == name) return m;
  }
  throw ConfigError("unknown module '" + std::string(name) + "' (expected Exe, Mul, Ext or Pro)");
}

struct ModuleShape {
  int d_size = 30;  ///< deterministic recurrent units
  int z_size = 30;  ///< stochastic latent units
  double tau_fast = 2.0;
  double tau_slow = 4.0;
};

/// Multi-resolution image stack. Resolution groups are stored low to high,
/// each as `channels` planes of side x side pixels, row-major.
struct VisionLayout {
  std::vector<int> resolutions{4, 8, 16};
  int channels = 1;

  int group_dims(std::size_t group) const {
    return channels * resolutions.at(group) * resolutions.at(group);
  }
  int group_offset(std::size_t group) const {
    int off = 0;
    for (std::size_t g = 0; g < group; ++g) off += group_dims(g);
    return off;
  }
  int dims() const { return group_offset(resolutions.size()); }
  int highest() const { return resolutions.empty() ? 0 : resolutions.back(); }
  std::size_t highest_group() const { return resolutions.size() - 1; }
};

struct NetworkTopology {
  std::array<ModuleShape, kNumModules> modules{
      ModuleShape{30, 30, 8.0, 16.0},  // Exe
      ModuleShape{30, 30, 4.0, 8.0},   // Mul
      ModuleShape{30, 40, 2.0, 4.0},   // Ext
      ModuleShape{30, 30, 2.0, 4.0},   // Pro
  };
  VisionLayout vision;
  int proprio_dims = 4;
  std::vector<int> extero_head{40, 50};
  std::vector<int> proprio_head{40};
  /// Standard deviation of the fixed recurrent biases.
  double bias_stddev = std::sqrt(10.0);

  const ModuleShape& module(int m) const { return modules.at(static_cast<std::size_t>(m)); }
  int extero_dims() const { return vision.dims(); }
  int total_latent() const {
    int n = 0;
    for (const auto& s : modules) n += s.z_size;
    return n;
  }

  /// Per-unit time constants: the first half of the units take the fast
  /// constant, the rest the slow one.
  Eigen::VectorXd tau(int m) const {
    const auto& s = module(m);
    Eigen::VectorXd out(s.d_size);
    const int split = s.d_size / 2;
    for (int i = 0; i < s.d_size; ++i) out[i] = i < split ? s.tau_fast : s.tau_slow;
    return out;
  }

  void validate() const {
    std::vector<std::string> problems;
    for (int m = 0; m < kNumModules; ++m) {
      const auto& s = modules[m];
      const std::string name(kModuleNames[m]);
      if (s.d_size <= 0) problems.push_back(name + ".d_size must be positive");
      if (s.z_size <= 0) problems.push_back(name + ".z_size must be positive");
      if (!(s.tau_fast >= 1.0) || !(s.tau_slow >= 1.0)) problems.push_back(name + " time constants must be >= 1");
      if (s.tau_fast > s.tau_slow) problems.push_back(name + ".tau_fast exceeds tau_slow");
    }
    // Slower dynamics higher up: each module's constants bound its children's.
    for (int m = 1; m < kNumModules; ++m) {
      const auto& parent = modules[kParent[m]];
      const auto& child = modules[m];
      if (parent.tau_fast < child.tau_fast || parent.tau_slow < child.tau_slow) {
        problems.push_back("time constants of " + std::string(kModuleNames[m]) + " exceed those of " +
                           std::string(kModuleNames[kParent[m]]));
      }
    }
    if (vision.resolutions.empty()) problems.push_back("vision.resolutions is empty");
    for (std::size_t g = 0; g < vision.resolutions.size(); ++g) {
      if (vision.resolutions[g] <= 0) problems.push_back("vision resolution must be positive");
      if (g > 0 && vision.resolutions[g] <= vision.resolutions[g - 1])
        problems.push_back("vision resolutions must be strictly increasing");
    }
    if (vision.channels <= 0) problems.push_back("vision.channels must be positive");
    if (proprio_dims <= 0) problems.push_back("proprio_dims must be positive");
    if (extero_head.empty() || proprio_head.empty()) problems.push_back("decoding heads need at least one hidden layer");
    for (int n : extero_head)
      if (n <= 0) problems.push_back("extero_head layer size must be positive");
    for (int n : proprio_head)
      if (n <= 0) problems.push_back("proprio_head layer size must be positive");
    if (!(bias_stddev >= 0.0) || !std::isfinite(bias_stddev)) problems.push_back("bias_stddev must be finite and >= 0");
    if (!problems.empty()) {
      std::string msg = "invalid topology:";
      for (const auto& p : problems) msg += " " + p + ";";
      throw ConfigError(msg);
    }
  }

  bool operator==(const NetworkTopology& o) const {
    for (int m = 0; m < kNumModules; ++m) {
      const auto &a = modules[m], &b = o.modules[m];
      if (a.d_size != b.d_size || a.z_size != b.z_size || a.tau_fast != b.tau_fast || a.tau_slow != b.tau_slow)
        return false;
    }
    return vision.resolutions == o.vision.resolutions && vision.channels == o.vision.channels &&
           proprio_dims == o.proprio_dims && extero_head == o.extero_head && proprio_head == o.proprio_head &&
           bias_stddev == o.bias_stddev;
  }

  /// Desk-scale default: paper module sizes, single grayscale camera at
  /// 4x4, 8x8 and 16x16, four proprioceptive channels.
  static NetworkTopology desk() { return NetworkTopology{}; }

  /// Full-size configuration: binocular RGB at 16, 32 and 64 pixels
  /// (32,256 vision dims) and 28 proprioceptive dims.
  static NetworkTopology paper() {
    NetworkTopology t;
    t.vision.resolutions = {16, 32, 64};
    t.vision.channels = 6;
    t.proprio_dims = 28;
    return t;
  }

  /// All sizes equal to `n`, tiny heads. Used for gradient checks.
  static NetworkTopology tiny(int n = 3) {
    NetworkTopology t;
    for (auto& s : t.modules) {
      s.d_size = n;
      s.z_size = n;
    }
    t.vision.resolutions = {n};
    t.vision.channels = 1;
    t.proprio_dims = n;
    t.extero_head = {n, n};
    t.proprio_head = {n};
    return t;
  }
};

}  // namespace pvrnn
