// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "pvrnn/error.hpp"
#include "pvrnn/rng.hpp"
#include "pvrnn/topology.hpp"

namespace pvrnn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Weights of one recurrent module. Matrices are (fan_out x fan_in).
struct ModuleWeights {
  MatrixXd recurrent;    ///< d x d, previous own output -> pre-activation
  MatrixXd latent;       ///< d x z, latent sample -> pre-activation
  MatrixXd top_down;     ///< d x d_parent, same-step parent output (empty for the root)
  MatrixXd prior_mu;     ///< z x d
  MatrixXd prior_sigma;  ///< z x d
  VectorXd bias;         ///< d, fixed after initialization
};

/// Feedforward decoding head: tanh hidden layers then a bias-free tanh output.
struct HeadWeights {
  std::vector<MatrixXd> hidden;
  std::vector<VectorXd> hidden_bias;
  MatrixXd output;
};

struct Parameters {
  std::array<ModuleWeights, kNumModules> modules;
  HeadWeights extero;
  HeadWeights proprio;

  /// Visits every tensor in a fixed order: f(name, tensor, trainable).
  /// The tensor is a MatrixXd or VectorXd (const when `self` is const).
  /// Empty tensors (the root's top-down block) are skipped.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    for (int m = 0; m < kNumModules; ++m) {
      auto& w = self.modules[m];
      const std::string p = std::string(kModuleNames[m]) + ".";
      f(p + "recurrent", w.recurrent, true);
      f(p + "latent", w.latent, true);
      if (w.top_down.size() > 0) f(p + "top_down", w.top_down, true);
      f(p + "prior_mu", w.prior_mu, true);
      f(p + "prior_sigma", w.prior_sigma, true);
      f(p + "bias", w.bias, false);
    }
    visit_head(self.extero, "extero", f);
    visit_head(self.proprio, "proprio", f);
  }

  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  /// Trainable tensors only.
  template <class F>
  void for_each_trainable(F&& f) {
    visit(*this, [&](const std::string& n, auto& t, bool trainable) {
      if (trainable) f(n, t);
    });
  }
  template <class F>
  void for_each_trainable(F&& f) const {
    visit(*this, [&](const std::string& n, const auto& t, bool trainable) {
      if (trainable) f(n, t);
    });
  }

  /// Same shapes, all zero.
  Parameters zeros_like() const {
    Parameters z = *this;
    z.for_each([](const std::string&, auto& t, bool) { t.setZero(); });
    return z;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for_each_trainable([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const auto& t, bool) { ok = ok && t.allFinite(); });
    return ok;
  }

  bool bitwise_equal(const Parameters& o) const;

 private:
  template <class Head, class F>
  static void visit_head(Head& h, const std::string& prefix, F& f) {
    for (std::size_t l = 0; l < h.hidden.size(); ++l) {
      f(prefix + ".hidden" + std::to_string(l), h.hidden[l], true);
      f(prefix + ".hidden" + std::to_string(l) + "_bias", h.hidden_bias[l], true);
    }
    f(prefix + ".output", h.output, true);
  }
};

/// Allocates zero-valued parameters with the shapes implied by `topo`.
inline Parameters zero_parameters(const NetworkTopology& topo) {
  topo.validate();
  Parameters p;
  for (int m = 0; m < kNumModules; ++m) {
    const auto& s = topo.module(m);
    auto& w = p.modules[m];
    w.recurrent = MatrixXd::Zero(s.d_size, s.d_size);
    w.latent = MatrixXd::Zero(s.d_size, s.z_size);
    w.top_down = kParent[m] < 0 ? MatrixXd(s.d_size, 0) : MatrixXd::Zero(s.d_size, topo.module(kParent[m]).d_size);
    w.prior_mu = MatrixXd::Zero(s.z_size, s.d_size);
    w.prior_sigma = MatrixXd::Zero(s.z_size, s.d_size);
    w.bias = VectorXd::Zero(s.d_size);
  }
  auto make_head = [](HeadWeights& h, int in, const std::vector<int>& layers, int out) {
    h.hidden.clear();
    h.hidden_bias.clear();
    for (int n : layers) {
      h.hidden.push_back(MatrixXd::Zero(n, in));
      h.hidden_bias.push_back(VectorXd::Zero(n));
      in = n;
    }
    h.output = MatrixXd::Zero(out, in);
  };
  make_head(p.extero, topo.module(2).d_size, topo.extero_head, topo.extero_dims());
  make_head(p.proprio, topo.module(3).d_size, topo.proprio_head, topo.proprio_dims);
  return p;
}

/// Xavier-uniform weights, Normal(0, topo.bias_stddev) fixed recurrent
/// biases. Head biases use the Xavier bound of their layer.
inline Parameters init_parameters(const NetworkTopology& topo, std::uint64_t seed) {
  Parameters p = zero_parameters(topo);
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(Stream::Init)});
  auto xavier = [&](auto& t, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  };
  std::normal_distribution<double> bias_dist(0.0, topo.bias_stddev);
  for (auto& w : p.modules) {
    xavier(w.recurrent, w.recurrent.cols(), w.recurrent.rows());
    xavier(w.latent, w.latent.cols(), w.latent.rows());
    if (w.top_down.size() > 0) xavier(w.top_down, w.top_down.cols(), w.top_down.rows());
    xavier(w.prior_mu, w.prior_mu.cols(), w.prior_mu.rows());
    xavier(w.prior_sigma, w.prior_sigma.cols(), w.prior_sigma.rows());
    for (Eigen::Index i = 0; i < w.bias.size(); ++i) w.bias[i] = bias_dist(rng);
  }
  for (HeadWeights* h : {&p.extero, &p.proprio}) {
    for (std::size_t l = 0; l < h->hidden.size(); ++l) {
      const double fi = static_cast<double>(h->hidden[l].cols()), fo = static_cast<double>(h->hidden[l].rows());
      xavier(h->hidden[l], fi, fo);
      xavier(h->hidden_bias[l], fi, fo);
    }
    xavier(h->output, h->output.cols(), h->output.rows());
  }
  return p;
}

inline bool Parameters::bitwise_equal(const Parameters& o) const {
  using Span = std::pair<const double*, Eigen::Index>;
  std::vector<Span> a, b;
  for_each([&](const std::string&, const auto& t, bool) { a.emplace_back(t.data(), t.size()); });
  o.for_each([&](const std::string&, const auto& t, bool) { b.emplace_back(t.data(), t.size()); });
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second != b[i].second) return false;
    if (std::memcmp(a[i].first, b[i].first, sizeof(double) * static_cast<std::size_t>(a[i].second)) != 0) return false;
  }
  return true;
}

}  // namespace pvrnn
