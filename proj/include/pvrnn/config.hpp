// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration. Every field is optional; unknown keys and type
// errors are collected across the whole document and reported together.

#pragma once

#include <json.hpp>

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pvrnn/datagen.hpp"
#include "pvrnn/error.hpp"
#include "pvrnn/infer.hpp"
#include "pvrnn/topology.hpp"
#include "pvrnn/train.hpp"

namespace pvrnn {

using json = nlohmann::ordered_json;

struct ExperimentConfig {
  int seeds = 5;
  std::uint64_t first_seed = 1;
  std::uint64_t data_seed = 2024;
  int train_per_task = 9;
  int test_per_task = 3;
  /// Interference grid: one task fixed at `fixed_count`, the other varied.
  int fixed_count = 9;
  std::vector<int> varied_counts{0, 3, 6, 9};
  /// Inference trials per test sequence in the interference grid.
  int interference_trials = 5;
};

struct RunConfig {
  WorldSpec world;
  NetworkTopology network = NetworkTopology::desk();
  TrainConfig train;
  InferConfig infer;
  ExperimentConfig experiments;

  /// Topology whose sensory sizes follow the world.
  NetworkTopology topology() const { return topology_for(world, network); }
};

class ConfigIssues {
 public:
  void add(const std::string& path, const std::string& msg) { items_.push_back(path + ": " + msg); }
  bool empty() const { return items_.empty(); }
  const std::vector<std::string>& items() const { return items_; }
  void raise() const {
    if (items_.empty()) return;
    std::string msg = "invalid configuration (" + std::to_string(items_.size()) + " problem" +
                      (items_.size() == 1 ? "" : "s") + "):";
    for (const auto& i : items_) msg += " " + i + ";";
    throw ConfigError(msg);
  }

 private:
  std::vector<std::string> items_;
};

namespace detail {

/// Reads fields of one JSON object, remembering which keys were used.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, ConfigIssues& issues) : j_(j), path_(std::move(path)), issues_(issues) {
    if (!j_.is_object()) issues_.add(path_, "expected an object");
  }
  ~ObjectReader() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) issues_.add(join(it.key()), "unknown key");
  }
  ObjectReader(const ObjectReader&) = delete;
  ObjectReader& operator=(const ObjectReader&) = delete;

  template <class T>
  void get(const std::string& key, T& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    try {
      out = v->get<T>();
    } catch (const std::exception&) {
      issues_.add(join(key), "wrong type (got " + std::string(v->type_name()) + ")");
    }
  }

  const json* child(const std::string& key) { return find(key); }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  ConfigIssues& issues() { return issues_; }

 private:
  const json* find(const std::string& key) {
    if (!j_.is_object()) return nullptr;
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  ConfigIssues& issues_;
  std::set<std::string> used_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Topology

inline json to_json(const NetworkTopology& t) {
  json j;
  json mods = json::object();
  for (int m = 0; m < kNumModules; ++m) {
    const auto& s = t.modules[m];
    mods[std::string(kModuleNames[m])] = {{"d_size", s.d_size}, {"z_size", s.z_size}, {"tau", {s.tau_fast, s.tau_slow}}};
  }
  j["modules"] = mods;
  j["vision"] = {{"resolutions", t.vision.resolutions}, {"channels", t.vision.channels}};
  j["proprio_dims"] = t.proprio_dims;
  j["extero_head"] = t.extero_head;
  j["proprio_head"] = t.proprio_head;
  j["bias_stddev"] = t.bias_stddev;
  return j;
}

inline void read_topology(const json& j, const std::string& path, NetworkTopology& t, ConfigIssues& issues) {
  detail::ObjectReader r(j, path, issues);
  if (const json* mods = r.child("modules")) {
    detail::ObjectReader mr(*mods, r.join("modules"), issues);
    for (int m = 0; m < kNumModules; ++m) {
      const std::string name(kModuleNames[m]);
      if (const json* mj = mr.child(name)) {
        detail::ObjectReader one(*mj, mr.join(name), issues);
        one.get("d_size", t.modules[m].d_size);
        one.get("z_size", t.modules[m].z_size);
        std::vector<double> tau;
        one.get("tau", tau);
        if (!tau.empty()) {
          if (tau.size() != 2) {
            issues.add(one.join("tau"), "expected [fast, slow]");
          } else {
            t.modules[m].tau_fast = tau[0];
            t.modules[m].tau_slow = tau[1];
          }
        }
      }
    }
  }
  if (const json* v = r.child("vision")) {
    detail::ObjectReader vr(*v, r.join("vision"), issues);
    vr.get("resolutions", t.vision.resolutions);
    vr.get("channels", t.vision.channels);
  }
  r.get("proprio_dims", t.proprio_dims);
  r.get("extero_head", t.extero_head);
  r.get("proprio_head", t.proprio_head);
  r.get("bias_stddev", t.bias_stddev);
}

inline NetworkTopology topology_from_json(const json& j) {
  NetworkTopology t;
  ConfigIssues issues;
  read_topology(j, "", t, issues);
  issues.raise();
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// World

inline json to_json(const TaskJitter& j) {
  return {{"timing", j.timing}, {"position", j.position}, {"amplitude", j.amplitude}, {"frequency", j.frequency},
          {"phase", j.phase}};
}

inline void read_jitter(const json& j, const std::string& path, TaskJitter& out, ConfigIssues& issues) {
  detail::ObjectReader r(j, path, issues);
  r.get("timing", out.timing);
  r.get("position", out.position);
  r.get("amplitude", out.amplitude);
  r.get("frequency", out.frequency);
  r.get("phase", out.phase);
}

inline json to_json(const WorldSpec& w) {
  return {{"length", w.length},
          {"resolutions", w.resolutions},
          {"base", w.base},
          {"links", w.links},
          {"heights", w.heights},
          {"surface_y", w.surface_y},
          {"arm_width", w.arm_width},
          {"object_width", w.object_width},
          {"arm_intensity", w.arm_intensity},
          {"object_intensity", w.object_intensity},
          {"load", w.load},
          {"jitter", {{"R", to_json(w.reposition)}, {"W", to_json(w.wipe)}}}};
}

inline void read_world(const json& j, const std::string& path, WorldSpec& w, ConfigIssues& issues) {
  detail::ObjectReader r(j, path, issues);
  r.get("length", w.length);
  r.get("resolutions", w.resolutions);
  r.get("base", w.base);
  r.get("links", w.links);
  r.get("heights", w.heights);
  r.get("surface_y", w.surface_y);
  r.get("arm_width", w.arm_width);
  r.get("object_width", w.object_width);
  r.get("arm_intensity", w.arm_intensity);
  r.get("object_intensity", w.object_intensity);
  r.get("load", w.load);
  if (const json* jj = r.child("jitter")) {
    detail::ObjectReader jr(*jj, r.join("jitter"), issues);
    if (const json* a = jr.child("R")) read_jitter(*a, jr.join("R"), w.reposition, issues);
    if (const json* b = jr.child("W")) read_jitter(*b, jr.join("W"), w.wipe, issues);
  }
}

inline WorldSpec world_from_json(const json& j) {
  WorldSpec w;
  ConfigIssues issues;
  read_world(j, "", w, issues);
  issues.raise();
  return w;
}

// ---------------------------------------------------------------------------
// Train / infer / experiments

inline json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations}, {"lr", c.optimizer.lr},       {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2}, {"eps", c.optimizer.eps},     {"W", c.W},
          {"seed", c.seed},             {"log_every", c.log_every},   {"checkpoint_every", c.checkpoint_every},
          {"clip_norm", c.clip_norm}};
}

inline void read_train(const json& j, const std::string& path, TrainConfig& c, ConfigIssues& issues) {
  detail::ObjectReader r(j, path, issues);
  r.get("iterations", c.iterations);
  r.get("lr", c.optimizer.lr);
  r.get("beta1", c.optimizer.beta1);
  r.get("beta2", c.optimizer.beta2);
  r.get("eps", c.optimizer.eps);
  r.get("W", c.W);
  r.get("seed", c.seed);
  r.get("log_every", c.log_every);
  r.get("checkpoint_every", c.checkpoint_every);
  r.get("clip_norm", c.clip_norm);
}

inline json to_json(const MaskPolicy& m) {
  json j = {{"proprio", m.proprio}};
  if (m.all_vision)
    j["vision"] = "all";
  else
    j["vision"] = m.vision_groups;
  return j;
}

inline void read_mask(const json& j, const std::string& path, MaskPolicy& m, ConfigIssues& issues) {
  detail::ObjectReader r(j, path, issues);
  if (const json* v = r.child("vision")) {
    if (v->is_string() && v->get<std::string>() == "all") {
      m.all_vision = true;
    } else if (v->is_array()) {
      try {
        m.vision_groups = v->get<std::vector<int>>();
        m.all_vision = false;
      } catch (const std::exception&) {
        issues.add(r.join("vision"), "expected \"all\" or a list of resolution-group indices");
      }
    } else {
      issues.add(r.join("vision"), "expected \"all\" or a list of resolution-group indices");
    }
  }
  r.get("proprio", m.proprio);
}

inline json to_json(const InferConfig& c) {
  return {{"H", c.H},
          {"iterations", c.iterations},
          {"lr", c.lr},
          {"trials", c.trials},
          {"horizon", c.horizon},
          {"W", c.W},
          {"optimizer", c.optimizer == InferenceOptimizer::Sgd ? "sgd" : "radam"},
          {"fixed_eps", c.fixed_eps},
          {"deterministic_rollout", c.deterministic_rollout},
          {"mask", to_json(c.mask)},
          {"seed", c.seed}};
}

inline void read_infer(const json& j, const std::string& path, InferConfig& c, ConfigIssues& issues) {
  detail::ObjectReader r(j, path, issues);
  r.get("H", c.H);
  r.get("iterations", c.iterations);
  r.get("lr", c.lr);
  r.get("trials", c.trials);
  r.get("horizon", c.horizon);
  r.get("W", c.W);
  std::string opt;
  r.get("optimizer", opt);
  if (opt == "sgd")
    c.optimizer = InferenceOptimizer::Sgd;
  else if (opt == "radam")
    c.optimizer = InferenceOptimizer::RAdam;
  else if (!opt.empty())
    issues.add(r.join("optimizer"), "expected \"sgd\" or \"radam\"");
  r.get("fixed_eps", c.fixed_eps);
  r.get("deterministic_rollout", c.deterministic_rollout);
  if (const json* m = r.child("mask")) read_mask(*m, r.join("mask"), c.mask, issues);
  r.get("seed", c.seed);
}

inline json to_json(const ExperimentConfig& e) {
  return {{"seeds", e.seeds},
          {"first_seed", e.first_seed},
          {"data_seed", e.data_seed},
          {"train_per_task", e.train_per_task},
          {"test_per_task", e.test_per_task},
          {"fixed_count", e.fixed_count},
          {"varied_counts", e.varied_counts},
          {"interference_trials", e.interference_trials}};
}

inline void read_experiments(const json& j, const std::string& path, ExperimentConfig& e, ConfigIssues& issues) {
  detail::ObjectReader r(j, path, issues);
  r.get("seeds", e.seeds);
  r.get("first_seed", e.first_seed);
  r.get("data_seed", e.data_seed);
  r.get("train_per_task", e.train_per_task);
  r.get("test_per_task", e.test_per_task);
  r.get("fixed_count", e.fixed_count);
  r.get("varied_counts", e.varied_counts);
  r.get("interference_trials", e.interference_trials);
}

inline json to_json(const RunConfig& c) {
  return {{"world", to_json(c.world)},
          {"network", to_json(c.network)},
          {"train", to_json(c.train)},
          {"infer", to_json(c.infer)},
          {"experiments", to_json(c.experiments)}};
}

/// Parses a run configuration over the defaults. Throws ConfigError listing
/// every unknown key, type error and range violation.
inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ConfigIssues issues;
  {
    detail::ObjectReader r(j, "", issues);
    if (const json* v = r.child("world")) read_world(*v, "world", c.world, issues);
    if (const json* v = r.child("network")) read_topology(*v, "network", c.network, issues);
    if (const json* v = r.child("train")) read_train(*v, "train", c.train, issues);
    if (const json* v = r.child("infer")) read_infer(*v, "infer", c.infer, issues);
    if (const json* v = r.child("experiments")) read_experiments(*v, "experiments", c.experiments, issues);
  }
  auto check = [&](const std::string& section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      issues.add(section, e.what());
    }
  };
  check("world", [&] { c.world.validate(); });
  check("network", [&] { c.topology().validate(); });
  check("train", [&] { c.train.validate(); });
  check("infer", [&] { c.infer.validate(); });
  const auto& e = c.experiments;
  if (e.seeds < 1) issues.add("experiments.seeds", "must be >= 1");
  if (e.train_per_task < 1) issues.add("experiments.train_per_task", "must be >= 1");
  if (e.test_per_task < 1) issues.add("experiments.test_per_task", "must be >= 1");
  if (e.fixed_count < 1) issues.add("experiments.fixed_count", "must be >= 1");
  if (e.varied_counts.empty()) issues.add("experiments.varied_counts", "must not be empty");
  for (int v : e.varied_counts)
    if (v < 0) issues.add("experiments.varied_counts", "counts must be >= 0");
  if (e.interference_trials < 1) issues.add("experiments.interference_trials", "must be >= 1");
  if (e.fixed_count > e.train_per_task) issues.add("experiments.fixed_count", "exceeds train_per_task");
  for (int v : e.varied_counts)
    if (v > e.train_per_task) issues.add("experiments.varied_counts", "counts must not exceed train_per_task");
  issues.raise();
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace pvrnn
