// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pvrnn/adaptive.hpp"
#include "pvrnn/hash.hpp"
#include "pvrnn/parameters.hpp"
#include "pvrnn/topology.hpp"

namespace pvrnn {

inline constexpr int kCheckpointVersion = 1;

inline std::uint64_t hash_parameters(const Parameters& p) {
  Fnv1a h;
  p.for_each([&](const std::string& name, const auto& t, bool) {
    h.update(name);
    h.update_doubles(t.data(), static_cast<std::size_t>(t.size()));
  });
  return h.digest();
}

struct TrainingProvenance {
  std::string config;  ///< effective configuration, serialized
  std::uint64_t seed = 0;
  std::uint64_t dataset_hash = 0;
  int iterations = 0;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  NetworkTopology topology;
  Parameters params;
  TrainingProvenance provenance;
  /// Final posteriors of the training sequences, ordered by sequence id.
  std::vector<AdaptivePosterior> adaptive;

  const AdaptivePosterior* adaptive_for(int sequence_id) const {
    for (const auto& a : adaptive)
      if (a.sequence_id == sequence_id) return &a;
    return nullptr;
  }
};

}  // namespace pvrnn
