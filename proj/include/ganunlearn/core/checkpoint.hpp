#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ganunlearn/core/nn.hpp"

namespace gu {

// On-disk format: "GUCP" magic, container version, a JSON header holding
// the metadata plus an array index (name, shape), then raw little-endian
// float32 payloads in index order. Round-trips are byte exact.
struct CheckpointMeta {
  std::string component;        // e.g. "crossmodal.encoder", "gancore.generator"
  int version = 1;              // format version of this component's payload
  uint64_t seed = 0;            // master seed the artifact was produced under
  uint64_t config_hash = 0;     // hash of the producing config section
  nlohmann::json manifest;      // component-specific structured metadata
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<Param<real>*>& params);

// Loads values into `params`, which must already have matching names and
// shapes (the architecture is rebuilt from config before loading).
// expect_config_hash of 0 skips the hash check.
CheckpointMeta load_checkpoint(const std::string& path, const std::string& expect_component,
                               uint64_t expect_config_hash, std::vector<Param<real>*>& params);

// Reads only the JSON header; used for provenance listings and hash checks.
CheckpointMeta peek_checkpoint(const std::string& path);

bool file_exists(const std::string& path);

}  // namespace gu
