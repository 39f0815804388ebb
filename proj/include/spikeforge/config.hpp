// Run configuration (TOML) and run manifests (JSON). One seed in the config
// drives every random choice of a run, so identical config means identical
// artifacts.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "spikeforge/toml.hpp"

namespace spikeforge {

inline constexpr const char* kToolVersion = "spikeforge 1.0.0";

struct TrainSettings {
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;  // conv and linear weights only
  int epochs = 30;
  int batch = 32;
  uint64_t seed = 1;
};

struct RegSettings {
  double coeff = 0.0;  // spike-count penalty weight; 0 disables the term
};

struct ModelSettings {
  std::vector<int> channels = {8, 16};  // one conv block per entry
  std::vector<int> pool_after;          // optional, per block; 0 or absent = none
  int q_steps = 16;
  bool full_range_clip = false;  // train with ceiling Q instead of Q - 1
  bool exact_snap = true;  // snap trained parameters to dyadic grids before saving
};

struct DataSettings {
  bool synthetic = true;
  uint64_t seed = 7;
  int count = 256;
  int classes = 2;
  std::string images;  // IDX paths when synthetic = false
  std::string labels;
};

struct RunConfig {
  TrainSettings train;
  RegSettings reg;
  ModelSettings model;
  DataSettings data;

  static RunConfig from_toml(const TomlDoc& doc);
  static RunConfig from_file(const std::string& path);
  void validate() const;
  nlohmann::json to_json() const;
};

// command, config snapshot, seed, tool version, timestamp, output paths
nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config_snapshot,
                             uint64_t seed, const std::vector<std::string>& outputs);
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace spikeforge
