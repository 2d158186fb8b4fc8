#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "cmn/cmn.hpp"
#include "cmn/datagen.hpp"
#include "cmn/training.hpp"
#include "json.hpp"

namespace cmn {

struct RunConfig {
  DatasetConfig data;
  ModelConfig model;
  TrainConfig train;
  double threshold_m = kSuccessThreshold;
  std::uint64_t seed = 1;

  // Copies `seed` into the dataset, model and training seeds.
  void apply_seed(std::uint64_t s);
};

// Missing keys keep their defaults; unknown keys and bad values raise a
// ConfigError naming the dotted key.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

// Sets a dotted key ("train.iterations") in a JSON document. The value is
// parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& key, const std::string& value);

// flag > CMN_SEED environment variable > config file.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const char* env, std::uint64_t from_config);

}  // namespace cmn
