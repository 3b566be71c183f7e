#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "quad/kg_data.hpp"
#include "quad/model.hpp"

namespace quad {

// Text checkpoints:
//
//   QUAD-CHECKPOINT 1
//   config <key> <value>         one line per model setting
//   meta <key> <value>           free-form run information
//   vocab <entities> <relations> <fingerprint>
//   max_pairs <n>
//   tensor <name> <rank> <dim>...
//   <values, shortest round-trip decimal, space separated>
//   end
inline constexpr int kCheckpointVersion = 1;

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

ConfigEntries model_config_entries(const ModelConfig& config);
// Throws ConfigError for unknown keys or unparsable values.
void apply_model_entry(ModelConfig& config, const std::string& key, const std::string& value);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::size_t max_pairs = 0;
  ConfigEntries meta;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params,
                     const Vocab& vocab, std::size_t max_pairs, const ConfigEntries& meta = {});

// Throws ConfigError when the file is missing or was written for another
// vocabulary, ParseError when it is malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace quad
