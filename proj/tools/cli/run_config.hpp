#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "quad/evaluator.hpp"
#include "quad/model.hpp"
#include "quad/synthetic.hpp"
#include "quad/trainer.hpp"

namespace quad::cli {

// Every setting of a train/ablate run. Field defaults are the documented
// defaults; all of them are echoed into the run manifest.
struct RunConfig {
  std::string data;
  bool synthetic = false;
  SyntheticConfig generator;
  std::uint64_t data_seed = 1;
  std::string out = "run";

  TrainConfig train;
  ModelConfig model;
};

// Registers one flag per RunConfig field on `app`, plus --config for a
// key=value file. Options must take the last occurrence (see
// expand_config_file).
void add_run_options(CLI::App& app, RunConfig& config);

// Replaces "--config FILE" in the arguments of one command with
// "--key=value" for every line of FILE, placed before all other arguments
// so that command-line flags win; unknown keys surface as unknown flags.
// Blank lines and lines starting with '#' or ';' are skipped.
std::vector<std::string> expand_config_file(const std::vector<std::string>& args);

// Checks cross-field constraints after parsing; throws ConfigError.
void finalize(RunConfig& config);

// Resolved settings as (option name, value) in a stable order.
std::vector<std::pair<std::string, std::string>> run_config_entries(const RunConfig& config);

// key=value lines readable by --config.
std::string run_config_ini(const RunConfig& config);

}  // namespace quad::cli
