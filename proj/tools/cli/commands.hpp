#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "quad/kg_data.hpp"
#include "run_config.hpp"

namespace quad::cli {

// Exit statuses shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Parses argv, runs one command and maps exceptions to exit statuses:
// usage and configuration problems give 2, parse/numeric/IO failures 1.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Synthetic data for --synthetic, otherwise the dataset under --data.
Dataset obtain_dataset(const RunConfig& config);

// FNV-1a over the labelled statements of all splits, as 16 hex digits.
std::string dataset_hash(const Dataset& data);

struct AblationRun {
  std::uint64_t seed = 0;
  double mrr = 0.0;
  double h1 = 0.0;
  double h10 = 0.0;
  std::optional<double> qual_mrr;
};

struct AblationVariant {
  std::string name;
  double beta = 0.0;
  EncoderMode encoder_mode = EncoderMode::kSequential;
  std::vector<AblationRun> runs;

  double mean_mrr() const;
  // Sample standard deviation; 0 for a single run.
  double std_mrr() const;
  std::optional<double> mean_qual_mrr() const;
  std::optional<double> std_qual_mrr() const;
};

// full, w/o-qual-mask (beta 0), w/o-qual-agg (base-only encoder) and
// w/o-both, each trained once per seed on `data` and scored on its test
// split. `progress` may be null.
std::vector<AblationVariant> run_ablation(const RunConfig& config, const Dataset& data,
                                          const std::vector<std::uint64_t>& seeds, std::ostream* progress);

std::string ablation_json(const std::vector<AblationVariant>& variants);
std::string ablation_table(const std::vector<AblationVariant>& variants);

}  // namespace quad::cli
