#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quad/evaluator.hpp"
#include "quad/kg_data.hpp"
#include "quad/model.hpp"

namespace quad {

enum class Selection { kFinal, kBest };

Selection parse_selection(std::string_view name);
std::string_view selection_name(Selection s);

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  // Multiplicative per-epoch factor; 1 disables decay.
  double lr_decay = 1.0;
  std::size_t batch_size = 128;
  double label_smoothing = 0.1;
  double beta = 1.0;
  // Global gradient-norm bound; 0 disables clipping.
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  // Validation MRR every this many epochs (and after the last); 0 never.
  std::size_t eval_every = 1;
  // Which parameters train() returns as `params`.
  Selection select = Selection::kFinal;
  // Filter used for validation ranks.
  FilterLevel filter_level = FilterLevel::kStatement;
};

void validate(const TrainConfig& config);

using TrainSample = MaskedQuery;

// Object and subject masks for every statement plus one qualifier mask per
// qualifier pair. `statements` are forward statements; subject masks stand
// for the inverse statements, which contribute no qualifier samples.
std::vector<TrainSample> make_samples(std::span<const Statement> statements);

// Mean over entities of the binary cross-entropy between `probabilities`
// and targets 1 - smoothing (target) / smoothing / |V| (elsewhere), with
// probabilities clamped to [1e-12, 1 - 1e-12] inside the logarithms.
double bce_loss(std::span<const double> probabilities, EntityId target, double smoothing);

// mean(base) + beta * mean(qual); an empty list contributes 0.
double total_loss(std::span<const double> base, std::span<const double> qual, double beta);

// Per-row weights that turn a summed batch loss into
// mean(base rows) + beta * mean(qual rows).
std::vector<double> loss_weights(std::span<const TrainSample> batch, double beta);

// Learning rate used during epoch `epoch` (0-based).
double learning_rate_at(const TrainConfig& config, std::size_t epoch);

class Adam {
 public:
  Adam(double beta1, double beta2, double epsilon) : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(std::span<Tensor> params, double learning_rate);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales all gradients so that their joint L2 norm is at most max_norm;
// returns the norm before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> val_mrr;
  double lr = 0.0;
};

std::string epoch_json(const EpochLog& log);

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> epochs;
  // Snapshot at the best validation MRR; equal to the final parameters
  // when validation never ran.
  ModelParams best;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_mrr;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains a fresh model on data.train, validating on data.valid against a
// filter over all splits.
TrainResult train(const TrainConfig& config, const ModelConfig& model, const Dataset& data,
                  const EpochCallback& on_epoch = {});

}  // namespace quad
