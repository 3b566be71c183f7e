#include "quad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "quad/errors.hpp"

namespace quad {

namespace {

constexpr double kProbabilityFloor = 1e-12;

double parameter_norm(std::span<const Tensor> params) {
  double total = 0.0;
  for (const auto& t : params)
    for (double v : t.values()) total += v * v;
  return std::sqrt(total);
}

}  // namespace

Selection parse_selection(std::string_view name) {
  if (name == "final") return Selection::kFinal;
  if (name == "best") return Selection::kBest;
  throw ConfigError("unknown checkpoint selection '" + std::string(name) + "'");
}

std::string_view selection_name(Selection s) { return s == Selection::kFinal ? "final" : "best"; }

void validate(const TrainConfig& c) {
  if (c.learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
  if (c.lr_decay <= 0.0 || c.lr_decay > 1.0) throw ConfigError("lr decay must be in (0, 1]");
  if (c.batch_size == 0) throw ConfigError("batch size must be positive");
  if (c.label_smoothing < 0.0 || c.label_smoothing >= 1.0) throw ConfigError("label smoothing must be in [0, 1)");
  if (c.beta < 0.0 || c.beta > 1.0) throw ConfigError("beta must be in [0, 1]");
  if (c.grad_clip < 0.0) throw ConfigError("gradient clip must be non-negative");
  if (c.adam_beta1 < 0.0 || c.adam_beta1 >= 1.0 || c.adam_beta2 < 0.0 || c.adam_beta2 >= 1.0)
    throw ConfigError("Adam betas must be in [0, 1)");
  if (c.adam_epsilon <= 0.0) throw ConfigError("Adam epsilon must be positive");
}

std::vector<TrainSample> make_samples(std::span<const Statement> statements) {
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < statements.size(); ++i) {
    out.push_back({i, MaskSlot::object(), Task::kBase});
    out.push_back({i, MaskSlot::subject(), Task::kBase});
    for (std::size_t q = 0; q < statements[i].qualifiers.size(); ++q)
      out.push_back({i, MaskSlot::qualifier(q), Task::kQual});
  }
  return out;
}

double bce_loss(std::span<const double> probabilities, EntityId target, double smoothing) {
  if (probabilities.empty()) throw ContractError("bce_loss: empty score vector");
  if (target < 0 || static_cast<std::size_t>(target) >= probabilities.size())
    throw ContractError("bce_loss: target " + std::to_string(target) + " out of range");
  const auto n = static_cast<double>(probabilities.size());
  double total = 0.0;
  for (std::size_t j = 0; j < probabilities.size(); ++j) {
    const double p = probabilities[j];
    if (!std::isfinite(p)) throw NumericError("bce_loss: non-finite probability at entity " + std::to_string(j));
    const double y = static_cast<EntityId>(j) == target ? 1.0 - smoothing : smoothing / n;
    const double pc = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
    total -= y * std::log(pc) + (1.0 - y) * std::log1p(-pc);
  }
  return total / n;
}

double total_loss(std::span<const double> base, std::span<const double> qual, double beta) {
  auto mean_of = [](std::span<const double> xs) {
    return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  };
  return mean_of(base) + beta * mean_of(qual);
}

std::vector<double> loss_weights(std::span<const TrainSample> batch, double beta) {
  std::size_t n_base = 0, n_qual = 0;
  for (const auto& s : batch) (s.task == Task::kBase ? n_base : n_qual)++;
  std::vector<double> w;
  w.reserve(batch.size());
  for (const auto& s : batch) {
    w.push_back(s.task == Task::kBase ? 1.0 / static_cast<double>(n_base) : beta / static_cast<double>(n_qual));
  }
  return w;
}

double learning_rate_at(const TrainConfig& config, std::size_t epoch) {
  return config.learning_rate * std::pow(config.lr_decay, static_cast<double>(epoch));
}

void Adam::step(std::span<Tensor> params, double learning_rate) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    auto value = params[i].mutable_values();
    auto grad = params[i].mutable_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * grad[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * grad[k] * grad[k];
      value[k] -= learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + epsilon_);
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double total = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.mutable_grad()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

std::string epoch_json(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["loss"] = log.loss;
  j["val_mrr"] = log.val_mrr ? nlohmann::ordered_json(*log.val_mrr) : nlohmann::ordered_json(nullptr);
  j["lr"] = log.lr;
  return j.dump();
}

TrainResult train(const TrainConfig& config, const ModelConfig& model, const Dataset& data,
                  const EpochCallback& on_epoch) {
  validate(config);
  validate(model);
  if (data.train.empty()) throw ConfigError("training split is empty");
  Rng rng(config.seed);
  const auto& vocab = data.vocab;
  const EncoderGraph graph = build_encoder_graph(vocab, data.train);
  const std::vector<Statement> everything = data.all();
  const FilterIndex filter(vocab, everything, config.filter_level);

  TrainResult result;
  result.params = init_model(model, vocab, data.max_qualifiers(), rng);
  std::vector<Tensor> params = result.params.tensors();
  Adam adam(config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  std::vector<TrainSample> samples = make_samples(data.train);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    std::shuffle(samples.begin(), samples.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < samples.size(); begin += config.batch_size) {
      const std::span<const TrainSample> batch(samples.data() + begin,
                                               std::min(config.batch_size, samples.size() - begin));
      for (auto& p : params) p.zero_grad();
      const PassContext ctx{true, &rng};
      const Tables encoded = encode_tables(result.params, graph, model, ctx);
      const auto sequences = build_batch(batch, data.train, vocab);
      const auto logits = predict_logits(encoded, sequences, vocab.num_entities(), result.params, model, ctx);
      std::vector<std::int32_t> targets;
      for (const auto& s : sequences) targets.push_back(s.target);
      const auto weights = loss_weights(batch, config.beta);
      Tensor loss;
      try {
        loss = bce_with_logits(logits, targets, config.label_smoothing, weights);
      } catch (const NumericError&) {
        loss = Tensor::scalar(std::nan(""));
      }
      if (!std::isfinite(loss.item())) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << n_batches << " (parameter norm "
            << parameter_norm(params) << ")";
        throw NumericError(msg.str());
      }
      backward(loss);
      clip_grad_norm(params, config.grad_clip);
      adam.step(params, lr);
      loss_sum += loss.item();
      ++n_batches;
    }

    EpochLog log{epoch + 1, loss_sum / static_cast<double>(n_batches), std::nullopt, lr};
    const bool last = epoch + 1 == config.epochs;
    if (config.eval_every > 0 && !data.valid.empty() && ((epoch + 1) % config.eval_every == 0 || last)) {
      log.val_mrr = evaluate(result.params, model, graph, vocab, data.valid, filter).metrics.mrr;
      if (!result.best_val_mrr || *log.val_mrr > *result.best_val_mrr) {
        result.best_val_mrr = log.val_mrr;
        result.best_epoch = epoch + 1;
        result.best = clone_params(result.params);
      }
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (!result.best_val_mrr) {
    result.best = clone_params(result.params);
    result.best_epoch = config.epochs;
  }
  if (config.select == Selection::kBest) result.params = clone_params(result.best);
  return result;
}

}  // namespace quad
