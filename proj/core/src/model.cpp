#include "quad/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "quad/errors.hpp"

namespace quad {

void validate(const ModelConfig& config) {
  if (config.dim == 0 || config.dim % 2 != 0) {
    throw ConfigError("embedding dim must be even and positive, got " + std::to_string(config.dim));
  }
  validate(config.encoder);
  validate(config.decoder, config.dim);
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_model_tensors(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

ModelParams clone_params(const ModelParams& params) {
  ModelParams copy = params;
  visit_model_tensors(copy, [](const std::string&, Tensor& t) { t = t.clone_leaf(t.requires_grad()); });
  return copy;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::string_view task_name(Task task) { return task == Task::kBase ? "base" : "qual"; }

Task parse_task(std::string_view name) {
  if (name == "base") return Task::kBase;
  if (name == "qual") return Task::kQual;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::vector<TokenSequence> build_batch(std::span<const MaskedQuery> queries, std::span<const Statement> statements,
                                       const Vocab& vocab) {
  std::size_t max_pairs = 0;
  for (const auto& q : queries) max_pairs = std::max(max_pairs, statements[q.statement].qualifiers.size());
  std::vector<TokenSequence> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(build_sequence(statements[q.statement], q.slot, vocab, max_pairs));
  return out;
}

ModelParams init_model(const ModelConfig& config, const Vocab& vocab, std::size_t max_pairs, Rng& rng) {
  validate(config);
  ModelParams p;
  const std::size_t d = config.dim;
  const double bound_e = std::sqrt(6.0 / static_cast<double>(vocab.entity_rows() + d));
  const double bound_r = std::sqrt(6.0 / static_cast<double>(vocab.relation_rows() + d));
  p.entity_table = uniform_param({vocab.entity_rows(), d}, bound_e, rng);
  p.relation_table = uniform_param({vocab.relation_rows(), d}, bound_r, rng);
  p.encoder = init_encoder_params(config.encoder, d, rng);
  p.decoder = init_decoder_params(config.decoder, d, vocab.num_entities(), 3 + 2 * max_pairs, rng);
  return p;
}

Tables encode_tables(const ModelParams& params, const EncoderGraph& graph, const ModelConfig& config,
                     PassContext ctx) {
  return encode(Tables{params.entity_table, params.relation_table}, graph, config.encoder, params.encoder, ctx);
}

Tensor predict_logits(const Tables& encoded, std::span<const TokenSequence> batch, std::size_t num_entities,
                      const ModelParams& params, const ModelConfig& config, PassContext ctx) {
  const auto contextual = transformer_forward(batch, encoded, params.decoder, config.decoder, ctx);
  return score_entities(masked_rows(contextual, batch), encoded, num_entities, params.decoder, config.decoder);
}

}  // namespace quad
