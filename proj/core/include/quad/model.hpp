#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "quad/decoder.hpp"
#include "quad/encoder.hpp"
#include "quad/kg_data.hpp"

namespace quad {

struct ModelConfig {
  // Embedding width d; must be even.
  std::size_t dim = 32;
  EncoderConfig encoder;
  DecoderConfig decoder;
};

void validate(const ModelConfig& config);

struct ModelParams {
  Tensor entity_table;    // [entity_rows x d]
  Tensor relation_table;  // [relation_rows x d]
  EncoderParams encoder;
  DecoderParams decoder;

  // Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
};

template <typename P, typename F>
void visit_model_tensors(P& params, F&& f) {
  f(std::string("entity_table"), params.entity_table);
  f(std::string("relation_table"), params.relation_table);
  visit_encoder_tensors(params.encoder, f);
  visit_decoder_tensors(params.decoder, f);
}

// Deep copy: fresh leaves holding the same values.
ModelParams clone_params(const ModelParams& params);

enum class Task { kBase, kQual };
std::string_view task_name(Task task);
Task parse_task(std::string_view name);

// One masked prediction over statement `statement` of some statement list.
struct MaskedQuery {
  std::size_t statement = 0;
  MaskSlot slot;
  Task task = Task::kBase;
};

// Sequences for the queries, padded to the largest qualifier count among them.
std::vector<TokenSequence> build_batch(std::span<const MaskedQuery> queries, std::span<const Statement> statements,
                                       const Vocab& vocab);

ModelParams init_model(const ModelConfig& config, const Vocab& vocab, std::size_t max_pairs, Rng& rng);

// Runs the graph encoder over the embedding tables.
Tables encode_tables(const ModelParams& params, const EncoderGraph& graph, const ModelConfig& config,
                     PassContext ctx = {});

// Entity logits [batch x num_entities] for the masked slot of each sequence.
Tensor predict_logits(const Tables& encoded, std::span<const TokenSequence> batch, std::size_t num_entities,
                      const ModelParams& params, const ModelConfig& config, PassContext ctx = {});

}  // namespace quad
