#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "quad/encoder.hpp"
#include "quad/kg_data.hpp"
#include "quad/ops.hpp"
#include "quad/tensor.hpp"

namespace quad {

enum class PositionKind { kRole, kAbsolute };

PositionKind parse_position_kind(std::string_view name);
std::string_view position_kind_name(PositionKind kind);

struct DecoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  double dropout = 0.1;
  Activation ffn_activation = Activation::kGelu;
  Activation head_activation = Activation::kGelu;
  PositionKind positions = PositionKind::kRole;
  // Score against the encoded entity table; otherwise a free output table.
  bool tie_weights = true;
};

void validate(const DecoderConfig& config, std::size_t dim);

enum Role : std::int32_t {
  kRoleSubject = 0,
  kRoleRelation = 1,
  kRoleObject = 2,
  kRoleQualRelation = 3,
  kRoleQualEntity = 4,
  kRolePad = 5,
};
inline constexpr std::size_t kRoleCount = 6;

struct MaskSlot {
  enum Kind { kSubject, kObject, kQualifier };
  Kind kind = kObject;
  // Qualifier pair index into Statement::qualifiers, for kQualifier.
  std::size_t index = 0;

  static MaskSlot subject() { return {kSubject, 0}; }
  static MaskSlot object() { return {kObject, 0}; }
  static MaskSlot qualifier(std::size_t i) { return {kQualifier, i}; }
};

// Token ids index the stacked table [entity rows; relation rows]: entity id
// e is row e, relation id r is row entity_rows + r.
struct TokenSequence {
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> roles;
  // 1 for real tokens, 0 for PAD.
  std::vector<std::uint8_t> live;
  std::size_t masked_position = 0;
  EntityId target = 0;
};

// (subject, relation, object, qr1, qv1, ...) padded to 3 + 2 * max_pairs
// tokens, with the masked entity replaced by the entity MASK token. Subject
// masks are realized on the inverse statement's object slot.
TokenSequence build_sequence(const Statement& statement, MaskSlot mask, const Vocab& vocab,
                             std::size_t max_pairs);

struct TransformerLayerParams {
  Tensor norm1_gain, norm1_bias;
  Tensor w_query, b_query;
  Tensor w_key, b_key;
  Tensor w_value, b_value;
  Tensor w_out, b_out;
  Tensor norm2_gain, norm2_bias;
  Tensor w_ffn1, b_ffn1;  // [d x hidden], [hidden]
  Tensor w_ffn2, b_ffn2;  // [hidden x d], [d]
};

struct DecoderParams {
  // [6 x d] for role positions, [max_len x d] for absolute ones.
  Tensor positions;
  std::vector<TransformerLayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor head_weight, head_bias;  // [d x d], [d]
  // [num_entities x d]; only used when weights are untied.
  Tensor output_table;
};

DecoderParams init_decoder_params(const DecoderConfig& config, std::size_t dim,
                                  std::size_t num_entities, std::size_t max_len, Rng& rng);

// Calls f(name, tensor) for every parameter tensor in a fixed order; the
// output table only when it is in use.
template <typename P, typename F>
void visit_decoder_tensors(P& params, F&& f) {
  f(std::string("decoder.positions"), params.positions);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto prefix = "decoder.layer." + std::to_string(l) + ".";
    auto& t = params.layers[l];
    f(prefix + "norm1.gain", t.norm1_gain);
    f(prefix + "norm1.bias", t.norm1_bias);
    f(prefix + "query.weight", t.w_query);
    f(prefix + "query.bias", t.b_query);
    f(prefix + "key.weight", t.w_key);
    f(prefix + "key.bias", t.b_key);
    f(prefix + "value.weight", t.w_value);
    f(prefix + "value.bias", t.b_value);
    f(prefix + "out.weight", t.w_out);
    f(prefix + "out.bias", t.b_out);
    f(prefix + "norm2.gain", t.norm2_gain);
    f(prefix + "norm2.bias", t.norm2_bias);
    f(prefix + "ffn1.weight", t.w_ffn1);
    f(prefix + "ffn1.bias", t.b_ffn1);
    f(prefix + "ffn2.weight", t.w_ffn2);
    f(prefix + "ffn2.bias", t.b_ffn2);
  }
  f(std::string("decoder.final_norm.gain"), params.final_gain);
  f(std::string("decoder.final_norm.bias"), params.final_bias);
  f(std::string("decoder.head.weight"), params.head_weight);
  f(std::string("decoder.head.bias"), params.head_bias);
  if (params.output_table.defined()) f(std::string("decoder.output_table"), params.output_table);
}

// Contextual embeddings [batch * L x d] for sequences of one common length L.
Tensor transformer_forward(std::span<const TokenSequence> batch, const Tables& encoded,
                           const DecoderParams& params, const DecoderConfig& config,
                           PassContext ctx = {});

// Row b * L + masked_position of `contextual` for every sequence b.
Tensor masked_rows(const Tensor& contextual, std::span<const TokenSequence> batch);

// Logits [batch x num_entities]: g(h W_out + b) against the first
// num_entities rows of the scoring table.
Tensor score_entities(const Tensor& masked, const Tables& encoded, std::size_t num_entities,
                      const DecoderParams& params, const DecoderConfig& config);

}  // namespace quad
