#include "quad/decoder.hpp"

#include <string>

#include "quad/errors.hpp"

namespace quad {

namespace {

constexpr double kEmbeddingInitBound = 0.1;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

Tensor residual_dropout(const Tensor& x, double rate, PassContext ctx) {
  if (!ctx.training || rate == 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("training pass without a random generator");
  return dropout(x, rate, *ctx.rng);
}

}  // namespace

PositionKind parse_position_kind(std::string_view name) {
  if (name == "role") return PositionKind::kRole;
  if (name == "absolute") return PositionKind::kAbsolute;
  throw ConfigError("unknown position kind '" + std::string(name) + "'");
}

std::string_view position_kind_name(PositionKind kind) {
  return kind == PositionKind::kRole ? "role" : "absolute";
}

void validate(const DecoderConfig& config, std::size_t dim) {
  if (config.heads == 0 || dim % config.heads != 0) {
    throw ConfigError(std::to_string(config.heads) + " attention heads do not divide dim " + std::to_string(dim));
  }
  if (config.hidden == 0) throw ConfigError("decoder hidden width must be positive");
  if (config.dropout < 0.0 || config.dropout >= 1.0) throw ConfigError("decoder dropout must be in [0, 1)");
}

TokenSequence build_sequence(const Statement& statement, MaskSlot mask, const Vocab& vocab,
                             std::size_t max_pairs) {
  if (statement.qualifiers.size() > max_pairs) {
    throw ContractError("statement has " + std::to_string(statement.qualifiers.size()) +
                        " qualifier pairs, sequence holds " + std::to_string(max_pairs));
  }
  if (mask.kind == MaskSlot::kQualifier && mask.index >= statement.qualifiers.size()) {
    throw ContractError("qualifier mask index " + std::to_string(mask.index) + " out of range for a statement with " +
                        std::to_string(statement.qualifiers.size()) + " qualifier pairs");
  }
  Statement s = statement;
  if (mask.kind == MaskSlot::kSubject) {
    s = Statement{statement.object, vocab.inverse(statement.relation), statement.subject, statement.qualifiers};
    mask = MaskSlot::object();
  }
  const auto offset = static_cast<std::int32_t>(vocab.entity_rows());
  const std::size_t length = 3 + 2 * max_pairs;
  TokenSequence seq;
  seq.tokens = {s.subject, offset + s.relation, s.object};
  seq.roles = {kRoleSubject, kRoleRelation, kRoleObject};
  for (const auto& q : s.qualifiers) {
    seq.tokens.push_back(offset + q.relation);
    seq.tokens.push_back(q.entity);
    seq.roles.push_back(kRoleQualRelation);
    seq.roles.push_back(kRoleQualEntity);
  }
  seq.live.assign(seq.tokens.size(), 1);
  seq.tokens.resize(length, vocab.entity_pad());
  seq.roles.resize(length, kRolePad);
  seq.live.resize(length, 0);

  seq.masked_position = mask.kind == MaskSlot::kObject ? 2 : 4 + 2 * mask.index;
  seq.target = seq.tokens[seq.masked_position];
  seq.tokens[seq.masked_position] = vocab.entity_mask();
  return seq;
}

DecoderParams init_decoder_params(const DecoderConfig& config, std::size_t dim, std::size_t num_entities,
                                  std::size_t max_len, Rng& rng) {
  validate(config, dim);
  DecoderParams p;
  const std::size_t position_rows = config.positions == PositionKind::kRole ? kRoleCount : max_len;
  p.positions = uniform_param({position_rows, dim}, kEmbeddingInitBound, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    TransformerLayerParams layer;
    layer.norm1_gain = Tensor::full({dim}, 1.0, true);
    layer.norm1_bias = Tensor::zeros({dim}, true);
    layer.w_query = xavier_param(dim, dim, rng);
    layer.b_query = Tensor::zeros({dim}, true);
    layer.w_key = xavier_param(dim, dim, rng);
    layer.b_key = Tensor::zeros({dim}, true);
    layer.w_value = xavier_param(dim, dim, rng);
    layer.b_value = Tensor::zeros({dim}, true);
    layer.w_out = xavier_param(dim, dim, rng);
    layer.b_out = Tensor::zeros({dim}, true);
    layer.norm2_gain = Tensor::full({dim}, 1.0, true);
    layer.norm2_bias = Tensor::zeros({dim}, true);
    layer.w_ffn1 = xavier_param(dim, config.hidden, rng);
    layer.b_ffn1 = Tensor::zeros({config.hidden}, true);
    layer.w_ffn2 = xavier_param(config.hidden, dim, rng);
    layer.b_ffn2 = Tensor::zeros({dim}, true);
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = Tensor::full({dim}, 1.0, true);
  p.final_bias = Tensor::zeros({dim}, true);
  p.head_weight = xavier_param(dim, dim, rng);
  p.head_bias = Tensor::zeros({dim}, true);
  if (!config.tie_weights) p.output_table = xavier_param(num_entities, dim, rng);
  return p;
}

Tensor transformer_forward(std::span<const TokenSequence> batch, const Tables& encoded,
                           const DecoderParams& params, const DecoderConfig& config, PassContext ctx) {
  if (batch.empty()) throw ContractError("transformer_forward: empty batch");
  const std::size_t length = batch.front().tokens.size();
  std::vector<std::int32_t> tokens, positions;
  std::vector<std::uint8_t> live;
  for (const auto& seq : batch) {
    if (seq.tokens.size() != length || seq.roles.size() != length || seq.live.size() != length) {
      throw DimensionError("transformer_forward: sequences of different lengths in one batch");
    }
    tokens.insert(tokens.end(), seq.tokens.begin(), seq.tokens.end());
    live.insert(live.end(), seq.live.begin(), seq.live.end());
    for (std::size_t i = 0; i < length; ++i) {
      positions.push_back(config.positions == PositionKind::kRole ? seq.roles[i] : static_cast<std::int32_t>(i));
    }
  }
  if (config.positions == PositionKind::kAbsolute && length > params.positions.rows()) {
    throw DimensionError("sequence length " + std::to_string(length) + " exceeds " +
                         std::to_string(params.positions.rows()) + " absolute positions");
  }

  const auto stacked = concat_rows({encoded.entities, encoded.relations});
  Tensor x = add(gather_rows(stacked, tokens), gather_rows(params.positions, positions));
  for (const auto& layer : params.layers) {
    const auto h = layer_norm(x, layer.norm1_gain, layer.norm1_bias);
    const auto attended = multi_head_attention(linear(h, layer.w_query, layer.b_query),
                                               linear(h, layer.w_key, layer.b_key),
                                               linear(h, layer.w_value, layer.b_value), batch.size(), length,
                                               config.heads, live);
    x = add(x, residual_dropout(linear(attended, layer.w_out, layer.b_out), config.dropout, ctx));
    const auto g = layer_norm(x, layer.norm2_gain, layer.norm2_bias);
    const auto ffn = linear(activate(linear(g, layer.w_ffn1, layer.b_ffn1), config.ffn_activation),
                            layer.w_ffn2, layer.b_ffn2);
    x = add(x, residual_dropout(ffn, config.dropout, ctx));
  }
  return layer_norm(x, params.final_gain, params.final_bias);
}

Tensor masked_rows(const Tensor& contextual, std::span<const TokenSequence> batch) {
  std::vector<std::int32_t> rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    rows.push_back(static_cast<std::int32_t>(b * batch[b].tokens.size() + batch[b].masked_position));
  }
  return gather_rows(contextual, rows);
}

Tensor score_entities(const Tensor& masked, const Tables& encoded, std::size_t num_entities,
                      const DecoderParams& params, const DecoderConfig& config) {
  const auto h = activate(linear(masked, params.head_weight, params.head_bias), config.head_activation);
  const Tensor table = config.tie_weights ? slice_rows(encoded.entities, 0, num_entities) : params.output_table;
  if (!table.defined() || table.rows() != num_entities) {
    throw DimensionError("score_entities: output table does not hold " + std::to_string(num_entities) + " entities");
  }
  return matmul(h, transpose(table));
}

}  // namespace quad
