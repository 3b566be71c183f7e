#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quad/kg_data.hpp"
#include "quad/ops.hpp"
#include "quad/tensor.hpp"

namespace quad {

enum class EncoderMode { kSequential, kParallel, kBaseOnly, kLayerNormOnly, kIdentity };

// How the base aggregator folds the encoded qualifiers h_q into an edge message.
enum class QualifierMix {
  // alpha * phi(h_u, h_r) + (1 - alpha) * h_q
  kQuadMix,
  // phi(h_u, alpha * h_r + (1 - alpha) * h_q)
  kStareGamma,
};

EncoderMode parse_encoder_mode(std::string_view name);
std::string_view encoder_mode_name(EncoderMode mode);
QualifierMix parse_qualifier_mix(std::string_view name);
std::string_view qualifier_mix_name(QualifierMix mix);

struct EncoderConfig {
  EncoderMode mode = EncoderMode::kSequential;
  std::size_t base_layers = 2;
  std::size_t qual_layers = 1;
  QualifierMix mix = QualifierMix::kQuadMix;
  double alpha = 0.6;
  double dropout = 0.2;
  double parallel_dropout = 0.3;
  Activation activation = Activation::kTanh;
  // Mean over each direction bucket (and over each qualifier entity's
  // occurrences) instead of a plain sum.
  bool degree_norm = true;
  // Apply the alpha weight to edges whose statement has no qualifiers too.
  bool scale_plain_edges = false;
};

void validate(const EncoderConfig& config);

// Message-passing structure derived from a list of forward statements.
struct EncoderGraph {
  enum Direction : std::size_t { kStandard = 0, kInverse = 1, kSelfLoop = 2 };

  // Real entities; the MASK and PAD rows after them pass through untouched.
  std::size_t num_entities = 0;
  std::size_t entity_rows = 0;
  // Forward and inverse relations; the rows after them are not updated.
  std::size_t num_relations = 0;
  std::size_t relation_rows = 0;

  // Base edges target <- source, grouped by direction: [0, direction_end[0])
  // are standard, then inverse, then one self-loop per real entity.
  std::vector<std::int32_t> edge_target;
  std::vector<std::int32_t> edge_source;
  std::vector<std::int32_t> edge_relation;
  // Index into `statements`, or -1 for self-loops.
  std::vector<std::int32_t> edge_statement;
  std::array<std::size_t, 3> direction_end{};
  // 1 / (edges of the same direction into the target).
  std::vector<double> edge_mean_weight;

  std::vector<Statement> statements;
  // Flattened qualifier pairs of `statements`.
  std::vector<std::int32_t> pair_statement;
  std::vector<std::int32_t> pair_relation;
  std::vector<std::int32_t> pair_entity;

  // Qualifier triples ((subject, relation, object), qual_relation, qual_entity);
  // occ_slot indexes `qualifier_entities`.
  std::vector<std::int32_t> occ_subject;
  std::vector<std::int32_t> occ_relation;
  std::vector<std::int32_t> occ_object;
  std::vector<std::int32_t> occ_qual_relation;
  std::vector<std::int32_t> occ_slot;
  std::vector<std::int32_t> qualifier_entities;
  std::vector<double> occ_mean_weight;
};

EncoderGraph build_encoder_graph(const Vocab& vocab, std::span<const Statement> statements);

struct Tables {
  Tensor entities;
  Tensor relations;
};

struct PassContext {
  bool training = false;
  Rng* rng = nullptr;
};

struct BaseLayerParams {
  Tensor w_standard;  // [d x d]
  Tensor w_inverse;   // [d x d]
  Tensor w_self;      // [d x d]
  Tensor w_qualifier; // [d x d], projects the summed qualifier pairs
  Tensor w_relation;  // [d x d], relation update
};

struct TripleProjection {
  Tensor weight;  // [3d x d]
  Tensor bias;    // [d]
};

struct QualLayerParams {
  Tensor w_message;  // [d x d]
  TripleProjection projection;
};

struct EncoderParams {
  std::vector<BaseLayerParams> base;
  std::vector<QualLayerParams> qual;
  Tensor combiner;  // [2d x d], parallel mode
  Tensor entity_norm_gain;
  Tensor entity_norm_bias;
  Tensor relation_norm_gain;
  Tensor relation_norm_bias;
};

EncoderParams init_encoder_params(const EncoderConfig& config, std::size_t dim, Rng& rng);

// Calls f(name, tensor) for every parameter tensor in a fixed order. P is
// EncoderParams or const EncoderParams.
template <typename P, typename F>
void visit_encoder_tensors(P& params, F&& f) {
  for (std::size_t l = 0; l < params.base.size(); ++l) {
    const auto prefix = "encoder.base." + std::to_string(l) + ".";
    auto& b = params.base[l];
    f(prefix + "w_standard", b.w_standard);
    f(prefix + "w_inverse", b.w_inverse);
    f(prefix + "w_self", b.w_self);
    f(prefix + "w_qualifier", b.w_qualifier);
    f(prefix + "w_relation", b.w_relation);
  }
  for (std::size_t l = 0; l < params.qual.size(); ++l) {
    const auto prefix = "encoder.qual." + std::to_string(l) + ".";
    auto& q = params.qual[l];
    f(prefix + "w_message", q.w_message);
    f(prefix + "projection.weight", q.projection.weight);
    f(prefix + "projection.bias", q.projection.bias);
  }
  f(std::string("encoder.combiner"), params.combiner);
  f(std::string("encoder.entity_norm.gain"), params.entity_norm_gain);
  f(std::string("encoder.entity_norm.bias"), params.entity_norm_bias);
  f(std::string("encoder.relation_norm.gain"), params.relation_norm_gain);
  f(std::string("encoder.relation_norm.bias"), params.relation_norm_bias);
}

// Rotation composition phi(x, r) over rows; throws ConfigError for odd widths.
Tensor compose_rotate(const Tensor& x, const Tensor& r);

// W_q-projected sum of phi(h_qr, h_qv) over the pairs; a zero row when empty.
Tensor encode_qualifiers(std::span<const QualifierPair> qualifiers, const Tables& tables,
                         const Tensor& w_qualifier);

// One base aggregation layer over every real entity, followed by the
// relation update h_r <- h_r W_rel for forward and inverse relations.
Tables base_aggregate(const Tables& tables, const EncoderGraph& graph, const BaseLayerParams& layer,
                      const EncoderConfig& config, PassContext ctx = {});

// Linear(Concat(h_v, h_r, h_u)) row by row.
Tensor triple_project(const Tensor& h_v, const Tensor& h_r, const Tensor& h_u,
                      const TripleProjection& projection);

// One qualifier aggregation layer. Entities that never occur as qualifier
// entities and all relations pass through unchanged.
Tables qual_aggregate(const Tables& tables, const EncoderGraph& graph, const QualLayerParams& layer,
                      const EncoderConfig& config, PassContext ctx = {});

Tables encode(const Tables& tables, const EncoderGraph& graph, const EncoderConfig& config,
              const EncoderParams& params, PassContext ctx = {});

}  // namespace quad
