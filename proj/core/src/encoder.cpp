#include "quad/encoder.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "quad/errors.hpp"

namespace quad {

namespace {

Tensor maybe_dropout(const Tensor& x, double rate, PassContext ctx) {
  if (!ctx.training || rate == 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("training pass without a random generator");
  return dropout(x, rate, *ctx.rng);
}

// Rows past `keep` of `table` appended after `head`.
Tensor with_tail(const Tensor& head, const Tensor& table, std::size_t keep) {
  if (keep >= table.rows()) return head;
  return concat_rows({head, slice_rows(table, keep, table.rows())});
}

std::vector<double> mean_weights(const std::vector<std::int32_t>& keys, std::size_t begin, std::size_t end) {
  std::map<std::int32_t, std::size_t> count;
  for (std::size_t i = begin; i < end; ++i) ++count[keys[i]];
  std::vector<double> w;
  for (std::size_t i = begin; i < end; ++i) w.push_back(1.0 / static_cast<double>(count[keys[i]]));
  return w;
}

void check_tables(const Tables& tables, const EncoderGraph& graph) {
  if (tables.entities.rows() != graph.entity_rows || tables.relations.rows() != graph.relation_rows) {
    throw DimensionError("encoder: tables " + shape_string(tables.entities.shape()) + " / " +
                         shape_string(tables.relations.shape()) + " do not match graph with " +
                         std::to_string(graph.entity_rows) + " entity rows and " +
                         std::to_string(graph.relation_rows) + " relation rows");
  }
  if (tables.entities.cols() != tables.relations.cols()) {
    throw DimensionError("encoder: entity and relation widths differ");
  }
}

}  // namespace

EncoderMode parse_encoder_mode(std::string_view name) {
  if (name == "sequential") return EncoderMode::kSequential;
  if (name == "parallel") return EncoderMode::kParallel;
  if (name == "base-only") return EncoderMode::kBaseOnly;
  if (name == "layernorm-only") return EncoderMode::kLayerNormOnly;
  if (name == "identity") return EncoderMode::kIdentity;
  throw ConfigError("unknown encoder mode '" + std::string(name) + "'");
}

std::string_view encoder_mode_name(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::kSequential: return "sequential";
    case EncoderMode::kParallel: return "parallel";
    case EncoderMode::kBaseOnly: return "base-only";
    case EncoderMode::kLayerNormOnly: return "layernorm-only";
    case EncoderMode::kIdentity: return "identity";
  }
  return "sequential";
}

QualifierMix parse_qualifier_mix(std::string_view name) {
  if (name == "quad-mix") return QualifierMix::kQuadMix;
  if (name == "stare-gamma") return QualifierMix::kStareGamma;
  throw ConfigError("unknown qualifier mix '" + std::string(name) + "'");
}

std::string_view qualifier_mix_name(QualifierMix mix) {
  return mix == QualifierMix::kQuadMix ? "quad-mix" : "stare-gamma";
}

void validate(const EncoderConfig& config) {
  if (config.alpha < 0.0 || config.alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
  if (config.dropout < 0.0 || config.dropout >= 1.0) throw ConfigError("encoder dropout must be in [0, 1)");
  if (config.parallel_dropout < 0.0 || config.parallel_dropout >= 1.0) {
    throw ConfigError("parallel dropout must be in [0, 1)");
  }
}

EncoderGraph build_encoder_graph(const Vocab& vocab, std::span<const Statement> statements) {
  EncoderGraph g;
  g.num_entities = vocab.num_entities();
  g.entity_rows = vocab.entity_rows();
  g.num_relations = 2 * vocab.num_relations();
  g.relation_rows = vocab.relation_rows();
  g.statements.assign(statements.begin(), statements.end());

  auto check_entity = [&](EntityId e) {
    if (e < 0 || static_cast<std::size_t>(e) >= g.num_entities)
      throw ContractError("statement references unknown entity id " + std::to_string(e));
  };
  auto check_relation = [&](RelationId r) {
    if (r < 0 || static_cast<std::size_t>(r) >= vocab.num_relations())
      throw ContractError("statement references unknown forward relation id " + std::to_string(r));
  };
  for (const auto& s : statements) {
    check_entity(s.subject);
    check_entity(s.object);
    check_relation(s.relation);
    for (const auto& q : s.qualifiers) {
      check_entity(q.entity);
      check_relation(q.relation);
    }
  }

  auto push_edge = [&](EntityId target, EntityId source, RelationId rel, std::int32_t stmt) {
    g.edge_target.push_back(target);
    g.edge_source.push_back(source);
    g.edge_relation.push_back(rel);
    g.edge_statement.push_back(stmt);
  };
  for (std::size_t i = 0; i < statements.size(); ++i) {
    const auto& s = statements[i];
    push_edge(s.object, s.subject, s.relation, static_cast<std::int32_t>(i));
  }
  g.direction_end[EncoderGraph::kStandard] = g.edge_target.size();
  for (std::size_t i = 0; i < statements.size(); ++i) {
    const auto& s = statements[i];
    push_edge(s.subject, s.object, vocab.inverse(s.relation), static_cast<std::int32_t>(i));
  }
  g.direction_end[EncoderGraph::kInverse] = g.edge_target.size();
  for (std::size_t e = 0; e < g.num_entities; ++e) {
    push_edge(static_cast<EntityId>(e), static_cast<EntityId>(e), vocab.self_loop(), -1);
  }
  g.direction_end[EncoderGraph::kSelfLoop] = g.edge_target.size();

  std::size_t begin = 0;
  for (std::size_t dir = 0; dir < 3; ++dir) {
    auto w = mean_weights(g.edge_target, begin, g.direction_end[dir]);
    g.edge_mean_weight.insert(g.edge_mean_weight.end(), w.begin(), w.end());
    begin = g.direction_end[dir];
  }

  std::map<EntityId, std::int32_t> slot_of;
  for (std::size_t i = 0; i < statements.size(); ++i) {
    const auto& s = statements[i];
    for (const auto& q : s.qualifiers) {
      g.pair_statement.push_back(static_cast<std::int32_t>(i));
      g.pair_relation.push_back(q.relation);
      g.pair_entity.push_back(q.entity);
      slot_of.emplace(q.entity, 0);
    }
  }
  for (auto& [entity, slot] : slot_of) {
    slot = static_cast<std::int32_t>(g.qualifier_entities.size());
    g.qualifier_entities.push_back(entity);
  }
  for (const auto& s : statements) {
    for (const auto& q : s.qualifiers) {
      g.occ_subject.push_back(s.subject);
      g.occ_relation.push_back(s.relation);
      g.occ_object.push_back(s.object);
      g.occ_qual_relation.push_back(q.relation);
      g.occ_slot.push_back(slot_of.at(q.entity));
    }
  }
  g.occ_mean_weight = mean_weights(g.occ_slot, 0, g.occ_slot.size());
  return g;
}

EncoderParams init_encoder_params(const EncoderConfig& config, std::size_t dim, Rng& rng) {
  EncoderParams p;
  for (std::size_t l = 0; l < config.base_layers; ++l) {
    BaseLayerParams layer;
    layer.w_standard = xavier_param(dim, dim, rng);
    layer.w_inverse = xavier_param(dim, dim, rng);
    layer.w_self = xavier_param(dim, dim, rng);
    layer.w_qualifier = xavier_param(dim, dim, rng);
    layer.w_relation = xavier_param(dim, dim, rng);
    p.base.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < config.qual_layers; ++l) {
    QualLayerParams layer;
    layer.w_message = xavier_param(dim, dim, rng);
    layer.projection.weight = xavier_param(3 * dim, dim, rng);
    layer.projection.bias = Tensor::zeros({dim}, true);
    p.qual.push_back(std::move(layer));
  }
  p.combiner = xavier_param(2 * dim, dim, rng);
  p.entity_norm_gain = Tensor::full({dim}, 1.0, true);
  p.entity_norm_bias = Tensor::zeros({dim}, true);
  p.relation_norm_gain = Tensor::full({dim}, 1.0, true);
  p.relation_norm_bias = Tensor::zeros({dim}, true);
  return p;
}

Tensor compose_rotate(const Tensor& x, const Tensor& r) {
  if (x.cols() % 2 != 0) {
    throw ConfigError("rotation composition needs an even embedding width, got " +
                      std::to_string(x.cols()));
  }
  return rotate(x, r);
}

Tensor encode_qualifiers(std::span<const QualifierPair> qualifiers, const Tables& tables,
                         const Tensor& w_qualifier) {
  const std::size_t d = tables.entities.cols();
  if (qualifiers.empty()) return Tensor::zeros({1, d});
  std::vector<std::int32_t> rel, ent;
  for (const auto& q : qualifiers) {
    rel.push_back(q.relation);
    ent.push_back(q.entity);
  }
  const auto composed = compose_rotate(gather_rows(tables.relations, rel), gather_rows(tables.entities, ent));
  const std::vector<std::int32_t> single(qualifiers.size(), 0);
  return matmul(index_add_rows(composed, single, {}, 1), w_qualifier);
}

Tables base_aggregate(const Tables& tables, const EncoderGraph& graph, const BaseLayerParams& layer,
                      const EncoderConfig& config, PassContext ctx) {
  check_tables(tables, graph);
  const auto& E = tables.entities;
  const auto& R = tables.relations;
  const std::size_t n_edges = graph.edge_target.size();
  if (graph.direction_end[EncoderGraph::kSelfLoop] - graph.direction_end[EncoderGraph::kInverse] !=
      graph.num_entities) {
    throw ContractError("base aggregation requires one self-loop per entity");
  }

  // Encoded qualifiers, one row per statement.
  Tensor hq;
  std::vector<bool> qualified(graph.statements.size(), false);
  for (auto s : graph.pair_statement) qualified[s] = true;
  if (!graph.pair_statement.empty()) {
    const auto composed = compose_rotate(gather_rows(R, graph.pair_relation), gather_rows(E, graph.pair_entity));
    hq = matmul(index_add_rows(composed, graph.pair_statement, {}, graph.statements.size()),
                layer.w_qualifier);
  }

  std::vector<double> base_coeff(n_edges), qual_coeff(n_edges, 0.0);
  std::vector<std::int32_t> hq_index(n_edges, 0);
  for (std::size_t e = 0; e < n_edges; ++e) {
    const auto stmt = graph.edge_statement[e];
    if (stmt >= 0 && qualified[stmt]) {
      base_coeff[e] = config.alpha;
      qual_coeff[e] = 1.0 - config.alpha;
      hq_index[e] = stmt;
    } else {
      base_coeff[e] = config.scale_plain_edges ? config.alpha : 1.0;
    }
  }

  const auto h_u = gather_rows(E, graph.edge_source);
  const auto h_r = gather_rows(R, graph.edge_relation);
  Tensor messages;
  if (config.mix == QualifierMix::kQuadMix) {
    messages = scale_rows(compose_rotate(h_u, h_r), base_coeff);
    if (hq.defined()) messages = add(messages, scale_rows(gather_rows(hq, hq_index), qual_coeff));
  } else {
    auto gamma = scale_rows(h_r, base_coeff);
    if (hq.defined()) gamma = add(gamma, scale_rows(gather_rows(hq, hq_index), qual_coeff));
    messages = compose_rotate(h_u, gamma);
  }

  const std::array<const Tensor*, 3> weights{&layer.w_standard, &layer.w_inverse, &layer.w_self};
  std::vector<Tensor> projected;
  std::size_t begin = 0;
  for (std::size_t dir = 0; dir < 3; ++dir) {
    const std::size_t end = graph.direction_end[dir];
    if (end > begin) projected.push_back(matmul(slice_rows(messages, begin, end), *weights[dir]));
    begin = end;
  }
  const std::vector<double> unit;
  const auto summed = index_add_rows(concat_rows(projected), graph.edge_target,
                                     config.degree_norm ? graph.edge_mean_weight : unit, graph.num_entities);
  const auto updated = maybe_dropout(activate(summed, config.activation), config.dropout, ctx);

  Tables out;
  out.entities = with_tail(updated, E, graph.num_entities);
  out.relations = graph.num_relations == 0
                      ? R
                      : with_tail(matmul(slice_rows(R, 0, graph.num_relations), layer.w_relation), R,
                                  graph.num_relations);
  return out;
}

Tensor triple_project(const Tensor& h_v, const Tensor& h_r, const Tensor& h_u,
                      const TripleProjection& projection) {
  return add_row(matmul(concat_cols({h_v, h_r, h_u}), projection.weight), projection.bias);
}

Tables qual_aggregate(const Tables& tables, const EncoderGraph& graph, const QualLayerParams& layer,
                      const EncoderConfig& config, PassContext ctx) {
  check_tables(tables, graph);
  if (graph.occ_slot.empty()) return tables;
  const auto& E = tables.entities;
  const auto& R = tables.relations;
  const auto h_t = triple_project(gather_rows(E, graph.occ_subject), gather_rows(R, graph.occ_relation),
                                  gather_rows(E, graph.occ_object), layer.projection);
  const auto messages = matmul(compose_rotate(h_t, gather_rows(R, graph.occ_qual_relation)), layer.w_message);
  const std::vector<double> unit;
  const auto summed = index_add_rows(messages, graph.occ_slot, config.degree_norm ? graph.occ_mean_weight : unit,
                                     graph.qualifier_entities.size());
  const auto updated = maybe_dropout(activate(summed, config.activation), config.dropout, ctx);
  return Tables{replace_rows(E, graph.qualifier_entities, updated), R};
}

Tables encode(const Tables& tables, const EncoderGraph& graph, const EncoderConfig& config,
              const EncoderParams& params, PassContext ctx) {
  check_tables(tables, graph);
  auto run_base = [&](Tables t) {
    for (std::size_t l = 0; l < config.base_layers; ++l) t = base_aggregate(t, graph, params.base.at(l), config, ctx);
    return t;
  };
  auto run_qual = [&](Tables t) {
    for (std::size_t l = 0; l < config.qual_layers; ++l) t = qual_aggregate(t, graph, params.qual.at(l), config, ctx);
    return t;
  };
  switch (config.mode) {
    case EncoderMode::kIdentity:
      return tables;
    case EncoderMode::kLayerNormOnly:
      return Tables{layer_norm(tables.entities, params.entity_norm_gain, params.entity_norm_bias),
                    layer_norm(tables.relations, params.relation_norm_gain, params.relation_norm_bias)};
    case EncoderMode::kBaseOnly:
      return run_base(tables);
    case EncoderMode::kSequential:
      return run_qual(run_base(tables));
    case EncoderMode::kParallel: {
      const auto base = run_base(tables);
      const auto qual = run_qual(Tables{tables.entities, base.relations});
      const auto combined = matmul(concat_cols({base.entities, qual.entities}), params.combiner);
      return Tables{maybe_dropout(combined, config.parallel_dropout, ctx), qual.relations};
    }
  }
  throw ConfigError("unknown encoder mode");
}

}  // namespace quad
