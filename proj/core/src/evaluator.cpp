#include "quad/evaluator.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "quad/errors.hpp"

namespace quad {

namespace {

const std::vector<EntityId> kNoAnswers;

void append_pairs(std::vector<std::int32_t>& key, std::vector<QualifierPair> pairs) {
  std::sort(pairs.begin(), pairs.end());
  for (const auto& p : pairs) {
    key.push_back(p.relation);
    key.push_back(p.entity);
  }
}

void insert_sorted(std::vector<EntityId>& set, EntityId e) {
  auto it = std::lower_bound(set.begin(), set.end(), e);
  if (it == set.end() || *it != e) set.insert(it, e);
}

}  // namespace

FilterLevel parse_filter_level(std::string_view name) {
  if (name == "statement") return FilterLevel::kStatement;
  if (name == "triple") return FilterLevel::kTriple;
  throw ConfigError("unknown filter level '" + std::string(name) + "'");
}

std::string_view filter_level_name(FilterLevel level) {
  return level == FilterLevel::kStatement ? "statement" : "triple";
}

FilterIndex::FilterIndex(const Vocab& vocab, std::span<const Statement> statements, FilterLevel level)
    : vocab_(&vocab), level_(level) {
  for (const auto& s : statements) {
    insert_sorted(answers_[key(s, MaskSlot::object())], s.object);
    insert_sorted(answers_[key(s, MaskSlot::subject())], s.subject);
    for (std::size_t i = 0; i < s.qualifiers.size(); ++i) {
      insert_sorted(answers_[key(s, MaskSlot::qualifier(i))], s.qualifiers[i].entity);
    }
  }
}

std::vector<std::int32_t> FilterIndex::key(const Statement& s, MaskSlot slot) const {
  std::vector<std::int32_t> k;
  switch (slot.kind) {
    case MaskSlot::kObject:
      k = {0, s.subject, s.relation};
      break;
    case MaskSlot::kSubject:
      k = {0, s.object, vocab_->inverse(s.relation)};
      break;
    case MaskSlot::kQualifier: {
      if (slot.index >= s.qualifiers.size()) throw ContractError("qualifier slot out of range");
      k = {1, s.subject, s.relation, s.object, s.qualifiers[slot.index].relation};
      if (level_ == FilterLevel::kStatement) {
        auto rest = s.qualifiers;
        rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(slot.index));
        append_pairs(k, std::move(rest));
      }
      return k;
    }
  }
  if (level_ == FilterLevel::kStatement) append_pairs(k, s.qualifiers);
  return k;
}

const std::vector<EntityId>& FilterIndex::answers(const Statement& statement, MaskSlot slot) const {
  if (vocab_ == nullptr) return kNoAnswers;
  auto it = answers_.find(key(statement, slot));
  return it == answers_.end() ? kNoAnswers : it->second;
}

RankResult rank_query(std::span<const double> scores, EntityId gold, std::span<const EntityId> filtered) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= scores.size()) {
    throw ContractError("gold entity " + std::to_string(gold) + " is not among " + std::to_string(scores.size()) +
                        " scored entities");
  }
  std::vector<std::uint8_t> skip(scores.size(), 0);
  for (EntityId e : filtered) {
    if (e >= 0 && static_cast<std::size_t>(e) < scores.size()) skip[e] = 1;
  }
  const double g = scores[gold];
  std::size_t greater = 0, ties = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (static_cast<EntityId>(j) == gold || skip[j]) continue;
    if (scores[j] > g) ++greater;
    else if (scores[j] == g) ++ties;
  }
  return RankResult{0, gold, 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(ties), g};
}

Metrics compute_metrics(std::span<const RankResult> ranks) {
  if (ranks.empty()) throw ContractError("compute_metrics: no ranked queries");
  Metrics m;
  for (const auto& r : ranks) {
    m.mrr += 1.0 / r.rank;
    m.h1 += r.rank <= 1.0 ? 1.0 : 0.0;
    m.h10 += r.rank <= 10.0 ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.h1 /= n;
  m.h10 /= n;
  m.n_queries = ranks.size();
  return m;
}

Directions parse_directions(std::string_view name) {
  if (name == "both") return Directions::kBoth;
  if (name == "object") return Directions::kObject;
  if (name == "subject") return Directions::kSubject;
  throw ConfigError("unknown direction '" + std::string(name) + "'");
}

std::string_view directions_name(Directions d) {
  switch (d) {
    case Directions::kBoth: return "both";
    case Directions::kObject: return "object";
    case Directions::kSubject: return "subject";
  }
  return "both";
}

std::vector<MaskedQuery> make_queries(std::span<const Statement> statements, Task task, Directions directions) {
  std::vector<MaskedQuery> out;
  for (std::size_t i = 0; i < statements.size(); ++i) {
    if (task == Task::kBase) {
      if (directions != Directions::kSubject) out.push_back({i, MaskSlot::object(), Task::kBase});
      if (directions != Directions::kObject) out.push_back({i, MaskSlot::subject(), Task::kBase});
    } else {
      for (std::size_t q = 0; q < statements[i].qualifiers.size(); ++q)
        out.push_back({i, MaskSlot::qualifier(q), Task::kQual});
    }
  }
  return out;
}

EvalResult evaluate(const ModelParams& params, const ModelConfig& config, const EncoderGraph& graph,
                    const Vocab& vocab, std::span<const Statement> statements, const FilterIndex& filter,
                    const EvalOptions& options) {
  NoGradGuard no_grad;
  EvalResult result;
  result.queries = make_queries(statements, options.task, options.directions);
  if (result.queries.empty()) return result;
  const Tables encoded = encode_tables(params, graph, config);
  const std::size_t n_entities = vocab.num_entities();
  const std::size_t step = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t begin = 0; begin < result.queries.size(); begin += step) {
    const std::span<const MaskedQuery> chunk(result.queries.data() + begin,
                                             std::min(step, result.queries.size() - begin));
    const auto batch = build_batch(chunk, statements, vocab);
    const auto logits = predict_logits(encoded, batch, n_entities, params, config);
    const auto values = logits.values();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto& q = chunk[b];
      const auto& filtered = filter.answers(statements[q.statement], q.slot);
      auto r = rank_query(values.subspan(b * n_entities, n_entities), batch[b].target, filtered);
      r.query = begin + b;
      result.ranks.push_back(r);
    }
  }
  result.metrics = compute_metrics(result.ranks);
  return result;
}

std::string metrics_json(const Metrics& metrics, std::string_view split, Task task, std::string_view direction) {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["mrr"] = metrics.mrr;
  j["h1"] = metrics.h1;
  j["h10"] = metrics.h10;
  j["n_queries"] = metrics.n_queries;
  j["task"] = task_name(task);
  if (!direction.empty()) j["direction"] = direction;
  return j.dump();
}

}  // namespace quad
