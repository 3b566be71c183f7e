#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quad/kg_data.hpp"
#include "quad/model.hpp"

namespace quad {

enum class FilterLevel {
  // Keys carry the qualifier multiset of the query statement.
  kStatement,
  // Keys ignore qualifiers.
  kTriple,
};

FilterLevel parse_filter_level(std::string_view name);
std::string_view filter_level_name(FilterLevel level);

// Known true answers for every masked query over a set of forward statements.
//
// Base keys are (subject, relation, sorted qualifiers) -> objects, with the
// inverse key (object, inverse relation, sorted qualifiers) -> subject
// included for head prediction. Qualifier keys are (subject, relation,
// object, qualifier relation, sorted remaining pairs) -> qualifier entities.
class FilterIndex {
 public:
  FilterIndex() = default;
  FilterIndex(const Vocab& vocab, std::span<const Statement> statements, FilterLevel level = FilterLevel::kStatement);

  // Sorted answers for the query; empty if the key was never seen.
  const std::vector<EntityId>& answers(const Statement& statement, MaskSlot slot) const;
  FilterLevel level() const { return level_; }
  std::size_t size() const { return answers_.size(); }

 private:
  std::vector<std::int32_t> key(const Statement& statement, MaskSlot slot) const;

  const Vocab* vocab_ = nullptr;
  FilterLevel level_ = FilterLevel::kStatement;
  std::map<std::vector<std::int32_t>, std::vector<EntityId>> answers_;
};

struct RankResult {
  std::size_t query = 0;
  EntityId gold = 0;
  double rank = 1.0;
  double gold_score = 0.0;
};

// Filtered rank of `gold` among scores[0, n): candidates in `filtered`
// other than gold are skipped; ties count half.
RankResult rank_query(std::span<const double> scores, EntityId gold, std::span<const EntityId> filtered);

struct Metrics {
  double mrr = 0.0;
  double h1 = 0.0;
  double h10 = 0.0;
  std::size_t n_queries = 0;
};

Metrics compute_metrics(std::span<const RankResult> ranks);

enum class Directions { kBoth, kObject, kSubject };

Directions parse_directions(std::string_view name);
std::string_view directions_name(Directions d);

// Base queries mask objects and/or subjects; qualifier queries mask every
// qualifier entity of every statement.
std::vector<MaskedQuery> make_queries(std::span<const Statement> statements, Task task,
                                      Directions directions = Directions::kBoth);

struct EvalOptions {
  Task task = Task::kBase;
  Directions directions = Directions::kBoth;
  std::size_t batch_size = 256;
};

struct EvalResult {
  Metrics metrics;
  std::vector<MaskedQuery> queries;
  std::vector<RankResult> ranks;
};

// Evaluation-mode forward passes over `statements` with the encoder run on
// `graph` once.
EvalResult evaluate(const ModelParams& params, const ModelConfig& config, const EncoderGraph& graph,
                    const Vocab& vocab, std::span<const Statement> statements, const FilterIndex& filter,
                    const EvalOptions& options = {});

std::string metrics_json(const Metrics& metrics, std::string_view split, Task task,
                         std::string_view direction = {});

}  // namespace quad
