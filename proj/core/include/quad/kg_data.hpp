#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace quad {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct QualifierPair {
  RelationId relation = 0;
  EntityId entity = 0;

  auto operator<=>(const QualifierPair&) const = default;
};

// One hyper-relational fact: a base triple and its qualifier pairs.
struct Statement {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  std::vector<QualifierPair> qualifiers;

  bool operator==(const Statement&) const = default;
  std::size_t arity() const { return 3 + 2 * qualifiers.size(); }
};

// Qualifier pairs in canonical (sorted) order.
std::vector<QualifierPair> sorted_qualifiers(const Statement& s);

// Label <-> id maps for entities and relations.
//
// Entity ids are [0, E) followed by the MASK (E) and PAD (E+1) tokens.
// Relation ids are [0, R) forward relations, [R, 2R) their inverses, then
// the self-loop relation (2R), MASK (2R+1) and PAD (2R+2). Special ids move
// when labels are added, so they are only stable once ingestion is done.
class Vocab {
 public:
  EntityId add_entity(std::string_view label);
  RelationId add_relation(std::string_view label);

  std::optional<EntityId> find_entity(std::string_view label) const;
  std::optional<RelationId> find_relation(std::string_view label) const;
  const std::string& entity_label(EntityId id) const;
  // Inverse relations render as "<label>_inverse".
  std::string relation_label(RelationId id) const;

  std::size_t num_entities() const { return entity_labels_.size(); }
  // Forward relations only.
  std::size_t num_relations() const { return relation_labels_.size(); }

  RelationId inverse(RelationId r) const;
  bool is_inverse(RelationId r) const;
  RelationId self_loop() const { return static_cast<RelationId>(2 * num_relations()); }
  RelationId relation_mask() const { return self_loop() + 1; }
  RelationId relation_pad() const { return self_loop() + 2; }
  EntityId entity_mask() const { return static_cast<EntityId>(num_entities()); }
  EntityId entity_pad() const { return entity_mask() + 1; }
  std::size_t entity_rows() const { return num_entities() + 2; }
  std::size_t relation_rows() const { return 2 * num_relations() + 3; }

  // entities.tsv and relations.tsv in `dir`, one "label<TAB>id" line per forward id.
  void save(const std::filesystem::path& dir) const;
  static Vocab load(const std::filesystem::path& dir);
  std::uint64_t fingerprint() const;

  bool operator==(const Vocab& other) const {
    return entity_labels_ == other.entity_labels_ && relation_labels_ == other.relation_labels_;
  }

 private:
  std::vector<std::string> entity_labels_;
  std::vector<std::string> relation_labels_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
};

struct ParseReport {
  std::size_t lines = 0;
  std::size_t duplicate_qualifiers = 0;
};

// One statement per line: subject,relation,object[,qual_relation,qual_entity]*.
// Blank lines are skipped; unseen labels extend `vocab`; exact duplicate
// qualifier pairs within a statement are collapsed.
std::vector<Statement> parse_statements(std::istream& in, Vocab& vocab,
                                        const std::string& source_name = "<stream>",
                                        ParseReport* report = nullptr);
std::vector<Statement> parse_statements(const std::filesystem::path& path, Vocab& vocab,
                                        ParseReport* report = nullptr);
void write_statements(std::ostream& out, std::span<const Statement> statements, const Vocab& vocab);
void write_statements(const std::filesystem::path& path, std::span<const Statement> statements,
                      const Vocab& vocab);

// The input followed by (object, inverse(relation), subject, qualifiers) for
// every input statement.
std::vector<Statement> add_inverses(const Vocab& vocab, std::span<const Statement> statements);

struct DatasetStats {
  std::size_t statements = 0;
  std::size_t entities = 0;
  std::size_t relations = 0;
  double qualifier_fraction = 0.0;
  std::size_t max_qualifiers = 0;
  // arity (3 + 2 * qualifier pairs) -> statement count
  std::map<std::size_t, std::size_t> arity_histogram;
};

// Entities and relations are counted as the distinct ids that occur in any
// position of the given statements.
DatasetStats dataset_stats(std::span<const Statement> statements);
std::string stats_json(const DatasetStats& stats);

struct Dataset {
  Vocab vocab;
  std::vector<Statement> train;
  std::vector<Statement> valid;
  std::vector<Statement> test;

  std::size_t max_qualifiers() const;
  std::vector<Statement> all() const;
};

// Reads train.txt, valid.txt and test.txt from `dir` (or `dir`/statements).
Dataset load_dataset(const std::filesystem::path& dir, ParseReport* report = nullptr);
// As above, with ids assigned on top of `vocab` (e.g. one saved by a run).
Dataset load_dataset(const std::filesystem::path& dir, Vocab vocab, ParseReport* report = nullptr);
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

}  // namespace quad
