#include "quad/kg_data.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <utility>

#include "quad/errors.hpp"

namespace quad {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::uint64_t fnv1a(std::uint64_t hash, std::string_view bytes) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

void read_vocab_file(const std::filesystem::path& path,
                     const std::function<std::int32_t(std::string_view)>& add) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocabulary file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::int32_t expected = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), lineno, "expected label<TAB>id");
    const std::string label(line.substr(0, tab));
    std::int32_t id = -1;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "invalid id");
    }
    if (id != expected) throw ParseError(path.string(), lineno, "ids must be dense and ordered");
    if (add(label) != id) throw ParseError(path.string(), lineno, "duplicate label '" + label + "'");
    ++expected;
  }
}

}  // namespace

std::vector<QualifierPair> sorted_qualifiers(const Statement& s) {
  auto q = s.qualifiers;
  std::sort(q.begin(), q.end());
  return q;
}

EntityId Vocab::add_entity(std::string_view label) {
  const std::string key(label);
  if (auto it = entity_ids_.find(key); it != entity_ids_.end()) return it->second;
  const auto id = static_cast<EntityId>(entity_labels_.size());
  entity_labels_.push_back(key);
  entity_ids_.emplace(key, id);
  return id;
}

RelationId Vocab::add_relation(std::string_view label) {
  const std::string key(label);
  if (auto it = relation_ids_.find(key); it != relation_ids_.end()) return it->second;
  const auto id = static_cast<RelationId>(relation_labels_.size());
  relation_labels_.push_back(key);
  relation_ids_.emplace(key, id);
  return id;
}

std::optional<EntityId> Vocab::find_entity(std::string_view label) const {
  if (auto it = entity_ids_.find(std::string(label)); it != entity_ids_.end()) return it->second;
  return std::nullopt;
}

std::optional<RelationId> Vocab::find_relation(std::string_view label) const {
  if (auto it = relation_ids_.find(std::string(label)); it != relation_ids_.end()) return it->second;
  return std::nullopt;
}

const std::string& Vocab::entity_label(EntityId id) const {
  static const std::string kMask = "[MASK]";
  static const std::string kPad = "[PAD]";
  if (id == entity_mask()) return kMask;
  if (id == entity_pad()) return kPad;
  if (id < 0 || static_cast<std::size_t>(id) >= entity_labels_.size()) {
    throw ContractError("entity id " + std::to_string(id) + " out of range");
  }
  return entity_labels_[id];
}

std::string Vocab::relation_label(RelationId id) const {
  const auto r = static_cast<RelationId>(num_relations());
  if (id >= 0 && id < r) return relation_labels_[id];
  if (id >= r && id < 2 * r) return relation_labels_[id - r] + "_inverse";
  if (id == self_loop()) return "[SELF]";
  if (id == relation_mask()) return "[MASK]";
  if (id == relation_pad()) return "[PAD]";
  throw ContractError("relation id " + std::to_string(id) + " out of range");
}

RelationId Vocab::inverse(RelationId r) const {
  const auto n = static_cast<RelationId>(num_relations());
  if (r < 0 || r >= 2 * n) {
    throw ContractError("relation id " + std::to_string(r) + " has no inverse");
  }
  return r < n ? r + n : r - n;
}

bool Vocab::is_inverse(RelationId r) const {
  const auto n = static_cast<RelationId>(num_relations());
  return r >= n && r < 2 * n;
}

void Vocab::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream ent(dir / "entities.tsv");
  for (std::size_t i = 0; i < entity_labels_.size(); ++i) ent << entity_labels_[i] << '\t' << i << '\n';
  std::ofstream rel(dir / "relations.tsv");
  for (std::size_t i = 0; i < relation_labels_.size(); ++i) rel << relation_labels_[i] << '\t' << i << '\n';
  if (!ent || !rel) throw std::runtime_error("failed to write vocabulary to " + dir.string());
}

Vocab Vocab::load(const std::filesystem::path& dir) {
  Vocab v;
  read_vocab_file(dir / "entities.tsv", [&](std::string_view l) { return v.add_entity(l); });
  read_vocab_file(dir / "relations.tsv", [&](std::string_view l) { return v.add_relation(l); });
  return v;
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& l : entity_labels_) h = fnv1a(fnv1a(h, l), "\n");
  h = fnv1a(h, "\x1e");
  for (const auto& l : relation_labels_) h = fnv1a(fnv1a(h, l), "\n");
  return h;
}

std::vector<Statement> parse_statements(std::istream& in, Vocab& vocab,
                                        const std::string& source_name, ParseReport* report) {
  std::vector<Statement> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto fields = split_commas(body);
    if (fields.size() < 3) throw ParseError(source_name, lineno, "expected at least 3 fields");
    if ((fields.size() - 3) % 2 != 0) {
      throw ParseError(source_name, lineno, "qualifier tail has odd length");
    }
    for (auto f : fields) {
      if (f.empty()) throw ParseError(source_name, lineno, "empty label");
    }
    Statement s;
    s.subject = vocab.add_entity(fields[0]);
    s.relation = vocab.add_relation(fields[1]);
    s.object = vocab.add_entity(fields[2]);
    for (std::size_t i = 3; i < fields.size(); i += 2) {
      QualifierPair q{vocab.add_relation(fields[i]), vocab.add_entity(fields[i + 1])};
      if (std::find(s.qualifiers.begin(), s.qualifiers.end(), q) != s.qualifiers.end()) {
        std::clog << "warning: " << source_name << ":" << lineno
                  << ": duplicate qualifier pair collapsed\n";
        if (report) ++report->duplicate_qualifiers;
        continue;
      }
      s.qualifiers.push_back(q);
    }
    out.push_back(std::move(s));
  }
  if (report) report->lines += lineno;
  return out;
}

std::vector<Statement> parse_statements(const std::filesystem::path& path, Vocab& vocab,
                                        ParseReport* report) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open statement file " + path.string());
  return parse_statements(in, vocab, path.string(), report);
}

void write_statements(std::ostream& out, std::span<const Statement> statements, const Vocab& vocab) {
  for (const auto& s : statements) {
    out << vocab.entity_label(s.subject) << ',' << vocab.relation_label(s.relation) << ','
        << vocab.entity_label(s.object);
    for (const auto& q : s.qualifiers) {
      out << ',' << vocab.relation_label(q.relation) << ',' << vocab.entity_label(q.entity);
    }
    out << '\n';
  }
}

void write_statements(const std::filesystem::path& path, std::span<const Statement> statements,
                      const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_statements(out, statements, vocab);
}

std::vector<Statement> add_inverses(const Vocab& vocab, std::span<const Statement> statements) {
  std::vector<Statement> out(statements.begin(), statements.end());
  out.reserve(2 * statements.size());
  for (const auto& s : statements) {
    out.push_back(Statement{s.object, vocab.inverse(s.relation), s.subject, s.qualifiers});
  }
  return out;
}

DatasetStats dataset_stats(std::span<const Statement> statements) {
  DatasetStats stats;
  std::set<EntityId> entities;
  std::set<RelationId> relations;
  std::size_t qualified = 0;
  for (const auto& s : statements) {
    entities.insert(s.subject);
    entities.insert(s.object);
    relations.insert(s.relation);
    for (const auto& q : s.qualifiers) {
      entities.insert(q.entity);
      relations.insert(q.relation);
    }
    if (!s.qualifiers.empty()) ++qualified;
    stats.max_qualifiers = std::max(stats.max_qualifiers, s.qualifiers.size());
    ++stats.arity_histogram[s.arity()];
  }
  stats.statements = statements.size();
  stats.entities = entities.size();
  stats.relations = relations.size();
  stats.qualifier_fraction =
      statements.empty() ? 0.0 : static_cast<double>(qualified) / static_cast<double>(statements.size());
  return stats;
}

std::string stats_json(const DatasetStats& stats) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [arity, count] : stats.arity_histogram) hist[std::to_string(arity)] = count;
  nlohmann::json j{{"statements", stats.statements},
                   {"entities", stats.entities},
                   {"relations", stats.relations},
                   {"qualifier_fraction", stats.qualifier_fraction},
                   {"max_qualifiers", stats.max_qualifiers},
                   {"arity_histogram", hist}};
  return j.dump();
}

std::size_t Dataset::max_qualifiers() const {
  std::size_t m = 0;
  for (const auto* split : {&train, &valid, &test})
    for (const auto& s : *split) m = std::max(m, s.qualifiers.size());
  return m;
}

std::vector<Statement> Dataset::all() const {
  std::vector<Statement> out;
  out.reserve(train.size() + valid.size() + test.size());
  for (const auto* split : {&train, &valid, &test}) out.insert(out.end(), split->begin(), split->end());
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir, ParseReport* report) {
  return load_dataset(dir, Vocab{}, report);
}

Dataset load_dataset(const std::filesystem::path& dir, Vocab vocab, ParseReport* report) {
  auto base = dir;
  if (!std::filesystem::exists(base / "train.txt") &&
      std::filesystem::exists(base / "statements" / "train.txt")) {
    base = base / "statements";
  }
  if (!std::filesystem::exists(base / "train.txt")) {
    throw ConfigError("no train.txt under " + dir.string());
  }
  Dataset data;
  data.vocab = std::move(vocab);
  data.train = parse_statements(base / "train.txt", data.vocab, report);
  for (auto [name, split] : {std::pair{"valid.txt", &data.valid}, std::pair{"test.txt", &data.test}}) {
    if (std::filesystem::exists(base / name)) *split = parse_statements(base / name, data.vocab, report);
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_statements(dir / "train.txt", data.train, data.vocab);
  write_statements(dir / "valid.txt", data.valid, data.vocab);
  write_statements(dir / "test.txt", data.test, data.vocab);
}

}  // namespace quad
