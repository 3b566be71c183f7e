#include "quad/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <unordered_set>

#include "quad/errors.hpp"

namespace quad {

namespace {

enum class FactKind { kWrote, kCredited, kAttribute };

struct Fact {
  Statement base;
  QualifierPair primary;
  std::size_t author = 0;
  FactKind kind = FactKind::kAttribute;
};

struct Layout {
  std::size_t attributes = 0;
  std::size_t classes = 0;
  std::size_t sources = 0;
  std::size_t authors = 0;
  std::size_t works = 0;
};

Layout layout_for(const SyntheticConfig& c) {
  Layout l;
  l.attributes = c.relations >= 4 ? c.relations - 4 : 0;
  l.classes = l.attributes == 0
                  ? 0
                  : std::clamp<std::size_t>(3 * l.attributes, 3, std::max<std::size_t>(3, c.entities / 4));
  l.sources = std::max<std::size_t>(2, c.entities / 20);
  const std::size_t used = l.classes + l.sources;
  const std::size_t rest = c.entities > used ? c.entities - used : 0;
  l.authors = rest / 6;
  l.works = rest - 2 * l.authors;
  return l;
}

template <typename T>
T pick(const std::vector<T>& items, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

// Fill order when facts are dropped (first kept) and the order in which
// statements keep their qualifiers (last kept).
int priority(FactKind k) { return k == FactKind::kWrote ? 0 : k == FactKind::kCredited ? 1 : 2; }

}  // namespace

void validate(const SyntheticConfig& c) {
  if (c.qualifier_fraction < 0.0 || c.qualifier_fraction > 1.0) {
    throw ConfigError("qualifier fraction must be in [0, 1]");
  }
  if (c.qualifier_fraction > 0.0 && c.max_qualifiers == 0) {
    throw ConfigError("qualifier fraction > 0 requires max qualifiers >= 1");
  }
  if (c.relations < 4) throw ConfigError("synthetic graphs need at least 4 relations");
  if (c.statements < 10) throw ConfigError("synthetic graphs need at least 10 statements");
  const Layout l = layout_for(c);
  if (l.authors < 2 || l.works < l.authors) throw ConfigError("too few entities for the author/alias/work layout");
}

Dataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  validate(config);
  const Layout layout = layout_for(config);
  std::mt19937_64 rng(seed);
  Dataset data;
  Vocab& vocab = data.vocab;

  const RelationId wrote = vocab.add_relation("wrote");
  const RelationId under_name = vocab.add_relation("under_name");
  const RelationId source = vocab.add_relation("source");
  const RelationId credited = vocab.add_relation("credited_for");
  std::vector<RelationId> attributes;
  for (std::size_t j = 0; j < layout.attributes; ++j)
    attributes.push_back(vocab.add_relation("attribute_" + std::to_string(j)));

  std::vector<EntityId> authors, aliases, works, classes, sources;
  for (std::size_t i = 0; i < layout.authors; ++i) authors.push_back(vocab.add_entity("author_" + std::to_string(i)));
  for (std::size_t i = 0; i < layout.authors; ++i) aliases.push_back(vocab.add_entity("alias_" + std::to_string(i)));
  for (std::size_t i = 0; i < layout.works; ++i) works.push_back(vocab.add_entity("work_" + std::to_string(i)));
  for (std::size_t i = 0; i < layout.classes; ++i) classes.push_back(vocab.add_entity("class_" + std::to_string(i)));
  for (std::size_t i = 0; i < layout.sources; ++i) sources.push_back(vocab.add_entity("source_" + std::to_string(i)));

  // Attribute j draws its value from three classes.
  std::vector<std::vector<EntityId>> attribute_values(layout.attributes);
  for (std::size_t j = 0; j < layout.attributes; ++j)
    for (std::size_t t = 0; t < 3; ++t) attribute_values[j].push_back(classes[(3 * j + t) % layout.classes]);

  std::vector<std::vector<EntityId>> author_value(layout.authors, std::vector<EntityId>(layout.attributes));
  for (auto& row : author_value)
    for (std::size_t j = 0; j < layout.attributes; ++j) row[j] = pick(attribute_values[j], rng);

  std::vector<std::size_t> work_author(layout.works);
  {
    std::uniform_int_distribution<std::size_t> any_author(0, layout.authors - 1);
    for (std::size_t w = 0; w < layout.works; ++w) work_author[w] = w < layout.authors ? w : any_author(rng);
  }

  // Sources citing an author's facts: home[a][0] always, home[a][t] for
  // t >= 1 as optional extra pairs.
  const std::size_t home_count = std::min(std::max<std::size_t>(config.max_qualifiers, 1), layout.sources);
  std::vector<std::vector<EntityId>> home(layout.authors);
  for (auto& h : home) {
    std::vector<EntityId> pool = sources;
    std::shuffle(pool.begin(), pool.end(), rng);
    h.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(home_count));
  }

  std::vector<Fact> facts;
  for (std::size_t w = 0; w < layout.works; ++w) {
    const std::size_t a = work_author[w];
    facts.push_back({Statement{authors[a], wrote, works[w], {}}, QualifierPair{under_name, aliases[a]}, a,
                     FactKind::kWrote});
    facts.push_back({Statement{aliases[a], credited, works[w], {}}, QualifierPair{source, home[a][0]}, a,
                     FactKind::kCredited});
  }
  auto add_attribute_facts = [&](EntityId subject, std::size_t author) {
    for (std::size_t j = 0; j < layout.attributes; ++j) {
      facts.push_back({Statement{subject, attributes[j], author_value[author][j], {}},
                       QualifierPair{source, home[author][0]}, author, FactKind::kAttribute});
    }
  };
  for (std::size_t a = 0; a < layout.authors; ++a) add_attribute_facts(authors[a], a);
  for (std::size_t w = 0; w < layout.works; ++w) add_attribute_facts(works[w], work_author[w]);

  const std::size_t n = config.statements;
  if (facts.size() > n) {
    std::shuffle(facts.begin(), facts.end(), rng);
    std::stable_sort(facts.begin(), facts.end(),
                     [](const Fact& x, const Fact& y) { return priority(x.kind) < priority(y.kind); });
    facts.resize(n);
  }

  const auto qualified_total = static_cast<std::size_t>(std::llround(config.qualifier_fraction * static_cast<double>(n)));
  const std::size_t unqualified_total = n - qualified_total;
  if (unqualified_total > facts.size()) {
    throw ConfigError("cannot build " + std::to_string(n) + " distinct statements with qualifier fraction " +
                      std::to_string(config.qualifier_fraction) + " from " + std::to_string(facts.size()) +
                      " base facts; add entities or qualifiers");
  }

  // Attribute facts lose their qualifiers first, "wrote" facts last.
  std::vector<bool> fact_unqualified(facts.size(), false);
  {
    std::vector<std::size_t> order(facts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return priority(facts[x].kind) > priority(facts[y].kind);
    });
    for (std::size_t i = 0; i < unqualified_total; ++i) fact_unqualified[order[i]] = true;
  }

  std::vector<std::set<std::vector<QualifierPair>>> used(facts.size());
  std::bernoulli_distribution extra_pair(0.25);
  auto draw_qualifiers = [&](const Fact& f) {
    std::vector<QualifierPair> q{f.primary};
    for (std::size_t t = 1; t < config.max_qualifiers; ++t) {
      if (!extra_pair(rng)) continue;
      QualifierPair p{source, home[f.author][t % home_count]};
      if (std::find(q.begin(), q.end(), p) == q.end()) q.push_back(p);
    }
    return q;
  };

  std::vector<Statement> statements;
  std::vector<std::size_t> statement_fact;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    Statement s = facts[i].base;
    if (!fact_unqualified[i]) s.qualifiers = draw_qualifiers(facts[i]);
    used[i].insert(sorted_qualifiers(s));
    statements.push_back(std::move(s));
    statement_fact.push_back(i);
  }

  // Small graphs are padded with copies of non-"wrote" facts citing a
  // randomly drawn source, plus random extra sources.
  std::vector<std::size_t> copyable;
  for (std::size_t i = 0; i < facts.size(); ++i)
    if (facts[i].kind != FactKind::kWrote) copyable.push_back(i);
  std::size_t failures = 0;
  while (statements.size() < n) {
    if (copyable.empty() || config.max_qualifiers == 0 || failures > 50 * n) {
      throw ConfigError("cannot build " + std::to_string(n) + " distinct statements from " +
                        std::to_string(config.entities) + " entities; lower the statement count");
    }
    const std::size_t i = pick(copyable, rng);
    Statement s = facts[i].base;
    s.qualifiers = {QualifierPair{source, pick(sources, rng)}};
    for (std::size_t t = 1; t < config.max_qualifiers; ++t) {
      QualifierPair p{source, pick(sources, rng)};
      if (extra_pair(rng) && std::find(s.qualifiers.begin(), s.qualifiers.end(), p) == s.qualifiers.end())
        s.qualifiers.push_back(p);
    }
    if (!used[i].insert(sorted_qualifiers(s)).second) {
      ++failures;
      continue;
    }
    statements.push_back(std::move(s));
    statement_fact.push_back(i);
  }

  std::vector<std::vector<std::size_t>> group(facts.size());
  for (std::size_t s = 0; s < statements.size(); ++s) group[statement_fact[s]].push_back(s);
  enum Split { kTrain, kValid, kTest };
  std::vector<Split> fact_split(facts.size(), kTrain);
  const auto held_target = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  std::size_t test_count = 0, valid_count = 0;
  auto hold_out = [&](const std::vector<std::size_t>& fact_ids) {
    const bool test_open = test_count < held_target, valid_open = valid_count < held_target;
    Split to = test_open && (!valid_open || test_count <= valid_count) ? kTest : valid_open ? kValid : kTrain;
    if (to == kTrain) return false;
    for (std::size_t i : fact_ids) {
      fact_split[i] = to;
      (to == kTest ? test_count : valid_count) += group[i].size();
    }
    return true;
  };

  // Held-out splits first take every "credited_for" fact of whole aliases
  // (at most half of them), so those are only reachable through the
  // alias's qualifier occurrences; attribute facts fill the remainder.
  std::vector<std::vector<std::size_t>> alias_facts(layout.authors);
  for (std::size_t i = 0; i < facts.size(); ++i)
    if (facts[i].kind == FactKind::kCredited) alias_facts[facts[i].author].push_back(i);
  std::vector<std::size_t> alias_order(layout.authors);
  for (std::size_t a = 0; a < alias_order.size(); ++a) alias_order[a] = a;
  std::shuffle(alias_order.begin(), alias_order.end(), rng);
  std::size_t held_aliases = 0;
  for (std::size_t a : alias_order) {
    if (held_aliases >= layout.authors / 2) break;
    if (alias_facts[a].empty()) continue;
    if (!hold_out(alias_facts[a])) break;
    ++held_aliases;
  }
  std::vector<std::size_t> fillers;
  for (std::size_t i = 0; i < facts.size(); ++i)
    if (facts[i].kind == FactKind::kAttribute) fillers.push_back(i);
  std::shuffle(fillers.begin(), fillers.end(), rng);
  for (std::size_t i : fillers)
    if (!hold_out({i})) break;

  // Every id of a held-out statement must occur in train.
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_set<EntityId> train_entities;
    std::unordered_set<RelationId> train_relations;
    for (std::size_t s = 0; s < statements.size(); ++s) {
      if (fact_split[statement_fact[s]] != kTrain) continue;
      const auto& st = statements[s];
      train_entities.insert({st.subject, st.object});
      train_relations.insert(st.relation);
      for (const auto& q : st.qualifiers) {
        train_entities.insert(q.entity);
        train_relations.insert(q.relation);
      }
    }
    for (std::size_t i = 0; i < facts.size(); ++i) {
      if (fact_split[i] == kTrain) continue;
      bool covered = true;
      for (std::size_t s : group[i]) {
        const auto& st = statements[s];
        covered = covered && train_entities.count(st.subject) && train_entities.count(st.object) &&
                  train_relations.count(st.relation);
        for (const auto& q : st.qualifiers)
          covered = covered && train_entities.count(q.entity) && train_relations.count(q.relation);
      }
      if (!covered) {
        fact_split[i] = kTrain;
        changed = true;
      }
    }
  }

  for (std::size_t s = 0; s < statements.size(); ++s) {
    switch (fact_split[statement_fact[s]]) {
      case kTrain: data.train.push_back(statements[s]); break;
      case kValid: data.valid.push_back(statements[s]); break;
      case kTest: data.test.push_back(statements[s]); break;
    }
  }
  std::shuffle(data.train.begin(), data.train.end(), rng);
  std::shuffle(data.valid.begin(), data.valid.end(), rng);
  std::shuffle(data.test.begin(), data.test.end(), rng);
  return data;
}

}  // namespace quad
