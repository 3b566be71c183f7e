#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "quad/errors.hpp"
#include "quad/evaluator.hpp"
#include "quad/kg_data.hpp"
#include "quad/synthetic.hpp"
#include "toys.hpp"

using namespace quad;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("quad_kg_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string serialize(std::span<const Statement> statements, const Vocab& vocab) {
  std::ostringstream out;
  write_statements(out, statements, vocab);
  return out.str();
}

}  // namespace

TEST_SUITE("kg_data") {
  TEST_CASE("parse the pseudonym statement") {
    Vocab vocab;
    const auto s = toys::parse("StephenKing,AuthorOf,TheRunningMan,UnderPseudonym,RichardBachman\n", vocab);
    REQUIRE(s.size() == 1);
    REQUIRE(s[0].qualifiers.size() == 1);
    CHECK(vocab.entity_label(s[0].subject) == "StephenKing");
    CHECK(vocab.relation_label(s[0].relation) == "AuthorOf");
    CHECK(vocab.entity_label(s[0].object) == "TheRunningMan");
    CHECK(vocab.relation_label(s[0].qualifiers[0].relation) == "UnderPseudonym");
    CHECK(vocab.entity_label(s[0].qualifiers[0].entity) == "RichardBachman");
    CHECK(s[0].arity() == 5);
  }

  TEST_CASE("parse a plain triple and skip blank lines") {
    Vocab vocab;
    const auto s = toys::parse("\na,r,b\n  \n", vocab);
    REQUIRE(s.size() == 1);
    CHECK(s[0].qualifiers.empty());
  }

  TEST_CASE("parse errors carry line numbers") {
    Vocab vocab;
    try {
      toys::parse("a,r,b\na,r,b,q\n", vocab);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    try {
      toys::parse("a,r\n", vocab);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 1);
    }
    CHECK_THROWS_AS(toys::parse("a,,b\n", vocab), ParseError);
  }

  TEST_CASE("duplicate qualifier pairs collapse") {
    Vocab vocab;
    std::istringstream in("a,r,b,q,c,q,c,q,d\n");
    ParseReport report;
    const auto s = parse_statements(in, vocab, "<test>", &report);
    CHECK(s[0].qualifiers.size() == 2);
    CHECK(report.duplicate_qualifiers == 1);
  }

  TEST_CASE("parse, write, parse round-trips") {
    Vocab vocab;
    const auto first = toys::parse(toys::kFigureOne, vocab);
    const auto text = serialize(first, vocab);
    Vocab again;
    const auto second = toys::parse(text, again);
    CHECK(first == second);
    CHECK(vocab == again);
    CHECK(serialize(second, again) == text);
  }

  TEST_CASE("vocabulary ids and special tokens") {
    Vocab vocab;
    toys::parse(toys::kFigureOne, vocab);
    const auto E = static_cast<EntityId>(vocab.num_entities());
    const auto R = static_cast<RelationId>(vocab.num_relations());
    CHECK(vocab.entity_mask() == E);
    CHECK(vocab.entity_pad() == E + 1);
    CHECK(vocab.self_loop() == 2 * R);
    CHECK(vocab.relation_mask() == 2 * R + 1);
    CHECK(vocab.relation_pad() == 2 * R + 2);
    for (RelationId r = 0; r < R; ++r) {
      CHECK(vocab.inverse(r) == r + R);
      CHECK(vocab.inverse(vocab.inverse(r)) == r);
      CHECK(vocab.is_inverse(vocab.inverse(r)));
      CHECK(vocab.relation_label(vocab.inverse(r)) == vocab.relation_label(r) + "_inverse");
    }
    for (EntityId e = 0; e < E; ++e) CHECK(*vocab.find_entity(vocab.entity_label(e)) == e);
    CHECK_FALSE(vocab.find_entity("nobody").has_value());
  }

  TEST_CASE("vocabulary save and load preserve ids") {
    Vocab vocab;
    toys::parse(toys::kFigureOne, vocab);
    const auto dir = scratch_dir("vocab");
    vocab.save(dir);
    const auto loaded = Vocab::load(dir);
    CHECK(loaded == vocab);
    CHECK(loaded.fingerprint() == vocab.fingerprint());
    std::ifstream ent(dir / "entities.tsv");
    std::string line;
    std::getline(ent, line);
    CHECK(line == "StephenKing\t0");
  }

  TEST_CASE("inverse augmentation doubles statements and relations") {
    Vocab vocab;
    const auto one = toys::parse("a,r,b,q,c\n", vocab);
    const auto both = add_inverses(vocab, one);
    REQUIRE(both.size() == 2);
    CHECK(both[1].subject == one[0].object);
    CHECK(both[1].object == one[0].subject);
    CHECK(both[1].relation == vocab.inverse(one[0].relation));
    CHECK(both[1].qualifiers == one[0].qualifiers);

    const auto statements = toys::parse(toys::kFigureOne, vocab);
    const auto augmented = add_inverses(vocab, statements);
    CHECK(augmented.size() == 2 * statements.size());
    std::set<RelationId> base_rels, aug_rels;
    for (const auto& s : statements) base_rels.insert(s.relation);
    for (const auto& s : augmented) aug_rels.insert(s.relation);
    CHECK(aug_rels.size() == 2 * base_rels.size());
  }

  TEST_CASE("stats on plain, mixed and qualified sets") {
    Vocab vocab;
    const auto plain = toys::parse("a,r,b\nb,r,c\n", vocab);
    CHECK(dataset_stats(plain).qualifier_fraction == 0.0);
    CHECK(dataset_stats({}).statements == 0);

    Rng rng(11);
    std::vector<Statement> mixed;
    std::size_t qualified = 0;
    for (int i = 0; i < 10; ++i) {
      Statement s{static_cast<EntityId>(rng() % 5), 0, static_cast<EntityId>(rng() % 5), {}};
      const auto n = rng() % 3;
      for (std::size_t k = 0; k < n; ++k) s.qualifiers.push_back({1, static_cast<EntityId>(k)});
      qualified += n > 0;
      mixed.push_back(s);
    }
    const auto stats = dataset_stats(mixed);
    CHECK(stats.statements == 10);
    CHECK(stats.qualifier_fraction == static_cast<double>(qualified) / 10.0);
    std::size_t total = 0;
    for (auto [arity, count] : stats.arity_histogram) total += count;
    CHECK(total == 10);

    Vocab fig;
    const auto fig_stats = dataset_stats(toys::parse(toys::kFigureOne, fig));
    CHECK(fig_stats.entities == fig.num_entities());
    CHECK(fig_stats.relations == fig.num_relations());
    CHECK(fig_stats.max_qualifiers == 2);
    CHECK(fig_stats.arity_histogram.at(3) == 2);
    CHECK(fig_stats.arity_histogram.at(5) == 1);
    CHECK(fig_stats.arity_histogram.at(7) == 1);
  }

  TEST_CASE("dataset save and load round-trip") {
    const auto data = generate_synthetic({}, 3);
    const auto dir = scratch_dir("dataset");
    save_dataset(data, dir);
    const auto loaded = load_dataset(dir);
    CHECK(serialize(loaded.train, loaded.vocab) == serialize(data.train, data.vocab));
    CHECK(serialize(loaded.test, loaded.vocab) == serialize(data.test, data.vocab));
    const auto same_ids = load_dataset(dir, data.vocab);
    CHECK(same_ids.vocab == data.vocab);
    CHECK(same_ids.train == data.train);
    CHECK_THROWS_AS(load_dataset(dir / "missing"), ConfigError);
  }

  TEST_CASE("synthetic generation is deterministic per seed") {
    SyntheticConfig config;
    const auto a = generate_synthetic(config, 5), b = generate_synthetic(config, 5), c = generate_synthetic(config, 6);
    CHECK(serialize(a.train, a.vocab) == serialize(b.train, b.vocab));
    CHECK(serialize(a.valid, a.vocab) == serialize(b.valid, b.vocab));
    CHECK(serialize(a.test, a.vocab) == serialize(b.test, b.vocab));
    CHECK(serialize(a.train, a.vocab) != serialize(c.train, c.vocab));
  }

  TEST_CASE("synthetic qualifier fraction zero gives plain triples") {
    SyntheticConfig config;
    config.qualifier_fraction = 0.0;
    config.statements = 150;
    const auto data = generate_synthetic(config, 1);
    for (const auto& s : data.all()) CHECK(s.qualifiers.empty());
  }

  TEST_CASE("synthetic qualifier fraction one qualifies everything") {
    const auto data = generate_synthetic({}, 1);
    const auto all = data.all();
    CHECK(dataset_stats(all).qualifier_fraction == 1.0);
    CHECK(all.size() == 400);
  }

  TEST_CASE("synthetic splits are disjoint and covered by train") {
    for (std::uint64_t seed : {1, 2, 3}) {
      SyntheticConfig config;
      config.entities = 120;
      config.statements = 1000;
      const auto data = generate_synthetic(config, seed);
      CHECK(data.train.size() + data.valid.size() + data.test.size() == 1000);
      CHECK(data.test.size() >= 90);
      CHECK(data.valid.size() >= 90);
      std::set<EntityId> ents;
      std::set<RelationId> rels;
      for (const auto& s : data.train) {
        ents.insert({s.subject, s.object});
        rels.insert(s.relation);
        for (const auto& q : s.qualifiers) {
          ents.insert(q.entity);
          rels.insert(q.relation);
        }
      }
      for (const auto* split : {&data.valid, &data.test}) {
        for (const auto& s : *split) {
          CHECK(std::find(data.train.begin(), data.train.end(), s) == data.train.end());
          CHECK(ents.count(s.subject));
          CHECK(ents.count(s.object));
          CHECK(rels.count(s.relation));
          for (const auto& q : s.qualifiers) {
            CHECK(ents.count(q.entity));
            CHECK(rels.count(q.relation));
          }
        }
      }
    }
  }

  TEST_CASE("synthetic held-out aliases are linked to works only through qualifiers") {
    const auto data = generate_synthetic({}, 1);
    const auto credited = *data.vocab.find_relation("credited_for");
    const auto under_name = *data.vocab.find_relation("under_name");
    std::size_t held_credits = 0;
    for (const auto& s : data.test) {
      if (s.relation != credited) continue;
      ++held_credits;
      bool as_qualifier = false, as_subject = false;
      for (const auto& t : data.train) {
        for (const auto& q : t.qualifiers) as_qualifier |= q.relation == under_name && q.entity == s.subject;
        as_subject |= t.subject == s.subject && t.relation == credited;
      }
      CHECK(as_qualifier);
      CHECK_FALSE(as_subject);
    }
    CHECK(held_credits > 0);
  }

  TEST_CASE("synthetic filter sets match a brute-force scan") {
    const auto data = generate_synthetic({}, 2);
    const auto all = data.all();
    const FilterIndex index(data.vocab, all);
    auto same_key = [](const Statement& a, const Statement& b) {
      return sorted_qualifiers(a) == sorted_qualifiers(b);
    };
    for (const auto& s : data.test) {
      std::set<EntityId> objects, subjects;
      for (const auto& t : all) {
        if (t.subject == s.subject && t.relation == s.relation && same_key(s, t)) objects.insert(t.object);
        if (t.object == s.object && t.relation == s.relation && same_key(s, t)) subjects.insert(t.subject);
      }
      const auto& o = index.answers(s, MaskSlot::object());
      const auto& h = index.answers(s, MaskSlot::subject());
      CHECK(std::vector<EntityId>(objects.begin(), objects.end()) == o);
      CHECK(std::vector<EntityId>(subjects.begin(), subjects.end()) == h);
    }
  }

  TEST_CASE("synthetic configuration errors") {
    SyntheticConfig bad;
    bad.max_qualifiers = 0;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = {};
    bad.qualifier_fraction = 1.5;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = {};
    bad.relations = 3;
    CHECK_THROWS_AS(generate_synthetic(bad, 1), ConfigError);
    bad = {};
    bad.entities = 5;
    CHECK_THROWS_AS(generate_synthetic(bad, 1), ConfigError);
  }
}
