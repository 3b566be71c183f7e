#include <doctest.h>

#include <algorithm>
#include <nlohmann/json.hpp>
#include <random>

#include "oracles.hpp"
#include "quad/errors.hpp"
#include "quad/evaluator.hpp"
#include "quad/synthetic.hpp"
#include "toys.hpp"

using namespace quad;

TEST_SUITE("evaluator") {
  TEST_CASE("filter keys") {
    Vocab vocab;
    const auto s = toys::parse(
        "a,r,b,q,x\n"
        "a,r,c,q,x\n"
        "a,r,d,q,y\n"
        "a,r,e\n",
        vocab);
    const FilterIndex index(vocab, s);
    const auto id = [&](const char* l) { return *vocab.find_entity(l); };
    CHECK(index.answers(s[0], MaskSlot::object()) == std::vector<EntityId>{id("b"), id("c")});
    CHECK(index.answers(s[2], MaskSlot::object()) == std::vector<EntityId>{id("d")});
    CHECK(index.answers(s[3], MaskSlot::object()) == std::vector<EntityId>{id("e")});
    CHECK(index.answers(s[0], MaskSlot::subject()) == std::vector<EntityId>{id("a")});

    const FilterIndex triples(vocab, s, FilterLevel::kTriple);
    CHECK(triples.answers(s[0], MaskSlot::object()) ==
          std::vector<EntityId>{id("b"), id("c"), id("d"), id("e")});
  }

  TEST_CASE("qualifier filter keys") {
    Vocab vocab;
    const auto s = toys::parse(
        "a,r,b,q,x,p,z\n"
        "a,r,b,p,z,q,y\n"
        "a,r,b,q,w\n",
        vocab);
    const FilterIndex index(vocab, s);
    const auto id = [&](const char* l) { return *vocab.find_entity(l); };
    CHECK(index.answers(s[0], MaskSlot::qualifier(0)) == std::vector<EntityId>{id("x"), id("y")});
    CHECK(index.answers(s[2], MaskSlot::qualifier(0)) == std::vector<EntityId>{id("w")});
    const FilterIndex triples(vocab, s, FilterLevel::kTriple);
    std::vector<EntityId> any_context{id("w"), id("x"), id("y")};
    std::sort(any_context.begin(), any_context.end());
    CHECK(triples.answers(s[2], MaskSlot::qualifier(0)) == any_context);
    Statement unseen = s[0];
    unseen.subject = id("z");
    CHECK(index.answers(unseen, MaskSlot::object()).empty());
  }

  TEST_CASE("every gold answer is in its own filter set") {
    const auto data = generate_synthetic({}, 7);
    const auto all = data.all();
    for (auto level : {FilterLevel::kStatement, FilterLevel::kTriple}) {
      const FilterIndex index(data.vocab, all, level);
      for (const auto& s : all) {
        const auto& o = index.answers(s, MaskSlot::object());
        CHECK(std::binary_search(o.begin(), o.end(), s.object));
        const auto& h = index.answers(s, MaskSlot::subject());
        CHECK(std::binary_search(h.begin(), h.end(), s.subject));
        for (std::size_t q = 0; q < s.qualifiers.size(); ++q) {
          const auto& a = index.answers(s, MaskSlot::qualifier(q));
          CHECK(std::binary_search(a.begin(), a.end(), s.qualifiers[q].entity));
        }
      }
    }
  }

  TEST_CASE("rank examples") {
    const std::vector<double> scores{0.1, 0.9, 0.3, 0.2};
    CHECK(rank_query(scores, 1, {}).rank == 1.0);
    CHECK(rank_query(scores, 0, {}).rank == 4.0);
    const std::vector<EntityId> filtered{1, 2};
    CHECK(rank_query(scores, 0, filtered).rank == 2.0);
    const std::vector<double> ties{0.5, 0.5, 0.5, 0.9};
    CHECK(rank_query(ties, 0, {}).rank == 3.0);
    CHECK(rank_query(scores, 2, filtered).gold_score == 0.3);
    CHECK_THROWS_AS(rank_query(scores, 4, {}), ContractError);
  }

  TEST_CASE("ranks match a sort-based oracle on random instances") {
    Rng rng(71);
    std::uniform_int_distribution<int> coarse(0, 6);
    for (int trial = 0; trial < 2000; ++trial) {
      const std::size_t n = 2 + rng() % 40;
      std::vector<double> scores(n);
      // Coarse values make ties frequent.
      for (double& v : scores) v = trial % 2 == 0 ? coarse(rng) / 3.0 : std::uniform_real_distribution<>(-1, 1)(rng);
      const auto gold = static_cast<EntityId>(rng() % n);
      std::vector<EntityId> filtered{gold};
      for (std::size_t k = rng() % n; k > 0; --k) filtered.push_back(static_cast<EntityId>(rng() % n));
      std::sort(filtered.begin(), filtered.end());
      filtered.erase(std::unique(filtered.begin(), filtered.end()), filtered.end());
      const auto r = rank_query(scores, gold, filtered);
      REQUIRE(r.rank == oracle::sorted_rank(scores, gold, filtered));
      CHECK(r.rank >= 1.0);
      CHECK(r.rank <= static_cast<double>(n - filtered.size() + 1));
      CHECK(r.gold_score == scores[gold]);
    }
  }

  TEST_CASE("adding a filtered candidate leaves the rank unchanged") {
    Rng rng(72);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> scores(10);
      for (double& v : scores) v = std::uniform_real_distribution<>(-1, 1)(rng);
      const std::vector<EntityId> filtered{3, 7};
      const auto base = rank_query(scores, 0, filtered).rank;
      scores[7] = std::uniform_real_distribution<>(-5, 5)(rng);
      CHECK(rank_query(scores, 0, filtered).rank == base);
    }
  }

  TEST_CASE("metrics examples") {
    const std::vector<RankResult> perfect(4, RankResult{0, 0, 1.0, 0.0});
    const auto m = compute_metrics(perfect);
    CHECK(m.mrr == 1.0);
    CHECK(m.h1 == 1.0);
    CHECK(m.h10 == 1.0);
    CHECK(m.n_queries == 4);
    const std::vector<RankResult> mixed{{0, 0, 1.0, 0.0}, {1, 0, 2.0, 0.0}, {2, 0, 4.0, 0.0}};
    const auto x = compute_metrics(mixed);
    CHECK(x.mrr == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
    CHECK(x.h1 == doctest::Approx(1.0 / 3.0));
    CHECK(x.h10 == 1.0);
    CHECK_THROWS_AS(compute_metrics({}), ContractError);

    Rng rng(73);
    std::vector<RankResult> random;
    for (int i = 0; i < 100; ++i) random.push_back({0, 0, 1.0 + static_cast<double>(rng() % 30), 0.0});
    const auto r = compute_metrics(random);
    CHECK(r.mrr > 0.0);
    CHECK(r.mrr <= 1.0);
    CHECK(r.h1 <= r.h10);
    CHECK(r.h10 <= 1.0);
  }

  TEST_CASE("query construction") {
    Vocab vocab;
    const auto s = toys::parse(toys::kFigureOne, vocab);
    CHECK(make_queries(s, Task::kBase).size() == 8);
    CHECK(make_queries(s, Task::kBase, Directions::kObject).size() == 4);
    CHECK(make_queries(s, Task::kBase, Directions::kSubject).size() == 4);
    CHECK(make_queries(s, Task::kQual).size() == 3);
    CHECK(parse_directions("subject") == Directions::kSubject);
    CHECK_THROWS_AS(parse_directions("sideways"), ConfigError);
    CHECK_THROWS_AS(parse_filter_level("quad"), ConfigError);
  }

  TEST_CASE("evaluate scores every query through the model") {
    Vocab vocab;
    const auto s = toys::parse(toys::kFigureOne, vocab);
    const auto config = toys::tiny_model_config();
    Rng rng(74);
    const auto params = init_model(config, vocab, 2, rng);
    const auto graph = build_encoder_graph(vocab, s);
    const FilterIndex filter(vocab, s);
    const auto result = evaluate(params, config, graph, vocab, s, filter);
    REQUIRE(result.ranks.size() == 8);
    // Batch size does not change any rank.
    EvalOptions one_at_a_time;
    one_at_a_time.batch_size = 1;
    const auto again = evaluate(params, config, graph, vocab, s, filter, one_at_a_time);
    for (std::size_t i = 0; i < 8; ++i) CHECK(again.ranks[i].rank == result.ranks[i].rank);

    // Recompute one rank directly from the logits.
    const auto encoded = encode_tables(params, graph, config);
    const auto batch = build_batch(std::span(result.queries.data(), 1), s, vocab);
    const auto logits = oracle::to_vec(predict_logits(encoded, batch, vocab.num_entities(), params, config));
    const auto& filtered = filter.answers(s[0], result.queries[0].slot);
    CHECK(result.ranks[0].rank == oracle::sorted_rank(logits, batch[0].target, filtered));

    EvalOptions qual;
    qual.task = Task::kQual;
    CHECK(evaluate(params, config, graph, vocab, s, filter, qual).ranks.size() == 3);
    const auto none = evaluate(params, config, graph, vocab, std::span<const Statement>(), filter);
    CHECK(none.ranks.empty());
  }

  TEST_CASE("metrics json") {
    const auto j = nlohmann::json::parse(metrics_json(Metrics{0.5, 0.25, 0.75, 8}, "test", Task::kQual));
    CHECK(j["split"] == "test");
    CHECK(j["mrr"] == 0.5);
    CHECK(j["h1"] == 0.25);
    CHECK(j["h10"] == 0.75);
    CHECK(j["n_queries"] == 8);
    CHECK(j["task"] == "qual");
  }
}
