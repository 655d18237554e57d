#include <algorithm>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "kgprop/error.hpp"
#include "kgprop/eval.hpp"
#include "kgprop/model.hpp"
#include "kgprop/rng.hpp"
#include "kgprop/verify.hpp"
#include "test_util.hpp"

using namespace kgprop;
using testutil::make_graph;
using testutil::make_spec;
using testutil::make_store;
using testutil::set_row;

namespace {

template <typename S>
void randomize(const ModelSpec& spec, EmbeddingStore<S>& store, uint64_t seed) {
  Rng rng(seed);
  for (auto& v : store.entities) v = static_cast<S>(rng.real(-1.0, 1.0));
  const double lo = spec.family == ModelFamily::RotatE ? -3.14159 : -1.0;
  for (auto& v : store.relations) v = static_cast<S>(rng.real(lo, -lo));
}

// DistMult with a scalar head of 1 and relation of 1 ranks entities by their
// single coordinate; handy for hand-computable ranks.
struct ScalarRanker {
  ModelSpec spec = make_spec(ModelFamily::DistMult, 1);
  EmbeddingStore<double> store;
  explicit ScalarRanker(std::vector<double> values) {
    store = make_store<double>(spec, static_cast<int64_t>(values.size()), 1);
    store.entities = values;
    store.relation(0)[0] = 1.0;
  }
};

}  // namespace

TEST_CASE("rank arithmetic covers every tie policy") {
  CHECK(rank_from_counts(0, 0, TiePolicy::Average) == 1.0);
  CHECK(rank_from_counts(3, 0, TiePolicy::Average) == 4.0);
  // Truth tied with two others, nothing above.
  CHECK(rank_from_counts(0, 2, TiePolicy::Optimistic) == 1.0);
  CHECK(rank_from_counts(0, 2, TiePolicy::Average) == 2.0);
  CHECK(rank_from_counts(0, 2, TiePolicy::Pessimistic) == 3.0);
  CHECK(rank_from_counts(5, 3, TiePolicy::Average) == doctest::Approx(7.5));
}

TEST_CASE("a strictly highest truth ranks first") {
  ScalarRanker fix({1.0, 0.9, 0.2, 0.3, 0.4, 0.15, 0.5, 0.6, 0.7, 0.8, 0.45});
  Query q;
  q.fixed = 0;
  q.predict_tail = true;
  std::vector<EntityId> candidates;
  for (EntityId e = 2; e <= 10; ++e) candidates.push_back(e);
  CHECK(rank_query(fix.spec, fix.store, q, candidates, /*truth=*/1, TiePolicy::Average) == 1.0);
}

TEST_CASE("query ranks match a full-sort reference on a thousand candidates") {
  const auto spec = make_spec(ModelFamily::RotatE, 8);
  auto store = make_store<double>(spec, 1001, 1);
  randomize(spec, store, 149);
  Query q;
  q.fixed = 0;
  q.relation = 0;
  SUBCASE("tail direction") { q.predict_tail = true; }
  SUBCASE("head direction") { q.predict_tail = false; }
  std::vector<EntityId> candidates;
  for (EntityId e = 1; e <= 1000; ++e) candidates.push_back(e);
  const EntityId truth = 500;

  auto score_of = [&](EntityId e) {
    const auto h = q.predict_tail ? store.entity(q.fixed) : store.entity(e);
    const auto t = q.predict_tail ? store.entity(e) : store.entity(q.fixed);
    return score<double>(spec, h, store.relation(0), t);
  };
  const double truth_score = score_of(truth);
  int64_t above = 0, tied = 0;
  for (EntityId e : candidates) {
    if (e == truth) continue;
    const double s = score_of(e);
    if (s > truth_score) ++above;
    if (s == truth_score) ++tied;
  }
  const double expected = rank_from_counts(above, tied, TiePolicy::Average);
  CHECK(rank_query(spec, store, q, candidates, truth, TiePolicy::Average) == expected);
}

TEST_CASE("metric arithmetic on hand-built ranks") {
  // Two tail queries engineered to rank 1 and 4 (the head entity 0 scores
  // candidates by their own coordinate).
  ScalarRanker fix({1.0, 1.5, 2.0, 3.0, 4.0});
  const std::vector<Triplet> test{{0, 0, 4}, {0, 0, 1}};
  const std::vector<std::vector<EntityId>> lists{{0, 1, 2, 3, 4}, {0, 2, 3, 4}};
  EvalOptions options;
  options.protocol = EvalProtocol::Candidates;
  const RankingReport report =
      evaluate(fix.spec, fix.store, std::span<const Triplet>(test), nullptr, &lists, options);
  CHECK(report.head.num_queries == 0);  // candidate lists rank tails only
  CHECK(report.tail.num_queries == 2);
  CHECK(report.combined.num_queries == 2);
  CHECK(report.combined.mrr == doctest::Approx(0.625));
  CHECK(report.combined.hits1 == doctest::Approx(0.5));
  CHECK(report.combined.hits3 == doctest::Approx(0.5));
  CHECK(report.combined.hits10 == doctest::Approx(1.0));
  CHECK(report.check_invariants().empty());
}

TEST_CASE("perfect embeddings score a perfect report in both directions") {
  const auto spec = make_spec(ModelFamily::TransE, 2);
  auto store = make_store<double>(spec, 4, 1);
  set_row(store.entity(0), {0.0, 0.0});
  set_row(store.entity(1), {1.0, 0.0});   // exactly h + r
  set_row(store.entity(2), {8.0, 8.0});
  set_row(store.entity(3), {-7.0, 5.0});
  set_row(store.relation(0), {1.0, 0.0});
  const std::vector<Triplet> test{{0, 0, 1}};
  KnownTripletSet filter(4, 1);
  filter.insert(test[0]);
  EvalOptions options;
  const RankingReport report =
      evaluate(spec, store, std::span<const Triplet>(test), &filter, nullptr, options);
  CHECK(report.head.num_queries == 1);
  CHECK(report.tail.num_queries == 1);
  CHECK(report.combined.mrr == 1.0);
  CHECK(report.combined.hits1 == 1.0);
  CHECK(report.combined.hits10 == 1.0);
}

TEST_CASE("the evaluator matches the naive score-sort-filter reference") {
  const KnowledgeGraph train = verify::make_random_graph(40, 4, 180, 151);
  const KnowledgeGraph test = verify::make_random_graph(40, 4, 50, 157);
  KnownTripletSet filter(40, 4);
  filter.insert_all(train.triplets);
  filter.insert_all(test.triplets);
  Rng listrng(163);
  std::vector<std::vector<EntityId>> lists;
  for (size_t i = 0; i < test.triplets.size(); ++i) {
    std::vector<EntityId> row;
    for (int k = 0; k < 15; ++k) row.push_back(static_cast<EntityId>(listrng.below(40)));
    lists.push_back(std::move(row));
  }
  for (const auto& spec :
       {make_spec(ModelFamily::TransE, 6), make_spec(ModelFamily::DistMult, 6),
        make_spec(ModelFamily::RotatE, 6), make_spec(ModelFamily::OTE, 6, 1, NormOrder::L2, 3)}) {
    auto store = make_store<double>(spec, 40, 4);
    randomize(spec, store, 167);
    for (auto tie : {TiePolicy::Average, TiePolicy::Optimistic, TiePolicy::Pessimistic}) {
      EvalOptions options;
      options.tie = tie;
      options.protocol = EvalProtocol::Filtered;
      const auto fast =
          evaluate(spec, store, std::span<const Triplet>(test.triplets), &filter, nullptr, options);
      const auto slow =
          verify::naive_evaluate(spec, store, test.triplets, &filter, nullptr, tie);
      CHECK(fast.combined.mrr == slow.combined.mrr);
      CHECK(fast.head.hits3 == slow.head.hits3);
      CHECK(fast.tail.hits10 == slow.tail.hits10);

      options.protocol = EvalProtocol::Candidates;
      const auto fast_c =
          evaluate(spec, store, std::span<const Triplet>(test.triplets), nullptr, &lists, options);
      const auto slow_c = verify::naive_evaluate(spec, store, test.triplets, nullptr, &lists, tie);
      CHECK(fast_c.combined.mrr == slow_c.combined.mrr);
      CHECK(fast_c.tail.hits1 == slow_c.tail.hits1);
    }
  }
}

TEST_CASE("uniformly doubling the embeddings never changes a rank") {
  const KnowledgeGraph test = verify::make_random_graph(30, 3, 40, 173);
  KnownTripletSet filter(30, 3);
  filter.insert_all(test.triplets);
  EvalOptions options;
  for (const auto& spec :
       {make_spec(ModelFamily::TransE, 6), make_spec(ModelFamily::DistMult, 6),
        make_spec(ModelFamily::RotatE, 6), make_spec(ModelFamily::OTE, 6, 1, NormOrder::L2, 2)}) {
    auto store = make_store<double>(spec, 30, 3);
    randomize(spec, store, 179);
    auto doubled = store;
    for (auto& v : doubled.entities) v *= 2.0;
    // Doubling all entities doubles every score except for the additive
    // translation, whose offset must scale with them; rotations and block
    // transforms are linear in the entity and stay untouched. Every factor
    // is a power of two, so the transformed scores are exactly 2x (or 4x)
    // the originals and the ranking must not move by a single ulp.
    if (spec.family == ModelFamily::TransE) {
      for (auto& v : doubled.relations) v *= 2.0;
    }
    const auto base =
        evaluate(spec, store, std::span<const Triplet>(test.triplets), &filter, nullptr, options);
    const auto scaled =
        evaluate(spec, doubled, std::span<const Triplet>(test.triplets), &filter, nullptr, options);
    CHECK(base.combined.mrr == scaled.combined.mrr);
    CHECK(base.combined.hits1 == scaled.combined.hits1);
    CHECK(base.combined.hits3 == scaled.combined.hits3);
    CHECK(base.combined.hits10 == scaled.combined.hits10);
  }
}

TEST_CASE("known triplets are excluded from the candidate pool") {
  // Entity 2 would outrank the truth, but (0, r, 2) is a known triplet.
  ScalarRanker fix({1.0, 2.0, 5.0, 0.5});
  const std::vector<Triplet> test{{0, 0, 1}};
  KnownTripletSet filter(4, 1);
  filter.insert({0, 0, 1});
  filter.insert({0, 0, 2});
  EvalOptions options;
  const auto report =
      evaluate(fix.spec, fix.store, std::span<const Triplet>(test), &filter, nullptr, options);
  CHECK(report.tail.mrr == 1.0);  // entity 2 was filtered away
  // Without the filter entry the same query ranks second.
  KnownTripletSet weak(4, 1);
  weak.insert({0, 0, 1});
  const auto raw =
      evaluate(fix.spec, fix.store, std::span<const Triplet>(test), &weak, nullptr, options);
  CHECK(raw.tail.mrr == 0.5);
  // The truth itself is never filtered even though it is in the filter.
}

TEST_CASE("candidate lists over all entities equal unfiltered full ranking") {
  const KnowledgeGraph test = verify::make_random_graph(25, 2, 30, 181);
  const auto spec = make_spec(ModelFamily::DistMult, 5);
  auto store = make_store<double>(spec, 25, 2);
  randomize(spec, store, 191);
  std::vector<EntityId> everyone;
  for (EntityId e = 0; e < 25; ++e) everyone.push_back(e);
  const std::vector<std::vector<EntityId>> lists(test.triplets.size(), everyone);
  EvalOptions options;
  options.protocol = EvalProtocol::Candidates;
  const auto with_lists =
      evaluate(spec, store, std::span<const Triplet>(test.triplets), nullptr, &lists, options);
  options.protocol = EvalProtocol::Filtered;
  const auto raw =  // null filter means raw ranking over all entities
      evaluate(spec, store, std::span<const Triplet>(test.triplets), nullptr, nullptr, options);
  CHECK(with_lists.tail.mrr == raw.tail.mrr);
  CHECK(with_lists.tail.hits1 == raw.tail.hits1);
  CHECK(with_lists.tail.hits10 == raw.tail.hits10);
}

TEST_CASE("candidate list duplicates count, truth entries are ignored") {
  ScalarRanker fix({1.0, 2.0, 5.0});
  const std::vector<Triplet> test{{0, 0, 1}};
  EvalOptions options;
  options.protocol = EvalProtocol::Candidates;
  // The high scorer appears twice: pessimistically the truth is third.
  std::vector<std::vector<EntityId>> lists{{2, 2, 0}};
  auto report = evaluate(fix.spec, fix.store, std::span<const Triplet>(test), nullptr, &lists, options);
  CHECK(report.tail.mrr == doctest::Approx(1.0 / 3.0));
  // Copies of the truth in the list change nothing.
  lists = {{1, 1, 1, 0}};
  report = evaluate(fix.spec, fix.store, std::span<const Triplet>(test), nullptr, &lists, options);
  CHECK(report.tail.mrr == 1.0);
}

TEST_CASE("constant embeddings expose the tie policies") {
  const auto spec = make_spec(ModelFamily::TransE, 3);
  auto store = make_store<double>(spec, 9, 1);
  for (EntityId e = 0; e < 9; ++e) set_row(store.entity(e), {0.5, 0.5, 0.5});
  const std::vector<Triplet> test{{0, 0, 1}};
  EvalOptions options;
  options.protocol = EvalProtocol::Filtered;
  options.tie = TiePolicy::Optimistic;
  auto report = evaluate(spec, store, std::span<const Triplet>(test), nullptr, nullptr, options);
  CHECK(report.combined.mrr == 1.0);
  options.tie = TiePolicy::Average;
  report = evaluate(spec, store, std::span<const Triplet>(test), nullptr, nullptr, options);
  CHECK(report.combined.mrr == doctest::Approx(1.0 / 5.0));  // mean rank of 1..9
  options.tie = TiePolicy::Pessimistic;
  report = evaluate(spec, store, std::span<const Triplet>(test), nullptr, nullptr, options);
  CHECK(report.combined.mrr == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("reports serialize to the documented JSON shape") {
  const KnowledgeGraph test = verify::make_random_graph(15, 2, 20, 193);
  const auto spec = make_spec(ModelFamily::TransE, 4);
  auto store = make_store<double>(spec, 15, 2);
  randomize(spec, store, 197);
  EvalOptions options;
  const auto report =
      evaluate(spec, store, std::span<const Triplet>(test.triplets), nullptr, nullptr, options);
  const nlohmann::json doc = nlohmann::json::parse(report.to_json());
  for (const char* section : {"combined", "head", "tail"}) {
    REQUIRE(doc.contains(section));
    const auto& s = doc.at(section);
    REQUIRE(s.contains("mrr"));
    REQUIRE(s.contains("hits@1"));
    REQUIRE(s.contains("hits@3"));
    REQUIRE(s.contains("hits@10"));
    REQUIRE(s.contains("num_queries"));
    CHECK(s.at("mrr").is_number());
    CHECK(s.at("num_queries").is_number_integer());
  }
  CHECK(doc.at("combined").at("mrr").get<double>() == report.combined.mrr);
  CHECK(doc.at("combined").at("num_queries").get<int64_t>() == 40);
}

TEST_CASE("invariant checking accepts live reports and rejects corrupted ones") {
  RankingReport bad;
  bad.combined = {0.5, 0.9, 0.4, 0.6, 10};  // hits@1 above hits@3
  bad.head = bad.combined;
  bad.tail = bad.combined;
  bad.head.num_queries = 5;
  bad.tail.num_queries = 5;
  CHECK_FALSE(bad.check_invariants().empty());

  RankingReport skewed;
  skewed.combined = {0.05, 0.2, 0.3, 0.4, 10};  // mrr below hits@1
  skewed.head = skewed.combined;
  skewed.tail = skewed.combined;
  skewed.head.num_queries = 5;
  skewed.tail.num_queries = 5;
  CHECK_FALSE(skewed.check_invariants().empty());

  RankingReport miscounted;
  miscounted.combined = {0.5, 0.4, 0.45, 0.5, 10};
  miscounted.head = miscounted.combined;
  miscounted.tail = miscounted.combined;
  miscounted.head.num_queries = 3;  // 3 + 10 != 10
  CHECK_FALSE(miscounted.check_invariants().empty());
}

TEST_CASE("evaluation validates its inputs") {
  const auto spec = make_spec(ModelFamily::TransE, 4);
  auto store = make_store<double>(spec, 5, 1);
  EvalOptions options;
  const std::vector<Triplet> oob{{0, 0, 9}};
  CHECK_THROWS_AS(
      evaluate(spec, store, std::span<const Triplet>(oob), nullptr, nullptr, options),
      DataError);
  options.protocol = EvalProtocol::Candidates;
  const std::vector<Triplet> test{{0, 0, 1}};
  CHECK_THROWS_AS(evaluate(spec, store, std::span<const Triplet>(test), nullptr, nullptr, options),
                  ConfigError);  // candidates protocol needs lists
  const std::vector<std::vector<EntityId>> short_lists{};
  CHECK_THROWS_AS(
      evaluate(spec, store, std::span<const Triplet>(test), nullptr, &short_lists, options),
      DataError);  // one list per test triplet
}
