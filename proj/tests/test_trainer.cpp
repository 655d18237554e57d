#include <cmath>
#include <vector>

#include "doctest.h"
#include "kgprop/error.hpp"
#include "kgprop/eval.hpp"
#include "kgprop/model.hpp"
#include "kgprop/rng.hpp"
#include "kgprop/trainer.hpp"
#include "kgprop/verify.hpp"
#include "test_util.hpp"

using namespace kgprop;
using testutil::make_graph;
using testutil::make_spec;
using testutil::make_store;
using testutil::set_row;

TEST_CASE("margin loss worked examples") {
  CHECK(margin_loss(5, 1, 2) == 0.0);
  CHECK(margin_loss(1, 1, 2) == 2.0);
  CHECK(margin_loss(0.3, 0.9, 1) == doctest::Approx(1.6));
  CHECK(margin_loss(-1, -3, 2) == 0.0);  // gap exactly equal to the margin
}

TEST_CASE("negative sampling on a single-entity graph degrades gracefully") {
  Rng rng(1);
  const Triplet pos{0, 0, 0};
  const NegativeSample neg = sample_negative(pos, 1, NegativeMode::BothUniform, rng);
  CHECK(neg.triplet == pos);
  CHECK(neg.degraded);
}

TEST_CASE("corrupt-head mode never alters the relation or the tail") {
  Rng rng(2);
  const Triplet pos{3, 1, 7};
  for (int i = 0; i < 500; ++i) {
    const NegativeSample neg = sample_negative(pos, 20, NegativeMode::CorruptHead, rng);
    CHECK(neg.corrupted_head);
    CHECK(neg.triplet.relation == 1);
    CHECK(neg.triplet.tail == 7);
  }
  for (int i = 0; i < 500; ++i) {
    const NegativeSample neg = sample_negative(pos, 20, NegativeMode::CorruptTail, rng);
    CHECK_FALSE(neg.corrupted_head);
    CHECK(neg.triplet.head == 3);
    CHECK(neg.triplet.relation == 1);
  }
}

TEST_CASE("corrupted entities are uniform within five sigma over a million draws") {
  Rng rng(3);
  const Triplet pos{0, 0, 50};
  const int entities = 100;
  const int64_t draws = 1'000'000;
  std::vector<int64_t> count(entities, 0);
  int64_t heads = 0;
  for (int64_t i = 0; i < draws; ++i) {
    const NegativeSample neg = sample_negative(pos, entities, NegativeMode::BothUniform, rng);
    heads += neg.corrupted_head ? 1 : 0;
    count[neg.corrupted_head ? neg.triplet.head : neg.triplet.tail]++;
  }
  const double expected = double(draws) / entities;
  const double sigma = std::sqrt(draws * (1.0 / entities) * (1.0 - 1.0 / entities));
  for (int e = 0; e < entities; ++e) {
    CHECK(std::fabs(count[e] - expected) <= 5 * sigma);
  }
  // The side coin is fair too.
  CHECK(std::fabs(heads - draws / 2.0) <= 5 * std::sqrt(draws * 0.25));
}

TEST_CASE("filtered sampling avoids known triplets while candidates remain") {
  KnownTripletSet filter(3, 1);
  filter.insert({0, 0, 0});
  filter.insert({0, 0, 1});
  Rng rng(4);
  const Triplet pos{0, 0, 1};
  for (int i = 0; i < 200; ++i) {
    const NegativeSample neg = sample_negative(pos, 3, NegativeMode::CorruptTail, rng, &filter);
    CHECK(neg.triplet.tail == 2);  // the only unknown corruption
    CHECK_FALSE(neg.degraded);
  }
  // With every corruption known, the retry bound trips and flags the sample.
  KnownTripletSet all(2, 1);
  all.insert({0, 0, 0});
  all.insert({0, 0, 1});
  const NegativeSample stuck = sample_negative({0, 0, 1}, 2, NegativeMode::CorruptTail, rng, &all);
  CHECK(stuck.degraded);
}

TEST_CASE("zero-loss batches leave the store bit-identical") {
  const auto spec = make_spec(ModelFamily::TransE, 4, /*margin=*/0);
  auto store = init_embeddings<double>(spec, 4, 2, 7);
  const auto before_e = store.entities;
  const auto before_r = store.relations;
  const BatchPair pair{{0, 0, 1}, {0, 0, 1}};  // identical pair: gap is zero
  const double loss = sgd_step(store, spec, std::span<const BatchPair>(&pair, 1), 0.5);
  CHECK(loss == 0.0);
  CHECK(store.entities == before_e);
  CHECK(store.relations == before_r);
}

TEST_CASE("a single active translation pair reproduces the hand-derived update") {
  const auto spec = make_spec(ModelFamily::TransE, 2, /*margin=*/5);
  auto store = make_store<double>(spec, 3, 1);
  set_row(store.entity(0), {0.2, 0.4});
  set_row(store.entity(1), {1.0, -0.3});
  set_row(store.entity(2), {-0.5, 0.8});
  set_row(store.relation(0), {0.1, 0.1});
  const double lr = 0.05;

  // Expected gradients of the hinge at weight 1 (one pair in the batch).
  auto minus = [](std::span<const double> a, std::span<const double> b) {
    return std::vector<double>{a[0] - b[0], a[1] - b[1]};
  };
  std::vector<double> up{0.2 + 0.1 - 1.0, 0.4 + 0.1 + 0.3};   // (h + r) - t, positive
  std::vector<double> un{0.2 + 0.1 + 0.5, 0.4 + 0.1 - 0.8};   // against the corrupted tail
  const double np = std::hypot(up[0], up[1]), nn = std::hypot(un[0], un[1]);
  const std::vector<double> g0{up[0] / np - un[0] / nn, up[1] / np - un[1] / nn};
  const std::vector<double> g1{-up[0] / np, -up[1] / np};
  const std::vector<double> g2{un[0] / nn, un[1] / nn};
  const std::vector<double> e0 = minus(store.entity(0), std::vector<double>{lr * g0[0], lr * g0[1]});
  const std::vector<double> e1 = minus(store.entity(1), std::vector<double>{lr * g1[0], lr * g1[1]});
  const std::vector<double> e2 = minus(store.entity(2), std::vector<double>{lr * g2[0], lr * g2[1]});
  const std::vector<double> r0 = minus(store.relation(0), std::vector<double>{lr * g0[0], lr * g0[1]});

  const BatchPair pair{{0, 0, 1}, {0, 0, 2}};
  const double loss = sgd_step(store, spec, std::span<const BatchPair>(&pair, 1), lr);
  CHECK(loss == doctest::Approx(5.0 + np - nn));
  for (int d = 0; d < 2; ++d) {
    CHECK(store.entity(0)[d] == doctest::Approx(e0[d]).epsilon(1e-12));
    CHECK(store.entity(1)[d] == doctest::Approx(e1[d]).epsilon(1e-12));
    CHECK(store.entity(2)[d] == doctest::Approx(e2[d]).epsilon(1e-12));
    CHECK(store.relation(0)[d] == doctest::Approx(r0[d]).epsilon(1e-12));
  }
}

TEST_CASE("rows absent from the batch never change") {
  const auto spec = make_spec(ModelFamily::DistMult, 6, 8);
  auto store = init_embeddings<double>(spec, 6, 2, 11);
  const auto snapshot = store;
  const BatchPair pair{{0, 0, 1}, {0, 0, 2}};
  sgd_step(store, spec, std::span<const BatchPair>(&pair, 1), 0.1);
  for (EntityId i = 3; i < 6; ++i) {
    for (int d = 0; d < 6; ++d) CHECK(store.entity(i)[d] == snapshot.entity(i)[d]);
  }
  const auto r1 = store.relation(1);
  for (int d = 0; d < 6; ++d) CHECK(r1[d] == snapshot.relation(1)[d]);
}

TEST_CASE("disjoint batches commute") {
  const auto spec = make_spec(ModelFamily::RotatE, 8, 6);
  const auto init = init_embeddings<double>(spec, 6, 2, 13);
  const BatchPair a{{0, 0, 1}, {0, 0, 2}};
  const BatchPair b{{3, 1, 4}, {3, 1, 5}};

  auto first = init;
  sgd_step(first, spec, std::span<const BatchPair>(&a, 1), 0.1);
  sgd_step(first, spec, std::span<const BatchPair>(&b, 1), 0.1);
  auto second = init;
  sgd_step(second, spec, std::span<const BatchPair>(&b, 1), 0.1);
  sgd_step(second, spec, std::span<const BatchPair>(&a, 1), 0.1);
  CHECK(first.entities == second.entities);
  CHECK(first.relations == second.relations);
}

TEST_CASE("training configuration is validated before compute") {
  TrainConfig cfg;
  CHECK(cfg.validate().empty());
  cfg.learning_rate = 0;
  CHECK_FALSE(cfg.validate().empty());
  cfg = {};
  cfg.batch_size = 0;
  CHECK_FALSE(cfg.validate().empty());
  cfg = {};
  cfg.checkpoint_fractions = {0.5, 1.5};
  CHECK_FALSE(cfg.validate().empty());
  cfg = {};
  cfg.epochs = -1;
  CHECK_THROWS_AS(cfg.require_valid(), ConfigError);
}

TEST_CASE("single-threaded training is bit-reproducible per seed") {
  const KnowledgeGraph kg = verify::make_random_graph(30, 3, 120, 21);
  const auto spec = make_spec(ModelFamily::TransE, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.05;
  cfg.seed = 9;
  auto [s1, r1] = train<double>(kg, spec, cfg);
  auto [s2, r2] = train<double>(kg, spec, cfg);
  CHECK(s1.entities == s2.entities);
  CHECK(s1.relations == s2.relations);
  CHECK(r1.total_steps == r2.total_steps);
  cfg.seed = 10;
  auto [s3, r3] = train<double>(kg, spec, cfg);
  CHECK(s1.entities != s3.entities);
}

TEST_CASE("checkpoint hooks fire at the requested step fractions") {
  const KnowledgeGraph kg = verify::make_random_graph(20, 2, 64, 22);
  const auto spec = make_spec(ModelFamily::DistMult, 4, 1);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;  // 4 batches per epoch -> 16 planned steps
  cfg.checkpoint_fractions = {0.25, 0.5, 0.75, 1.0};
  std::vector<double> fired;
  std::vector<std::vector<double>> snapshots;
  TrainHooks<double> hooks;
  hooks.on_checkpoint = [&](double fraction, const EmbeddingStore<double>& store) {
    fired.push_back(fraction);
    snapshots.push_back(store.entities);
  };
  auto [store, report] = train<double>(kg, spec, cfg, nullptr, hooks);
  CHECK(fired == std::vector<double>{0.25, 0.5, 0.75, 1.0});
  CHECK(report.total_steps == 16);
  REQUIRE(snapshots.size() == 4);
  CHECK(snapshots[0] != snapshots[3]);          // training kept moving
  CHECK(snapshots[3] == store.entities);        // final checkpoint is the result
  REQUIRE(report.epochs.size() == 4);
  CHECK(report.epochs.front().mean_loss >= 0);
  CHECK(report.epochs.back().step == 16);
}

TEST_CASE("zero-epoch training returns the seeded initialization and still checkpoints") {
  const KnowledgeGraph kg = verify::make_random_graph(10, 2, 30, 23);
  const auto spec = make_spec(ModelFamily::TransE, 4, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  int fired = 0;
  TrainHooks<double> hooks;
  hooks.on_checkpoint = [&](double fraction, const EmbeddingStore<double>&) {
    ++fired;
    CHECK(fraction == 1.0);
  };
  auto [store, report] = train<double>(kg, spec, cfg, nullptr, hooks);
  CHECK(report.total_steps == 0);
  CHECK(fired == 1);
  const auto init = init_embeddings<double>(spec, 10, 2, 5);
  CHECK(store.entities == init.entities);
}

TEST_CASE("degraded negatives are counted") {
  const auto kg = make_graph(1, 1, {{0, 0, 0}});
  const auto spec = make_spec(ModelFamily::TransE, 4, 1);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  auto [store, report] = train<double>(kg, spec, cfg);
  CHECK(report.degraded_negatives == 6);  // one unavoidably-degraded pair per epoch
}

TEST_CASE("training lifts the ranking quality above the random initialization") {
  // Two consistent ring relations: a translation model can represent them
  // exactly, so losses must actually fall (uniformly random triplets would
  // leave nothing to learn).
  std::vector<Triplet> ring;
  for (uint32_t i = 0; i < 60; ++i) {
    ring.push_back({i, 0, (i + 1) % 60});
    ring.push_back({i, 1, (i + 7) % 60});
  }
  const KnowledgeGraph kg = make_graph(60, 2, ring);
  const auto spec = make_spec(ModelFamily::TransE, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 40;
  cfg.learning_rate = 0.1;
  cfg.seed = 3;
  auto [trained, report] = train<double>(kg, spec, cfg);

  KnownTripletSet filter(kg.num_entities, kg.num_relations);
  filter.insert_all(kg.triplets);
  EvalOptions options;
  const std::span<const Triplet> probe(kg.triplets.data(), 60);
  const auto init = init_embeddings<double>(spec, kg.num_entities, kg.num_relations, cfg.seed);
  const RankingReport before = evaluate(spec, init, probe, &filter, nullptr, options);
  const RankingReport after = evaluate(spec, trained, probe, &filter, nullptr, options);
  CHECK(after.combined.mrr > before.combined.mrr);
  // Smoothed epoch losses trend downward.
  const auto& ep = report.epochs;
  REQUIRE(ep.size() == 30);
  const double early = (ep[0].mean_loss + ep[1].mean_loss + ep[2].mean_loss) / 3;
  const double late = (ep[27].mean_loss + ep[28].mean_loss + ep[29].mean_loss) / 3;
  CHECK(late < early);
}

TEST_CASE("multi-threaded training still trains and checkpoints at epoch bounds") {
  const KnowledgeGraph kg = verify::make_random_graph(40, 3, 160, 25);
  const auto spec = make_spec(ModelFamily::TransE, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.threads = 3;
  cfg.checkpoint_fractions = {0.5, 1.0};
  std::vector<double> fired;
  TrainHooks<double> hooks;
  hooks.on_checkpoint = [&](double f, const EmbeddingStore<double>&) { fired.push_back(f); };
  auto [store, report] = train<double>(kg, spec, cfg, nullptr, hooks);
  CHECK(store.all_finite());
  CHECK(report.total_steps == 4 * 5);  // ceil(160/32) = 5 batches per epoch
  CHECK(fired == std::vector<double>{0.5, 1.0});
}
