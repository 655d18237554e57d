#include "kgprop/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "json.hpp"
#include "kgprop/util.hpp"

namespace kgprop {

const char* to_string(TiePolicy t) {
  switch (t) {
    case TiePolicy::Average: return "average";
    case TiePolicy::Optimistic: return "optimistic";
    case TiePolicy::Pessimistic: return "pessimistic";
  }
  return "?";
}

const char* to_string(EvalProtocol p) {
  return p == EvalProtocol::Filtered ? "filtered" : "candidates";
}

TiePolicy tie_policy_from_string(const std::string& s) {
  if (s == "average") return TiePolicy::Average;
  if (s == "optimistic") return TiePolicy::Optimistic;
  if (s == "pessimistic") return TiePolicy::Pessimistic;
  throw ConfigError("unknown tie policy: " + s);
}

EvalProtocol protocol_from_string(const std::string& s) {
  if (s == "filtered") return EvalProtocol::Filtered;
  if (s == "candidates") return EvalProtocol::Candidates;
  throw ConfigError("unknown evaluation protocol: " + s);
}

double rank_from_counts(int64_t num_above, int64_t num_tied, TiePolicy tie) {
  switch (tie) {
    case TiePolicy::Optimistic:
      return static_cast<double>(num_above) + 1.0;
    case TiePolicy::Pessimistic:
      return static_cast<double>(num_above + num_tied) + 1.0;
    case TiePolicy::Average:
      return static_cast<double>(num_above) + 1.0 + static_cast<double>(num_tied) * 0.5;
  }
  return 1.0;
}

namespace {

std::string check_direction(const char* label, const DirectionReport& r) {
  char buf[160];
  auto fail = [&](const char* what) {
    std::snprintf(buf, sizeof(buf), "%s: %s", label, what);
    return std::string(buf);
  };
  if (r.num_queries == 0) {
    if (r.mrr != 0 || r.hits1 != 0 || r.hits3 != 0 || r.hits10 != 0) {
      return fail("metrics must be zero without queries");
    }
    return {};
  }
  for (double v : {r.mrr, r.hits1, r.hits3, r.hits10}) {
    if (!(v >= 0.0 && v <= 1.0)) return fail("metric outside [0, 1]");
  }
  if (!(r.mrr > 0.0)) return fail("mrr must be positive");
  if (r.hits1 > r.hits3 || r.hits3 > r.hits10) return fail("hits must grow with the cutoff");
  if (r.mrr < r.hits1) return fail("mrr must dominate hits@1");
  const double ks[] = {1, 3, 10};
  const double hs[] = {r.hits1, r.hits3, r.hits10};
  for (int i = 0; i < 3; ++i) {
    if (r.mrr > hs[i] + 1.0 / (ks[i] + 1.0) + 1e-12) {
      return fail("mrr exceeds the hits@K + 1/(K+1) ceiling");
    }
  }
  return {};
}

nlohmann::json direction_json(const DirectionReport& r) {
  return nlohmann::json{{"mrr", r.mrr},
                        {"hits@1", r.hits1},
                        {"hits@3", r.hits3},
                        {"hits@10", r.hits10},
                        {"num_queries", r.num_queries}};
}

}  // namespace

std::string RankingReport::check_invariants() const {
  const std::pair<const char*, const DirectionReport*> dirs[] = {
      {"combined", &combined}, {"head", &head}, {"tail", &tail}};
  for (const auto& [label, dir] : dirs) {
    auto err = check_direction(label, *dir);
    if (!err.empty()) return err;
  }
  if (combined.num_queries != head.num_queries + tail.num_queries) {
    return "combined must cover exactly the head and tail queries";
  }
  return {};
}

std::string RankingReport::to_json() const {
  nlohmann::json j{{"combined", direction_json(combined)},
                   {"head", direction_json(head)},
                   {"tail", direction_json(tail)}};
  return j.dump();
}

namespace {

// Shared per-relation scoring state. Every score is assembled from the same
// canonical expression tree as score_cached: left = head transformed by the
// relation (accumulated in float64), u = left - tail, norms accumulated over
// ascending components (per group for the block family).
template <typename S>
struct OneRelScorer {
  ModelSpec spec;
  EmbeddingStore<S> mini;
  RelationCache<S> cache;

  OneRelScorer(const ModelSpec& sp, std::span<const S> rel_params) : spec(sp) {
    mini.num_entities = 0;
    mini.num_relations = 1;
    mini.dim = sp.dim;
    mini.rel_width = sp.relation_width();
    if (static_cast<int>(rel_params.size()) != mini.rel_width) {
      throw DimensionError("relation row width disagrees with the model spec");
    }
    mini.relations.assign(rel_params.begin(), rel_params.end());
    cache = build_relation_cache(sp, mini);
  }

  void fill_left(std::span<const S> h, double* left) const {
    std::fill(left, left + spec.dim, 0.0);
    add_head_context(spec, cache, 0, h, left);
  }

  double distance_from_left(const double* left, std::span<const S> t) const {
    const bool l1 = spec.norm == NormOrder::L1;
    const int n = spec.dim;
    if (spec.family == ModelFamily::OTE) {
      const int g = spec.group_size();
      double total = 0;
      for (int grp = 0; grp < spec.ote_groups; ++grp) {
        double acc = 0;
        for (int a = 0; a < g; ++a) {
          const int d = grp * g + a;
          const double u = left[d] - static_cast<double>(t[d]);
          acc += l1 ? std::fabs(u) : u * u;
        }
        total += l1 ? acc : std::sqrt(acc);
      }
      return -total;
    }
    double acc = 0;
    for (int d = 0; d < n; ++d) {
      const double u = left[d] - static_cast<double>(t[d]);
      acc += l1 ? std::fabs(u) : u * u;
    }
    return l1 ? -acc : -std::sqrt(acc);
  }

  double bilinear(std::span<const S> h, std::span<const S> t) const {
    auto rel = cache.vec(0);
    double acc = 0;
    for (int d = 0; d < spec.dim; ++d) {
      acc += static_cast<double>(rel[d]) *
             (static_cast<double>(h[d]) * static_cast<double>(t[d]));
    }
    return acc;
  }
};

// Scores one candidate of a query. `left_fixed` is the transformed fixed
// head for tail queries; `ztab` (optional) holds pre-transformed entity rows
// for head queries of the block family; `scratch` is a caller buffer of dim
// doubles for the remaining head-query case.
template <typename S>
double candidate_score(const OneRelScorer<S>& sc, const EmbeddingStore<S>& store, const Query& q,
                       EntityId cand, const double* left_fixed, const double* ztab,
                       double* scratch) {
  if (sc.spec.family == ModelFamily::DistMult) {
    const EntityId h = q.predict_tail ? q.fixed : cand;
    const EntityId t = q.predict_tail ? cand : q.fixed;
    return sc.bilinear(store.entity(h), store.entity(t));
  }
  if (q.predict_tail) {
    return sc.distance_from_left(left_fixed, store.entity(cand));
  }
  const double* left;
  if (ztab != nullptr) {
    left = ztab + static_cast<size_t>(cand) * sc.spec.dim;
  } else {
    sc.fill_left(store.entity(cand), scratch);
    left = scratch;
  }
  return sc.distance_from_left(left, store.entity(q.fixed));
}

// Counts candidates above/tied with the truth. Scores are compared after
// rounding to the store precision.
template <typename S>
struct RankCounter {
  S truth_score;
  int64_t above = 0;
  int64_t tied = 0;
  void observe(double cand_score) {
    const S s = static_cast<S>(cand_score);
    if (s > truth_score) {
      ++above;
    } else if (s == truth_score) {
      ++tied;
    }
  }
};

template <typename S>
double rank_one(const OneRelScorer<S>& sc, const EmbeddingStore<S>& store, const Query& q,
                EntityId truth, TiePolicy tie, std::span<const EntityId> cand_list, bool use_list,
                const KnownTripletSet* filter, const double* ztab, std::vector<double>& left_buf,
                std::vector<double>& scratch_buf) {
  const double* left_fixed = nullptr;
  if (sc.spec.family != ModelFamily::DistMult && q.predict_tail) {
    if (ztab != nullptr) {
      left_fixed = ztab + static_cast<size_t>(q.fixed) * sc.spec.dim;
    } else {
      sc.fill_left(store.entity(q.fixed), left_buf.data());
      left_fixed = left_buf.data();
    }
  }
  RankCounter<S> counter;
  counter.truth_score = static_cast<S>(
      candidate_score(sc, store, q, truth, left_fixed, ztab, scratch_buf.data()));
  if (use_list) {
    for (EntityId cand : cand_list) {
      if (cand == truth) continue;
      counter.observe(candidate_score(sc, store, q, cand, left_fixed, ztab, scratch_buf.data()));
    }
  } else {
    const auto num = static_cast<EntityId>(store.num_entities);
    Triplet formed;
    formed.relation = q.relation;
    if (q.predict_tail) {
      formed.head = q.fixed;
    } else {
      formed.tail = q.fixed;
    }
    for (EntityId cand = 0; cand < num; ++cand) {
      if (cand == truth) continue;
      if (filter != nullptr) {
        if (q.predict_tail) {
          formed.tail = cand;
        } else {
          formed.head = cand;
        }
        if (filter->contains(formed)) continue;
      }
      counter.observe(candidate_score(sc, store, q, cand, left_fixed, ztab, scratch_buf.data()));
    }
  }
  return rank_from_counts(counter.above, counter.tied, tie);
}

}  // namespace

template <typename S>
double rank_query(const ModelSpec& spec, const EmbeddingStore<S>& store, const Query& query,
                  std::span<const EntityId> candidates, EntityId truth, TiePolicy tie) {
  spec.require_valid();
  if (store.dim != spec.dim || store.rel_width != spec.relation_width()) {
    throw DimensionError("embedding table shape disagrees with the model spec");
  }
  if (query.relation >= store.num_relations || query.fixed >= store.num_entities ||
      truth >= store.num_entities) {
    throw DataError("query references an id outside the embedding table");
  }
  for (EntityId c : candidates) {
    if (c >= store.num_entities) throw DataError("candidate id outside the embedding table");
  }
  OneRelScorer<S> sc(spec, store.relation(query.relation));
  std::vector<double> left_buf(spec.dim), scratch_buf(spec.dim);
  return rank_one(sc, store, query, truth, tie, candidates, true, nullptr, nullptr, left_buf,
                  scratch_buf);
}

namespace {

struct PendingQuery {
  Query query;
  EntityId truth = 0;
  int64_t candidate_row = -1;  // index into the candidates protocol lists
};

void fold_rank(DirectionReport& dir, double rank) {
  dir.mrr += 1.0 / rank;
  if (rank <= 1.0) dir.hits1 += 1;
  if (rank <= 3.0) dir.hits3 += 1;
  if (rank <= 10.0) dir.hits10 += 1;
  ++dir.num_queries;
}

void finish_direction(DirectionReport& dir) {
  if (dir.num_queries == 0) return;
  const double inv = 1.0 / static_cast<double>(dir.num_queries);
  dir.mrr *= inv;
  dir.hits1 *= inv;
  dir.hits3 *= inv;
  dir.hits10 *= inv;
}

}  // namespace

template <typename S>
RankingReport evaluate(const ModelSpec& spec, const EmbeddingStore<S>& store,
                       std::span<const Triplet> test, const KnownTripletSet* filter,
                       const std::vector<std::vector<EntityId>>* candidates,
                       const EvalOptions& options) {
  spec.require_valid();
  if (store.dim != spec.dim || store.rel_width != spec.relation_width()) {
    throw DimensionError("embedding table shape disagrees with the model spec");
  }
  if (options.threads < 1) throw ConfigError("threads must be >= 1");
  const bool use_lists = options.protocol == EvalProtocol::Candidates;
  if (use_lists) {
    if (candidates == nullptr) throw ConfigError("candidates protocol needs candidate lists");
    if (candidates->size() != test.size()) {
      throw DataError("candidate list count disagrees with the test triplet count");
    }
  }
  for (const Triplet& tr : test) {
    if (tr.head >= store.num_entities || tr.tail >= store.num_entities ||
        tr.relation >= store.num_relations) {
      throw DataError("test triplet references an id outside the embedding table");
    }
  }
  if (use_lists) {
    for (const auto& list : *candidates) {
      for (EntityId c : list) {
        if (c >= store.num_entities) throw DataError("candidate id outside the embedding table");
      }
    }
  }

  std::vector<PendingQuery> queries;
  queries.reserve(test.size() * (use_lists ? 1 : 2));
  for (size_t i = 0; i < test.size(); ++i) {
    const Triplet& tr = test[i];
    PendingQuery tail_q;
    tail_q.query = {tr.head, tr.relation, true};
    tail_q.truth = tr.tail;
    tail_q.candidate_row = static_cast<int64_t>(i);
    queries.push_back(tail_q);
    if (!use_lists) {
      PendingQuery head_q;
      head_q.query = {tr.tail, tr.relation, false};
      head_q.truth = tr.head;
      queries.push_back(head_q);
    }
  }

  // Group by relation so the block family transforms each entity table once
  // per relation instead of once per query.
  std::vector<int64_t> by_rel(queries.size());
  std::iota(by_rel.begin(), by_rel.end(), 0);
  std::stable_sort(by_rel.begin(), by_rel.end(), [&](int64_t a, int64_t b) {
    return queries[a].query.relation < queries[b].query.relation;
  });

  std::vector<double> ranks(queries.size(), 0.0);
  const bool want_ztab = spec.family == ModelFamily::OTE;
  std::vector<double> ztab;
  std::vector<uint8_t> zrow_ready;
  if (want_ztab) {
    ztab.assign(static_cast<size_t>(store.num_entities) * spec.dim, 0.0);
    zrow_ready.assign(store.num_entities, 0);
  }

  size_t lo = 0;
  while (lo < by_rel.size()) {
    const RelationId rel = queries[by_rel[lo]].query.relation;
    size_t hi = lo;
    bool any_head_query = false;
    while (hi < by_rel.size() && queries[by_rel[hi]].query.relation == rel) {
      if (!queries[by_rel[hi]].query.predict_tail) any_head_query = true;
      ++hi;
    }
    OneRelScorer<S> sc(spec, store.relation(rel));
    const double* ztab_ptr = nullptr;
    if (want_ztab) {
      std::fill(zrow_ready.begin(), zrow_ready.end(), 0);
      if (any_head_query) {
        parallel_for(store.num_entities, options.threads, [&](int64_t elo, int64_t ehi) {
          for (int64_t e = elo; e < ehi; ++e) {
            sc.fill_left(store.entity(e), ztab.data() + e * spec.dim);
          }
        });
      } else {
        for (size_t k = lo; k < hi; ++k) {
          const EntityId fixed = queries[by_rel[k]].query.fixed;
          if (!zrow_ready[fixed]) {
            sc.fill_left(store.entity(fixed), ztab.data() + static_cast<size_t>(fixed) * spec.dim);
            zrow_ready[fixed] = 1;
          }
        }
      }
      ztab_ptr = ztab.data();
    }
    parallel_for(static_cast<int64_t>(hi - lo), options.threads, [&](int64_t qlo, int64_t qhi) {
      std::vector<double> left_buf(spec.dim), scratch_buf(spec.dim);
      for (int64_t k = qlo; k < qhi; ++k) {
        const PendingQuery& pq = queries[by_rel[lo + k]];
        std::span<const EntityId> list;
        if (use_lists) {
          const auto& row = (*candidates)[pq.candidate_row];
          list = std::span<const EntityId>(row.data(), row.size());
        }
        ranks[by_rel[lo + k]] =
            rank_one(sc, store, pq.query, pq.truth, options.tie, list, use_lists,
                     use_lists ? nullptr : filter, ztab_ptr, left_buf, scratch_buf);
      }
    });
    lo = hi;
  }

  RankingReport report;
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    DirectionReport& dir = queries[qi].query.predict_tail ? report.tail : report.head;
    fold_rank(dir, ranks[qi]);
    fold_rank(report.combined, ranks[qi]);
  }
  finish_direction(report.combined);
  finish_direction(report.head);
  finish_direction(report.tail);
  return report;
}

template double rank_query<float>(const ModelSpec&, const EmbeddingStore<float>&, const Query&,
                                  std::span<const EntityId>, EntityId, TiePolicy);
template double rank_query<double>(const ModelSpec&, const EmbeddingStore<double>&, const Query&,
                                   std::span<const EntityId>, EntityId, TiePolicy);
template RankingReport evaluate<float>(const ModelSpec&, const EmbeddingStore<float>&,
                                       std::span<const Triplet>, const KnownTripletSet*,
                                       const std::vector<std::vector<EntityId>>*,
                                       const EvalOptions&);
template RankingReport evaluate<double>(const ModelSpec&, const EmbeddingStore<double>&,
                                        std::span<const Triplet>, const KnownTripletSet*,
                                        const std::vector<std::vector<EntityId>>*,
                                        const EvalOptions&);

}  // namespace kgprop
