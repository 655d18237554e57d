#pragma once

#include <span>
#include <string>
#include <vector>

#include "kgprop/graph.hpp"
#include "kgprop/model.hpp"

namespace kgprop {

enum class TiePolicy { Average, Optimistic, Pessimistic };
enum class EvalProtocol { Filtered, Candidates };
const char* to_string(TiePolicy t);
const char* to_string(EvalProtocol p);
TiePolicy tie_policy_from_string(const std::string& s);
EvalProtocol protocol_from_string(const std::string& s);

struct DirectionReport {
  double mrr = 0;
  double hits1 = 0, hits3 = 0, hits10 = 0;
  int64_t num_queries = 0;
};

struct RankingReport {
  DirectionReport combined, head, tail;
  // Empty when hits are monotone, every metric is in range, and
  // mrr >= hits1 and mrr <= hits@K + 1/(K+1) hold.
  std::string check_invariants() const;
  std::string to_json() const;
};

// rank >= 1 given the number of candidates scored strictly above the truth
// and the number tied with it (truth excluded). Average assigns the mean of
// the tied positions and may be fractional.
double rank_from_counts(int64_t num_above, int64_t num_tied, TiePolicy tie);

struct Query {
  EntityId fixed = 0;  // the head when predicting tails, the tail otherwise
  RelationId relation = 0;
  bool predict_tail = true;
};

// Rank of the truth among {truth} union candidates by descending score;
// candidate entries equal to the truth are ignored, other duplicates count.
// Scores are compared exactly (tie tolerance zero).
template <typename S>
double rank_query(const ModelSpec& spec, const EmbeddingStore<S>& store, const Query& query,
                  std::span<const EntityId> candidates, EntityId truth, TiePolicy tie);

struct EvalOptions {
  EvalProtocol protocol = EvalProtocol::Filtered;
  TiePolicy tie = TiePolicy::Average;
  int threads = 1;
};

// Filtered protocol: both directions per test triplet; every entity is a
// candidate unless it forms a triplet in `filter` (the truth itself is never
// filtered). A null filter means raw ranking over all entities.
// Candidates protocol: tail direction only, ranking within the provided
// per-triplet candidate lists; `filter` is ignored.
// Scores use elementwise arithmetic in float64 with float64 norm
// accumulation and are compared in the store precision.
template <typename S>
RankingReport evaluate(const ModelSpec& spec, const EmbeddingStore<S>& store,
                       std::span<const Triplet> test, const KnownTripletSet* filter,
                       const std::vector<std::vector<EntityId>>* candidates,
                       const EvalOptions& options);

}  // namespace kgprop
