#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kgprop/eval.hpp"
#include "kgprop/graph.hpp"
#include "kgprop/model.hpp"
#include "kgprop/propagation.hpp"

// Executable property checks over seeded synthetic graphs. The reference
// sides here are written as independent straight-line code (per-triplet
// double loops, score-sort evaluation, finite differences) so they stay
// decoupled from the production paths they vouch for.
namespace kgprop::verify {

struct PropertyResult {
  std::string name;
  bool pass = false;
  double metric = 0;  // property-specific: max residual, discrepancy, ...
  std::string detail;
};

struct VerifyParams {
  uint64_t seed = 7;
  double beta = 0.01;
  int inversion_pairs = 2000;
  int gradient_points = 200;
};

// Uniform random triplets; duplicates allowed, no vocabulary attached.
KnowledgeGraph make_random_graph(int64_t num_entities, int64_t num_relations,
                                 int64_t num_triplets, uint64_t seed);

// One relational propagation hop with alpha = 1 - 2*beta versus an
// independently coded full-batch gradient-descent step on the mean squared
// translation residual (per-entity mean over incident triplets). Returns the
// max elementwise difference between the two updated tables.
double sgd_equivalence_discrepancy(const KnowledgeGraph& kg, const ModelSpec& spec,
                                   const EmbeddingStore<double>& store, double beta);

// Brute-force per-triplet double loop with locally coded context formulas.
std::vector<double> naive_context_sums(const KnowledgeGraph& kg, const ModelSpec& spec,
                                       const EmbeddingStore<double>& store, PropagationMode mode);

// Score-everything/sort/filter-by-membership reference evaluator.
RankingReport naive_evaluate(const ModelSpec& spec, const EmbeddingStore<double>& store,
                             std::span<const Triplet> test, const KnownTripletSet* filter,
                             const std::vector<std::vector<EntityId>>* candidates, TiePolicy tie);

struct GradCheckResult {
  double max_rel_err = 0;
  int points = 0;
  int skipped = 0;  // near-kink samples that were resampled
};
// Analytic gradients of one family's score (entities and raw relation
// parameters, through the orthogonalization for the block family) against
// central differences with step 1e-5 in float64, away from norm kinks.
GradCheckResult gradient_check(const ModelSpec& spec, uint64_t seed, int points);

std::vector<std::string> property_names();
// Empty selection runs everything. Unknown names throw ConfigError.
std::vector<PropertyResult> run_properties(const std::vector<std::string>& selection,
                                           const VerifyParams& params);

namespace detail {
using ContextFn = std::function<std::vector<double>(const ModelSpec&, std::span<const double> x,
                                                    std::span<const double> rel_params)>;
// Max elementwise |tail_fn(head_context(x, r), r) - x| over seeded random
// pairs; the tail side is injectable so tests can prove the checker catches
// broken transforms.
double inversion_residual(const ModelSpec& spec, uint64_t seed, int pairs,
                          const ContextFn& tail_fn);
}  // namespace detail

}  // namespace kgprop::verify
