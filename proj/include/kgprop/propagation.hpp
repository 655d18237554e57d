#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kgprop/graph.hpp"
#include "kgprop/model.hpp"

namespace kgprop {

// Rep transforms neighbors with the relation-aware context functions; Ep is
// the relation-free ablation that averages raw neighbor embeddings.
enum class PropagationMode { Rep, Ep };
const char* to_string(PropagationMode m);
PropagationMode propagation_mode_from_string(const std::string& s);

struct PropagationConfig {
  double alpha = 0.98;  // retained fraction of the current embedding
  int hops = 1;
  PropagationMode mode = PropagationMode::Rep;
  int threads = 1;
  std::string validate() const;
  void require_valid() const;
};

// Unnormalized per-entity context sums plus incident-triplet counts,
// accumulated in float64 regardless of the store precision.
struct ContextSums {
  int64_t num_entities = 0;
  int dim = 0;
  std::vector<double> sum;      // num_entities x dim
  std::vector<int64_t> degree;  // |as_head(i)| + |as_tail(i)|
};

// For each entity i: the tail neighbors of triplets (i, r, t) contribute
// tail_context(t, r) (the tail-side estimate of i) and the head neighbors of
// triplets (h, r, i) contribute head_context(h, r). Reads only the snapshot,
// so results are independent of entity processing order and thread count.
template <typename S>
ContextSums aggregate_contexts(const EmbeddingStore<S>& store, const AdjacencyIndex& adj,
                               const ModelSpec& spec, const RelationCache<S>& cache,
                               PropagationMode mode, int threads);

// e' = alpha * e + (1 - alpha) * sum / degree; zero-degree rows are copied
// bitwise. Relations are left untouched.
template <typename S>
void adapt_entities(const EmbeddingStore<S>& snapshot, const ContextSums& sums, double alpha,
                    EmbeddingStore<S>& out, int threads);

template <typename S>
using HopHook = std::function<void(int hop, const EmbeddingStore<S>& store, double seconds)>;

// Jacobi iteration: every hop aggregates from the previous hop's snapshot,
// then adapts into a fresh table. Relation parameters (and their
// orthogonalized blocks) stay frozen for the whole call.
template <typename S>
EmbeddingStore<S> propagate(const EmbeddingStore<S>& input, const AdjacencyIndex& adj,
                            const ModelSpec& spec, const PropagationConfig& config,
                            const HopHook<S>& hook = {});

// Relation-free ablation (identity contexts); family-independent.
template <typename S>
EmbeddingStore<S> propagate_ep(const EmbeddingStore<S>& input, const AdjacencyIndex& adj,
                               const PropagationConfig& config, const HopHook<S>& hook = {});

// Separately normalized context means, read-only diagnostics. The outgoing
// variant averages tail-side estimates over triplets where the entity is the
// head; the incoming variant averages head-side estimates where it is the
// tail. Zero-degree rows stay zero.
template <typename S>
std::vector<double> outgoing_context_means(const EmbeddingStore<S>& store,
                                           const AdjacencyIndex& adj, const ModelSpec& spec,
                                           const RelationCache<S>& cache, int threads = 1);
template <typename S>
std::vector<double> incoming_context_means(const EmbeddingStore<S>& store,
                                           const AdjacencyIndex& adj, const ModelSpec& spec,
                                           const RelationCache<S>& cache, int threads = 1);

}  // namespace kgprop
