#include "kgprop/propagation.hpp"

#include <cmath>

#include "kgprop/util.hpp"

namespace kgprop {

const char* to_string(PropagationMode m) { return m == PropagationMode::Rep ? "rep" : "ep"; }

PropagationMode propagation_mode_from_string(const std::string& s) {
  if (s == "rep") return PropagationMode::Rep;
  if (s == "ep") return PropagationMode::Ep;
  throw ConfigError("unknown propagation mode: " + s);
}

std::string PropagationConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) return "alpha must lie in [0, 1)";
  if (hops < 0) return "hops must be >= 0";
  if (threads < 1) return "threads must be >= 1";
  return {};
}

void PropagationConfig::require_valid() const {
  auto err = validate();
  if (!err.empty()) throw ConfigError(err);
}

template <typename S>
ContextSums aggregate_contexts(const EmbeddingStore<S>& store, const AdjacencyIndex& adj,
                               const ModelSpec& spec, const RelationCache<S>& cache,
                               PropagationMode mode, int threads) {
  if (adj.num_entities() != store.num_entities) {
    throw DimensionError("adjacency and embedding table disagree on the entity count");
  }
  ContextSums sums;
  sums.num_entities = store.num_entities;
  sums.dim = store.dim;
  sums.sum.assign(static_cast<size_t>(store.num_entities) * store.dim, 0.0);
  sums.degree.assign(store.num_entities, 0);
  const int n = store.dim;
  parallel_for(store.num_entities, threads, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      double* acc = sums.sum.data() + i * n;
      int64_t deg = 0;
      for (const AdjPair& p : adj.as_head(static_cast<EntityId>(i))) {
        // (i, r, t): the tail-side estimate of i.
        auto nb = store.entity(p.entity);
        if (mode == PropagationMode::Rep) {
          add_tail_context(spec, cache, p.relation, nb, acc);
        } else {
          for (int d = 0; d < n; ++d) acc[d] += static_cast<double>(nb[d]);
        }
        ++deg;
      }
      for (const AdjPair& p : adj.as_tail(static_cast<EntityId>(i))) {
        // (h, r, i): the head-side estimate of i.
        auto nb = store.entity(p.entity);
        if (mode == PropagationMode::Rep) {
          add_head_context(spec, cache, p.relation, nb, acc);
        } else {
          for (int d = 0; d < n; ++d) acc[d] += static_cast<double>(nb[d]);
        }
        ++deg;
      }
      sums.degree[i] = deg;
    }
  });
  return sums;
}

template <typename S>
void adapt_entities(const EmbeddingStore<S>& snapshot, const ContextSums& sums, double alpha,
                    EmbeddingStore<S>& out, int threads) {
  if (sums.num_entities != snapshot.num_entities || sums.dim != snapshot.dim) {
    throw DimensionError("context sums and snapshot shapes disagree");
  }
  out = snapshot;
  const int n = snapshot.dim;
  parallel_for(snapshot.num_entities, threads, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const int64_t deg = sums.degree[i];
      if (deg == 0) continue;  // untouched rows keep their snapshot bits
      const double blend = (1.0 - alpha) / static_cast<double>(deg);
      const double* acc = sums.sum.data() + i * n;
      auto src = snapshot.entity(i);
      auto dst = out.entity(i);
      for (int d = 0; d < n; ++d) {
        dst[d] = static_cast<S>(alpha * static_cast<double>(src[d]) + blend * acc[d]);
      }
    }
  });
}

namespace {

template <typename S>
EmbeddingStore<S> run_hops(const EmbeddingStore<S>& input, const AdjacencyIndex& adj,
                           const ModelSpec& spec, const PropagationConfig& config,
                           PropagationMode mode, const HopHook<S>& hook) {
  config.require_valid();
  EmbeddingStore<S> cur = input;
  if (config.hops == 0) return cur;
  // Relation parameters never change during adaptation, so the operator
  // cache is built once for all hops. The Ep ablation never reads it.
  RelationCache<S> cache;
  if (mode == PropagationMode::Rep) {
    spec.require_valid();
    cache = build_relation_cache(spec, input);
  }
  EmbeddingStore<S> next;
  for (int hop = 1; hop <= config.hops; ++hop) {
    StopWatch watch;
    ContextSums sums = aggregate_contexts(cur, adj, spec, cache, mode, config.threads);
    adapt_entities(cur, sums, config.alpha, next, config.threads);
    next.iteration = cur.iteration + 1;
    std::swap(cur, next);
    if (hook) hook(hop, cur, watch.seconds());
  }
  return cur;
}

}  // namespace

template <typename S>
EmbeddingStore<S> propagate(const EmbeddingStore<S>& input, const AdjacencyIndex& adj,
                            const ModelSpec& spec, const PropagationConfig& config,
                            const HopHook<S>& hook) {
  PropagationConfig cfg = config;
  cfg.mode = PropagationMode::Rep;
  return run_hops(input, adj, spec, cfg, PropagationMode::Rep, hook);
}

template <typename S>
EmbeddingStore<S> propagate_ep(const EmbeddingStore<S>& input, const AdjacencyIndex& adj,
                               const PropagationConfig& config, const HopHook<S>& hook) {
  ModelSpec dummy;
  dummy.dim = input.dim;
  PropagationConfig cfg = config;
  cfg.mode = PropagationMode::Ep;
  return run_hops(input, adj, dummy, cfg, PropagationMode::Ep, hook);
}

namespace {

template <typename S>
std::vector<double> directional_means(const EmbeddingStore<S>& store, const AdjacencyIndex& adj,
                                      const ModelSpec& spec, const RelationCache<S>& cache,
                                      bool outgoing, int threads) {
  if (adj.num_entities() != store.num_entities) {
    throw DimensionError("adjacency and embedding table disagree on the entity count");
  }
  const int n = store.dim;
  std::vector<double> out(static_cast<size_t>(store.num_entities) * n, 0.0);
  parallel_for(store.num_entities, threads, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      double* acc = out.data() + i * n;
      int64_t deg = 0;
      auto span = outgoing ? adj.as_head(static_cast<EntityId>(i))
                           : adj.as_tail(static_cast<EntityId>(i));
      for (const AdjPair& p : span) {
        auto nb = store.entity(p.entity);
        if (outgoing) {
          add_tail_context(spec, cache, p.relation, nb, acc);
        } else {
          add_head_context(spec, cache, p.relation, nb, acc);
        }
        ++deg;
      }
      if (deg > 0) {
        const double inv = 1.0 / static_cast<double>(deg);
        for (int d = 0; d < n; ++d) acc[d] *= inv;
      }
    }
  });
  return out;
}

}  // namespace

template <typename S>
std::vector<double> outgoing_context_means(const EmbeddingStore<S>& store,
                                           const AdjacencyIndex& adj, const ModelSpec& spec,
                                           const RelationCache<S>& cache, int threads) {
  return directional_means(store, adj, spec, cache, true, threads);
}

template <typename S>
std::vector<double> incoming_context_means(const EmbeddingStore<S>& store,
                                           const AdjacencyIndex& adj, const ModelSpec& spec,
                                           const RelationCache<S>& cache, int threads) {
  return directional_means(store, adj, spec, cache, false, threads);
}

// ---- Explicit instantiations -------------------------------------------------

template ContextSums aggregate_contexts<float>(const EmbeddingStore<float>&, const AdjacencyIndex&,
                                               const ModelSpec&, const RelationCache<float>&,
                                               PropagationMode, int);
template ContextSums aggregate_contexts<double>(const EmbeddingStore<double>&,
                                                const AdjacencyIndex&, const ModelSpec&,
                                                const RelationCache<double>&, PropagationMode, int);
template void adapt_entities<float>(const EmbeddingStore<float>&, const ContextSums&, double,
                                    EmbeddingStore<float>&, int);
template void adapt_entities<double>(const EmbeddingStore<double>&, const ContextSums&, double,
                                     EmbeddingStore<double>&, int);
template EmbeddingStore<float> propagate<float>(const EmbeddingStore<float>&,
                                                const AdjacencyIndex&, const ModelSpec&,
                                                const PropagationConfig&, const HopHook<float>&);
template EmbeddingStore<double> propagate<double>(const EmbeddingStore<double>&,
                                                  const AdjacencyIndex&, const ModelSpec&,
                                                  const PropagationConfig&, const HopHook<double>&);
template EmbeddingStore<float> propagate_ep<float>(const EmbeddingStore<float>&,
                                                   const AdjacencyIndex&,
                                                   const PropagationConfig&,
                                                   const HopHook<float>&);
template EmbeddingStore<double> propagate_ep<double>(const EmbeddingStore<double>&,
                                                     const AdjacencyIndex&,
                                                     const PropagationConfig&,
                                                     const HopHook<double>&);
template std::vector<double> outgoing_context_means<float>(const EmbeddingStore<float>&,
                                                           const AdjacencyIndex&, const ModelSpec&,
                                                           const RelationCache<float>&, int);
template std::vector<double> outgoing_context_means<double>(const EmbeddingStore<double>&,
                                                            const AdjacencyIndex&,
                                                            const ModelSpec&,
                                                            const RelationCache<double>&, int);
template std::vector<double> incoming_context_means<float>(const EmbeddingStore<float>&,
                                                           const AdjacencyIndex&, const ModelSpec&,
                                                           const RelationCache<float>&, int);
template std::vector<double> incoming_context_means<double>(const EmbeddingStore<double>&,
                                                            const AdjacencyIndex&,
                                                            const ModelSpec&,
                                                            const RelationCache<double>&, int);

}  // namespace kgprop
