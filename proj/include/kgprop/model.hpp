#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kgprop/error.hpp"
#include "kgprop/graph.hpp"
#include "kgprop/rng.hpp"

namespace kgprop {

enum class ModelFamily { TransE, DistMult, RotatE, OTE };
enum class NormOrder { L1, L2 };

const char* to_string(ModelFamily f);
const char* to_string(NormOrder n);
ModelFamily family_from_string(const std::string& s);
NormOrder norm_from_string(const std::string& s);

// Shape and scoring conventions shared by every component. Scores are
// oriented so that higher means more plausible (distance families are
// negated).
struct ModelSpec {
  ModelFamily family = ModelFamily::TransE;
  int dim = 200;         // entity dimension n; RotatE stores re in [0,n/2), im in [n/2,n)
  double margin = 12.0;  // gamma of the ranking criterion
  NormOrder norm = NormOrder::L2;
  int ote_groups = 1;  // number of block-diagonal groups

  int group_size() const { return ote_groups > 0 ? dim / ote_groups : 0; }
  // Scalars per relation row: n (TransE/DistMult), n/2 phases (RotatE), or
  // groups*(g*g raw matrix + g log-scales) concatenated per group.
  int relation_width() const;
  std::string validate() const;  // empty when well-formed
  void require_valid() const;    // throws ConfigError
};

template <typename S>
struct EmbeddingStore {
  int64_t num_entities = 0;
  int64_t num_relations = 0;
  int dim = 0;
  int rel_width = 0;
  int64_t iteration = 0;  // adaptation steps applied after training
  std::vector<S> entities;   // num_entities x dim, row-major
  std::vector<S> relations;  // num_relations x rel_width, row-major

  std::span<S> entity(int64_t i) {
    return {entities.data() + i * dim, static_cast<size_t>(dim)};
  }
  std::span<const S> entity(int64_t i) const {
    return {entities.data() + i * dim, static_cast<size_t>(dim)};
  }
  std::span<S> relation(int64_t r) {
    return {relations.data() + r * rel_width, static_cast<size_t>(rel_width)};
  }
  std::span<const S> relation(int64_t r) const {
    return {relations.data() + r * rel_width, static_cast<size_t>(rel_width)};
  }
  bool all_finite() const;
};

// Uniform(-6/sqrt(n), 6/sqrt(n)) entities; relation init per family
// (translations/factors like entities, phases uniform(-pi, pi), raw matrix
// entries uniform(-0.1, 0.1) with zero log-scales).
template <typename S>
EmbeddingStore<S> init_embeddings(const ModelSpec& spec, int64_t num_entities,
                                  int64_t num_relations, uint64_t seed);

// ---- Gram-Schmidt -------------------------------------------------------

// Classical Gram-Schmidt over columns plus the intermediates the reverse
// pass needs. A column whose residual norm falls under 1e-8 triggers one
// seeded 1e-6 perturbation retry; a second failure throws.
struct GramSchmidtTape {
  int g = 0;
  bool perturbed = false;
  std::vector<double> input;  // g*g, after perturbation if any
  std::vector<double> q;      // g*g, orthonormal columns
  std::vector<double> coef;   // coef[i*g+j] = q_i . m_j for i < j
  std::vector<double> vnorm;  // residual norms per column
};

GramSchmidtTape gram_schmidt_forward(std::span<const double> m, int g);
std::vector<double> gram_schmidt(std::span<const double> m, int g);
// Pullback of dL/dq into dL/dm through the recorded forward pass.
std::vector<double> gram_schmidt_backward(const GramSchmidtTape& tape,
                                          std::span<const double> q_bar);

inline double clamp_log_scale(double s) { return s < -10.0 ? -10.0 : (s > 10.0 ? 10.0 : s); }

// ---- Per-relation operator cache -----------------------------------------

// TransE/DistMult read the store rows directly; RotatE caches cos/sin of the
// phases; the block-orthogonal family caches orthogonalized blocks and the
// clamped exp(+-s) scales. Rebuilt whenever relation parameters change and
// kept frozen across propagation hops.
template <typename S>
struct RelationCache {
  ModelFamily family = ModelFamily::TransE;
  int dim = 0;
  int groups = 1;
  int gsize = 0;
  int64_t num_relations = 0;
  const EmbeddingStore<S>* store = nullptr;
  std::vector<S> rot_cos, rot_sin;     // |R| x dim/2 each
  std::vector<S> orth;                 // |R| x groups x g*g
  std::vector<S> scale, inv_scale;     // |R| x dim each

  std::span<const S> vec(RelationId r) const { return store->relation(r); }
  const S* cosines(RelationId r) const { return rot_cos.data() + static_cast<size_t>(r) * (dim / 2); }
  const S* sines(RelationId r) const { return rot_sin.data() + static_cast<size_t>(r) * (dim / 2); }
  const S* block(RelationId r, int grp) const {
    return orth.data() + (static_cast<size_t>(r) * groups + grp) * gsize * gsize;
  }
  const S* scales(RelationId r) const { return scale.data() + static_cast<size_t>(r) * dim; }
  const S* inv_scales(RelationId r) const { return inv_scale.data() + static_cast<size_t>(r) * dim; }
};

template <typename S>
RelationCache<S> build_relation_cache(const ModelSpec& spec, const EmbeddingStore<S>& store);

// ---- Context functions ----------------------------------------------------

// head variant transforms an entity acting as head into its implied partner
// position; the tail variant inverts it from the tail side, so
// tail(head(x, r), r) == x for the translation, rotation, and
// block-orthogonal families (the bilinear family shares one transform).
// The add_* forms accumulate into a float64 buffer.
template <typename S>
void add_head_context(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                      std::span<const S> x, double* acc);
template <typename S>
void add_tail_context(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                      std::span<const S> x, double* acc);
template <typename S>
std::vector<S> head_context(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                            std::span<const S> x);
template <typename S>
std::vector<S> tail_context(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                            std::span<const S> x);
// One-shot variants on a raw relation parameter row (orthogonalizes on the
// fly for the block family).
template <typename S>
std::vector<S> head_context(const ModelSpec& spec, std::span<const S> x,
                            std::span<const S> rel_params);
template <typename S>
std::vector<S> tail_context(const ModelSpec& spec, std::span<const S> x,
                            std::span<const S> rel_params);

// ---- Scores ----------------------------------------------------------------

template <typename S>
double score(const ModelSpec& spec, std::span<const S> h, std::span<const S> rel_params,
             std::span<const S> t);
template <typename S>
double score_cached(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                    std::span<const S> h, std::span<const S> t);

// Orthogonalization tapes for one relation row of the block family (one per
// group); shared across a batch so the reverse pass runs once per relation.
std::vector<GramSchmidtTape> ote_tapes(const ModelSpec& spec, std::span<const double> rel_params);
std::vector<GramSchmidtTape> ote_tapes(const ModelSpec& spec, std::span<const float> rel_params);

// Analytic score gradients. dh/dt have length n. drel matches the raw
// relation row layout, except that for the block family the matrix slots
// hold gradients w.r.t. the orthogonalized blocks (map them back through
// gram_schmidt_backward) and the scale slots hold d/d s directly. tapes is
// required for the block family and ignored otherwise. Returns the score.
template <typename S>
double score_and_grad(const ModelSpec& spec, std::span<const S> h, std::span<const S> t,
                      std::span<const S> rel_params, const GramSchmidtTape* tapes,
                      std::span<double> dh, std::span<double> dt, std::span<double> drel);

}  // namespace kgprop
