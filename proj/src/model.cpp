#include "kgprop/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace kgprop {

const char* to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::TransE: return "transe";
    case ModelFamily::DistMult: return "distmult";
    case ModelFamily::RotatE: return "rotate";
    case ModelFamily::OTE: return "ote";
  }
  return "?";
}

const char* to_string(NormOrder n) { return n == NormOrder::L1 ? "l1" : "l2"; }

ModelFamily family_from_string(const std::string& s) {
  if (s == "transe") return ModelFamily::TransE;
  if (s == "distmult") return ModelFamily::DistMult;
  if (s == "rotate") return ModelFamily::RotatE;
  if (s == "ote") return ModelFamily::OTE;
  throw ConfigError("unknown model family: " + s);
}

NormOrder norm_from_string(const std::string& s) {
  if (s == "l1") return NormOrder::L1;
  if (s == "l2") return NormOrder::L2;
  throw ConfigError("unknown norm order: " + s);
}

int ModelSpec::relation_width() const {
  switch (family) {
    case ModelFamily::TransE:
    case ModelFamily::DistMult:
      return dim;
    case ModelFamily::RotatE:
      return dim / 2;
    case ModelFamily::OTE: {
      int g = group_size();
      return ote_groups * (g * g + g);
    }
  }
  return 0;
}

std::string ModelSpec::validate() const {
  if (dim <= 0) return "dim must be positive";
  if (margin < 0) return "gamma must be >= 0";
  if (family == ModelFamily::RotatE && dim % 2 != 0) return "rotate requires an even dim";
  if (family == ModelFamily::OTE) {
    if (ote_groups < 1) return "ote-groups must be >= 1";
    if (dim % ote_groups != 0) return "dim must be divisible by ote-groups";
  }
  return {};
}

void ModelSpec::require_valid() const {
  auto err = validate();
  if (!err.empty()) throw ConfigError(err);
}

template <typename S>
bool EmbeddingStore<S>::all_finite() const {
  for (S v : entities) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  for (S v : relations) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename S>
EmbeddingStore<S> init_embeddings(const ModelSpec& spec, int64_t num_entities,
                                  int64_t num_relations, uint64_t seed) {
  spec.require_valid();
  if (num_entities < 0 || num_relations < 0) throw ConfigError("negative table size");
  EmbeddingStore<S> st;
  st.num_entities = num_entities;
  st.num_relations = num_relations;
  st.dim = spec.dim;
  st.rel_width = spec.relation_width();
  st.entities.resize(static_cast<size_t>(num_entities) * spec.dim);
  st.relations.resize(static_cast<size_t>(num_relations) * st.rel_width);
  Rng rng(seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(spec.dim));
  for (auto& v : st.entities) v = static_cast<S>(rng.real(-bound, bound));
  switch (spec.family) {
    case ModelFamily::TransE:
    case ModelFamily::DistMult:
      for (auto& v : st.relations) v = static_cast<S>(rng.real(-bound, bound));
      break;
    case ModelFamily::RotatE: {
      const double pi = 3.14159265358979323846;
      for (auto& v : st.relations) v = static_cast<S>(rng.real(-pi, pi));
      break;
    }
    case ModelFamily::OTE: {
      const int g = spec.group_size();
      const int block = g * g + g;
      for (int64_t r = 0; r < num_relations; ++r) {
        S* row = st.relations.data() + r * st.rel_width;
        for (int grp = 0; grp < spec.ote_groups; ++grp) {
          S* b = row + grp * block;
          for (int i = 0; i < g * g; ++i) b[i] = static_cast<S>(rng.real(-0.1, 0.1));
          for (int i = 0; i < g; ++i) b[g * g + i] = static_cast<S>(0);
        }
      }
      break;
    }
  }
  return st;
}

// ---- Gram-Schmidt ---------------------------------------------------------

GramSchmidtTape gram_schmidt_forward(std::span<const double> m, int g) {
  if (g < 1 || static_cast<int>(m.size()) != g * g) {
    throw DimensionError("gram_schmidt: expected a g*g matrix");
  }
  GramSchmidtTape tape;
  tape.g = g;
  tape.input.assign(m.begin(), m.end());
  std::vector<double> v(g);
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) {
      // Rank deficiency within tolerance: seeded perturbation, one retry.
      Rng noise(0x6b6770726f746822ull);
      for (auto& x : tape.input) x += noise.real(-1e-6, 1e-6);
      tape.perturbed = true;
    }
    tape.q.assign(static_cast<size_t>(g) * g, 0.0);
    tape.coef.assign(static_cast<size_t>(g) * g, 0.0);
    tape.vnorm.assign(g, 0.0);
    bool ok = true;
    for (int j = 0; j < g; ++j) {
      for (int a = 0; a < g; ++a) v[a] = tape.input[a * g + j];
      for (int i = 0; i < j; ++i) {
        double c = 0;
        for (int a = 0; a < g; ++a) c += tape.q[a * g + i] * tape.input[a * g + j];
        tape.coef[i * g + j] = c;
        for (int a = 0; a < g; ++a) v[a] -= c * tape.q[a * g + i];
      }
      double n2 = 0;
      for (int a = 0; a < g; ++a) n2 += v[a] * v[a];
      double n = std::sqrt(n2);
      tape.vnorm[j] = n;
      if (n < 1e-8) {
        ok = false;
        break;
      }
      for (int a = 0; a < g; ++a) tape.q[a * g + j] = v[a] / n;
    }
    if (ok) return tape;
  }
  throw DegenerateMatrixError("gram_schmidt: matrix stayed rank-deficient after perturbation");
}

std::vector<double> gram_schmidt(std::span<const double> m, int g) {
  return gram_schmidt_forward(m, g).q;
}

std::vector<double> gram_schmidt_backward(const GramSchmidtTape& tape,
                                          std::span<const double> q_bar) {
  const int g = tape.g;
  if (static_cast<int>(q_bar.size()) != g * g) {
    throw DimensionError("gram_schmidt_backward: gradient shape mismatch");
  }
  std::vector<double> qb(q_bar.begin(), q_bar.end());  // accumulates uses by later columns
  std::vector<double> mb(static_cast<size_t>(g) * g, 0.0);
  std::vector<double> vb(g);
  for (int j = g - 1; j >= 0; --j) {
    // q_j = v_j / |v_j|
    double dot = 0;
    for (int a = 0; a < g; ++a) dot += tape.q[a * g + j] * qb[a * g + j];
    const double inv_n = 1.0 / tape.vnorm[j];
    for (int a = 0; a < g; ++a) vb[a] = (qb[a * g + j] - dot * tape.q[a * g + j]) * inv_n;
    // v_j = m_j - sum_{i<j} (q_i . m_j) q_i
    for (int a = 0; a < g; ++a) mb[a * g + j] += vb[a];
    for (int i = 0; i < j; ++i) {
      double vq = 0;
      for (int a = 0; a < g; ++a) vq += vb[a] * tape.q[a * g + i];
      const double c = tape.coef[i * g + j];
      for (int a = 0; a < g; ++a) {
        mb[a * g + j] -= vq * tape.q[a * g + i];
        qb[a * g + i] -= vq * tape.input[a * g + j] + c * vb[a];
      }
    }
  }
  return mb;
}

std::vector<GramSchmidtTape> ote_tapes(const ModelSpec& spec, std::span<const double> rel_params) {
  if (spec.family != ModelFamily::OTE) throw ConfigError("tapes are defined for the ote family");
  const int g = spec.group_size();
  const int block = g * g + g;
  if (static_cast<int>(rel_params.size()) != spec.relation_width()) {
    throw DimensionError("ote_tapes: relation row width mismatch");
  }
  std::vector<GramSchmidtTape> tapes;
  tapes.reserve(spec.ote_groups);
  for (int grp = 0; grp < spec.ote_groups; ++grp) {
    tapes.push_back(gram_schmidt_forward(rel_params.subspan(grp * block, g * g), g));
  }
  return tapes;
}

std::vector<GramSchmidtTape> ote_tapes(const ModelSpec& spec, std::span<const float> rel_params) {
  std::vector<double> wide(rel_params.begin(), rel_params.end());
  return ote_tapes(spec, std::span<const double>(wide));
}

// ---- Relation cache --------------------------------------------------------

template <typename S>
RelationCache<S> build_relation_cache(const ModelSpec& spec, const EmbeddingStore<S>& store) {
  spec.require_valid();
  if (store.dim != spec.dim || store.rel_width != spec.relation_width()) {
    throw DimensionError("relation cache: store shape disagrees with the model spec");
  }
  RelationCache<S> c;
  c.family = spec.family;
  c.dim = spec.dim;
  c.groups = spec.ote_groups;
  c.gsize = spec.group_size();
  c.num_relations = store.num_relations;
  c.store = &store;
  switch (spec.family) {
    case ModelFamily::RotatE: {
      const int m = spec.dim / 2;
      c.rot_cos.resize(static_cast<size_t>(store.num_relations) * m);
      c.rot_sin.resize(static_cast<size_t>(store.num_relations) * m);
      for (int64_t r = 0; r < store.num_relations; ++r) {
        auto row = store.relation(r);
        for (int i = 0; i < m; ++i) {
          const double theta = static_cast<double>(row[i]);
          c.rot_cos[r * m + i] = static_cast<S>(std::cos(theta));
          c.rot_sin[r * m + i] = static_cast<S>(std::sin(theta));
        }
      }
      break;
    }
    case ModelFamily::OTE: {
      const int g = c.gsize;
      const int block = g * g + g;
      c.orth.resize(static_cast<size_t>(store.num_relations) * spec.ote_groups * g * g);
      c.scale.resize(static_cast<size_t>(store.num_relations) * spec.dim);
      c.inv_scale.resize(static_cast<size_t>(store.num_relations) * spec.dim);
      std::vector<double> raw(g * g);
      for (int64_t r = 0; r < store.num_relations; ++r) {
        auto row = store.relation(r);
        for (int grp = 0; grp < spec.ote_groups; ++grp) {
          const S* b = row.data() + grp * block;
          for (int i = 0; i < g * g; ++i) raw[i] = static_cast<double>(b[i]);
          auto tape = gram_schmidt_forward(raw, g);
          S* dst = c.orth.data() + (static_cast<size_t>(r) * spec.ote_groups + grp) * g * g;
          for (int i = 0; i < g * g; ++i) dst[i] = static_cast<S>(tape.q[i]);
          for (int i = 0; i < g; ++i) {
            const double s = clamp_log_scale(static_cast<double>(b[g * g + i]));
            c.scale[static_cast<size_t>(r) * spec.dim + grp * g + i] = static_cast<S>(std::exp(s));
            c.inv_scale[static_cast<size_t>(r) * spec.dim + grp * g + i] =
                static_cast<S>(std::exp(-s));
          }
        }
      }
      break;
    }
    default:
      break;
  }
  return c;
}

// ---- Contexts ---------------------------------------------------------------

template <typename S>
void add_head_context(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                      std::span<const S> x, double* acc) {
  const int n = spec.dim;
  switch (spec.family) {
    case ModelFamily::TransE: {
      auto rel = cache.vec(r);
      for (int d = 0; d < n; ++d) acc[d] += static_cast<double>(x[d]) + static_cast<double>(rel[d]);
      break;
    }
    case ModelFamily::DistMult: {
      auto rel = cache.vec(r);
      for (int d = 0; d < n; ++d) acc[d] += static_cast<double>(x[d]) * static_cast<double>(rel[d]);
      break;
    }
    case ModelFamily::RotatE: {
      const int m = n / 2;
      const S* cs = cache.cosines(r);
      const S* sn = cache.sines(r);
      for (int i = 0; i < m; ++i) {
        const double re = static_cast<double>(x[i]);
        const double im = static_cast<double>(x[m + i]);
        acc[i] += re * static_cast<double>(cs[i]) - im * static_cast<double>(sn[i]);
        acc[m + i] += re * static_cast<double>(sn[i]) + im * static_cast<double>(cs[i]);
      }
      break;
    }
    case ModelFamily::OTE: {
      const int g = cache.gsize;
      const S* sc = cache.scales(r);
      for (int grp = 0; grp < cache.groups; ++grp) {
        const S* q = cache.block(r, grp);
        const S* xg = x.data() + grp * g;
        double* out = acc + grp * g;
        for (int a = 0; a < g; ++a) {
          double s = 0;
          const S* qrow = q + a * g;
          for (int b = 0; b < g; ++b) s += static_cast<double>(qrow[b]) * static_cast<double>(xg[b]);
          out[a] += static_cast<double>(sc[grp * g + a]) * s;
        }
      }
      break;
    }
  }
}

template <typename S>
void add_tail_context(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                      std::span<const S> x, double* acc) {
  const int n = spec.dim;
  switch (spec.family) {
    case ModelFamily::TransE: {
      auto rel = cache.vec(r);
      for (int d = 0; d < n; ++d) acc[d] += static_cast<double>(x[d]) - static_cast<double>(rel[d]);
      break;
    }
    case ModelFamily::DistMult: {
      auto rel = cache.vec(r);
      for (int d = 0; d < n; ++d) acc[d] += static_cast<double>(x[d]) * static_cast<double>(rel[d]);
      break;
    }
    case ModelFamily::RotatE: {
      // Rotation by the conjugate phase.
      const int m = n / 2;
      const S* cs = cache.cosines(r);
      const S* sn = cache.sines(r);
      for (int i = 0; i < m; ++i) {
        const double re = static_cast<double>(x[i]);
        const double im = static_cast<double>(x[m + i]);
        acc[i] += re * static_cast<double>(cs[i]) + im * static_cast<double>(sn[i]);
        acc[m + i] += im * static_cast<double>(cs[i]) - re * static_cast<double>(sn[i]);
      }
      break;
    }
    case ModelFamily::OTE: {
      // Exact inverse of the head transform: transpose after unscaling.
      const int g = cache.gsize;
      const S* isc = cache.inv_scales(r);
      for (int grp = 0; grp < cache.groups; ++grp) {
        const S* q = cache.block(r, grp);
        const S* xg = x.data() + grp * g;
        double* out = acc + grp * g;
        for (int b = 0; b < g; ++b) {
          const double tb = static_cast<double>(isc[grp * g + b]) * static_cast<double>(xg[b]);
          const S* qrow = q + b * g;
          for (int a = 0; a < g; ++a) out[a] += static_cast<double>(qrow[a]) * tb;
        }
      }
      break;
    }
  }
}

namespace {

template <typename S>
void check_entity_dim(const ModelSpec& spec, std::span<const S> x) {
  if (static_cast<int>(x.size()) != spec.dim) {
    throw DimensionError("entity vector length disagrees with the model dim");
  }
}

// Builds a single-relation store so the one-shot raw-parameter entry points
// can share the cached code paths.
template <typename S>
struct OneRelation {
  EmbeddingStore<S> store;
  RelationCache<S> cache;
  explicit OneRelation(const ModelSpec& spec, std::span<const S> rel_params) {
    if (static_cast<int>(rel_params.size()) != spec.relation_width()) {
      throw DimensionError("relation row width disagrees with the model spec");
    }
    store.num_entities = 0;
    store.num_relations = 1;
    store.dim = spec.dim;
    store.rel_width = spec.relation_width();
    store.relations.assign(rel_params.begin(), rel_params.end());
    cache = build_relation_cache(spec, store);
  }
};

}  // namespace

template <typename S>
std::vector<S> head_context(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                            std::span<const S> x) {
  check_entity_dim(spec, x);
  std::vector<double> acc(spec.dim, 0.0);
  add_head_context(spec, cache, r, x, acc.data());
  return std::vector<S>(acc.begin(), acc.end());
}

template <typename S>
std::vector<S> tail_context(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                            std::span<const S> x) {
  check_entity_dim(spec, x);
  std::vector<double> acc(spec.dim, 0.0);
  add_tail_context(spec, cache, r, x, acc.data());
  return std::vector<S>(acc.begin(), acc.end());
}

template <typename S>
std::vector<S> head_context(const ModelSpec& spec, std::span<const S> x,
                            std::span<const S> rel_params) {
  OneRelation<S> one(spec, rel_params);
  return head_context(spec, one.cache, 0, x);
}

template <typename S>
std::vector<S> tail_context(const ModelSpec& spec, std::span<const S> x,
                            std::span<const S> rel_params) {
  OneRelation<S> one(spec, rel_params);
  return tail_context(spec, one.cache, 0, x);
}

// ---- Scores ------------------------------------------------------------------

template <typename S>
double score_cached(const ModelSpec& spec, const RelationCache<S>& cache, RelationId r,
                    std::span<const S> h, std::span<const S> t) {
  check_entity_dim(spec, h);
  check_entity_dim(spec, t);
  const int n = spec.dim;
  const bool l1 = spec.norm == NormOrder::L1;
  switch (spec.family) {
    case ModelFamily::TransE: {
      auto rel = cache.vec(r);
      double acc = 0;
      for (int d = 0; d < n; ++d) {
        const double u = static_cast<double>(h[d]) + static_cast<double>(rel[d]) -
                         static_cast<double>(t[d]);
        acc += l1 ? std::fabs(u) : u * u;
      }
      return l1 ? -acc : -std::sqrt(acc);
    }
    case ModelFamily::DistMult: {
      auto rel = cache.vec(r);
      double acc = 0;
      // h*t first so the score is symmetric in h and t bit for bit.
      for (int d = 0; d < n; ++d) {
        acc += static_cast<double>(rel[d]) *
               (static_cast<double>(h[d]) * static_cast<double>(t[d]));
      }
      return acc;
    }
    case ModelFamily::RotatE: {
      // Real components first, then imaginary, so the accumulation order
      // matches a flat ascending pass over the rotated vector.
      const int m = n / 2;
      const S* cs = cache.cosines(r);
      const S* sn = cache.sines(r);
      double acc = 0;
      for (int i = 0; i < m; ++i) {
        const double ur = static_cast<double>(h[i]) * static_cast<double>(cs[i]) -
                          static_cast<double>(h[m + i]) * static_cast<double>(sn[i]) -
                          static_cast<double>(t[i]);
        acc += l1 ? std::fabs(ur) : ur * ur;
      }
      for (int i = 0; i < m; ++i) {
        const double ui = static_cast<double>(h[i]) * static_cast<double>(sn[i]) +
                          static_cast<double>(h[m + i]) * static_cast<double>(cs[i]) -
                          static_cast<double>(t[m + i]);
        acc += l1 ? std::fabs(ui) : ui * ui;
      }
      return l1 ? -acc : -std::sqrt(acc);
    }
    case ModelFamily::OTE: {
      const int g = cache.gsize;
      const S* sc = cache.scales(r);
      double total = 0;
      for (int grp = 0; grp < cache.groups; ++grp) {
        const S* q = cache.block(r, grp);
        double acc = 0;
        for (int a = 0; a < g; ++a) {
          double w = 0;
          const S* qrow = q + a * g;
          for (int b = 0; b < g; ++b) {
            w += static_cast<double>(qrow[b]) * static_cast<double>(h[grp * g + b]);
          }
          const double u = static_cast<double>(sc[grp * g + a]) * w -
                           static_cast<double>(t[grp * g + a]);
          acc += l1 ? std::fabs(u) : u * u;
        }
        total += l1 ? acc : std::sqrt(acc);
      }
      return -total;
    }
  }
  return 0;
}

template <typename S>
double score(const ModelSpec& spec, std::span<const S> h, std::span<const S> rel_params,
             std::span<const S> t) {
  OneRelation<S> one(spec, rel_params);
  return score_cached(spec, one.cache, 0, h, t);
}

// ---- Gradients ------------------------------------------------------------------

namespace {

inline double sign_of(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

template <typename S>
double score_and_grad(const ModelSpec& spec, std::span<const S> h, std::span<const S> t,
                      std::span<const S> rel_params, const GramSchmidtTape* tapes,
                      std::span<double> dh, std::span<double> dt, std::span<double> drel) {
  check_entity_dim(spec, h);
  check_entity_dim(spec, t);
  const int n = spec.dim;
  const int w = spec.relation_width();
  if (static_cast<int>(rel_params.size()) != w || static_cast<int>(drel.size()) != w ||
      static_cast<int>(dh.size()) != n || static_cast<int>(dt.size()) != n) {
    throw DimensionError("score_and_grad: buffer shape mismatch");
  }
  std::fill(dh.begin(), dh.end(), 0.0);
  std::fill(dt.begin(), dt.end(), 0.0);
  std::fill(drel.begin(), drel.end(), 0.0);
  const bool l1 = spec.norm == NormOrder::L1;
  switch (spec.family) {
    case ModelFamily::TransE: {
      std::vector<double> u(n);
      double acc = 0;
      for (int d = 0; d < n; ++d) {
        u[d] = static_cast<double>(h[d]) + static_cast<double>(rel_params[d]) -
               static_cast<double>(t[d]);
        acc += l1 ? std::fabs(u[d]) : u[d] * u[d];
      }
      const double nrm = l1 ? acc : std::sqrt(acc);
      if (nrm > 0) {
        for (int d = 0; d < n; ++d) {
          const double gd = l1 ? sign_of(u[d]) : u[d] / nrm;
          dh[d] = -gd;
          drel[d] = -gd;
          dt[d] = gd;
        }
      }
      return -nrm;
    }
    case ModelFamily::DistMult: {
      double acc = 0;
      for (int d = 0; d < n; ++d) {
        const double hd = static_cast<double>(h[d]);
        const double td = static_cast<double>(t[d]);
        const double rd = static_cast<double>(rel_params[d]);
        acc += rd * (hd * td);
        dh[d] = rd * td;
        dt[d] = rd * hd;
        drel[d] = hd * td;
      }
      return acc;
    }
    case ModelFamily::RotatE: {
      const int m = n / 2;
      std::vector<double> ur(m), ui(m), hr(m), hi(m), cs(m), sn(m);
      double acc = 0;
      for (int i = 0; i < m; ++i) {
        const double theta = static_cast<double>(rel_params[i]);
        cs[i] = std::cos(theta);
        sn[i] = std::sin(theta);
        const double re = static_cast<double>(h[i]);
        const double im = static_cast<double>(h[m + i]);
        hr[i] = re * cs[i] - im * sn[i];
        hi[i] = re * sn[i] + im * cs[i];
        ur[i] = hr[i] - static_cast<double>(t[i]);
        ui[i] = hi[i] - static_cast<double>(t[m + i]);
        acc += l1 ? std::fabs(ur[i]) + std::fabs(ui[i]) : ur[i] * ur[i] + ui[i] * ui[i];
      }
      const double nrm = l1 ? acc : std::sqrt(acc);
      if (nrm > 0) {
        for (int i = 0; i < m; ++i) {
          const double gr = l1 ? sign_of(ur[i]) : ur[i] / nrm;
          const double gi = l1 ? sign_of(ui[i]) : ui[i] / nrm;
          dh[i] = -(gr * cs[i] + gi * sn[i]);
          dh[m + i] = gr * sn[i] - gi * cs[i];
          dt[i] = gr;
          dt[m + i] = gi;
          drel[i] = gr * hi[i] - gi * hr[i];
        }
      }
      return -nrm;
    }
    case ModelFamily::OTE: {
      if (tapes == nullptr) throw DimensionError("score_and_grad: the ote family needs tapes");
      const int g = spec.group_size();
      const int block = g * g + g;
      std::vector<double> wv(g), y(g), u(g);
      double total = 0;
      for (int grp = 0; grp < spec.ote_groups; ++grp) {
        const GramSchmidtTape& tape = tapes[grp];
        const S* braw = rel_params.data() + grp * block;
        double acc = 0;
        for (int a = 0; a < g; ++a) {
          double s = 0;
          for (int b = 0; b < g; ++b) {
            s += tape.q[a * g + b] * static_cast<double>(h[grp * g + b]);
          }
          wv[a] = s;
          const double raw_s = static_cast<double>(braw[g * g + a]);
          y[a] = std::exp(clamp_log_scale(raw_s)) * s;
          u[a] = y[a] - static_cast<double>(t[grp * g + a]);
          acc += l1 ? std::fabs(u[a]) : u[a] * u[a];
        }
        const double nrm = l1 ? acc : std::sqrt(acc);
        total += nrm;
        if (nrm > 0) {
          double* dphi = drel.data() + grp * block;
          double* ds = drel.data() + grp * block + g * g;
          for (int a = 0; a < g; ++a) {
            const double gu = l1 ? sign_of(u[a]) : u[a] / nrm;
            const double raw_s = static_cast<double>(braw[g * g + a]);
            const double sc = std::exp(clamp_log_scale(raw_s));
            dt[grp * g + a] += gu;
            // Saturated scales stop the gradient.
            ds[a] = (raw_s < -10.0 || raw_s > 10.0) ? 0.0 : -gu * y[a];
            const double gw = gu * sc;
            for (int b = 0; b < g; ++b) {
              dphi[a * g + b] = -gw * static_cast<double>(h[grp * g + b]);
              dh[grp * g + b] -= gw * tape.q[a * g + b];
            }
          }
        }
      }
      return -total;
    }
  }
  return 0;
}

// ---- Explicit instantiations -------------------------------------------------

template struct EmbeddingStore<float>;
template struct EmbeddingStore<double>;
template EmbeddingStore<float> init_embeddings<float>(const ModelSpec&, int64_t, int64_t, uint64_t);
template EmbeddingStore<double> init_embeddings<double>(const ModelSpec&, int64_t, int64_t,
                                                        uint64_t);
template RelationCache<float> build_relation_cache<float>(const ModelSpec&,
                                                          const EmbeddingStore<float>&);
template RelationCache<double> build_relation_cache<double>(const ModelSpec&,
                                                            const EmbeddingStore<double>&);
template void add_head_context<float>(const ModelSpec&, const RelationCache<float>&, RelationId,
                                      std::span<const float>, double*);
template void add_head_context<double>(const ModelSpec&, const RelationCache<double>&, RelationId,
                                       std::span<const double>, double*);
template void add_tail_context<float>(const ModelSpec&, const RelationCache<float>&, RelationId,
                                      std::span<const float>, double*);
template void add_tail_context<double>(const ModelSpec&, const RelationCache<double>&, RelationId,
                                       std::span<const double>, double*);
template std::vector<float> head_context<float>(const ModelSpec&, const RelationCache<float>&,
                                                RelationId, std::span<const float>);
template std::vector<double> head_context<double>(const ModelSpec&, const RelationCache<double>&,
                                                  RelationId, std::span<const double>);
template std::vector<float> tail_context<float>(const ModelSpec&, const RelationCache<float>&,
                                                RelationId, std::span<const float>);
template std::vector<double> tail_context<double>(const ModelSpec&, const RelationCache<double>&,
                                                  RelationId, std::span<const double>);
template std::vector<float> head_context<float>(const ModelSpec&, std::span<const float>,
                                                std::span<const float>);
template std::vector<double> head_context<double>(const ModelSpec&, std::span<const double>,
                                                  std::span<const double>);
template std::vector<float> tail_context<float>(const ModelSpec&, std::span<const float>,
                                                std::span<const float>);
template std::vector<double> tail_context<double>(const ModelSpec&, std::span<const double>,
                                                  std::span<const double>);
template double score<float>(const ModelSpec&, std::span<const float>, std::span<const float>,
                             std::span<const float>);
template double score<double>(const ModelSpec&, std::span<const double>, std::span<const double>,
                              std::span<const double>);
template double score_cached<float>(const ModelSpec&, const RelationCache<float>&, RelationId,
                                    std::span<const float>, std::span<const float>);
template double score_cached<double>(const ModelSpec&, const RelationCache<double>&, RelationId,
                                     std::span<const double>, std::span<const double>);
template double score_and_grad<float>(const ModelSpec&, std::span<const float>,
                                      std::span<const float>, std::span<const float>,
                                      const GramSchmidtTape*, std::span<double>, std::span<double>,
                                      std::span<double>);
template double score_and_grad<double>(const ModelSpec&, std::span<const double>,
                                       std::span<const double>, std::span<const double>,
                                       const GramSchmidtTape*, std::span<double>, std::span<double>,
                                       std::span<double>);

}  // namespace kgprop
