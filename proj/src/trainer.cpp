#include "kgprop/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <memory>
#include <numeric>
#include <unordered_map>

#include "kgprop/util.hpp"

namespace kgprop {

const char* to_string(NegativeMode m) {
  switch (m) {
    case NegativeMode::CorruptHead: return "head";
    case NegativeMode::CorruptTail: return "tail";
    case NegativeMode::BothUniform: return "both";
  }
  return "?";
}

NegativeMode negative_mode_from_string(const std::string& s) {
  if (s == "head") return NegativeMode::CorruptHead;
  if (s == "tail") return NegativeMode::CorruptTail;
  if (s == "both") return NegativeMode::BothUniform;
  throw ConfigError("unknown negative mode: " + s);
}

std::string TrainConfig::validate() const {
  if (!(learning_rate > 0)) return "learning-rate must be positive";
  if (batch_size < 1) return "batch-size must be >= 1";
  if (negatives_per_positive < 1) return "negatives must be >= 1";
  if (epochs < 0) return "epochs must be >= 0";
  if (negative_retry_bound < 1) return "negative-retry-bound must be >= 1";
  if (threads < 1) return "threads must be >= 1";
  for (double f : checkpoint_fractions) {
    if (!(f > 0.0 && f <= 1.0)) return "checkpoint fractions must lie in (0, 1]";
  }
  return {};
}

void TrainConfig::require_valid() const {
  auto err = validate();
  if (!err.empty()) throw ConfigError(err);
}

NegativeSample sample_negative(const Triplet& positive, int64_t num_entities, NegativeMode mode,
                               Rng& rng, const KnownTripletSet* filter, int retry_bound) {
  if (num_entities <= 0) throw ConfigError("cannot sample negatives without entities");
  bool corrupt_head = false;
  switch (mode) {
    case NegativeMode::CorruptHead: corrupt_head = true; break;
    case NegativeMode::CorruptTail: corrupt_head = false; break;
    case NegativeMode::BothUniform: corrupt_head = rng.coin(); break;
  }
  NegativeSample out;
  out.corrupted_head = corrupt_head;
  const int attempts = filter ? retry_bound : 1;
  for (int a = 0; a < attempts; ++a) {
    const auto repl = static_cast<EntityId>(rng.below(static_cast<uint64_t>(num_entities)));
    out.triplet = positive;
    if (corrupt_head) {
      out.triplet.head = repl;
    } else {
      out.triplet.tail = repl;
    }
    const bool collides =
        out.triplet == positive || (filter != nullptr && filter->contains(out.triplet));
    if (!collides) {
      out.degraded = false;
      return out;
    }
  }
  out.degraded = true;
  return out;
}

double margin_loss(double pos_score, double neg_score, double margin) {
  const double hinge = margin - pos_score + neg_score;
  return hinge > 0 ? hinge : 0.0;
}

namespace {

inline uint64_t mix64(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ull;
  x ^= x >> 33;
  return x;
}

// One spin lock per embedding row; only the multi-threaded path takes them.
struct RowLocks {
  std::unique_ptr<std::atomic_flag[]> entities;
  std::unique_ptr<std::atomic_flag[]> relations;

  RowLocks(int64_t ne, int64_t nr)
      : entities(new std::atomic_flag[ne]), relations(new std::atomic_flag[nr]) {
    for (int64_t i = 0; i < ne; ++i) entities[i].clear();
    for (int64_t i = 0; i < nr; ++i) relations[i].clear();
  }
  static void lock(std::atomic_flag& f) {
    while (f.test_and_set(std::memory_order_acquire)) {
    }
  }
  static void unlock(std::atomic_flag& f) { f.clear(std::memory_order_release); }
};

template <typename S>
void copy_row(std::span<const S> src, std::vector<S>& dst) {
  dst.assign(src.begin(), src.end());
}

// Gradients are accumulated per touched row from the start-of-step snapshot,
// then applied once per row, so the result does not depend on row order.
template <typename S>
double sgd_step_impl(EmbeddingStore<S>& store, const ModelSpec& spec,
                     std::span<const BatchPair> batch, double learning_rate, bool norm_clip,
                     RowLocks* locks) {
  if (batch.empty()) return 0.0;
  const int n = spec.dim;
  const int w = spec.relation_width();
  const bool ote = spec.family == ModelFamily::OTE;

  std::unordered_map<EntityId, std::vector<double>> ent_grad;
  std::unordered_map<RelationId, std::vector<double>> rel_grad;
  // Start-of-step row copies; in the locked path these are consistent
  // snapshots taken under the row lock.
  std::unordered_map<EntityId, std::vector<S>> ent_rows;
  std::unordered_map<RelationId, std::vector<S>> rel_rows;
  std::unordered_map<RelationId, std::vector<GramSchmidtTape>> tapes;

  auto entity_row = [&](EntityId e) -> const std::vector<S>& {
    auto it = ent_rows.find(e);
    if (it == ent_rows.end()) {
      auto& row = ent_rows[e];
      if (locks) RowLocks::lock(locks->entities[e]);
      copy_row(std::span<const S>(std::as_const(store).entity(e)), row);
      if (locks) RowLocks::unlock(locks->entities[e]);
      return row;
    }
    return it->second;
  };
  auto relation_row = [&](RelationId r) -> const std::vector<S>& {
    auto it = rel_rows.find(r);
    if (it == rel_rows.end()) {
      auto& row = rel_rows[r];
      if (locks) RowLocks::lock(locks->relations[r]);
      copy_row(std::span<const S>(std::as_const(store).relation(r)), row);
      if (locks) RowLocks::unlock(locks->relations[r]);
      if (ote) tapes.emplace(r, ote_tapes(spec, std::span<const S>(row)));
      return row;
    }
    return it->second;
  };

  std::vector<double> dh(n), dt(n), dr(w);
  std::vector<double> pdh(n), pdt(n), pdr(w);
  const double inv_pairs = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;

  auto accumulate = [&](const Triplet& tr, double weight, const std::vector<double>& gh_src,
                        const std::vector<double>& gt_src, const std::vector<double>& gr_src) {
    auto& gh = ent_grad[tr.head];
    if (gh.empty()) gh.assign(n, 0.0);
    auto& gt = ent_grad[tr.tail];
    if (gt.empty()) gt.assign(n, 0.0);
    auto& gr = rel_grad[tr.relation];
    if (gr.empty()) gr.assign(w, 0.0);
    for (int d = 0; d < n; ++d) {
      gh[d] += weight * gh_src[d];
      gt[d] += weight * gt_src[d];
    }
    for (int d = 0; d < w; ++d) gr[d] += weight * gr_src[d];
  };

  for (const BatchPair& pair : batch) {
    const auto& hp = entity_row(pair.pos.head);
    const auto& tp = entity_row(pair.pos.tail);
    const auto& rp = relation_row(pair.pos.relation);
    const GramSchmidtTape* ptp = ote ? tapes.at(pair.pos.relation).data() : nullptr;
    const double pos =
        score_and_grad(spec, std::span<const S>(hp), std::span<const S>(tp),
                       std::span<const S>(rp), ptp, pdh, pdt, pdr);
    const auto& hn = entity_row(pair.neg.head);
    const auto& tn = entity_row(pair.neg.tail);
    const auto& rn = relation_row(pair.neg.relation);
    const GramSchmidtTape* ntp = ote ? tapes.at(pair.neg.relation).data() : nullptr;
    const double neg =
        score_and_grad(spec, std::span<const S>(hn), std::span<const S>(tn),
                       std::span<const S>(rn), ntp, dh, dt, dr);
    const double loss = margin_loss(pos, neg, spec.margin);
    loss_sum += loss;
    if (loss <= 0) continue;
    // d loss / d pos_score = -1, d loss / d neg_score = +1.
    accumulate(pair.pos, -inv_pairs, pdh, pdt, pdr);
    accumulate(pair.neg, inv_pairs, dh, dt, dr);
  }

  // Apply once per touched row.
  for (auto& [e, g] : ent_grad) {
    double worst = 0;
    for (double v : g) worst += v * v;
    if (!std::isfinite(worst)) throw DataError("non-finite entity gradient");
    const std::vector<S>& base = ent_rows.at(e);
    std::vector<S> fresh(n);
    for (int d = 0; d < n; ++d) {
      fresh[d] = static_cast<S>(static_cast<double>(base[d]) - learning_rate * g[d]);
    }
    if (norm_clip) {
      double n2 = 0;
      for (S v : fresh) n2 += static_cast<double>(v) * static_cast<double>(v);
      if (n2 > 1.0) {
        const double inv = 1.0 / std::sqrt(n2);
        for (S& v : fresh) v = static_cast<S>(static_cast<double>(v) * inv);
      }
    }
    if (locks) RowLocks::lock(locks->entities[e]);
    auto dst = store.entity(e);
    std::copy(fresh.begin(), fresh.end(), dst.begin());
    if (locks) RowLocks::unlock(locks->entities[e]);
  }
  for (auto& [r, g] : rel_grad) {
    const std::vector<S>& base = rel_rows.at(r);
    std::vector<double> applied;
    if (ote) {
      // The matrix slots hold gradients w.r.t. the orthogonalized blocks;
      // pull them back through the recorded forward pass once per relation.
      const int gs = spec.group_size();
      const int block = gs * gs + gs;
      applied.assign(w, 0.0);
      const auto& tp = tapes.at(r);
      for (int grp = 0; grp < spec.ote_groups; ++grp) {
        std::span<const double> phi_bar(g.data() + grp * block, static_cast<size_t>(gs) * gs);
        std::vector<double> m_bar = gram_schmidt_backward(tp[grp], phi_bar);
        std::copy(m_bar.begin(), m_bar.end(), applied.begin() + grp * block);
        for (int i = 0; i < gs; ++i) {
          applied[grp * block + gs * gs + i] = g[grp * block + gs * gs + i];
        }
      }
    } else {
      applied.assign(g.begin(), g.end());
    }
    double worst = 0;
    for (double v : applied) worst += v * v;
    if (!std::isfinite(worst)) throw DataError("non-finite relation gradient");
    std::vector<S> fresh(w);
    for (int d = 0; d < w; ++d) {
      fresh[d] = static_cast<S>(static_cast<double>(base[d]) - learning_rate * applied[d]);
    }
    if (locks) RowLocks::lock(locks->relations[r]);
    auto dst = store.relation(r);
    std::copy(fresh.begin(), fresh.end(), dst.begin());
    if (locks) RowLocks::unlock(locks->relations[r]);
  }
  return loss_sum * inv_pairs;
}

}  // namespace

template <typename S>
double sgd_step(EmbeddingStore<S>& store, const ModelSpec& spec, std::span<const BatchPair> batch,
                double learning_rate, bool norm_clip) {
  return sgd_step_impl(store, spec, batch, learning_rate, norm_clip, nullptr);
}

namespace {

// Pairs for one batch are drawn from a per-(epoch, batch) stream so the batch
// contents are identical no matter how batches are sharded across threads.
std::vector<BatchPair> build_batch(const KnowledgeGraph& kg, const std::vector<int64_t>& order,
                                   int64_t lo, int64_t hi, const TrainConfig& config,
                                   uint64_t batch_seed, const KnownTripletSet* filter,
                                   int64_t* degraded) {
  std::vector<BatchPair> pairs;
  pairs.reserve(static_cast<size_t>(hi - lo) * config.negatives_per_positive);
  Rng rng(batch_seed);
  for (int64_t k = lo; k < hi; ++k) {
    const Triplet& pos = kg.triplets[order[k]];
    for (int j = 0; j < config.negatives_per_positive; ++j) {
      NegativeSample neg =
          sample_negative(pos, kg.num_entities, config.negative_mode, rng,
                          config.filtered_negatives ? filter : nullptr,
                          config.negative_retry_bound);
      if (neg.degraded) ++*degraded;
      pairs.push_back({pos, neg.triplet});
    }
  }
  return pairs;
}

}  // namespace

template <typename S>
std::pair<EmbeddingStore<S>, TrainReport> train(const KnowledgeGraph& kg, const ModelSpec& spec,
                                                const TrainConfig& config,
                                                const KnownTripletSet* negative_filter,
                                                const TrainHooks<S>& hooks) {
  spec.require_valid();
  config.require_valid();
  kg.validate();
  if (config.filtered_negatives && negative_filter == nullptr) {
    throw ConfigError("filtered negatives requested without a filter");
  }
  EmbeddingStore<S> store = init_embeddings<S>(spec, kg.num_entities, kg.num_relations,
                                               config.seed);
  TrainReport report;
  StopWatch total;

  const int64_t num_pos = static_cast<int64_t>(kg.triplets.size());
  const int64_t batches_per_epoch =
      num_pos == 0 ? 0 : (num_pos + config.batch_size - 1) / config.batch_size;
  const int64_t planned_steps = batches_per_epoch * config.epochs;

  // fraction -> first step count at or past it, ascending.
  std::vector<std::pair<double, int64_t>> marks;
  for (double f : config.checkpoint_fractions) {
    marks.emplace_back(f, static_cast<int64_t>(std::ceil(f * static_cast<double>(planned_steps))));
  }
  std::sort(marks.begin(), marks.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  size_t next_mark = 0;
  auto fire_marks = [&](int64_t done_steps) {
    while (next_mark < marks.size() && marks[next_mark].second <= done_steps) {
      if (hooks.on_checkpoint) hooks.on_checkpoint(marks[next_mark].first, store);
      ++next_mark;
    }
  };

  std::vector<int64_t> order(num_pos);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(mix64(config.seed ^ 0x53687566666c6521ull));
  std::unique_ptr<RowLocks> locks;
  if (config.threads > 1) {
    locks = std::make_unique<RowLocks>(kg.num_entities, kg.num_relations);
  }

  int64_t done_steps = 0;
  std::atomic<int64_t> degraded_total{0};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    StopWatch epoch_watch;
    shuffle_rng.shuffle(order);
    std::atomic<double> loss_weighted{0.0};
    const uint64_t epoch_seed = mix64(config.seed ^ (static_cast<uint64_t>(epoch) + 1));
    auto run_range = [&](int64_t blo, int64_t bhi) {
      int64_t degraded = 0;
      double local_loss = 0;
      for (int64_t b = blo; b < bhi; ++b) {
        const int64_t lo = b * config.batch_size;
        const int64_t hi = std::min(num_pos, lo + config.batch_size);
        std::vector<BatchPair> pairs = build_batch(kg, order, lo, hi, config,
                                                   mix64(epoch_seed ^ static_cast<uint64_t>(b)),
                                                   negative_filter, &degraded);
        const double mean = sgd_step_impl(store, spec, std::span<const BatchPair>(pairs),
                                          config.learning_rate, config.norm_clip, locks.get());
        local_loss += mean * static_cast<double>(pairs.size());
        if (config.threads == 1) {
          ++done_steps;
          fire_marks(done_steps);
        }
      }
      degraded_total.fetch_add(degraded, std::memory_order_relaxed);
      double cur = loss_weighted.load(std::memory_order_relaxed);
      while (!loss_weighted.compare_exchange_weak(cur, cur + local_loss,
                                                  std::memory_order_relaxed)) {
      }
    };
    if (config.threads == 1) {
      run_range(0, batches_per_epoch);
    } else {
      parallel_for(batches_per_epoch, config.threads, run_range);
      done_steps += batches_per_epoch;
      fire_marks(done_steps);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.step = done_steps;
    const double total_pairs =
        static_cast<double>(num_pos) * static_cast<double>(config.negatives_per_positive);
    stats.mean_loss = total_pairs > 0 ? loss_weighted.load() / total_pairs : 0.0;
    stats.seconds = epoch_watch.seconds();
    report.epochs.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats);
  }
  // An empty training set (planned_steps == 0) leaves every mark unfired.
  fire_marks(planned_steps);
  store.iteration = 0;
  report.total_steps = done_steps;
  report.degraded_negatives = degraded_total.load();
  report.seconds = total.seconds();
  if (!store.all_finite()) throw DataError("training produced non-finite parameters");
  return {std::move(store), std::move(report)};
}

template double sgd_step<float>(EmbeddingStore<float>&, const ModelSpec&,
                                std::span<const BatchPair>, double, bool);
template double sgd_step<double>(EmbeddingStore<double>&, const ModelSpec&,
                                 std::span<const BatchPair>, double, bool);
template std::pair<EmbeddingStore<float>, TrainReport> train<float>(const KnowledgeGraph&,
                                                                    const ModelSpec&,
                                                                    const TrainConfig&,
                                                                    const KnownTripletSet*,
                                                                    const TrainHooks<float>&);
template std::pair<EmbeddingStore<double>, TrainReport> train<double>(const KnowledgeGraph&,
                                                                      const ModelSpec&,
                                                                      const TrainConfig&,
                                                                      const KnownTripletSet*,
                                                                      const TrainHooks<double>&);

}  // namespace kgprop
