#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgprop/graph.hpp"
#include "kgprop/model.hpp"
#include "kgprop/rng.hpp"

namespace kgprop {

enum class NegativeMode { CorruptHead, CorruptTail, BothUniform };
const char* to_string(NegativeMode m);
NegativeMode negative_mode_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 0.05;
  int batch_size = 1024;
  int negatives_per_positive = 1;
  int epochs = 100;
  uint64_t seed = 1;
  NegativeMode negative_mode = NegativeMode::BothUniform;
  bool filtered_negatives = false;
  int negative_retry_bound = 100;
  int threads = 1;
  bool norm_clip = false;  // optional unit-ball projection of touched entity rows
  std::vector<double> checkpoint_fractions = {1.0};
  std::string validate() const;
  void require_valid() const;
};

struct NegativeSample {
  Triplet triplet;
  bool corrupted_head = false;
  // Corruption collided with the positive, or the filtered resample bound
  // was exhausted and a known triplet was returned.
  bool degraded = false;
};

// Uniformly replaces the head or the tail (never the relation). With a
// filter, resamples while the corruption is a known triplet, up to
// retry_bound attempts.
NegativeSample sample_negative(const Triplet& positive, int64_t num_entities, NegativeMode mode,
                               Rng& rng, const KnownTripletSet* filter = nullptr,
                               int retry_bound = 100);

// Hinge on the score gap: max(0, margin - pos_score + neg_score).
double margin_loss(double pos_score, double neg_score, double margin);

struct BatchPair {
  Triplet pos;
  Triplet neg;
};

// One SGD step over a batch of (positive, negative) pairs with gradients
// averaged over the pairs. Zero-loss pairs contribute nothing; rows not
// touched by the batch are bit-identical afterwards. Returns the mean hinge
// loss. Throws on non-finite gradients.
template <typename S>
double sgd_step(EmbeddingStore<S>& store, const ModelSpec& spec, std::span<const BatchPair> batch,
                double learning_rate, bool norm_clip = false);

struct EpochStats {
  int epoch = 0;
  int64_t step = 0;  // cumulative batches applied
  double mean_loss = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int64_t total_steps = 0;
  int64_t degraded_negatives = 0;
  double seconds = 0;
};

template <typename S>
struct TrainHooks {
  // fraction in (0, 1]; fired when the cumulative step count crosses
  // ceil(fraction * total_steps).
  std::function<void(double fraction, const EmbeddingStore<S>& store)> on_checkpoint;
  std::function<void(const EpochStats&)> on_epoch;
};

// Margin-ranking training with uniform negative sampling. threads == 1 is
// bit-reproducible for a fixed seed. threads > 1 shards each epoch's batches
// across lock-per-row workers; results are then nondeterministic and
// fraction checkpoints are emitted at epoch boundaries instead of exact
// steps.
template <typename S>
std::pair<EmbeddingStore<S>, TrainReport> train(const KnowledgeGraph& kg, const ModelSpec& spec,
                                                const TrainConfig& config,
                                                const KnownTripletSet* negative_filter = nullptr,
                                                const TrainHooks<S>& hooks = {});

}  // namespace kgprop
