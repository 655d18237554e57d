#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "kgprop/model.hpp"

namespace kgprop {

// Little-endian binary checkpoint: an 80-byte fixed header (8-byte magic,
// version, family, norm order, dim, groups, float width, margin, entity and
// relation counts, iteration, vocabulary digests) followed by the entity
// table and the raw relation table. Header-declared sizes must match the
// payload length exactly, and non-finite values are rejected on both save
// and load. Saves write to a temp file and rename atomically.
struct CheckpointHeader {
  ModelFamily family = ModelFamily::TransE;
  NormOrder norm = NormOrder::L2;
  int dim = 0;
  int ote_groups = 1;
  double margin = 0;
  int64_t num_entities = 0;
  int64_t num_relations = 0;
  int64_t iteration = 0;
  int float_width = 4;
  uint64_t entity_digest = 0;
  uint64_t relation_digest = 0;
  ModelSpec spec() const;
};

template <typename S>
void save_checkpoint(const std::string& path, const ModelSpec& spec, const EmbeddingStore<S>& store,
                     uint64_t entity_digest = 0, uint64_t relation_digest = 0);

// Reads and validates only the header.
CheckpointHeader peek_checkpoint(const std::string& path);

// Requires the file's float width to match S.
template <typename S>
std::pair<ModelSpec, EmbeddingStore<S>> load_checkpoint(const std::string& path,
                                                        CheckpointHeader* header_out = nullptr);

}  // namespace kgprop
