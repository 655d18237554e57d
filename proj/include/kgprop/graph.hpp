#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kgprop/error.hpp"

namespace kgprop {

using EntityId = uint32_t;
using RelationId = uint32_t;

struct Triplet {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;
  bool operator==(const Triplet&) const = default;
};

// Dense label <-> id map; ids are assigned by first appearance.
class Vocab {
 public:
  uint32_t get_or_add(const std::string& label);
  std::optional<uint32_t> find(const std::string& label) const;
  const std::string& name(uint32_t id) const { return names_[id]; }
  size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  // Order-sensitive FNV-1a over the labels; used to pin checkpoints to the
  // vocabulary they were trained with.
  uint64_t digest() const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, uint32_t> index_;
};

void save_vocab(const Vocab& vocab, const std::string& path);
// Requires the file ids to be exactly 0..n-1 (any order).
Vocab load_vocab(const std::string& path);

struct KnowledgeGraph {
  int64_t num_entities = 0;
  int64_t num_relations = 0;
  std::vector<Triplet> triplets;
  std::shared_ptr<const Vocab> entity_names;    // may be null for synthetic graphs
  std::shared_ptr<const Vocab> relation_names;  // may be null for synthetic graphs
  // Id bounds and vocabulary density; throws on violation.
  void validate() const;
};

enum class VocabMode { Build, Reuse };

// TSV lines "head<TAB>relation<TAB>tail". Build mode assigns fresh dense ids;
// Reuse mode resolves labels against the given vocabularies and rejects
// unknown labels. Duplicate lines are kept.
KnowledgeGraph load_triplets(const std::string& path, VocabMode mode = VocabMode::Build,
                             std::shared_ptr<const Vocab> entities = nullptr,
                             std::shared_ptr<const Vocab> relations = nullptr);
void save_triplets(const KnowledgeGraph& kg, const std::string& path);

// Train/valid/test sharing one vocabulary built over the union of the files
// (train first, then valid, then test).
struct Dataset {
  std::shared_ptr<const Vocab> entities;
  std::shared_ptr<const Vocab> relations;
  KnowledgeGraph train, valid, test;
  KnowledgeGraph union_all() const;
};
Dataset load_dataset(const std::string& train_path, const std::string& valid_path,
                     const std::string& test_path);

struct AdjPair {
  EntityId entity;  // the neighbor on the other side of the triplet
  RelationId relation;
};

// CSR adjacency in both directions. as_head(i) lists the (tail, relation)
// pairs of triplets where i is the head; as_tail(i) lists the
// (head, relation) pairs where i is the tail. Duplicate triplets keep
// duplicate pairs.
class AdjacencyIndex {
 public:
  std::span<const AdjPair> as_head(EntityId i) const {
    return {head_pairs_.data() + head_offsets_[i],
            static_cast<size_t>(head_offsets_[i + 1] - head_offsets_[i])};
  }
  std::span<const AdjPair> as_tail(EntityId i) const {
    return {tail_pairs_.data() + tail_offsets_[i],
            static_cast<size_t>(tail_offsets_[i + 1] - tail_offsets_[i])};
  }
  int64_t degree(EntityId i) const {
    return (head_offsets_[i + 1] - head_offsets_[i]) + (tail_offsets_[i + 1] - tail_offsets_[i]);
  }
  int64_t num_entities() const { return static_cast<int64_t>(head_offsets_.size()) - 1; }
  int64_t num_triplets() const { return static_cast<int64_t>(head_pairs_.size()); }

  friend AdjacencyIndex build_adjacency(const KnowledgeGraph& kg);

 private:
  std::vector<int64_t> head_offsets_, tail_offsets_;
  std::vector<AdjPair> head_pairs_, tail_pairs_;
};

AdjacencyIndex build_adjacency(const KnowledgeGraph& kg);

// O(1) membership over a union of splits; backs filtered ranking and
// filtered negative sampling. Set semantics (duplicates collapse).
class KnownTripletSet {
 public:
  KnownTripletSet(int64_t num_entities, int64_t num_relations);
  void insert(const Triplet& t) { keys_.insert(key(t.head, t.relation, t.tail)); }
  void insert_all(std::span<const Triplet> ts);
  bool contains(EntityId h, RelationId r, EntityId t) const {
    return keys_.count(key(h, r, t)) != 0;
  }
  bool contains(const Triplet& t) const { return contains(t.head, t.relation, t.tail); }
  int64_t size() const { return static_cast<int64_t>(keys_.size()); }

 private:
  uint64_t key(EntityId h, RelationId r, EntityId t) const;
  int64_t num_entities_ = 0;
  int64_t num_relations_ = 0;
  std::unordered_set<uint64_t> keys_;
};

// One line of space-separated entity labels per test triplet.
std::vector<std::vector<EntityId>> load_candidates(const std::string& path, const Vocab& entities,
                                                   size_t expected_rows);

}  // namespace kgprop
