#include "kgprop/graph.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace kgprop {

uint32_t Vocab::get_or_add(const std::string& label) {
  auto it = index_.find(label);
  if (it != index_.end()) return it->second;
  auto id = static_cast<uint32_t>(names_.size());
  names_.push_back(label);
  index_.emplace(label, id);
  return id;
}

std::optional<uint32_t> Vocab::find(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

uint64_t Vocab::digest() const {
  uint64_t h = 14695981039346656037ull;  // FNV-1a 64
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const auto& name : names_) {
    for (unsigned char c : name) mix(c);
    mix('\n');
  }
  return h;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (size_t i = 0; i < vocab.size(); ++i) {
    out << vocab.name(static_cast<uint32_t>(i)) << '\t' << i << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<std::pair<uint32_t, std::string>> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 2 tab-separated fields");
    }
    const std::string label = line.substr(0, tab);
    const std::string idstr = line.substr(tab + 1);
    char* end = nullptr;
    unsigned long id = std::strtoul(idstr.c_str(), &end, 10);
    if (end == idstr.c_str() || *end != '\0') {
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed id '" + idstr + "'");
    }
    rows.emplace_back(static_cast<uint32_t>(id), label);
  }
  std::vector<std::string> names(rows.size());
  std::vector<bool> seen(rows.size(), false);
  for (auto& [id, label] : rows) {
    if (id >= rows.size() || seen[id]) {
      throw VocabError(path + ": ids must cover 0.." + std::to_string(rows.size() ? rows.size() - 1 : 0) +
                       " exactly once");
    }
    seen[id] = true;
    names[id] = std::move(label);
  }
  Vocab v;
  for (auto& name : names) v.get_or_add(name);
  if (v.size() != names.size()) throw VocabError(path + ": duplicate labels");
  return v;
}

void KnowledgeGraph::validate() const {
  if (num_entities < 0 || num_relations < 0) throw DataError("negative vocabulary size");
  if (entity_names && static_cast<int64_t>(entity_names->size()) != num_entities) {
    throw VocabError("entity vocabulary size disagrees with num_entities");
  }
  if (relation_names && static_cast<int64_t>(relation_names->size()) != num_relations) {
    throw VocabError("relation vocabulary size disagrees with num_relations");
  }
  for (const auto& t : triplets) {
    if (t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations) {
      throw DataError("triplet id out of range");
    }
  }
}

namespace {

// Splits one TSV line into exactly three fields; throws with location info.
void split3(const std::string& path, size_t lineno, const std::string& line, std::string out[3]) {
  size_t first = line.find('\t');
  size_t second = first == std::string::npos ? std::string::npos : line.find('\t', first + 1);
  bool extra = second != std::string::npos && line.find('\t', second + 1) != std::string::npos;
  if (first == std::string::npos || second == std::string::npos || extra) {
    throw ParseError(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
  }
  out[0] = line.substr(0, first);
  out[1] = line.substr(first + 1, second - first - 1);
  out[2] = line.substr(second + 1);
}

std::vector<Triplet> load_split(const std::string& path, Vocab& entities, Vocab& relations,
                                bool allow_new) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<Triplet> out;
  std::string line, f[3];
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    split3(path, lineno, line, f);
    Triplet t;
    if (allow_new) {
      t.head = entities.get_or_add(f[0]);
      t.relation = relations.get_or_add(f[1]);
      t.tail = entities.get_or_add(f[2]);
    } else {
      auto h = entities.find(f[0]);
      auto r = relations.find(f[1]);
      auto tl = entities.find(f[2]);
      if (!h || !r || !tl) {
        const std::string& missing = !h ? f[0] : (!r ? f[1] : f[2]);
        throw VocabError(path + ":" + std::to_string(lineno) + ": unknown label '" + missing + "'");
      }
      t.head = *h;
      t.relation = *r;
      t.tail = *tl;
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace

KnowledgeGraph load_triplets(const std::string& path, VocabMode mode,
                             std::shared_ptr<const Vocab> entities,
                             std::shared_ptr<const Vocab> relations) {
  KnowledgeGraph kg;
  if (mode == VocabMode::Build) {
    auto ev = std::make_shared<Vocab>();
    auto rv = std::make_shared<Vocab>();
    kg.triplets = load_split(path, *ev, *rv, /*allow_new=*/true);
    kg.entity_names = ev;
    kg.relation_names = rv;
  } else {
    if (!entities || !relations) throw ConfigError("reuse mode requires both vocabularies");
    // Labels are resolved against copies so the shared vocabularies cannot grow.
    Vocab ev = *entities, rv = *relations;
    kg.triplets = load_split(path, ev, rv, /*allow_new=*/false);
    kg.entity_names = std::move(entities);
    kg.relation_names = std::move(relations);
  }
  kg.num_entities = static_cast<int64_t>(kg.entity_names->size());
  kg.num_relations = static_cast<int64_t>(kg.relation_names->size());
  kg.validate();
  return kg;
}

void save_triplets(const KnowledgeGraph& kg, const std::string& path) {
  if (!kg.entity_names || !kg.relation_names) {
    throw DataError("cannot save a graph without vocabularies");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& t : kg.triplets) {
    out << kg.entity_names->name(t.head) << '\t' << kg.relation_names->name(t.relation) << '\t'
        << kg.entity_names->name(t.tail) << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

KnowledgeGraph Dataset::union_all() const {
  KnowledgeGraph kg;
  kg.num_entities = static_cast<int64_t>(entities->size());
  kg.num_relations = static_cast<int64_t>(relations->size());
  kg.entity_names = entities;
  kg.relation_names = relations;
  kg.triplets.reserve(train.triplets.size() + valid.triplets.size() + test.triplets.size());
  for (const auto* split : {&train, &valid, &test}) {
    kg.triplets.insert(kg.triplets.end(), split->triplets.begin(), split->triplets.end());
  }
  return kg;
}

Dataset load_dataset(const std::string& train_path, const std::string& valid_path,
                     const std::string& test_path) {
  Dataset ds;
  auto ev = std::make_shared<Vocab>();
  auto rv = std::make_shared<Vocab>();
  // Pass 1 builds the union vocabulary in a fixed file order so ids (and the
  // digests derived from them) are reproducible.
  auto load = [&](const std::string& path, KnowledgeGraph& kg) {
    if (path.empty()) return;
    kg.triplets = load_split(path, *ev, *rv, /*allow_new=*/true);
  };
  load(train_path, ds.train);
  load(valid_path, ds.valid);
  load(test_path, ds.test);
  ds.entities = ev;
  ds.relations = rv;
  for (KnowledgeGraph* kg : {&ds.train, &ds.valid, &ds.test}) {
    kg->num_entities = static_cast<int64_t>(ev->size());
    kg->num_relations = static_cast<int64_t>(rv->size());
    kg->entity_names = ds.entities;
    kg->relation_names = ds.relations;
    kg->validate();
  }
  return ds;
}

AdjacencyIndex build_adjacency(const KnowledgeGraph& kg) {
  kg.validate();
  AdjacencyIndex adj;
  const int64_t ne = kg.num_entities;
  adj.head_offsets_.assign(ne + 1, 0);
  adj.tail_offsets_.assign(ne + 1, 0);
  for (const auto& t : kg.triplets) {
    ++adj.head_offsets_[t.head + 1];
    ++adj.tail_offsets_[t.tail + 1];
  }
  for (int64_t i = 0; i < ne; ++i) {
    adj.head_offsets_[i + 1] += adj.head_offsets_[i];
    adj.tail_offsets_[i + 1] += adj.tail_offsets_[i];
  }
  adj.head_pairs_.resize(kg.triplets.size());
  adj.tail_pairs_.resize(kg.triplets.size());
  std::vector<int64_t> hfill(adj.head_offsets_.begin(), adj.head_offsets_.end() - 1);
  std::vector<int64_t> tfill(adj.tail_offsets_.begin(), adj.tail_offsets_.end() - 1);
  for (const auto& t : kg.triplets) {
    adj.head_pairs_[hfill[t.head]++] = {t.tail, t.relation};
    adj.tail_pairs_[tfill[t.tail]++] = {t.head, t.relation};
  }
  return adj;
}

KnownTripletSet::KnownTripletSet(int64_t num_entities, int64_t num_relations)
    : num_entities_(num_entities), num_relations_(num_relations) {
  if (num_entities < 0 || num_relations < 0) throw ConfigError("negative vocabulary size");
  __uint128_t cells = static_cast<__uint128_t>(num_entities) * num_relations;
  cells *= num_entities > 0 ? num_entities : 1;
  if (cells >> 64) throw ConfigError("triplet key space exceeds 64 bits");
}

void KnownTripletSet::insert_all(std::span<const Triplet> ts) {
  keys_.reserve(keys_.size() + ts.size());
  for (const auto& t : ts) insert(t);
}

uint64_t KnownTripletSet::key(EntityId h, RelationId r, EntityId t) const {
  return (static_cast<uint64_t>(h) * num_relations_ + r) * num_entities_ + t;
}

std::vector<std::vector<EntityId>> load_candidates(const std::string& path, const Vocab& entities,
                                                   size_t expected_rows) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<std::vector<EntityId>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<EntityId> row;
    std::istringstream ss(line);
    std::string label;
    while (ss >> label) {
      auto id = entities.find(label);
      if (!id) {
        throw VocabError(path + ":" + std::to_string(rows.size() + 1) + ": unknown label '" +
                         label + "'");
      }
      row.push_back(*id);
    }
    if (row.empty()) {
      throw DataError(path + ": empty candidate list for triplet " + std::to_string(rows.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() < expected_rows) {
    throw DataError(path + ": missing candidate line for triplet " + std::to_string(rows.size()));
  }
  return rows;
}

}  // namespace kgprop
