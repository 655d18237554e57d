#include "kgprop/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace kgprop {

namespace {

constexpr char kMagic[8] = {'K', 'G', 'E', 'M', 'B', 'D', '0', '1'};
constexpr uint32_t kVersion = 1;
constexpr size_t kHeaderBytes = 80;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

uint32_t get_u32(const unsigned char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}

uint64_t get_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

double get_f64(const unsigned char* p) {
  const uint64_t bits = get_u64(p);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string encode_header(const CheckpointHeader& h) {
  std::string out;
  out.reserve(kHeaderBytes);
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(h.family));
  put_u32(out, static_cast<uint32_t>(h.norm));
  put_u32(out, static_cast<uint32_t>(h.dim));
  put_u32(out, static_cast<uint32_t>(h.ote_groups));
  put_u32(out, static_cast<uint32_t>(h.float_width));
  put_f64(out, h.margin);
  put_u64(out, static_cast<uint64_t>(h.num_entities));
  put_u64(out, static_cast<uint64_t>(h.num_relations));
  put_u64(out, static_cast<uint64_t>(h.iteration));
  put_u64(out, h.entity_digest);
  put_u64(out, h.relation_digest);
  return out;
}

CheckpointHeader decode_header(const unsigned char* p, const std::string& path) {
  if (std::memcmp(p, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path + ": not a checkpoint file");
  }
  const uint32_t version = get_u32(p + 8);
  if (version != kVersion) {
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointHeader h;
  const uint32_t family = get_u32(p + 12);
  if (family > static_cast<uint32_t>(ModelFamily::OTE)) {
    throw ParseError(path + ": unknown model family tag");
  }
  h.family = static_cast<ModelFamily>(family);
  const uint32_t norm = get_u32(p + 16);
  if (norm > static_cast<uint32_t>(NormOrder::L2)) {
    throw ParseError(path + ": unknown norm tag");
  }
  h.norm = static_cast<NormOrder>(norm);
  h.dim = static_cast<int>(get_u32(p + 20));
  h.ote_groups = static_cast<int>(get_u32(p + 24));
  h.float_width = static_cast<int>(get_u32(p + 28));
  if (h.float_width != 4 && h.float_width != 8) {
    throw ParseError(path + ": float width must be 4 or 8");
  }
  h.margin = get_f64(p + 32);
  h.num_entities = static_cast<int64_t>(get_u64(p + 40));
  h.num_relations = static_cast<int64_t>(get_u64(p + 48));
  h.iteration = static_cast<int64_t>(get_u64(p + 56));
  h.entity_digest = get_u64(p + 64);
  h.relation_digest = get_u64(p + 72);
  if (h.num_entities < 0 || h.num_relations < 0 || h.iteration < 0 || !std::isfinite(h.margin)) {
    throw ParseError(path + ": corrupt checkpoint header");
  }
  auto err = h.spec().validate();
  if (!err.empty()) throw ParseError(path + ": " + err);
  return h;
}

template <typename S>
void write_values(std::ofstream& out, const std::vector<S>& values) {
  static_assert(std::endian::native == std::endian::little ||
                    std::endian::native == std::endian::big,
                "mixed-endian hosts are unsupported");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(S)));
  } else {
    for (S v : values) {
      char buf[sizeof(S)];
      std::memcpy(buf, &v, sizeof(S));
      std::reverse(buf, buf + sizeof(S));
      out.write(buf, sizeof(S));
    }
  }
}

template <typename S>
void read_values(std::ifstream& in, std::vector<S>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(S)));
  } else {
    for (S& v : values) {
      char buf[sizeof(S)];
      in.read(buf, sizeof(S));
      std::reverse(buf, buf + sizeof(S));
      std::memcpy(&v, buf, sizeof(S));
    }
  }
}

}  // namespace

ModelSpec CheckpointHeader::spec() const {
  ModelSpec s;
  s.family = family;
  s.norm = norm;
  s.dim = dim;
  s.margin = margin;
  s.ote_groups = ote_groups;
  return s;
}

template <typename S>
void save_checkpoint(const std::string& path, const ModelSpec& spec,
                     const EmbeddingStore<S>& store, uint64_t entity_digest,
                     uint64_t relation_digest) {
  spec.require_valid();
  const auto entity_values = static_cast<size_t>(store.num_entities) * spec.dim;
  const auto relation_values = static_cast<size_t>(store.num_relations) * spec.relation_width();
  if (store.dim != spec.dim || store.rel_width != spec.relation_width() ||
      store.entities.size() != entity_values || store.relations.size() != relation_values) {
    throw DimensionError("embedding table shape disagrees with the model spec");
  }
  if (!store.all_finite()) throw DataError("refusing to save non-finite parameters");
  CheckpointHeader h;
  h.family = spec.family;
  h.norm = spec.norm;
  h.dim = spec.dim;
  h.ote_groups = spec.ote_groups;
  h.margin = spec.margin;
  h.num_entities = store.num_entities;
  h.num_relations = store.num_relations;
  h.iteration = store.iteration;
  h.float_width = static_cast<int>(sizeof(S));
  h.entity_digest = entity_digest;
  h.relation_digest = relation_digest;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    const std::string header = encode_header(h);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_values(out, store.entities);
    write_values(out, store.relations);
    out.flush();
    if (!out) throw DataError("failed while writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp + " into place: " + ec.message());
}

CheckpointHeader peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  unsigned char buf[kHeaderBytes];
  in.read(reinterpret_cast<char*>(buf), kHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kHeaderBytes)) {
    throw ParseError(path + ": truncated checkpoint header");
  }
  return decode_header(buf, path);
}

template <typename S>
std::pair<ModelSpec, EmbeddingStore<S>> load_checkpoint(const std::string& path,
                                                        CheckpointHeader* header_out) {
  const CheckpointHeader h = peek_checkpoint(path);
  if (h.float_width != static_cast<int>(sizeof(S))) {
    throw DataError(path + ": checkpoint stores " + std::to_string(8 * h.float_width) +
                    "-bit values, not " + std::to_string(8 * sizeof(S)) + "-bit");
  }
  const ModelSpec spec = h.spec();
  const uint64_t entity_count = static_cast<uint64_t>(h.num_entities) * h.dim;
  const uint64_t relation_count =
      static_cast<uint64_t>(h.num_relations) * spec.relation_width();
  const uint64_t expected_size = kHeaderBytes + (entity_count + relation_count) * sizeof(S);
  std::error_code ec;
  const uint64_t actual_size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("cannot stat " + path + ": " + ec.message());
  if (actual_size != expected_size) {
    throw DataError(path + ": payload holds " + std::to_string(actual_size) + " bytes, header " +
                    "declares " + std::to_string(expected_size));
  }
  EmbeddingStore<S> store;
  store.num_entities = h.num_entities;
  store.num_relations = h.num_relations;
  store.dim = h.dim;
  store.rel_width = spec.relation_width();
  store.iteration = h.iteration;
  store.entities.resize(entity_count);
  store.relations.resize(relation_count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  in.seekg(kHeaderBytes);
  read_values(in, store.entities);
  read_values(in, store.relations);
  if (!in) throw DataError(path + ": failed while reading the payload");
  if (!store.all_finite()) throw DataError(path + ": payload holds non-finite values");
  if (header_out != nullptr) *header_out = h;
  return {spec, std::move(store)};
}

template void save_checkpoint<float>(const std::string&, const ModelSpec&,
                                     const EmbeddingStore<float>&, uint64_t, uint64_t);
template void save_checkpoint<double>(const std::string&, const ModelSpec&,
                                      const EmbeddingStore<double>&, uint64_t, uint64_t);
template std::pair<ModelSpec, EmbeddingStore<float>> load_checkpoint<float>(const std::string&,
                                                                            CheckpointHeader*);
template std::pair<ModelSpec, EmbeddingStore<double>> load_checkpoint<double>(const std::string&,
                                                                              CheckpointHeader*);

}  // namespace kgprop
