#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "roadgnn/common.hpp"

namespace roadgnn {

// Precomputed visual-feature-encoder outputs, keyed by 64-bit node id hash.
struct EmbeddingTable {
  std::uint32_t dim = 0;
  std::unordered_map<std::uint64_t, std::vector<float>> vectors;

  const std::vector<float>* find(std::uint64_t id) const {
    auto it = vectors.find(id);
    return it == vectors.end() ? nullptr : &it->second;
  }
};

// CSV ids that are pure decimal digits are taken as precomputed hashes;
// anything else is treated as a dual node id string and hashed.
inline std::uint64_t embedding_key(const std::string& id) {
  if (!id.empty() && id.find_first_not_of("0123456789") == std::string::npos && id.size() <= 20)
    return std::stoull(id);
  return fnv1a64(id);
}

inline EmbeddingTable load_embeddings_csv(std::istream& in, std::uint32_t expected_dim = 0) {
  std::string header;
  if (!std::getline(in, header)) throw IoError("embedding CSV: empty file");
  const auto pos = header.find("dim=");
  if (header.rfind("node_id,", 0) != 0 || pos == std::string::npos)
    throw IoError("embedding CSV: header must be 'node_id,dim=<d>'");
  EmbeddingTable table;
  table.dim = std::uint32_t(std::stoul(header.substr(pos + 4)));
  if (table.dim < 1) throw IoError("embedding CSV: dim must be >= 1");
  if (expected_dim && table.dim != expected_dim)
    throw SchemaError("embedding CSV: dim " + std::to_string(table.dim) + " != expected " +
                      std::to_string(expected_dim));
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (!std::getline(ss, cell, ',')) throw IoError("embedding CSV: bad row at line " + std::to_string(lineno));
    const std::uint64_t key = embedding_key(cell);
    std::vector<float> vec;
    vec.reserve(table.dim);
    while (std::getline(ss, cell, ',')) vec.push_back(std::stof(cell));
    if (vec.size() != table.dim)
      throw SchemaError("embedding CSV: ragged row at line " + std::to_string(lineno) + " (" +
                        std::to_string(vec.size()) + " values, dim " + std::to_string(table.dim) + ")");
    if (!table.vectors.emplace(key, std::move(vec)).second)
      throw SchemaError("embedding CSV: duplicate node id at line " + std::to_string(lineno));
  }
  return table;
}

// VFE1 binary: magic "VFE1", little-endian u32 dim, u32 count, then count
// records of (u64 node-id hash, dim x f32).
inline void save_embeddings_vfe1(const EmbeddingTable& table, std::ostream& out,
                                 const std::vector<std::uint64_t>& order = {}) {
  out.write("VFE1", 4);
  const std::uint32_t dim = table.dim;
  const std::uint32_t count = std::uint32_t(table.vectors.size());
  out.write(reinterpret_cast<const char*>(&dim), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  auto write_record = [&](std::uint64_t id, const std::vector<float>& vec) {
    out.write(reinterpret_cast<const char*>(&id), 8);
    out.write(reinterpret_cast<const char*>(vec.data()), std::streamsize(vec.size() * 4));
  };
  if (!order.empty()) {
    for (std::uint64_t id : order) write_record(id, table.vectors.at(id));
  } else {
    for (const auto& [id, vec] : table.vectors) write_record(id, vec);
  }
}

inline EmbeddingTable load_embeddings_vfe1(std::istream& in, std::uint32_t expected_dim = 0) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string_view(magic, 4) != "VFE1")
    throw IoError("embedding binary: bad magic (want VFE1)");
  EmbeddingTable table;
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&table.dim), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in) throw IoError("embedding binary: truncated header");
  if (expected_dim && table.dim != expected_dim)
    throw SchemaError("embedding binary: dim " + std::to_string(table.dim) + " != expected " +
                      std::to_string(expected_dim));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint64_t id = 0;
    std::vector<float> vec(table.dim);
    in.read(reinterpret_cast<char*>(&id), 8);
    in.read(reinterpret_cast<char*>(vec.data()), std::streamsize(vec.size() * 4));
    if (!in) throw IoError("embedding binary: truncated record " + std::to_string(i));
    if (!table.vectors.emplace(id, std::move(vec)).second)
      throw SchemaError("embedding binary: duplicate node id " + std::to_string(id));
  }
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path, std::uint32_t expected_dim = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  in.seekg(0);
  if (std::string_view(magic, 4) == "VFE1") return load_embeddings_vfe1(in, expected_dim);
  return load_embeddings_csv(in, expected_dim);
}

}  // namespace roadgnn
