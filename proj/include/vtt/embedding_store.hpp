#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtt/common.hpp"

namespace vtt {

static_assert(std::endian::native == std::endian::little,
              "embedding store I/O assumes a little-endian host");

/// state_id -> fixed-width float vector. Binary layout:
///   "VTTE" | u32 version=1 | u32 dim | u64 count |
///   count x (u16 id_len | id bytes | dim x f32), all little-endian.
class EmbeddingStore {
 public:
  static constexpr char kMagic[4] = {'V', 'T', 'T', 'E'};
  static constexpr std::uint32_t kVersion = 1;

  EmbeddingStore() = default;
  explicit EmbeddingStore(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw Error(ErrorKind::kInvariant, "embedding dim must be > 0");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  void insert(const std::string& id, std::span<const float> vec) {
    if (vec.size() != dim_) {
      throw Error(ErrorKind::kDimension,
                  "vector for '" + id + "' has " + std::to_string(vec.size()) +
                      " components, store dim is " + std::to_string(dim_));
    }
    if (id.empty() || id.size() > 0xFFFF) {
      throw Error(ErrorKind::kInvariant, "state id length out of range");
    }
    for (float v : vec) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::kInvariant, "non-finite component for '" + id + "'");
      }
    }
    if (!index_.emplace(id, ids_.size()).second) {
      throw Error(ErrorKind::kInvariant, "duplicate state_id '" + id + "'");
    }
    ids_.push_back(id);
    data_.insert(data_.end(), vec.begin(), vec.end());
  }

  std::span<const float> at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw Error(ErrorKind::kMissingKey, "no embedding for state_id '" + id + "'");
    }
    return {data_.data() + it->second * dim_, dim_};
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(ids_.size()));
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      put<std::uint16_t>(out, static_cast<std::uint16_t>(ids_[i].size()));
      out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
      out.write(reinterpret_cast<const char*>(data_.data() + i * dim_),
                static_cast<std::streamsize>(dim_ * sizeof(float)));
    }
    if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
  }

  static EmbeddingStore open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
      throw Error(ErrorKind::kParse, "'" + path + "': bad magic");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) {
      throw Error(ErrorKind::kParse, "'" + path + "': unsupported version " +
                                         std::to_string(version));
    }
    const auto dim = get<std::uint32_t>(in, path);
    const auto count = get<std::uint64_t>(in, path);
    EmbeddingStore store(dim);
    std::vector<float> buf(dim);
    std::string id;
    for (std::uint64_t r = 0; r < count; ++r) {
      const auto len = get<std::uint16_t>(in, path);
      id.resize(len);
      if (!in.read(id.data(), len) ||
          !in.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(dim * sizeof(float)))) {
        throw Error(ErrorKind::kParse, "'" + path + "': truncated record " +
                                           std::to_string(r));
      }
      store.insert(id, buf);
    }
    return store;
  }

 private:
  template <typename T>
  static void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T get(std::ifstream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
      throw Error(ErrorKind::kParse, "'" + path + "': truncated header");
    }
    return v;
  }

  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vtt
