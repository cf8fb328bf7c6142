// Copyright 2026 The Nutripipe Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nutripipe/error.hpp"
#include "nutripipe/hash.hpp"
#include "nutripipe/strings.hpp"

namespace nutripipe {

static_assert(std::endian::native == std::endian::little,
              "EMBV1 I/O assumes a little-endian host");

// Fixed-dimension sentence vector. Either the zero vector or unit length.
struct EmbeddingVector {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  bool IsZero() const {
    for (float v : values) {
      if (v != 0.0f) return false;
    }
    return true;
  }
  bool operator==(const EmbeddingVector&) const = default;
};

inline constexpr std::size_t kDefaultFallbackDim = 256;
inline constexpr std::size_t kMinFallbackDim = 16;

// Deterministic character 3-gram hashing embedder. ASCII letters are
// lowercased; 3-grams run over code points and each is hashed (FNV-1a 64)
// over its UTF-8 bytes. Bucket is hash mod dim, sign is - when bit 63 is set.
inline EmbeddingVector EmbedFallback(std::string_view text,
                                     std::size_t dim = kDefaultFallbackDim) {
  if (dim < kMinFallbackDim) {
    throw Error(ErrorCode::kDimTooSmall,
                "fallback dim " + std::to_string(dim) + " < " + std::to_string(kMinFallbackDim));
  }
  EmbeddingVector out{std::vector<float>(dim, 0.0f)};
  const std::u32string cps = DecodeUtf8(AsciiLower(text));
  if (cps.size() < 3) return out;
  std::vector<double> acc(dim, 0.0);
  for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
    const std::string gram = EncodeUtf8(std::u32string_view(cps).substr(i, 3));
    const std::uint64_t h = Fnv1a64(gram);
    acc[h % dim] += (h >> 63) == 0 ? 1.0 : -1.0;
  }
  double norm_sq = 0.0;
  for (double v : acc) norm_sq += v * v;
  if (norm_sq == 0.0) return out;  // every bucket cancelled
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (std::size_t k = 0; k < dim; ++k) out.values[k] = static_cast<float>(acc[k] * inv);
  return out;
}

inline double SquaredNorm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return s;
}

inline double Dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Cosine from precomputed squared norms; the matcher caches norms and uses
// this so its similarities are bit-identical to Cosine().
inline double CosineWithNorms(std::span<const float> a, double a_norm_sq,
                              std::span<const float> b, double b_norm_sq) {
  if (a_norm_sq == 0.0 || b_norm_sq == 0.0) return 0.0;
  const double c = Dot(a, b) / (std::sqrt(a_norm_sq) * std::sqrt(b_norm_sq));
  return std::clamp(c, -1.0, 1.0);
}

inline double Cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimMismatch, "cosine of vectors with dims " +
                                             std::to_string(a.size()) + " and " +
                                             std::to_string(b.size()));
  }
  return CosineWithNorms(a, SquaredNorm(a), b, SquaredNorm(b));
}

inline double Cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  return Cosine(std::span<const float>(a.values), std::span<const float>(b.values));
}

// ---------------------------------------------------------------------------
// EMBV1 vector store
//
//   magic  "EMBV1\0"            6 bytes
//   dim    u32 LE
//   count  u64 LE
//   count x { u32 LE key length, key bytes (UTF-8), dim x f32 LE }
//
// A record keyed "__model__:<id>" carries the producing model id; it is
// counted in the header but not exposed as an entry.
// ---------------------------------------------------------------------------

inline constexpr char kEmbv1Magic[6] = {'E', 'M', 'B', 'V', '1', '\0'};
inline constexpr std::string_view kModelKeyPrefix = "__model__:";

class VectorStore {
 public:
  VectorStore() = default;
  explicit VectorStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }
  const std::string& model_id() const { return model_id_; }
  void set_model_id(std::string id) { model_id_ = std::move(id); }

  // Returns false if the key already exists.
  bool Insert(std::string key, std::vector<float> values) {
    if (values.size() != dim_) {
      throw Error(ErrorCode::kDimMismatch, "vector for '" + key + "' has dim " +
                                               std::to_string(values.size()) +
                                               ", store dim " + std::to_string(dim_));
    }
    if (index_.contains(key)) return false;
    index_.emplace(key, keys_.size());
    keys_.push_back(std::move(key));
    data_.insert(data_.end(), values.begin(), values.end());
    return true;
  }

  std::optional<std::span<const float>> Find(std::string_view key) const {
    const auto it = index_.find(std::string(key));
    if (it == index_.end()) return std::nullopt;
    return std::span<const float>(data_.data() + it->second * dim_, dim_);
  }

  static VectorStore Load(const std::string& path) {
    const std::string bytes = ReadFileBytes(path);
    return Parse(bytes);
  }

  static VectorStore Parse(std::string_view bytes) {
    std::size_t pos = 0;
    const auto need = [&](std::size_t n, const char* what) {
      if (bytes.size() - pos < n) {
        throw Error(ErrorCode::kTruncatedFile, std::string("EMBV1 truncated reading ") + what +
                                                   " at byte " + std::to_string(pos));
      }
    };
    if (bytes.size() < sizeof(kEmbv1Magic) ||
        std::memcmp(bytes.data(), kEmbv1Magic, sizeof(kEmbv1Magic)) != 0) {
      throw Error(ErrorCode::kBadMagic, "not an EMBV1 file");
    }
    pos = sizeof(kEmbv1Magic);
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
    need(4, "dim");
    std::memcpy(&dim, bytes.data() + pos, 4);
    pos += 4;
    need(8, "count");
    std::memcpy(&count, bytes.data() + pos, 8);
    pos += 8;
    if (dim == 0) throw Error(ErrorCode::kDimMismatch, "EMBV1 header has dim 0");
    VectorStore store(dim);
    std::vector<float> values(dim);
    for (std::uint64_t r = 0; r < count; ++r) {
      std::uint32_t key_len = 0;
      need(4, "key length");
      std::memcpy(&key_len, bytes.data() + pos, 4);
      pos += 4;
      need(key_len, "key");
      std::string key(bytes.substr(pos, key_len));
      pos += key_len;
      need(static_cast<std::size_t>(dim) * 4, "vector");
      std::memcpy(values.data(), bytes.data() + pos, static_cast<std::size_t>(dim) * 4);
      pos += static_cast<std::size_t>(dim) * 4;
      if (StartsWith(key, kModelKeyPrefix)) {
        store.model_id_ = key.substr(kModelKeyPrefix.size());
        continue;
      }
      if (!store.Insert(std::move(key), values)) {
        throw Error(ErrorCode::kDimMismatch, "EMBV1 record " + std::to_string(r) +
                                                 " repeats a key");
      }
    }
    if (pos != bytes.size()) {
      throw Error(ErrorCode::kDimMismatch,
                  "EMBV1 has " + std::to_string(bytes.size() - pos) +
                      " trailing bytes after " + std::to_string(count) + " records");
    }
    return store;
  }

  std::string Serialize() const {
    std::string out(kEmbv1Magic, sizeof(kEmbv1Magic));
    const auto put = [&out](const void* p, std::size_t n) {
      out.append(static_cast<const char*>(p), n);
    };
    const auto dim32 = static_cast<std::uint32_t>(dim_);
    const std::uint64_t count = keys_.size() + (model_id_.empty() ? 0 : 1);
    put(&dim32, 4);
    put(&count, 8);
    const auto put_record = [&](const std::string& key, const float* values) {
      const auto len = static_cast<std::uint32_t>(key.size());
      put(&len, 4);
      out += key;
      put(values, dim_ * 4);
    };
    if (!model_id_.empty()) {
      const std::vector<float> zero(dim_, 0.0f);
      put_record(std::string(kModelKeyPrefix) + model_id_, zero.data());
    }
    for (std::size_t i = 0; i < keys_.size(); ++i) put_record(keys_[i], data_.data() + i * dim_);
    return out;
  }

  void Save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
    const std::string bytes = Serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

 private:
  std::size_t dim_ = 0;
  std::string model_id_;
  std::vector<std::string> keys_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Vector provider: either a loaded store (lookup by key) or the fallback
// embedder (computed from text, never missing).
class TextEmbedder {
 public:
  static TextEmbedder Precomputed(const VectorStore& store) { return TextEmbedder(&store, 0); }
  static TextEmbedder Fallback(std::size_t dim = kDefaultFallbackDim) {
    if (dim < kMinFallbackDim) {
      throw Error(ErrorCode::kDimTooSmall, "fallback dim " + std::to_string(dim));
    }
    return TextEmbedder(nullptr, dim);
  }

  std::size_t dim() const { return store_ ? store_->dim() : fallback_dim_; }
  bool is_fallback() const { return store_ == nullptr; }

  std::optional<std::vector<float>> Embed(std::string_view key, std::string_view text) const {
    if (store_) {
      auto found = store_->Find(key);
      if (!found) return std::nullopt;
      return std::vector<float>(found->begin(), found->end());
    }
    return EmbedFallback(text, fallback_dim_).values;
  }

 private:
  TextEmbedder(const VectorStore* store, std::size_t dim) : store_(store), fallback_dim_(dim) {}

  const VectorStore* store_;
  std::size_t fallback_dim_;
};

}  // namespace nutripipe
