#pragma once

// On-disk container for layerwise token embeddings.
//
//   <root>/manifest.json   {"format_version":1,"dim":D,"layer_count":L,
//                           "sentences":[{"id":..., "tokens":[...]}, ...]}
//   <root>/layer_<k>.bin   raw little-endian float32, token-major, tokens in
//                          manifest order, no header or padding.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gaussurp/detail/text.hpp"
#include "gaussurp/error.hpp"

namespace gaussurp {

inline constexpr int kContainerFormatVersion = 1;

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// tokens x dim view over a sentence's vectors at one layer.
using SentenceVectors = Eigen::Map<const RowMatrixXf>;

struct SentenceMeta {
  std::string id;
  std::vector<std::string> tokens;
  std::size_t token_offset = 0;

  std::size_t size() const noexcept { return tokens.size(); }
};

/// Validated, immutable handle on a container directory. Safe to share
/// between threads; every read opens its own stream.
class EmbeddingDataset {
 public:
  EmbeddingDataset() = default;
  EmbeddingDataset(std::filesystem::path root, std::size_t dim, std::size_t layer_count,
                   std::vector<SentenceMeta> sentences)
      : root_(std::move(root)), dim_(dim), layer_count_(layer_count), sentences_(std::move(sentences)) {
    for (std::size_t i = 0; i < sentences_.size(); ++i) index_.emplace(sentences_[i].id, i);
    total_tokens_ = sentences_.empty() ? 0 : sentences_.back().token_offset + sentences_.back().size();
  }

  const std::filesystem::path& data_root() const noexcept { return root_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t layer_count() const noexcept { return layer_count_; }
  std::size_t total_tokens() const noexcept { return total_tokens_; }
  const std::vector<SentenceMeta>& sentences() const noexcept { return sentences_; }

  std::uintmax_t layer_bytes() const noexcept { return total_tokens_ * dim_ * sizeof(float); }
  std::filesystem::path layer_path(std::size_t layer) const {
    return root_ / ("layer_" + std::to_string(layer) + ".bin");
  }

  /// nullptr when the id is not in the manifest.
  const SentenceMeta* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &sentences_[it->second];
  }
  std::size_t index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) fail(ErrorCode::missing_score, "sentence id not in dataset: " + std::string(id));
    return it->second;
  }

  void check_layer(std::size_t layer) const {
    if (layer >= layer_count_) {
      fail(ErrorCode::out_of_range, "layer " + std::to_string(layer) + " out of range [0, " +
                                        std::to_string(layer_count_) + ")");
    }
  }

 private:
  std::filesystem::path root_;
  std::size_t dim_ = 0;
  std::size_t layer_count_ = 0;
  std::size_t total_tokens_ = 0;
  std::vector<SentenceMeta> sentences_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

inline void floats_from_le(std::span<float> values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : values) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
}

inline void floats_to_le(std::span<const float> values, std::string& out) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(float));
  char* dst = out.data() + start;
  for (float f : values) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
    std::memcpy(dst, &bits, sizeof bits);
    dst += sizeof bits;
  }
}

/// Sequential reader over one layer blob with finiteness checks.
class LayerReader {
 public:
  LayerReader(const EmbeddingDataset& ds, std::size_t layer) : path_(ds.layer_path(layer)), dim_(ds.dim()) {
    ds.check_layer(layer);
    in_.open(path_, std::ios::binary);
    if (!in_) fail(ErrorCode::missing_file, "cannot open " + path_.string());
  }

  /// Reads `count` token vectors into `buf` (resized to count*dim).
  void read_tokens(std::size_t count, std::vector<float>& buf) {
    buf.resize(count * dim_);
    const auto bytes = static_cast<std::streamsize>(buf.size() * sizeof(float));
    in_.read(reinterpret_cast<char*>(buf.data()), bytes);
    if (in_.gcount() != bytes) {
      fail(ErrorCode::truncated, path_.filename().string() + ": unexpected end of data at byte offset " +
                                     std::to_string(offset_ + static_cast<std::uint64_t>(in_.gcount())));
    }
    floats_from_le(buf);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      if (!std::isfinite(buf[i])) {
        fail(ErrorCode::non_finite, path_.filename().string() + ": non-finite value at byte offset " +
                                        std::to_string(offset_ + i * sizeof(float)));
      }
    }
    offset_ += static_cast<std::uint64_t>(bytes);
  }

 private:
  std::filesystem::path path_;
  std::size_t dim_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

inline std::vector<SentenceMeta> parse_sentences(const nlohmann::json& arr, const std::string& where) {
  if (!arr.is_array()) fail(ErrorCode::parse_error, where + ": \"sentences\" must be an array");
  std::vector<SentenceMeta> out;
  out.reserve(arr.size());
  std::size_t offset = 0;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& s = arr[i];
    if (!s.is_object() || !s.contains("id") || !s.contains("tokens") || !s["id"].is_string() ||
        !s["tokens"].is_array()) {
      fail(ErrorCode::parse_error, where + ": sentence " + std::to_string(i) + " needs string \"id\" and array \"tokens\"");
    }
    SentenceMeta meta;
    meta.id = s["id"].get<std::string>();
    for (const auto& t : s["tokens"]) {
      if (!t.is_string()) fail(ErrorCode::parse_error, where + ": non-string token in sentence " + meta.id);
      meta.tokens.push_back(t.get<std::string>());
    }
    if (meta.tokens.empty()) fail(ErrorCode::empty_input, where + ": sentence " + meta.id + " has no tokens");
    if (!seen.emplace(meta.id, i).second) fail(ErrorCode::parse_error, where + ": duplicate sentence id " + meta.id);
    meta.token_offset = offset;
    offset += meta.tokens.size();
    out.push_back(std::move(meta));
  }
  return out;
}

}  // namespace detail

/// Opens and cross-checks a container. Vector contents are not scanned here;
/// readers check finiteness as they stream and `validate_dataset` does a full pass.
inline EmbeddingDataset open_dataset(const std::filesystem::path& root) {
  const auto manifest_path = root / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) fail(ErrorCode::missing_file, "missing " + manifest_path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_text_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::bad_magic, manifest_path.string() + ": not a JSON manifest at byte offset " +
                                   std::to_string(e.byte) + " (" + e.what() + ")");
  }
  if (!manifest.is_object() || !manifest.contains("format_version")) {
    fail(ErrorCode::bad_magic, manifest_path.string() + ": not an embedding container manifest (no format_version)");
  }
  if (!manifest["format_version"].is_number_integer() ||
      manifest["format_version"].get<long long>() != kContainerFormatVersion) {
    fail(ErrorCode::unsupported_version,
         manifest_path.string() + ": unsupported format_version " + manifest["format_version"].dump());
  }
  auto positive_int = [&](const char* key) -> std::size_t {
    if (!manifest.contains(key) || !manifest[key].is_number_integer() || manifest[key].get<long long>() < 1) {
      fail(ErrorCode::parse_error, manifest_path.string() + ": \"" + key + "\" must be a positive integer");
    }
    return manifest[key].get<std::size_t>();
  };
  const std::size_t dim = positive_int("dim");
  const std::size_t layer_count = positive_int("layer_count");
  if (!manifest.contains("sentences")) fail(ErrorCode::parse_error, manifest_path.string() + ": missing \"sentences\"");

  EmbeddingDataset ds(root, dim, layer_count, detail::parse_sentences(manifest["sentences"], manifest_path.string()));

  const std::uintmax_t expected = ds.layer_bytes();
  for (std::size_t k = 0; k < layer_count; ++k) {
    const auto blob = ds.layer_path(k);
    std::error_code ec;
    const auto actual = std::filesystem::file_size(blob, ec);
    if (ec) fail(ErrorCode::missing_file, "missing " + blob.string());
    if (actual != expected) {
      fail(ErrorCode::size_mismatch, blob.filename().string() + ": expected " + std::to_string(expected) +
                                         " bytes (" + std::to_string(ds.total_tokens()) + " tokens x " +
                                         std::to_string(dim) + " x 4), found " + std::to_string(actual) +
                                         "; data inconsistent from byte offset " +
                                         std::to_string(std::min(actual, expected)));
    }
  }
  return ds;
}

/// One sentence to be written: `layers[k]` is a tokens x dim matrix.
struct SentenceRecord {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<RowMatrixXf> layers;
};

/// Writes a container, replacing any existing manifest and blobs at `root`.
inline EmbeddingDataset write_dataset(std::span<const SentenceRecord> records, const std::filesystem::path& root) {
  if (records.empty()) fail(ErrorCode::empty_input, "write_dataset: no sentences");
  const std::size_t layer_count = records.front().layers.size();
  if (layer_count == 0) fail(ErrorCode::empty_input, "write_dataset: sentence " + records.front().id + " has no layers");
  const auto dim = static_cast<std::size_t>(records.front().layers.front().cols());
  if (dim == 0) fail(ErrorCode::dimension_mismatch, "write_dataset: zero-dimensional vectors");

  nlohmann::ordered_json sentences = nlohmann::ordered_json::array();
  std::unordered_map<std::string, int> ids;
  for (const auto& rec : records) {
    if (rec.tokens.empty()) fail(ErrorCode::empty_input, "write_dataset: sentence " + rec.id + " is empty");
    if (!ids.emplace(rec.id, 0).second) fail(ErrorCode::invalid_argument, "write_dataset: duplicate id " + rec.id);
    if (rec.layers.size() != layer_count) {
      fail(ErrorCode::dimension_mismatch, "write_dataset: sentence " + rec.id + " has " + std::to_string(rec.layers.size()) +
                                              " layers, expected " + std::to_string(layer_count));
    }
    for (std::size_t k = 0; k < layer_count; ++k) {
      const auto& m = rec.layers[k];
      if (static_cast<std::size_t>(m.cols()) != dim) {
        fail(ErrorCode::dimension_mismatch, "write_dataset: sentence " + rec.id + " layer " + std::to_string(k) +
                                                " has dim " + std::to_string(m.cols()) + ", expected " + std::to_string(dim));
      }
      if (static_cast<std::size_t>(m.rows()) != rec.tokens.size()) {
        fail(ErrorCode::dimension_mismatch, "write_dataset: sentence " + rec.id + " layer " + std::to_string(k) + " has " +
                                                std::to_string(m.rows()) + " vectors for " +
                                                std::to_string(rec.tokens.size()) + " tokens");
      }
      if (!m.allFinite()) fail(ErrorCode::non_finite, "write_dataset: non-finite value in sentence " + rec.id);
    }
    sentences.push_back({{"id", rec.id}, {"tokens", rec.tokens}});
  }

  std::filesystem::create_directories(root);
  nlohmann::ordered_json manifest;
  manifest["format_version"] = kContainerFormatVersion;
  manifest["dim"] = dim;
  manifest["layer_count"] = layer_count;
  manifest["sentences"] = std::move(sentences);
  detail::write_text_file(root / "manifest.json", manifest.dump() + "\n");

  for (std::size_t k = 0; k < layer_count; ++k) {
    std::string blob;
    for (const auto& rec : records) {
      const auto& m = rec.layers[k];
      detail::floats_to_le(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())), blob);
    }
    detail::write_text_file(root / ("layer_" + std::to_string(k) + ".bin"), blob);
  }
  return open_dataset(root);
}

struct TokenVector {
  std::string_view sentence_id;
  std::size_t token_index;
  std::string_view token;
  std::span<const float> vector;
};

/// Calls `fn(const SentenceMeta&, const SentenceVectors&)` for every sentence
/// at `layer`, in manifest order.
template <class Fn>
void for_each_sentence(const EmbeddingDataset& ds, std::size_t layer, Fn&& fn) {
  detail::LayerReader reader(ds, layer);
  std::vector<float> buf;
  for (const auto& s : ds.sentences()) {
    reader.read_tokens(s.size(), buf);
    const SentenceVectors vectors(buf.data(), static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(ds.dim()));
    fn(s, vectors);
  }
}

/// Streams every token vector at `layer` in manifest order as a TokenVector.
template <class Fn>
void iter_layer(const EmbeddingDataset& ds, std::size_t layer, Fn&& fn) {
  for_each_sentence(ds, layer, [&](const SentenceMeta& s, const SentenceVectors& v) {
    for (std::size_t t = 0; t < s.size(); ++t) {
      fn(TokenVector{s.id, t, s.tokens[t], std::span<const float>(v.row(static_cast<Eigen::Index>(t)).data(), ds.dim())});
    }
  });
}

/// Loads one layer into memory as a tokens x dim double matrix.
inline Eigen::MatrixXd read_layer(const EmbeddingDataset& ds, std::size_t layer) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ds.total_tokens()), static_cast<Eigen::Index>(ds.dim()));
  for_each_sentence(ds, layer, [&](const SentenceMeta& s, const SentenceVectors& v) {
    out.middleRows(static_cast<Eigen::Index>(s.token_offset), v.rows()) = v.cast<double>();
  });
  return out;
}

struct Diagnostic {
  ErrorCode code;
  std::string message;
};

/// Full structural and content check of a container. Empty result means valid.
inline std::vector<Diagnostic> validate_dataset(const std::filesystem::path& root) {
  std::vector<Diagnostic> issues;
  EmbeddingDataset ds;
  try {
    ds = open_dataset(root);
  } catch (const Error& e) {
    issues.push_back({e.code(), e.what()});
    return issues;
  }
  for (std::size_t k = 0; k < ds.layer_count(); ++k) {
    try {
      for_each_sentence(ds, k, [](const SentenceMeta&, const SentenceVectors&) {});
    } catch (const Error& e) {
      issues.push_back({e.code(), e.what()});
    }
  }
  return issues;
}

}  // namespace gaussurp
