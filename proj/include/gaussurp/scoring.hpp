#pragma once

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "gaussurp/density.hpp"
#include "gaussurp/detail/text.hpp"
#include "gaussurp/embedding_store.hpp"
#include "gaussurp/error.hpp"

namespace gaussurp {

enum class Aggregation { sum, max };

constexpr std::string_view to_string(Aggregation a) noexcept { return a == Aggregation::sum ? "sum" : "max"; }

inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "sum") return Aggregation::sum;
  if (s == "max") return Aggregation::max;
  fail(ErrorCode::invalid_argument, "unknown aggregation '" + std::string(s) + "'");
}

struct SurprisalRecord {
  std::string sentence_id;
  std::size_t layer = 0;
  std::vector<double> token_surprisals;
  double sentence_surprisal = 0.0;
  Aggregation aggregation = Aggregation::sum;

  /// Diagnostic only; sentence scores are never length-normalized.
  double mean_token_surprisal() const {
    return std::accumulate(token_surprisals.begin(), token_surprisals.end(), 0.0) /
           static_cast<double>(token_surprisals.size());
  }
};

/// Negative log density (nats) of every row of `vectors` (tokens x dim), in order.
template <class Model, class Derived>
std::vector<double> token_surprisals(const Model& model, const Eigen::MatrixBase<Derived>& vectors) {
  if (vectors.rows() == 0) fail(ErrorCode::empty_input, "token_surprisals: empty sentence");
  const Eigen::VectorXd logp = log_density_rows(model, vectors);
  std::vector<double> out(static_cast<std::size_t>(logp.size()));
  for (Eigen::Index i = 0; i < logp.size(); ++i) out[static_cast<std::size_t>(i)] = -logp[i];
  return out;
}

inline double sentence_surprisal(std::span<const double> token_scores, Aggregation agg) {
  if (token_scores.empty()) fail(ErrorCode::empty_input, "sentence_surprisal: no token scores");
  if (agg == Aggregation::max) return *std::max_element(token_scores.begin(), token_scores.end());
  return std::accumulate(token_scores.begin(), token_scores.end(), 0.0);
}

/// One record per sentence in manifest order.
template <class Model>
std::vector<SurprisalRecord> score_dataset(const Model& model, const EmbeddingDataset& ds, std::size_t layer,
                                           Aggregation agg) {
  ds.check_layer(layer);
  if (model_dim(model) != ds.dim()) {
    fail(ErrorCode::dimension_mismatch, "model dim " + std::to_string(model_dim(model)) + " != dataset dim " +
                                            std::to_string(ds.dim()));
  }
  std::vector<SurprisalRecord> out;
  out.reserve(ds.sentences().size());
  for_each_sentence(ds, layer, [&](const SentenceMeta& s, const SentenceVectors& v) {
    SurprisalRecord rec;
    rec.sentence_id = s.id;
    rec.layer = layer;
    rec.token_surprisals = token_surprisals(model, v);
    rec.sentence_surprisal = sentence_surprisal(rec.token_surprisals, agg);
    rec.aggregation = agg;
    out.push_back(std::move(rec));
  });
  return out;
}

inline std::string token_scores_csv(std::span<const SurprisalRecord> records, const EmbeddingDataset& ds) {
  std::string out = "sentence_id,layer,token_index,token,token_surprisal\n";
  for (const auto& r : records) {
    const auto* meta = ds.find(r.sentence_id);
    if (!meta) fail(ErrorCode::missing_score, "record for unknown sentence " + r.sentence_id);
    for (std::size_t t = 0; t < r.token_surprisals.size(); ++t) {
      out += detail::csv_field(r.sentence_id) + ',' + std::to_string(r.layer) + ',' + std::to_string(t) + ',' +
             detail::csv_field(meta->tokens[t]) + ',' + detail::format_double(r.token_surprisals[t]) + '\n';
    }
  }
  return out;
}

inline std::string sentence_scores_csv(std::span<const SurprisalRecord> records) {
  std::string out = "sentence_id,layer,aggregation,sentence_surprisal\n";
  for (const auto& r : records) {
    out += detail::csv_field(r.sentence_id) + ',' + std::to_string(r.layer) + ',' + std::string(to_string(r.aggregation)) +
           ',' + detail::format_double(r.sentence_surprisal) + '\n';
  }
  return out;
}

}  // namespace gaussurp
