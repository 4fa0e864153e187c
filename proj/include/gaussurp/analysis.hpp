#pragma once

// Frequency/surprisal correlation and PCA projections of rare vs. frequent tokens.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "gaussurp/density.hpp"
#include "gaussurp/detail/text.hpp"
#include "gaussurp/embedding_store.hpp"
#include "gaussurp/error.hpp"
#include "gaussurp/scoring.hpp"

namespace gaussurp {

class FreqTable {
 public:
  void add(std::string_view token, std::uint64_t n = 1) {
    counts_[std::string(token)] += n;
    total_ += n;
  }

  std::uint64_t total() const noexcept { return total_; }
  std::size_t type_count() const noexcept { return counts_.size(); }
  const std::map<std::string, std::uint64_t, std::less<>>& counts() const noexcept { return counts_; }

  /// 0 for unseen tokens.
  std::uint64_t count(std::string_view token) const {
    auto it = counts_.find(token);
    return it == counts_.end() ? 0 : it->second;
  }

  /// ln(count / total); empty for unseen tokens.
  std::optional<double> log_freq(std::string_view token) const {
    const auto c = count(token);
    if (c == 0) return std::nullopt;
    return std::log(static_cast<double>(c) / static_cast<double>(total_));
  }

 private:
  std::map<std::string, std::uint64_t, std::less<>> counts_;
  std::uint64_t total_ = 0;
};

template <class Range>
FreqTable build_freq_table(const Range& tokens) {
  FreqTable t;
  for (const auto& tok : tokens) t.add(tok);
  if (t.total() == 0) fail(ErrorCode::empty_input, "build_freq_table: empty token stream");
  return t;
}

/// Token counts over every sentence in a container manifest.
inline FreqTable build_freq_table(const EmbeddingDataset& ds) {
  FreqTable t;
  for (const auto& s : ds.sentences()) {
    for (const auto& tok : s.tokens) t.add(tok);
  }
  if (t.total() == 0) fail(ErrorCode::empty_input, "build_freq_table: empty token stream");
  return t;
}

/// Sample Pearson correlation, two-pass.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::invalid_argument, "pearson: series differ in length");
  if (x.size() < 2) fail(ErrorCode::invalid_argument, "pearson: need at least two points");
  auto constant = [](std::span<const double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *lo == *hi;
  };
  if (constant(x) || constant(y)) fail(ErrorCode::zero_variance, "pearson: zero variance series");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0 && syy > 0.0)) fail(ErrorCode::zero_variance, "pearson: zero variance series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct LayerCorrelation {
  std::size_t layer = 0;
  double pearson_r = 0.0;
  std::size_t n_tokens_used = 0;
  std::size_t n_excluded = 0;
};

/// Per-layer Pearson r between token surprisal and log frequency. Tokens
/// absent from `freq` are excluded and counted. `models[k]` scores layer k.
inline std::vector<LayerCorrelation> freq_surprisal_correlation(const EmbeddingDataset& ds,
                                                                std::span<const DensityModel> models,
                                                                const FreqTable& freq) {
  if (models.size() != ds.layer_count()) {
    fail(ErrorCode::invalid_argument, "freq_surprisal_correlation: " + std::to_string(models.size()) +
                                          " models for " + std::to_string(ds.layer_count()) + " layers");
  }
  std::vector<double> log_freq;
  std::vector<bool> used;
  for (const auto& s : ds.sentences()) {
    for (const auto& tok : s.tokens) {
      const auto lf = freq.log_freq(tok);
      used.push_back(lf.has_value());
      if (lf) log_freq.push_back(*lf);
    }
  }
  std::vector<LayerCorrelation> out;
  for (std::size_t layer = 0; layer < ds.layer_count(); ++layer) {
    std::vector<double> surprisal;
    surprisal.reserve(log_freq.size());
    std::size_t pos = 0;
    for (const auto& rec : score_dataset(models[layer], ds, layer, Aggregation::sum)) {
      for (double g : rec.token_surprisals) {
        if (used[pos++]) surprisal.push_back(g);
      }
    }
    out.push_back({layer, pearson(surprisal, log_freq), log_freq.size(), used.size() - log_freq.size()});
  }
  return out;
}

inline std::string freqcorr_csv(std::span<const LayerCorrelation> rows) {
  std::string out = "layer,pearson_r,n_tokens_used,n_excluded\n";
  for (const auto& r : rows) {
    out += std::to_string(r.layer) + ',' + detail::format_double(r.pearson_r) + ',' + std::to_string(r.n_tokens_used) +
           ',' + std::to_string(r.n_excluded) + '\n';
  }
  return out;
}

struct PcaProjection {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // dim x k, orthonormal columns
  Eigen::VectorXd explained_variance;
  Eigen::MatrixXd coordinates;  // n x k
  /// Fewer than k directions carry numerically nonzero variance.
  bool rank_deficient = false;
};

/// Centers the samples (n x dim), takes the top-k eigenvectors of the sample
/// covariance and projects. Each component's largest-magnitude entry is positive.
inline PcaProjection pca_project(const Eigen::MatrixXd& samples, std::size_t k = 2) {
  const Eigen::Index n = samples.rows(), d = samples.cols();
  const auto kk = static_cast<Eigen::Index>(k);
  if (k == 0 || kk > d) fail(ErrorCode::invalid_argument, "pca_project: k must be in [1, dim]");
  if (n <= kk) fail(ErrorCode::invalid_argument, "pca_project: need more samples than components");
  if (!samples.allFinite()) fail(ErrorCode::non_finite, "pca_project: non-finite input");

  PcaProjection out;
  out.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - out.mean.transpose();
  if ((centered.array() == 0.0).all()) fail(ErrorCode::rank_deficient, "pca_project: all samples identical");
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) fail(ErrorCode::rank_deficient, "pca_project: eigendecomposition failed");
  out.components.resize(d, kk);
  out.explained_variance.resize(kk);
  const double top = std::max(eig.eigenvalues()[d - 1], 0.0);
  const double tol = static_cast<double>(d) * std::numeric_limits<double>::epsilon() * top;
  for (Eigen::Index c = 0; c < kk; ++c) {
    // eigenvalues come back ascending
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    out.components.col(c) = v;
    out.explained_variance[c] = std::max(eig.eigenvalues()[d - 1 - c], 0.0);
    if (out.explained_variance[c] <= tol) out.rank_deficient = true;
  }
  out.coordinates = centered * out.components;
  return out;
}

enum class Bucket { rare, frequent };

constexpr std::string_view to_string(Bucket b) noexcept { return b == Bucket::rare ? "rare" : "frequent"; }

struct RareBuckets {
  std::vector<Bucket> buckets;
  std::uint64_t threshold_count = 0;
  /// More than one type shares the threshold count, so the tie rule decided membership.
  bool tie_at_threshold = false;
  /// Every type has the same count; everything is rare.
  bool all_equal = false;
};

/// Rare iff the token's count is at or below the q-quantile (nearest rank) of
/// the per-type count distribution.
inline RareBuckets bucket_rare(const FreqTable& freq, std::span<const std::string> tokens, double quantile = 0.20) {
  if (tokens.empty()) fail(ErrorCode::empty_input, "bucket_rare: empty token list");
  if (!(quantile > 0.0 && quantile <= 1.0)) fail(ErrorCode::invalid_argument, "bucket_rare: quantile outside (0, 1]");
  std::vector<std::uint64_t> counts;
  counts.reserve(freq.type_count());
  for (const auto& [tok, c] : freq.counts()) counts.push_back(c);
  if (counts.empty()) fail(ErrorCode::empty_input, "bucket_rare: empty frequency table");
  std::sort(counts.begin(), counts.end());
  const double m = static_cast<double>(counts.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(quantile * m - 1e-9)));

  RareBuckets out;
  out.threshold_count = counts[std::min(rank, counts.size()) - 1];
  out.tie_at_threshold = std::count(counts.begin(), counts.end(), out.threshold_count) > 1;
  out.all_equal = counts.front() == counts.back();
  out.buckets.reserve(tokens.size());
  for (const auto& tok : tokens) {
    const auto c = freq.count(tok);
    if (c == 0) fail(ErrorCode::invalid_argument, "bucket_rare: token not in frequency table: " + tok);
    out.buckets.push_back(c <= out.threshold_count ? Bucket::rare : Bucket::frequent);
  }
  return out;
}

}  // namespace gaussurp
