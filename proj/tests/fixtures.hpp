#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gaussurp/embedding_store.hpp"
#include "oracles.hpp"

namespace fixtures {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "gaussurp") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Eigen::MatrixXd to_eigen(const oracle::Matrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m.front().size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m[i].size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
  }
  return out;
}

inline Eigen::VectorXd to_eigen(const oracle::Vector& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline oracle::Matrix to_oracle(const Eigen::MatrixXd& m) {
  oracle::Matrix out(static_cast<std::size_t>(m.rows()), oracle::Vector(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return out;
}

inline oracle::Vector to_oracle(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

/// Samples n rows from N(mean, cov) using a Cholesky factor computed by hand.
inline Eigen::MatrixXd sample_gaussian(const oracle::Vector& mean, const oracle::Matrix& cov, std::size_t n,
                                       std::mt19937_64& rng) {
  const std::size_t d = mean.size();
  oracle::Matrix l(d, oracle::Vector(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = cov[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      l[i][j] = i == j ? std::sqrt(s) : s / l[j][j];
    }
  }
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<double> z(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (auto& x : z) x = normal(rng);
    for (std::size_t i = 0; i < d; ++i) {
      double v = mean[i];
      for (std::size_t k = 0; k <= i; ++k) v += l[i][k] * z[k];
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return out;
}

/// Random container records: `n` sentences with 1..max_tokens tokens drawn
/// from a small vocabulary, Gaussian vectors at every layer.
inline std::vector<gaussurp::SentenceRecord> random_records(std::size_t n, std::size_t layers, std::size_t dim,
                                                            std::uint64_t seed, std::size_t max_tokens = 6) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(1, max_tokens);
  std::uniform_int_distribution<int> word(0, 19);
  std::normal_distribution<float> normal;
  std::vector<gaussurp::SentenceRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    gaussurp::SentenceRecord r;
    r.id = "s" + std::to_string(i);
    const std::size_t m = len(rng);
    for (std::size_t t = 0; t < m; ++t) r.tokens.push_back("w" + std::to_string(word(rng)));
    for (std::size_t k = 0; k < layers; ++k) {
      gaussurp::RowMatrixXf v(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
      for (Eigen::Index a = 0; a < v.rows(); ++a) {
        for (Eigen::Index b = 0; b < v.cols(); ++b) v(a, b) = normal(rng);
      }
      r.layers.push_back(std::move(v));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fixtures
