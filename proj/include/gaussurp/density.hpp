#pragma once

// Gaussian and Gaussian-mixture density models over embedding vectors.
//
// All accumulation is in double precision and all logarithms are natural.
// Sample covariance uses the maximum-likelihood 1/N normalization. The ridge
// term is relative: `ridge * mean(diag(cov))` is added to the diagonal before
// factorization, and the regularized covariance is what gets stored.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "gaussurp/detail/random.hpp"
#include "gaussurp/embedding_store.hpp"
#include "gaussurp/error.hpp"

namespace gaussurp {

enum class CovType : std::uint8_t { full = 0, diagonal = 1, spherical = 2 };

constexpr std::string_view to_string(CovType t) noexcept {
  switch (t) {
    case CovType::full: return "full";
    case CovType::diagonal: return "diag";
    case CovType::spherical: return "spherical";
  }
  return "?";
}

inline CovType parse_cov_type(std::string_view s) {
  if (s == "full") return CovType::full;
  if (s == "diag" || s == "diagonal") return CovType::diagonal;
  if (s == "spherical") return CovType::spherical;
  fail(ErrorCode::invalid_argument, "unknown covariance type '" + std::string(s) + "'");
}

inline constexpr double kDefaultRidge = 1e-6;
inline const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct FitOptions {
  double ridge = kDefaultRidge;
  /// Vectors per partial sum. Results depend on this value but never on `threads`.
  std::size_t chunk_size = 4096;
  unsigned threads = 1;
};

class GaussianModel {
 public:
  GaussianModel() = default;

  /// Builds a model from a mean and an already-regularized covariance payload:
  /// full -> dim x dim, diagonal -> dim x 1, spherical -> 1 x 1.
  static GaussianModel from_moments(Eigen::VectorXd mean, Eigen::MatrixXd covariance, CovType type, double ridge,
                                    std::size_t train_token_count = 0) {
    GaussianModel m;
    m.mean_ = std::move(mean);
    m.cov_ = std::move(covariance);
    m.type_ = type;
    m.ridge_ = ridge;
    m.count_ = train_token_count;
    m.factorize();
    return m;
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean_.size()); }
  CovType cov_type() const noexcept { return type_; }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  /// Stored covariance payload in the shape of the covariance family.
  const Eigen::MatrixXd& covariance() const noexcept { return cov_; }
  /// Lower Cholesky factor (full) or elementwise standard deviations (diagonal/spherical).
  const Eigen::MatrixXd& chol() const noexcept { return chol_; }
  double log_det() const noexcept { return log_det_; }
  double ridge() const noexcept { return ridge_; }
  std::size_t train_token_count() const noexcept { return count_; }

  Eigen::MatrixXd dense_covariance() const {
    const auto d = static_cast<Eigen::Index>(dim());
    switch (type_) {
      case CovType::full: return cov_;
      case CovType::diagonal: return cov_.col(0).asDiagonal();
      case CovType::spherical: return Eigen::MatrixXd::Identity(d, d) * cov_(0, 0);
    }
    return {};
  }

  template <class Derived>
  double squared_mahalanobis(const Eigen::MatrixBase<Derived>& y) const {
    check_dim(static_cast<std::size_t>(y.size()));
    const Eigen::VectorXd centered = y.template cast<double>() - mean_;
    switch (type_) {
      case CovType::full: return chol_.triangularView<Eigen::Lower>().solve(centered).squaredNorm();
      case CovType::diagonal: return (centered.array() / chol_.col(0).array()).square().sum();
      case CovType::spherical: return centered.squaredNorm() / cov_(0, 0);
    }
    return 0.0;
  }

  /// Squared Mahalanobis distance of every row of `rows` (n x dim).
  template <class Derived>
  Eigen::VectorXd squared_mahalanobis_rows(const Eigen::MatrixBase<Derived>& rows) const {
    check_dim(static_cast<std::size_t>(rows.cols()));
    Eigen::MatrixXd centered = (rows.template cast<double>().rowwise() - mean_.transpose()).transpose();
    switch (type_) {
      case CovType::full:
        chol_.triangularView<Eigen::Lower>().solveInPlace(centered);
        return centered.colwise().squaredNorm().transpose();
      case CovType::diagonal:
        return (centered.array().colwise() / chol_.col(0).array()).square().colwise().sum().transpose();
      case CovType::spherical:
        return centered.colwise().squaredNorm().transpose() / cov_(0, 0);
    }
    return {};
  }

  double log_normalizer() const noexcept { return -0.5 * (static_cast<double>(dim()) * kLog2Pi + log_det_); }

  void check_dim(std::size_t d) const {
    if (d != dim()) {
      fail(ErrorCode::dimension_mismatch,
           "vector has dim " + std::to_string(d) + ", model expects " + std::to_string(dim()));
    }
  }

 private:
  void factorize() {
    if (!mean_.allFinite() || !cov_.allFinite()) fail(ErrorCode::non_finite, "non-finite mean or covariance");
    const auto d = static_cast<double>(dim());
    switch (type_) {
      case CovType::full: {
        Eigen::LLT<Eigen::MatrixXd> llt(cov_);
        if (llt.info() != Eigen::Success) {
          fail(ErrorCode::factorization_failed, "covariance is not positive definite after ridge");
        }
        chol_ = llt.matrixL();
        log_det_ = 2.0 * chol_.diagonal().array().log().sum();
        break;
      }
      case CovType::diagonal:
        if ((cov_.col(0).array() <= 0.0).any()) {
          fail(ErrorCode::factorization_failed, "diagonal covariance has a non-positive variance after ridge");
        }
        chol_ = cov_.col(0).array().sqrt().matrix();
        log_det_ = cov_.col(0).array().log().sum();
        break;
      case CovType::spherical:
        if (!(cov_(0, 0) > 0.0)) fail(ErrorCode::factorization_failed, "spherical variance is not positive after ridge");
        chol_ = Eigen::MatrixXd::Constant(1, 1, std::sqrt(cov_(0, 0)));
        log_det_ = d * std::log(cov_(0, 0));
        break;
    }
  }

  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;
  CovType type_ = CovType::full;
  double log_det_ = 0.0;
  double ridge_ = 0.0;
  std::size_t count_ = 0;
};

template <class Derived>
double log_density(const GaussianModel& model, const Eigen::MatrixBase<Derived>& y) {
  return model.log_normalizer() - 0.5 * model.squared_mahalanobis(y);
}

inline double log_density(const GaussianModel& model, std::span<const double> y) {
  return log_density(model, Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())));
}

template <class Derived>
Eigen::VectorXd log_density_rows(const GaussianModel& model, const Eigen::MatrixBase<Derived>& rows) {
  return (model.log_normalizer() - 0.5 * model.squared_mahalanobis_rows(rows).array()).matrix();
}

template <class Derived>
double mahalanobis(const GaussianModel& model, const Eigen::MatrixBase<Derived>& y) {
  return std::sqrt(model.squared_mahalanobis(y));
}

namespace detail {

/// Projects a dim x dim covariance onto the requested family and applies the relative ridge.
inline Eigen::MatrixXd regularize(const Eigen::MatrixXd& cov, CovType type, double ridge) {
  const double mean_diag = cov.diagonal().mean();
  const double bump = ridge * mean_diag;
  switch (type) {
    case CovType::full: {
      Eigen::MatrixXd out = cov;
      out.diagonal().array() += bump;
      return out;
    }
    case CovType::diagonal: return (cov.diagonal().array() + bump).matrix();
    case CovType::spherical: return Eigen::MatrixXd::Constant(1, 1, mean_diag + bump);
  }
  return {};
}

/// Streaming two-pass moment accumulator with fixed chunking.
class ChunkedMoments {
 public:
  ChunkedMoments(const FitOptions& opt) : opt_(opt) {
    if (opt_.chunk_size == 0) fail(ErrorCode::invalid_argument, "chunk_size must be positive");
  }

  template <class Source>
  void run(Source&& source, CovType type) {
    type_ = type;
    pass_ = 0;
    stream(source);
    if (count_ == 0) fail(ErrorCode::empty_input, "fit_gaussian: empty vector stream");
    mean_ = shift_ + sum_ / static_cast<double>(count_);
    const std::size_t first_count = count_;
    pass_ = 1;
    count_ = 0;
    stream(source);
    if (count_ != first_count) fail(ErrorCode::invalid_argument, "fit_gaussian: source yielded different counts per pass");
  }

  std::size_t count() const noexcept { return count_; }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  /// Unregularized ML covariance (full: dim x dim; otherwise only the diagonal is meaningful).
  Eigen::MatrixXd covariance() const {
    if (type_ == CovType::full) {
      Eigen::MatrixXd c = scatter_.selfadjointView<Eigen::Lower>();
      return c / static_cast<double>(count_);
    }
    return Eigen::MatrixXd(sq_.asDiagonal()) / static_cast<double>(count_);
  }

 private:
  template <class Source>
  void stream(Source& source) {
    buffers_.clear();
    fill_ = 0;
    source([&](auto vec) { push(vec); });
    flush();
  }

  template <class Vec>
  void push(const Vec& vec) {
    const auto d = static_cast<Eigen::Index>(std::size(vec));
    if (dim_ == 0) {
      if (d == 0) fail(ErrorCode::dimension_mismatch, "fit_gaussian: zero-dimensional vector");
      dim_ = d;
      shift_.resize(d);
      for (Eigen::Index j = 0; j < d; ++j) shift_[j] = static_cast<double>(vec[static_cast<std::size_t>(j)]);
      sum_ = Eigen::VectorXd::Zero(d);
      scatter_ = Eigen::MatrixXd::Zero(d, d);
      sq_ = Eigen::VectorXd::Zero(d);
    }
    if (d != dim_) {
      fail(ErrorCode::dimension_mismatch,
           "fit_gaussian: vector of dim " + std::to_string(d) + " after dim " + std::to_string(dim_));
    }
    if (buffers_.empty() || fill_ == opt_.chunk_size) {
      if (buffers_.size() == std::max(1u, opt_.threads)) flush();
      buffers_.emplace_back(static_cast<Eigen::Index>(opt_.chunk_size), dim_);
      fill_ = 0;
    }
    auto row = buffers_.back().row(static_cast<Eigen::Index>(fill_));
    for (Eigen::Index j = 0; j < d; ++j) {
      const double v = static_cast<double>(vec[static_cast<std::size_t>(j)]);
      if (!std::isfinite(v)) fail(ErrorCode::non_finite, "fit_gaussian: non-finite input at vector " + std::to_string(count_));
      row[j] = v;
    }
    ++fill_;
    ++count_;
  }

  struct Partial {
    Eigen::VectorXd sum;
    Eigen::MatrixXd scatter;
  };

  Partial reduce(const RowMatrixXd& chunk, Eigen::Index rows) const {
    Partial p;
    const auto block = chunk.topRows(rows);
    if (pass_ == 0) {
      p.sum = (block.rowwise() - shift_.transpose()).colwise().sum().transpose();
    } else {
      const Eigen::MatrixXd centered = block.rowwise() - mean_.transpose();
      if (type_ == CovType::full) {
        p.scatter = Eigen::MatrixXd::Zero(dim_, dim_);
        p.scatter.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
      } else {
        p.sum = centered.array().square().colwise().sum().transpose();
      }
    }
    return p;
  }

  void flush() {
    if (buffers_.empty()) return;
    std::vector<Partial> parts(buffers_.size());
    auto rows_of = [&](std::size_t i) {
      return static_cast<Eigen::Index>(i + 1 == buffers_.size() ? fill_ : opt_.chunk_size);
    };
    if (opt_.threads > 1 && buffers_.size() > 1) {
      std::vector<std::future<Partial>> jobs;
      for (std::size_t i = 0; i < buffers_.size(); ++i) {
        jobs.push_back(std::async(std::launch::async, [&, i] { return reduce(buffers_[i], rows_of(i)); }));
      }
      for (std::size_t i = 0; i < jobs.size(); ++i) parts[i] = jobs[i].get();
    } else {
      for (std::size_t i = 0; i < buffers_.size(); ++i) parts[i] = reduce(buffers_[i], rows_of(i));
    }
    // Fixed combination order keeps results independent of the thread count.
    for (const auto& p : parts) {
      if (pass_ == 0) {
        sum_ += p.sum;
      } else if (type_ == CovType::full) {
        scatter_ += p.scatter;
      } else {
        sq_ += p.sum;
      }
    }
    buffers_.clear();
    fill_ = 0;
  }

  FitOptions opt_;
  CovType type_ = CovType::full;
  int pass_ = 0;
  Eigen::Index dim_ = 0;
  std::size_t count_ = 0;
  Eigen::VectorXd shift_, sum_, mean_, sq_;
  Eigen::MatrixXd scatter_;
  std::vector<RowMatrixXd> buffers_;
  std::size_t fill_ = 0;
};

}  // namespace detail

/// Fits a Gaussian by two streaming passes. `source(visit)` must call
/// `visit(vec)` for every vector, where `vec` is any contiguous range of
/// float or double (std::span, std::vector, ...); it is invoked twice.
template <class Source>
  requires(!std::is_base_of_v<Eigen::EigenBase<std::decay_t<Source>>, std::decay_t<Source>>)
GaussianModel fit_gaussian(Source&& source, CovType type, const FitOptions& opt = {}) {
  if (!(opt.ridge >= 0.0) || !std::isfinite(opt.ridge)) fail(ErrorCode::invalid_argument, "ridge must be finite and >= 0");
  detail::ChunkedMoments acc(opt);
  acc.run(source, type);
  return GaussianModel::from_moments(acc.mean(), detail::regularize(acc.covariance(), type, opt.ridge), type, opt.ridge,
                                     acc.count());
}

/// Vector source over the rows of an in-memory sample matrix (n x dim).
inline auto matrix_source(const Eigen::MatrixXd& data) {
  return [&data](auto&& visit) {
    std::vector<double> row(static_cast<std::size_t>(data.cols()));
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      for (Eigen::Index j = 0; j < data.cols(); ++j) row[static_cast<std::size_t>(j)] = data(i, j);
      visit(std::span<const double>(row));
    }
  };
}

/// Vector source streaming one layer of a container.
inline auto layer_source(const EmbeddingDataset& ds, std::size_t layer) {
  ds.check_layer(layer);
  return [&ds, layer](auto&& visit) { iter_layer(ds, layer, [&](const TokenVector& t) { visit(t.vector); }); };
}

inline GaussianModel fit_gaussian(const Eigen::MatrixXd& data, CovType type, const FitOptions& opt = {}) {
  return fit_gaussian(matrix_source(data), type, opt);
}

// ---------------------------------------------------------------------------
// Mixtures

struct GmmComponent {
  double weight;
  GaussianModel gaussian;
};

class GmmModel {
 public:
  GmmModel() = default;
  GmmModel(std::vector<GmmComponent> components, double ridge, std::vector<double> trace = {})
      : components_(std::move(components)), ridge_(ridge), trace_(std::move(trace)) {
    if (components_.empty()) fail(ErrorCode::invalid_argument, "mixture needs at least one component");
    for (const auto& c : components_) {
      if (!(c.weight > 0.0)) fail(ErrorCode::invalid_argument, "mixture weights must be positive");
      if (c.gaussian.cov_type() != CovType::full) fail(ErrorCode::invalid_argument, "mixture components use full covariance");
      c.gaussian.check_dim(dim());
    }
  }

  std::size_t size() const noexcept { return components_.size(); }
  std::size_t dim() const noexcept { return components_.front().gaussian.dim(); }
  double ridge() const noexcept { return ridge_; }
  const std::vector<GmmComponent>& components() const noexcept { return components_; }
  /// Total training log likelihood after each EM iteration, in order.
  const std::vector<double>& log_likelihood_trace() const noexcept { return trace_; }

 private:
  std::vector<GmmComponent> components_;
  double ridge_ = 0.0;
  std::vector<double> trace_;
};

struct GmmOptions {
  std::size_t components = 1;
  std::uint64_t seed = 42;
  double tol = 1e-6;
  std::size_t max_iter = 200;
  double ridge = kDefaultRidge;
};

namespace detail {

inline double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// n x K matrix of log(w_k) + log N(x_i | k).
inline Eigen::MatrixXd weighted_log_densities(const GmmModel& model, const Eigen::MatrixXd& data) {
  Eigen::MatrixXd out(data.rows(), static_cast<Eigen::Index>(model.size()));
  for (std::size_t k = 0; k < model.size(); ++k) {
    const auto& c = model.components()[k];
    out.col(static_cast<Eigen::Index>(k)) = (std::log(c.weight) + log_density_rows(c.gaussian, data).array()).matrix();
  }
  return out;
}

/// k-means++ seeding: returns K row indices into `data`.
inline std::vector<Eigen::Index> kmeanspp_centers(const Eigen::MatrixXd& data, std::size_t k, Rng& rng) {
  const Eigen::Index n = data.rows();
  std::vector<Eigen::Index> centers{static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)))};
  Eigen::VectorXd d2 = (data.rowwise() - data.row(centers[0])).rowwise().squaredNorm();
  while (centers.size() < k) {
    const double total = d2.sum();
    if (!(total > 0.0)) fail(ErrorCode::invalid_argument, "fit_gmm: fewer distinct points than components");
    const double target = rng.uniform() * total;
    double acc = 0.0;
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc > target) break;
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin((data.rowwise() - data.row(pick)).rowwise().squaredNorm());
  }
  return centers;
}

/// Weighted M-step for one component; mirrors the shifted two-pass estimator of fit_gaussian.
inline GaussianModel weighted_gaussian(const Eigen::MatrixXd& data, const Eigen::VectorXd& resp, double ridge) {
  const double nk = resp.sum();
  if (!(nk > 0.0)) fail(ErrorCode::factorization_failed, "fit_gmm: a component lost all responsibility");
  const Eigen::RowVectorXd shift = data.row(0);
  const Eigen::VectorXd mean =
      shift.transpose() + ((data.rowwise() - shift).array().colwise() * resp.array()).colwise().sum().matrix().transpose() / nk;
  const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(data.cols(), data.cols());
  scatter.selfadjointView<Eigen::Lower>().rankUpdate((centered.array().colwise() * resp.array().sqrt()).matrix().transpose());
  Eigen::MatrixXd cov = scatter.selfadjointView<Eigen::Lower>();
  cov /= nk;
  return GaussianModel::from_moments(mean, regularize(cov, CovType::full, ridge), CovType::full, ridge,
                                     static_cast<std::size_t>(std::llround(nk)));
}

}  // namespace detail

/// EM for a full-covariance mixture, seeded by k-means++ and a hard initial assignment.
/// Stops when the relative improvement in total log likelihood drops below `tol`
/// or after `max_iter` E-steps; the returned parameters are the ones whose
/// likelihood is the last trace entry.
inline GmmModel fit_gmm(const Eigen::MatrixXd& data, const GmmOptions& opt) {
  const std::size_t k = opt.components;
  if (k == 0) fail(ErrorCode::invalid_argument, "fit_gmm: need at least one component");
  if (static_cast<std::size_t>(data.rows()) < k) {
    fail(ErrorCode::invalid_argument, "fit_gmm: " + std::to_string(k) + " components for " +
                                          std::to_string(data.rows()) + " samples");
  }
  if (data.cols() == 0) fail(ErrorCode::dimension_mismatch, "fit_gmm: zero-dimensional data");
  if (!data.allFinite()) fail(ErrorCode::non_finite, "fit_gmm: non-finite input");
  if (opt.max_iter == 0) fail(ErrorCode::invalid_argument, "fit_gmm: max_iter must be positive");

  const Eigen::Index n = data.rows();
  const auto kk = static_cast<Eigen::Index>(k);
  detail::Rng rng(opt.seed);
  const auto centers = detail::kmeanspp_centers(data, k, rng);

  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, kk);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < kk; ++c) {
      const double d = (data.row(i) - data.row(centers[static_cast<std::size_t>(c)])).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    resp(i, best) = 1.0;
  }

  auto m_step = [&](const Eigen::MatrixXd& r) {
    std::vector<GmmComponent> comps;
    const Eigen::VectorXd nk = r.colwise().sum().transpose();
    const double total = nk.sum();
    for (Eigen::Index c = 0; c < kk; ++c) {
      comps.push_back({nk[c] / total, detail::weighted_gaussian(data, r.col(c), opt.ridge)});
    }
    return GmmModel(std::move(comps), opt.ridge);
  };

  GmmModel model = m_step(resp);
  std::vector<double> trace;
  for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
    const Eigen::MatrixXd logp = detail::weighted_log_densities(model, data);
    Eigen::VectorXd row_lse(n);
    for (Eigen::Index i = 0; i < n; ++i) row_lse[i] = detail::log_sum_exp(logp.row(i).transpose());
    const double ll = row_lse.sum();
    const bool converged = !trace.empty() && (ll - trace.back()) < opt.tol * std::abs(trace.back());
    trace.push_back(ll);
    if (converged || iter + 1 == opt.max_iter) break;
    resp = (logp.colwise() - row_lse).array().exp().matrix();
    model = m_step(resp);
  }
  auto comps = model.components();
  return GmmModel(std::move(comps), opt.ridge, std::move(trace));
}

template <class Derived>
double gmm_log_density(const GmmModel& model, const Eigen::MatrixBase<Derived>& y) {
  Eigen::VectorXd terms(static_cast<Eigen::Index>(model.size()));
  for (std::size_t k = 0; k < model.size(); ++k) {
    const auto& c = model.components()[k];
    terms[static_cast<Eigen::Index>(k)] = std::log(c.weight) + log_density(c.gaussian, y);
  }
  return detail::log_sum_exp(terms);
}

template <class Derived>
Eigen::VectorXd gmm_log_density_rows(const GmmModel& model, const Eigen::MatrixBase<Derived>& rows) {
  const Eigen::MatrixXd logp = detail::weighted_log_densities(model, rows.template cast<double>());
  Eigen::VectorXd out(logp.rows());
  for (Eigen::Index i = 0; i < logp.rows(); ++i) out[i] = detail::log_sum_exp(logp.row(i).transpose());
  return out;
}

template <class Derived>
Eigen::VectorXd log_density_rows(const GmmModel& model, const Eigen::MatrixBase<Derived>& rows) {
  model.components().front().gaussian.check_dim(static_cast<std::size_t>(rows.cols()));
  return gmm_log_density_rows(model, rows);
}

// ---------------------------------------------------------------------------
// Either kind of fitted model.

using DensityModel = std::variant<GaussianModel, GmmModel>;

inline std::size_t model_dim(const GaussianModel& m) { return m.dim(); }
inline std::size_t model_dim(const GmmModel& m) { return m.dim(); }
inline std::size_t model_dim(const DensityModel& m) {
  return std::visit([](const auto& x) { return x.dim(); }, m);
}

template <class Derived>
double log_density(const DensityModel& m, const Eigen::MatrixBase<Derived>& y) {
  if (const auto* g = std::get_if<GaussianModel>(&m)) return log_density(*g, y);
  return gmm_log_density(std::get<GmmModel>(m), y);
}

template <class Derived>
Eigen::VectorXd log_density_rows(const DensityModel& m, const Eigen::MatrixBase<Derived>& rows) {
  if (const auto* g = std::get_if<GaussianModel>(&m)) return log_density_rows(*g, rows);
  return log_density_rows(std::get<GmmModel>(m), rows);
}

// ---------------------------------------------------------------------------
// GPM model file:
//   "GPM1" | u32 dim | u8 cov_type | u32 K | f64 ridge |
//   K x ( f64 weight | f64[dim] mean | covariance payload )
// little-endian; payload is f64[dim*dim] row-major (full), f64[dim] (diagonal)
// or f64[1] (spherical).

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(b), std::end(b));
    bytes_.append(reinterpret_cast<const char*>(b), sizeof(T));
  }
  void raw(std::string_view s) { bytes_.append(s); }
  const std::string& bytes() const noexcept { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  template <class T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      fail(ErrorCode::truncated, name_ + ": truncated while reading " + what + " at byte offset " + std::to_string(pos_));
    }
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(b), std::end(b));
    T v;
    std::memcpy(&v, b, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) fail(ErrorCode::truncated, name_ + ": truncated header at byte offset " + std::to_string(pos_));
    std::string_view s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const noexcept { return pos_; }
  std::size_t size() const noexcept { return bytes_.size(); }
  const std::string& name() const noexcept { return name_; }

 private:
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline void put_component(ByteWriter& w, double weight, const GaussianModel& g) {
  w.put(weight);
  for (Eigen::Index i = 0; i < g.mean().size(); ++i) w.put(g.mean()[i]);
  const auto& c = g.covariance();
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    for (Eigen::Index col = 0; col < c.cols(); ++col) w.put(c(r, col));
  }
}

}  // namespace detail

inline std::string serialize_model(const DensityModel& model) {
  detail::ByteWriter w;
  w.raw("GPM1");
  w.put(static_cast<std::uint32_t>(model_dim(model)));
  if (const auto* g = std::get_if<GaussianModel>(&model)) {
    w.put(static_cast<std::uint8_t>(g->cov_type()));
    w.put(std::uint32_t{1});
    w.put(g->ridge());
    detail::put_component(w, 1.0, *g);
  } else {
    const auto& gmm = std::get<GmmModel>(model);
    w.put(static_cast<std::uint8_t>(CovType::full));
    w.put(static_cast<std::uint32_t>(gmm.size()));
    w.put(gmm.ridge());
    for (const auto& c : gmm.components()) detail::put_component(w, c.weight, c.gaussian);
  }
  return w.bytes();
}

/// K == 1 loads as a GaussianModel, K > 1 as a GmmModel. Factorizations are recomputed.
inline DensityModel deserialize_model(std::string bytes, const std::string& name = "<model>") {
  detail::ByteReader r(std::move(bytes), name);
  const auto magic = r.take(4);
  if (magic.substr(0, 3) != "GPM") fail(ErrorCode::bad_magic, name + ": bad magic, not a GPM model file");
  if (magic[3] != '1') fail(ErrorCode::unsupported_version, name + ": unsupported GPM version '" + std::string(1, magic[3]) + "'");
  const auto dim = r.get<std::uint32_t>("dim");
  const auto type_byte = r.get<std::uint8_t>("cov_type");
  const auto k = r.get<std::uint32_t>("component count");
  const double ridge = r.get<double>("ridge");
  if (dim == 0) fail(ErrorCode::parse_error, name + ": zero dim");
  if (type_byte > 2) fail(ErrorCode::parse_error, name + ": unknown cov_type " + std::to_string(type_byte));
  if (k == 0) fail(ErrorCode::parse_error, name + ": zero components");
  const auto type = static_cast<CovType>(type_byte);
  if (k > 1 && type != CovType::full) fail(ErrorCode::parse_error, name + ": mixtures must use full covariance");

  const auto d = static_cast<Eigen::Index>(dim);
  std::vector<GmmComponent> comps;
  for (std::uint32_t c = 0; c < k; ++c) {
    const double weight = r.get<double>("weight");
    Eigen::VectorXd mean(d);
    for (Eigen::Index i = 0; i < d; ++i) mean[i] = r.get<double>("mean");
    Eigen::MatrixXd cov = type == CovType::full ? Eigen::MatrixXd(d, d)
                          : type == CovType::diagonal ? Eigen::MatrixXd(d, 1)
                                                      : Eigen::MatrixXd(1, 1);
    for (Eigen::Index row = 0; row < cov.rows(); ++row) {
      for (Eigen::Index col = 0; col < cov.cols(); ++col) cov(row, col) = r.get<double>("covariance");
    }
    comps.push_back({weight, GaussianModel::from_moments(std::move(mean), std::move(cov), type, ridge)});
  }
  if (r.pos() != r.size()) {
    fail(ErrorCode::size_mismatch, name + ": " + std::to_string(r.size() - r.pos()) + " trailing bytes at byte offset " +
                                       std::to_string(r.pos()));
  }
  if (k == 1) return std::move(comps.front().gaussian);
  return GmmModel(std::move(comps), ridge);
}

inline void save_model(const DensityModel& model, const std::filesystem::path& path) {
  detail::write_text_file(path, serialize_model(model));
}

inline DensityModel load_model(const std::filesystem::path& path) {
  return deserialize_model(detail::read_text_file(path), path.filename().string());
}

}  // namespace gaussurp
