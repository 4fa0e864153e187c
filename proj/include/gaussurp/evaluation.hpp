#pragma once

// Minimal-pair evaluation: pair accuracy, layerwise surprisal gaps, exact
// binomial significance, masked-LM comparison, and report emission.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gaussurp/density.hpp"
#include "gaussurp/detail/text.hpp"
#include "gaussurp/embedding_store.hpp"
#include "gaussurp/error.hpp"
#include "gaussurp/scoring.hpp"

namespace gaussurp {

enum class AnomalyType { morphosyntactic, semantic, commonsense };

constexpr std::string_view to_string(AnomalyType t) noexcept {
  switch (t) {
    case AnomalyType::morphosyntactic: return "morphosyntactic";
    case AnomalyType::semantic: return "semantic";
    case AnomalyType::commonsense: return "commonsense";
  }
  return "?";
}

inline AnomalyType parse_anomaly_type(std::string_view s) {
  if (s == "morphosyntactic" || s == "morphosyntax") return AnomalyType::morphosyntactic;
  if (s == "semantic") return AnomalyType::semantic;
  if (s == "commonsense") return AnomalyType::commonsense;
  fail(ErrorCode::parse_error, "unknown anomaly_type '" + std::string(s) + "'");
}

struct MinimalPair {
  std::string pair_id;
  std::string good_id;
  std::string bad_id;
  bool differs_by_one_token = true;
  std::optional<double> mlm_logprob_good;
  std::optional<double> mlm_logprob_bad;
  bool oov_flag = false;
};

struct MinimalPairSet {
  std::string task_name;
  AnomalyType anomaly_type = AnomalyType::morphosyntactic;
  std::vector<MinimalPair> pairs;
};

/// Parses the JSON-lines pair format; pairs are grouped by task in order of
/// first appearance. Blank lines are skipped.
inline std::vector<MinimalPairSet> parse_pairs_jsonl(std::string_view text, const std::string& source = "<pairs>") {
  std::vector<MinimalPairSet> sets;
  std::unordered_map<std::string, std::size_t> by_task;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::parse_error, where + ": " + e.what());
    }
    auto str = [&](const char* key) {
      if (!obj.contains(key) || !obj[key].is_string()) fail(ErrorCode::parse_error, where + ": missing string \"" + key + "\"");
      return obj[key].get<std::string>();
    };
    MinimalPair p;
    p.pair_id = str("pair_id");
    p.good_id = str("good_id");
    p.bad_id = str("bad_id");
    const std::string task = str("task");
    const AnomalyType type = parse_anomaly_type(str("anomaly_type"));
    if (!obj.contains("differs_by_one_token") || !obj["differs_by_one_token"].is_boolean()) {
      fail(ErrorCode::parse_error, where + ": missing boolean \"differs_by_one_token\"");
    }
    p.differs_by_one_token = obj["differs_by_one_token"].get<bool>();
    const bool has_good = obj.contains("mlm_logprob_good") && !obj["mlm_logprob_good"].is_null();
    const bool has_bad = obj.contains("mlm_logprob_bad") && !obj["mlm_logprob_bad"].is_null();
    if (has_good != has_bad) fail(ErrorCode::parse_error, where + ": mlm log-probabilities must be both present or both absent");
    if (has_good) {
      if (!obj["mlm_logprob_good"].is_number() || !obj["mlm_logprob_bad"].is_number()) {
        fail(ErrorCode::parse_error, where + ": mlm log-probabilities must be numbers");
      }
      p.mlm_logprob_good = obj["mlm_logprob_good"].get<double>();
      p.mlm_logprob_bad = obj["mlm_logprob_bad"].get<double>();
    }
    if (obj.contains("oov_flag")) {
      if (!obj["oov_flag"].is_boolean()) fail(ErrorCode::parse_error, where + ": \"oov_flag\" must be boolean");
      p.oov_flag = obj["oov_flag"].get<bool>();
    }
    auto [it, inserted] = by_task.emplace(task, sets.size());
    if (inserted) sets.push_back({task, type, {}});
    if (sets[it->second].anomaly_type != type) fail(ErrorCode::parse_error, where + ": task " + task + " mixes anomaly types");
    sets[it->second].pairs.push_back(std::move(p));
  }
  return sets;
}

inline std::vector<MinimalPairSet> load_pairs(const std::filesystem::path& path) {
  return parse_pairs_jsonl(detail::read_text_file(path), path.filename().string());
}

/// Every sentence referenced by `set` must exist in `ds`.
inline void check_pairs_resolve(const MinimalPairSet& set, const EmbeddingDataset& ds) {
  for (const auto& p : set.pairs) {
    for (const auto* id : {&p.good_id, &p.bad_id}) {
      if (!ds.find(*id)) fail(ErrorCode::missing_score, "pair " + p.pair_id + " (" + set.task_name + ") references unknown sentence " + *id);
    }
  }
}

using ScoreMap = std::unordered_map<std::string, double>;

inline ScoreMap to_score_map(std::span<const SurprisalRecord> records) {
  ScoreMap m;
  m.reserve(records.size());
  for (const auto& r : records) m.emplace(r.sentence_id, r.sentence_surprisal);
  return m;
}

enum class PairOutcome { correct, incorrect, tie };

struct PairAccuracy {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t n_correct = 0;
  std::size_t n_ties = 0;
  std::vector<PairOutcome> per_pair;
};

namespace detail {
inline double lookup_score(const ScoreMap& scores, const std::string& id, const std::string& pair_id) {
  auto it = scores.find(id);
  if (it == scores.end()) fail(ErrorCode::missing_score, "no score for sentence " + id + " (pair " + pair_id + ")");
  return it->second;
}
}  // namespace detail

/// A pair is correct iff the anomalous sentence scores strictly higher; ties count as incorrect.
inline PairAccuracy pair_accuracy(std::span<const MinimalPair> pairs, const ScoreMap& scores) {
  if (pairs.empty()) fail(ErrorCode::empty_input, "pair_accuracy: no pairs");
  PairAccuracy out;
  out.n = pairs.size();
  out.per_pair.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double good = detail::lookup_score(scores, p.good_id, p.pair_id);
    const double bad = detail::lookup_score(scores, p.bad_id, p.pair_id);
    const PairOutcome o = bad > good ? PairOutcome::correct : bad == good ? PairOutcome::tie : PairOutcome::incorrect;
    out.n_correct += o == PairOutcome::correct;
    out.n_ties += o == PairOutcome::tie;
    out.per_pair.push_back(o);
  }
  out.accuracy = static_cast<double>(out.n_correct) / static_cast<double>(out.n);
  return out;
}

inline PairAccuracy pair_accuracy(const MinimalPairSet& set, const ScoreMap& scores) {
  return pair_accuracy(std::span<const MinimalPair>(set.pairs), scores);
}

enum class GapStatus { ok, too_few_pairs, zero_variance };

constexpr std::string_view to_string(GapStatus s) noexcept {
  switch (s) {
    case GapStatus::ok: return "ok";
    case GapStatus::too_few_pairs: return "undefined_too_few_pairs";
    case GapStatus::zero_variance: return "undefined_zero_variance";
  }
  return "?";
}

/// `gap` is empty exactly when `status != ok`.
struct GapValue {
  std::optional<double> gap;
  GapStatus status = GapStatus::ok;
};

/// mean(bad - good) / stddev(bad - good), sample (n-1) standard deviation.
inline GapValue surprisal_gap(std::span<const double> good, std::span<const double> bad) {
  if (good.size() != bad.size()) fail(ErrorCode::invalid_argument, "surprisal_gap: score lists differ in length");
  const std::size_t n = good.size();
  if (n < 2) return {std::nullopt, GapStatus::too_few_pairs};
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = bad[i] - good[i];
  const auto [lo, hi] = std::minmax_element(diff.begin(), diff.end());
  if (*lo == *hi) return {std::nullopt, GapStatus::zero_variance};
  double mean = 0.0;
  for (double d : diff) mean += d;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double d : diff) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) return {std::nullopt, GapStatus::zero_variance};
  return {mean / sd, GapStatus::ok};
}

inline GapValue surprisal_gap(const MinimalPairSet& set, const ScoreMap& scores) {
  std::vector<double> good, bad;
  for (const auto& p : set.pairs) {
    good.push_back(detail::lookup_score(scores, p.good_id, p.pair_id));
    bad.push_back(detail::lookup_score(scores, p.bad_id, p.pair_id));
  }
  return surprisal_gap(good, bad);
}

struct GapProfile {
  std::string task_name;
  AnomalyType anomaly_type = AnomalyType::morphosyntactic;
  std::vector<GapValue> gaps;  // indexed by layer
  std::size_t n_pairs = 0;
};

/// Gap profiles for several tasks; each layer of `ds` is scored once with `models[layer]`.
inline std::vector<GapProfile> gap_profiles(std::span<const MinimalPairSet> sets, const EmbeddingDataset& ds,
                                            std::span<const DensityModel> models, Aggregation agg) {
  if (models.size() != ds.layer_count()) {
    fail(ErrorCode::invalid_argument, "gap_profile: " + std::to_string(models.size()) + " models for " +
                                          std::to_string(ds.layer_count()) + " layers");
  }
  std::vector<GapProfile> out;
  for (const auto& s : sets) {
    check_pairs_resolve(s, ds);
    out.push_back({s.task_name, s.anomaly_type, {}, s.pairs.size()});
  }
  for (std::size_t layer = 0; layer < ds.layer_count(); ++layer) {
    const auto scores = to_score_map(score_dataset(models[layer], ds, layer, agg));
    for (std::size_t t = 0; t < sets.size(); ++t) out[t].gaps.push_back(surprisal_gap(sets[t], scores));
  }
  return out;
}

inline GapProfile gap_profile(const MinimalPairSet& set, const EmbeddingDataset& ds, std::span<const DensityModel> models,
                              Aggregation agg) {
  return gap_profiles(std::span<const MinimalPairSet>(&set, 1), ds, models, agg).front();
}

/// One-sided exact tail P(X >= k), X ~ Binomial(n, p0). Terms are accumulated
/// in log space from the far tail inward, so the result is nonincreasing in k.
inline double binomial_pvalue(std::size_t k, std::size_t n, double p0 = 0.5) {
  if (n < 1) fail(ErrorCode::invalid_argument, "binomial_pvalue: n must be >= 1");
  if (k > n) fail(ErrorCode::invalid_argument, "binomial_pvalue: k > n");
  if (!(p0 >= 0.0 && p0 <= 1.0)) fail(ErrorCode::invalid_argument, "binomial_pvalue: p0 outside [0, 1]");
  if (k == 0 || p0 == 1.0) return 1.0;
  if (p0 == 0.0) return 0.0;
  const double log_p = std::log(p0);
  const double log_q = std::log1p(-p0);
  const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
  double acc = -std::numeric_limits<double>::infinity();
  for (std::size_t i = n + 1; i-- > k;) {
    const double di = static_cast<double>(i);
    const double term = lgn - std::lgamma(di + 1.0) - std::lgamma(static_cast<double>(n - i) + 1.0) + di * log_p +
                        static_cast<double>(n - i) * log_q;
    const double hi = std::max(acc, term);
    acc = hi + std::log1p(std::exp(std::min(acc, term) - hi));
  }
  return std::min(1.0, std::exp(acc));
}

struct MlmAccuracy {
  double accuracy = 0.0;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;
  std::size_t n_correct = 0;
};

/// Masked-LM pair accuracy over pairs that differ by exactly one in-vocabulary token.
inline MlmAccuracy mlm_accuracy(const MinimalPairSet& set) {
  MlmAccuracy out;
  for (const auto& p : set.pairs) {
    if (p.oov_flag || !p.differs_by_one_token) {
      ++out.n_excluded;
      continue;
    }
    if (!p.mlm_logprob_good || !p.mlm_logprob_bad) {
      fail(ErrorCode::missing_score, "pair " + p.pair_id + " (" + set.task_name + ") is usable but has no MLM log-probabilities");
    }
    ++out.n_used;
    out.n_correct += *p.mlm_logprob_good > *p.mlm_logprob_bad;
  }
  if (out.n_used == 0) fail(ErrorCode::no_usable_pairs, "task " + set.task_name + ": no pairs usable for MLM scoring");
  out.accuracy = static_cast<double>(out.n_correct) / static_cast<double>(out.n_used);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr double kSignificanceLevel = 0.05;

struct ReportRow {
  std::string task;
  std::string model;
  std::optional<std::size_t> layer;
  std::string metric;
  std::optional<double> value;  // empty = undefined
};

struct Report {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<ReportRow> rows;

  void add(std::string task, std::string model, std::optional<std::size_t> layer, std::string metric,
           std::optional<double> value) {
    rows.push_back({std::move(task), std::move(model), layer, std::move(metric), value});
  }
};

/// Metadata every evaluation report carries.
inline Report make_report(std::uint64_t seed) {
  Report r;
  r.metadata = {
      {"seed", std::to_string(seed)},
      {"units", "nats"},
      {"gap_stddev", "sample (n-1)"},
      {"binomial_test", "one-sided exact, H0 p=0.5, alpha=0.05"},
      {"tie_rule", "ties counted incorrect"},
  };
  return r;
}

inline void add_accuracy_rows(Report& r, const std::string& task, const std::string& model, std::size_t layer,
                              const PairAccuracy& acc) {
  const double p = binomial_pvalue(acc.n_correct, acc.n);
  r.add(task, model, layer, "accuracy", acc.accuracy);
  r.add(task, model, layer, "n_pairs", static_cast<double>(acc.n));
  r.add(task, model, layer, "n_ties", static_cast<double>(acc.n_ties));
  r.add(task, model, layer, "p_value", p);
  r.add(task, model, layer, "significant", p < kSignificanceLevel ? 1.0 : 0.0);
}

inline void add_mlm_rows(Report& r, const std::string& task, const std::string& model, const MlmAccuracy& acc) {
  const double p = binomial_pvalue(acc.n_correct, acc.n_used);
  r.add(task, model, std::nullopt, "mlm_accuracy", acc.accuracy);
  r.add(task, model, std::nullopt, "mlm_n_used", static_cast<double>(acc.n_used));
  r.add(task, model, std::nullopt, "mlm_n_excluded", static_cast<double>(acc.n_excluded));
  r.add(task, model, std::nullopt, "mlm_p_value", p);
  r.add(task, model, std::nullopt, "mlm_significant", p < kSignificanceLevel ? 1.0 : 0.0);
}

inline void add_gap_rows(Report& r, const GapProfile& g, const std::string& model) {
  for (std::size_t layer = 0; layer < g.gaps.size(); ++layer) r.add(g.task_name, model, layer, "surprisal_gap", g.gaps[layer].gap);
}

inline std::string report_csv(const Report& r) {
  std::string out = "task,model,layer,metric,value\n";
  for (const auto& row : r.rows) {
    out += detail::csv_field(row.task) + ',' + detail::csv_field(row.model) + ',' +
           (row.layer ? std::to_string(*row.layer) : std::string()) + ',' + detail::csv_field(row.metric) + ',' +
           (row.value ? detail::format_double(*row.value) : std::string("undefined")) + '\n';
  }
  return out;
}

inline std::string report_json(const Report& r) {
  nlohmann::ordered_json j;
  j["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.metadata) j["metadata"][k] = v;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json o;
    o["task"] = row.task;
    o["model"] = row.model;
    o["layer"] = row.layer ? nlohmann::ordered_json(*row.layer) : nlohmann::ordered_json(nullptr);
    o["metric"] = row.metric;
    o["value"] = row.value && std::isfinite(*row.value) ? nlohmann::ordered_json(*row.value) : nlohmann::ordered_json(nullptr);
    j["rows"].push_back(std::move(o));
  }
  return j.dump(2) + "\n";
}

/// Writes `report.csv` and `report.json` under `dir` (created if needed).
inline void emit_report(const Report& r, const std::filesystem::path& dir) {
  if (r.rows.empty()) fail(ErrorCode::empty_input, "emit_report: no results");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io_error, "cannot create " + dir.string() + ": " + ec.message());
  detail::write_text_file(dir / "report.csv", report_csv(r));
  detail::write_text_file(dir / "report.json", report_json(r));
}

}  // namespace gaussurp
