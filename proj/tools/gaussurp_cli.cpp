// gaussurp command-line tool: fit, score, eval, gap, freqcorr, pca, validate.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gaussurp/gaussurp.hpp"

namespace fs = std::filesystem;
using namespace gaussurp;
using Json = nlohmann::ordered_json;

namespace {

struct Options {
  std::string embeddings;
  std::string pairs;
  std::string model;
  std::string layer;
  std::string cov = "full";
  std::size_t components = 1;
  double ridge = kDefaultRidge;
  std::string agg = "sum";
  std::uint64_t seed = 42;
  std::string out;
  unsigned threads = 1;
  std::string freq_source;
  std::string sweep;
  std::size_t sample = 2000;
  double quantile = 0.20;
};

// ---------------------------------------------------------------------------
// Shared helpers

std::size_t parse_index(const std::string& s) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    fail(ErrorCode::invalid_argument, "--layer: expected N, N,M,..., all or best; got '" + s + "'");
  }
  return v;
}

/// "all", "N" or a comma list; "best" is resolved by the caller.
std::vector<std::size_t> resolve_layers(const std::string& spec, const EmbeddingDataset& ds) {
  std::vector<std::size_t> out;
  if (spec == "all") {
    out.resize(ds.layer_count());
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = std::min(spec.find(',', start), spec.size());
    const std::size_t layer = parse_index(spec.substr(start, comma - start));
    ds.check_layer(layer);
    if (std::find(out.begin(), out.end(), layer) == out.end()) out.push_back(layer);
    start = comma + 1;
  }
  return out;
}

fs::path ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorCode::io_error, "cannot create output directory " + out + ": " + ec.message());
  return fs::path(out);
}

void write_json(const fs::path& path, const Json& j) { detail::write_text_file(path, j.dump(2) + "\n"); }

Json dataset_summary(const EmbeddingDataset& ds) {
  return Json{{"sentences", ds.sentences().size()},
              {"tokens", ds.total_tokens()},
              {"dim", ds.dim()},
              {"layer_count", ds.layer_count()}};
}

/// Models from a fit directory (layer_<k>.gpm) or a single model file.
class ModelSource {
 public:
  explicit ModelSource(const std::string& path) : path_(path) {
    if (path.empty()) fail(ErrorCode::invalid_argument, "--model is required");
    if (!fs::exists(path_)) fail(ErrorCode::missing_file, "model path does not exist: " + path);
    directory_ = fs::is_directory(path_);
    const auto meta = directory_ ? path_ / "fit_meta.json" : fs::path();
    if (directory_ && fs::exists(meta)) {
      try {
        label_ = Json::parse(detail::read_text_file(meta)).value("model", std::string());
      } catch (const Json::exception& e) {
        fail(ErrorCode::parse_error, meta.string() + ": " + e.what());
      }
    }
  }

  bool is_directory() const { return directory_; }

  const DensityModel& at(std::size_t layer) {
    auto it = cache_.find(layer);
    if (it != cache_.end()) return it->second;
    fs::path file = path_;
    if (directory_) {
      file = path_ / ("layer_" + std::to_string(layer) + ".gpm");
      if (!fs::exists(file)) fail(ErrorCode::missing_file, "no model for layer " + std::to_string(layer) + " in " + path_.string());
    }
    DensityModel m = load_model(file);
    if (label_.empty()) label_ = describe(m);
    return cache_.emplace(layer, std::move(m)).first->second;
  }

  std::vector<DensityModel> all_layers(std::size_t layer_count) {
    if (!directory_) fail(ErrorCode::config_conflict, "this command needs a model directory with one model per layer");
    std::vector<DensityModel> out;
    for (std::size_t l = 0; l < layer_count; ++l) out.push_back(at(l));
    return out;
  }

  /// Single-file models apply to exactly one layer.
  void check_selection(const std::vector<std::size_t>& layers) const {
    if (!directory_ && layers.size() != 1) {
      fail(ErrorCode::config_conflict, "a single model file can only score one layer; pass --layer N or a model directory");
    }
  }

  const std::string& label() const { return label_; }

  static std::string describe(const DensityModel& m) {
    if (const auto* g = std::get_if<GaussianModel>(&m)) return "gm-" + std::string(to_string(g->cov_type()));
    return "gmm-k" + std::to_string(std::get<GmmModel>(m).size());
  }

 private:
  fs::path path_;
  bool directory_ = false;
  std::string label_;
  std::map<std::size_t, DensityModel> cache_;
};

std::vector<MinimalPairSet> load_resolved_pairs(const std::string& path, const EmbeddingDataset& ds) {
  if (path.empty()) fail(ErrorCode::invalid_argument, "--pairs is required");
  auto sets = load_pairs(path);
  if (sets.empty()) fail(ErrorCode::empty_input, "pair file has no pairs: " + path);
  for (const auto& s : sets) check_pairs_resolve(s, ds);
  return sets;
}

EmbeddingDataset open_embeddings(const std::string& path) {
  if (path.empty()) fail(ErrorCode::invalid_argument, "--embeddings is required");
  return open_dataset(path);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_fit(const Options& o) {
  const CovType cov = parse_cov_type(o.cov);
  if (o.components == 0) fail(ErrorCode::invalid_argument, "--components must be at least 1");
  if (o.components > 1 && cov != CovType::full) {
    fail(ErrorCode::config_conflict, "--components " + std::to_string(o.components) +
                                         " requires --cov full (mixtures use full covariance), got --cov " + o.cov);
  }
  if (o.out.empty()) fail(ErrorCode::invalid_argument, "--out is required");
  const auto ds = open_embeddings(o.embeddings);
  const auto layers = resolve_layers(o.layer.empty() ? "all" : o.layer, ds);
  const auto out = ensure_out_dir(o.out);

  const std::string label = o.components > 1 ? "gmm-k" + std::to_string(o.components) : "gm-" + std::string(to_string(cov));
  Json meta{{"command", "fit"},
            {"model", label},
            {"seed", o.seed},
            {"cov", to_string(cov)},
            {"components", o.components},
            {"ridge", o.ridge},
            {"ridge_rule", "ridge * mean(diag(covariance)) added to the diagonal"},
            {"covariance_estimator", "maximum likelihood (1/N)"},
            {"dataset", dataset_summary(ds)},
            {"layers", Json::array()}};
  for (std::size_t layer : layers) {
    const auto file = "layer_" + std::to_string(layer) + ".gpm";
    Json entry{{"layer", layer}, {"file", file}, {"train_token_count", ds.total_tokens()}};
    if (o.components == 1) {
      save_model(fit_gaussian(layer_source(ds, layer), cov, FitOptions{o.ridge, 4096, o.threads}), out / file);
    } else {
      GmmOptions g;
      g.components = o.components;
      g.seed = o.seed;
      g.ridge = o.ridge;
      const auto gmm = fit_gmm(read_layer(ds, layer), g);
      save_model(gmm, out / file);
      entry["em_iterations"] = gmm.log_likelihood_trace().size();
      entry["final_log_likelihood"] = gmm.log_likelihood_trace().back();
    }
    meta["layers"].push_back(entry);
    std::cout << "fit layer " << layer << ": " << ds.total_tokens() << " tokens -> " << (out / file).string() << "\n";
  }
  write_json(out / "fit_meta.json", meta);
  return 0;
}

int cmd_score(const Options& o) {
  if (o.out.empty()) fail(ErrorCode::invalid_argument, "--out is required");
  const auto ds = open_embeddings(o.embeddings);
  ModelSource models(o.model);
  const auto layers = resolve_layers(o.layer.empty() ? (models.is_directory() ? "all" : "0") : o.layer, ds);
  models.check_selection(layers);
  const Aggregation agg = parse_aggregation(o.agg);
  const auto out = ensure_out_dir(o.out);

  std::string tokens, sentences;
  for (std::size_t layer : layers) {
    const auto records = score_dataset(models.at(layer), ds, layer, agg);
    auto t = token_scores_csv(records, ds);
    auto s = sentence_scores_csv(records);
    if (!tokens.empty()) {
      t.erase(0, t.find('\n') + 1);
      s.erase(0, s.find('\n') + 1);
    }
    tokens += t;
    sentences += s;
  }
  detail::write_text_file(out / "token_scores.csv", tokens);
  detail::write_text_file(out / "sentence_scores.csv", sentences);
  write_json(out / "run.json", Json{{"command", "score"},
                                    {"seed", o.seed},
                                    {"model", models.label()},
                                    {"aggregation", to_string(agg)},
                                    {"units", "nats"},
                                    {"layers", layers},
                                    {"dataset", dataset_summary(ds)}});
  std::cout << "scored " << ds.sentences().size() << " sentences at " << layers.size() << " layer(s)\n";
  return 0;
}

/// Pooled pair accuracy over every task, per layer.
std::vector<double> layer_sweep(const std::vector<MinimalPairSet>& sets, const EmbeddingDataset& ds, ModelSource& models,
                                Aggregation agg) {
  std::vector<MinimalPair> pooled;
  for (const auto& s : sets) pooled.insert(pooled.end(), s.pairs.begin(), s.pairs.end());
  std::vector<double> acc;
  for (std::size_t layer = 0; layer < ds.layer_count(); ++layer) {
    const auto scores = to_score_map(score_dataset(models.at(layer), ds, layer, agg));
    acc.push_back(pair_accuracy(pooled, scores).accuracy);
  }
  return acc;
}

Json sweep_json(const std::vector<double>& acc, const std::string& model, Aggregation agg, std::uint64_t seed) {
  const auto best = static_cast<std::size_t>(std::max_element(acc.begin(), acc.end()) - acc.begin());
  return Json{{"model", model},
              {"aggregation", to_string(agg)},
              {"seed", seed},
              {"criterion", "pooled pair accuracy over all tasks; first layer wins ties"},
              {"accuracy", acc},
              {"best_layer", best}};
}

std::size_t read_best_layer(const fs::path& path, const EmbeddingDataset& ds) {
  try {
    const auto j = Json::parse(detail::read_text_file(path));
    const auto best = j.at("best_layer").get<std::size_t>();
    ds.check_layer(best);
    return best;
  } catch (const Json::exception& e) {
    fail(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
}

int cmd_eval(const Options& o) {
  if (o.out.empty()) fail(ErrorCode::invalid_argument, "--out is required");
  const auto ds = open_embeddings(o.embeddings);
  const auto sets = load_resolved_pairs(o.pairs, ds);
  ModelSource models(o.model);
  const Aggregation agg = parse_aggregation(o.agg);
  const auto out = ensure_out_dir(o.out);
  const std::string spec = o.layer.empty() ? "best" : o.layer;

  auto report = make_report(o.seed);
  std::vector<std::size_t> layers;
  if (spec == "best") {
    if (!models.is_directory()) fail(ErrorCode::config_conflict, "--layer best needs a model directory");
    const fs::path sweep = o.sweep.empty() ? out / "sweep.json" : fs::path(o.sweep);
    if (fs::exists(sweep)) {
      layers = {read_best_layer(sweep, ds)};
    } else {
      if (!o.sweep.empty()) fail(ErrorCode::missing_file, "sweep file not found: " + o.sweep);
      const auto j = sweep_json(layer_sweep(sets, ds, models, agg), models.label(), agg, o.seed);
      write_json(sweep, j);
      layers = {j["best_layer"].get<std::size_t>()};
    }
    report.metadata.emplace_back("best_layer", std::to_string(layers.front()));
  } else {
    layers = resolve_layers(spec, ds);
    models.check_selection(layers);
    if (spec == "all" && models.is_directory()) {
      write_json(out / "sweep.json", sweep_json(layer_sweep(sets, ds, models, agg), models.label(), agg, o.seed));
    }
  }
  report.metadata.emplace_back("aggregation", std::string(to_string(agg)));
  report.metadata.emplace_back("layer_selection", spec);

  for (std::size_t layer : layers) {
    const auto scores = to_score_map(score_dataset(models.at(layer), ds, layer, agg));
    std::vector<MinimalPair> pooled;
    for (const auto& s : sets) {
      const auto acc = pair_accuracy(s, scores);
      add_accuracy_rows(report, s.task_name, models.label(), layer, acc);
      pooled.insert(pooled.end(), s.pairs.begin(), s.pairs.end());
      std::cout << s.task_name << " layer " << layer << ": accuracy " << detail::format_double(acc.accuracy) << " ("
                << acc.n_correct << "/" << acc.n << ")\n";
    }
    if (sets.size() > 1) add_accuracy_rows(report, "overall", models.label(), layer, pair_accuracy(pooled, scores));
  }

  for (const auto& s : sets) {
    const bool any_mlm = std::any_of(s.pairs.begin(), s.pairs.end(), [](const MinimalPair& p) { return p.mlm_logprob_good.has_value(); });
    if (!any_mlm) continue;
    try {
      add_mlm_rows(report, s.task_name, "mlm", mlm_accuracy(s));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::no_usable_pairs) throw;
      report.add(s.task_name, "mlm", std::nullopt, "mlm_accuracy", std::nullopt);
      report.add(s.task_name, "mlm", std::nullopt, "mlm_n_used", 0.0);
      report.add(s.task_name, "mlm", std::nullopt, "mlm_n_excluded", static_cast<double>(s.pairs.size()));
    }
  }
  emit_report(report, out);
  return 0;
}

int cmd_gap(const Options& o) {
  if (o.out.empty()) fail(ErrorCode::invalid_argument, "--out is required");
  const auto ds = open_embeddings(o.embeddings);
  const auto sets = load_resolved_pairs(o.pairs, ds);
  ModelSource source(o.model);
  const auto models = source.all_layers(ds.layer_count());
  const Aggregation agg = parse_aggregation(o.agg);
  const auto out = ensure_out_dir(o.out);

  const auto profiles = gap_profiles(sets, ds, models, agg);
  auto report = make_report(o.seed);
  report.metadata.emplace_back("aggregation", std::string(to_string(agg)));
  std::string csv = "task,anomaly_type,layer,surprisal_gap,status,n_pairs\n";
  for (const auto& p : profiles) {
    add_gap_rows(report, p, source.label());
    for (std::size_t layer = 0; layer < p.gaps.size(); ++layer) {
      const auto& g = p.gaps[layer];
      csv += detail::csv_field(p.task_name) + ',' + std::string(to_string(p.anomaly_type)) + ',' + std::to_string(layer) +
             ',' + (g.gap ? detail::format_double(*g.gap) : std::string("undefined")) + ',' +
             std::string(to_string(g.status)) + ',' + std::to_string(p.n_pairs) + '\n';
      if (!g.gap) std::cerr << "warning: " << p.task_name << " layer " << layer << ": gap " << to_string(g.status) << "\n";
    }
  }
  emit_report(report, out);
  detail::write_text_file(out / "gap_profile.csv", csv);
  return 0;
}

FreqTable frequency_table(const Options& o, const EmbeddingDataset& ds) {
  if (o.freq_source.empty()) return build_freq_table(ds);
  return build_freq_table(open_dataset(o.freq_source));
}

int cmd_freqcorr(const Options& o) {
  if (o.out.empty()) fail(ErrorCode::invalid_argument, "--out is required");
  const auto ds = open_embeddings(o.embeddings);
  ModelSource source(o.model);
  const auto models = source.all_layers(ds.layer_count());
  const auto freq = frequency_table(o, ds);
  const auto out = ensure_out_dir(o.out);
  const auto rows = freq_surprisal_correlation(ds, models, freq);
  detail::write_text_file(out / "freqcorr.csv", freqcorr_csv(rows));
  write_json(out / "run.json", Json{{"command", "freqcorr"},
                                    {"seed", o.seed},
                                    {"model", source.label()},
                                    {"log_frequency", "natural log of count / total over the frequency source"},
                                    {"frequency_source", o.freq_source.empty() ? "embeddings" : "separate"},
                                    {"frequency_total", freq.total()},
                                    {"sign", "signed r between token surprisal and log frequency"},
                                    {"dataset", dataset_summary(ds)}});
  return 0;
}

int cmd_pca(const Options& o) {
  if (o.out.empty()) fail(ErrorCode::invalid_argument, "--out is required");
  const auto ds = open_embeddings(o.embeddings);
  const auto layers = resolve_layers(o.layer.empty() ? "all" : o.layer, ds);
  if (ds.dim() < 2) fail(ErrorCode::invalid_argument, "pca needs dim >= 2");
  if (o.sample < 3) fail(ErrorCode::invalid_argument, "--sample must be at least 3");
  const auto freq = frequency_table(o, ds);
  const auto out = ensure_out_dir(o.out);

  // Same token sample at every layer, listed in manifest order.
  const std::size_t total = ds.total_tokens();
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t m = std::min(o.sample, total);
  detail::Rng rng(o.seed);
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.index(total - i)]);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());

  struct Pick {
    const SentenceMeta* sentence;
    std::size_t token_index;
  };
  std::vector<Pick> picks;
  std::vector<std::string> tokens;
  {
    std::size_t s = 0;
    for (std::size_t g : idx) {
      while (ds.sentences()[s].token_offset + ds.sentences()[s].size() <= g) ++s;
      picks.push_back({&ds.sentences()[s], g - ds.sentences()[s].token_offset});
      tokens.push_back(ds.sentences()[s].tokens[picks.back().token_index]);
    }
  }
  std::vector<std::string> seen;
  for (const auto& t : tokens) {
    if (freq.count(t) > 0) seen.push_back(t);
  }
  const auto buckets = seen.empty() ? RareBuckets{} : bucket_rare(freq, seen, o.quantile);

  Json run{{"command", "pca"},
           {"seed", o.seed},
           {"sample", m},
           {"quantile", o.quantile},
           {"rarity", "nearest-rank quantile over token types; ties at the threshold are rare"},
           {"rare_threshold_count", buckets.threshold_count},
           {"tie_at_threshold", buckets.tie_at_threshold},
           {"all_counts_equal", buckets.all_equal},
           {"unseen_tokens", tokens.size() - seen.size()},
           {"layers", Json::array()}};
  for (std::size_t layer : layers) {
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(ds.dim()));
    std::size_t g = 0, next = 0;
    iter_layer(ds, layer, [&](const TokenVector& t) {
      if (next < m && idx[next] == g) {
        for (std::size_t j = 0; j < t.vector.size(); ++j) samples(static_cast<Eigen::Index>(next), static_cast<Eigen::Index>(j)) = t.vector[j];
        ++next;
      }
      ++g;
    });
    const auto p = pca_project(samples, 2);
    std::string csv = "token,sentence_id,token_index,pc1,pc2,bucket\n";
    std::size_t b = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const std::string bucket = freq.count(tokens[i]) > 0 ? std::string(to_string(buckets.buckets[b++])) : "unseen";
      csv += detail::csv_field(tokens[i]) + ',' + detail::csv_field(picks[i].sentence->id) + ',' +
             std::to_string(picks[i].token_index) + ',' + detail::format_double(p.coordinates(r, 0)) + ',' +
             detail::format_double(p.coordinates(r, 1)) + ',' + bucket + '\n';
    }
    detail::write_text_file(out / ("pca_layer_" + std::to_string(layer) + ".csv"), csv);
    run["layers"].push_back(Json{{"layer", layer},
                                 {"explained_variance", std::vector<double>(p.explained_variance.begin(), p.explained_variance.end())},
                                 {"rank_deficient", p.rank_deficient}});
    if (p.rank_deficient) std::cerr << "warning: layer " << layer << ": fewer than 2 directions carry variance\n";
  }
  write_json(out / "run.json", run);
  return 0;
}

int cmd_validate(const Options& o) {
  if (o.embeddings.empty()) fail(ErrorCode::invalid_argument, "--embeddings is required");
  const auto issues = validate_dataset(o.embeddings);
  for (const auto& d : issues) std::cerr << "error[" << to_string(d.code) << "]: " << d.message << "\n";
  if (!issues.empty()) return 1;
  const auto ds = open_dataset(o.embeddings);
  std::cout << "ok: " << ds.sentences().size() << " sentences, " << ds.total_tokens() << " tokens, " << ds.layer_count()
            << " layers, dim " << ds.dim() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian surprisal toolkit"};
  app.require_subcommand(1);
  Options o;

  auto embeddings = [&](CLI::App* c) { c->add_option("--embeddings", o.embeddings, "Embedding container directory"); };
  auto pairs = [&](CLI::App* c) { c->add_option("--pairs", o.pairs, "Minimal-pair JSON-lines file"); };
  auto model = [&](CLI::App* c) { c->add_option("--model", o.model, "Model file or fit directory"); };
  auto layer = [&](CLI::App* c, const std::string& help) { c->add_option("--layer", o.layer, help); };
  auto agg = [&](CLI::App* c) { c->add_option("--agg", o.agg, "Sentence aggregation: sum|max")->capture_default_str(); };
  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed")->capture_default_str(); };
  auto out = [&](CLI::App* c) { c->add_option("--out", o.out, "Output directory"); };
  auto freq = [&](CLI::App* c) {
    c->add_option("--freq-source", o.freq_source, "Container whose tokens define frequencies (default: --embeddings)");
  };

  auto* fit = app.add_subcommand("fit", "Fit one density model per layer");
  embeddings(fit);
  layer(fit, "Layers: N, N,M,... or all (default all)");
  fit->add_option("--cov", o.cov, "Covariance: full|diag|spherical")->capture_default_str();
  fit->add_option("--components", o.components, "Mixture components K")->capture_default_str();
  fit->add_option("--ridge", o.ridge, "Relative ridge")->capture_default_str();
  fit->add_option("--threads", o.threads, "Worker threads (results do not depend on this)")->capture_default_str();
  seed(fit);
  out(fit);

  auto* score = app.add_subcommand("score", "Dump token and sentence surprisals");
  embeddings(score);
  model(score);
  layer(score, "Layers: N, N,M,... or all (default all for a model directory)");
  agg(score);
  seed(score);
  out(score);

  auto* eval = app.add_subcommand("eval", "Minimal-pair accuracy report");
  embeddings(eval);
  pairs(eval);
  model(eval);
  layer(eval, "Layers: N, N,M,..., all or best (default best)");
  eval->add_option("--sweep", o.sweep, "Recorded sweep used by --layer best (default <out>/sweep.json)");
  agg(eval);
  seed(eval);
  out(eval);

  auto* gap = app.add_subcommand("gap", "Layerwise surprisal-gap profiles");
  embeddings(gap);
  pairs(gap);
  model(gap);
  agg(gap);
  seed(gap);
  out(gap);

  auto* freqcorr = app.add_subcommand("freqcorr", "Per-layer surprisal / log-frequency correlation");
  embeddings(freqcorr);
  model(freqcorr);
  freq(freqcorr);
  seed(freqcorr);
  out(freqcorr);

  auto* pca = app.add_subcommand("pca", "PCA projections with rare/frequent buckets");
  embeddings(pca);
  layer(pca, "Layers: N, N,M,... or all (default all)");
  pca->add_option("--sample", o.sample, "Tokens sampled per layer")->capture_default_str();
  pca->add_option("--quantile", o.quantile, "Rarity quantile over token types")->capture_default_str();
  freq(pca);
  seed(pca);
  out(pca);

  auto* validate = app.add_subcommand("validate", "Check a container for structural problems");
  embeddings(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    if (cmd == fit) return cmd_fit(o);
    if (cmd == score) return cmd_score(o);
    if (cmd == eval) return cmd_eval(o);
    if (cmd == gap) return cmd_gap(o);
    if (cmd == freqcorr) return cmd_freqcorr(o);
    if (cmd == pca) return cmd_pca(o);
    return cmd_validate(o);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.code()) << "]: " << cmd->get_name() << ": " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << cmd->get_name() << ": " << e.what() << "\n";
  }
  return 1;
}
