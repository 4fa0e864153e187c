// End-to-end walk through the library on synthetic data:
// write a container, fit per-layer Gaussians, score minimal pairs, and
// print accuracy and the layerwise surprisal gap.
//
//   gaussurp_demo [work_dir]

#include <cstdio>
#include <filesystem>
#include <random>

#include <gaussurp/gaussurp.hpp>

namespace fs = std::filesystem;
using namespace gaussurp;

namespace {

constexpr std::size_t kLayers = 4;
constexpr std::size_t kDim = 8;
constexpr std::size_t kTokens = 5;
constexpr std::size_t kAnomalyLayer = 2;

RowMatrixXf draw(std::mt19937_64& rng, float shift = 0.0f) {
  std::normal_distribution<float> normal;
  RowMatrixXf m(kTokens, kDim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  m.col(0).array() += shift;
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "gaussurp_demo";
  std::mt19937_64 rng(42);

  // Training sentences and 100 pairs whose anomalous member only stands out at one layer.
  std::vector<SentenceRecord> train, eval;
  for (int i = 0; i < 300; ++i) {
    SentenceRecord r{"train" + std::to_string(i), std::vector<std::string>(kTokens, "tok"), {}};
    for (std::size_t l = 0; l < kLayers; ++l) r.layers.push_back(draw(rng));
    train.push_back(std::move(r));
  }
  MinimalPairSet pairs{"demo_agreement", AnomalyType::morphosyntactic, {}};
  for (int i = 0; i < 100; ++i) {
    const auto id = std::to_string(i);
    SentenceRecord good{"good" + id, std::vector<std::string>(kTokens, "tok"), {}};
    SentenceRecord bad{"bad" + id, good.tokens, {}};
    for (std::size_t l = 0; l < kLayers; ++l) {
      good.layers.push_back(draw(rng));
      bad.layers.push_back(draw(rng, l == kAnomalyLayer ? 2.0f : 0.0f));
    }
    pairs.pairs.push_back({"p" + id, good.id, bad.id, true, std::nullopt, std::nullopt, false});
    eval.push_back(std::move(good));
    eval.push_back(std::move(bad));
  }

  try {
    fs::remove_all(work);
    const auto train_ds = write_dataset(train, work / "train");
    const auto eval_ds = write_dataset(eval, work / "eval");

    std::vector<DensityModel> models;
    for (std::size_t l = 0; l < kLayers; ++l) {
      auto model = fit_gaussian(layer_source(train_ds, l), CovType::full);
      save_model(model, work / ("layer_" + std::to_string(l) + ".gpm"));
      models.emplace_back(std::move(model));
    }

    auto report = make_report(42);
    std::printf("layer  accuracy  p_value     gap\n");
    const auto profile = gap_profile(pairs, eval_ds, models, Aggregation::sum);
    for (std::size_t l = 0; l < kLayers; ++l) {
      const auto scores = to_score_map(score_dataset(models[l], eval_ds, l, Aggregation::sum));
      const auto acc = pair_accuracy(pairs, scores);
      add_accuracy_rows(report, pairs.task_name, "gm-full", l, acc);
      std::printf("%5zu  %8.3f  %9.3g  %6.2f\n", l, acc.accuracy, binomial_pvalue(acc.n_correct, acc.n),
                  profile.gaps[l].gap.value_or(0.0));
    }
    add_gap_rows(report, profile, "gm-full");
    emit_report(report, work / "report");
    std::printf("report written to %s\n", (work / "report").string().c_str());
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return 1;
  }
  return 0;
}
