#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "fixtures.hpp"
#include "gaussurp/gaussurp.hpp"
#include "synthetic.hpp"

using namespace gaussurp;

namespace {

struct RunResult {
  int status;
  std::string out;
  std::string err;
};

RunResult run(const fixtures::TempDir& scratch, const std::string& args) {
  const auto out = scratch / "stdout.txt";
  const auto err = scratch / "stderr.txt";
  const std::string cmd = std::string(GAUSSURP_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, fixtures::read_bytes(out), fixtures::read_bytes(err)};
}

/// Planted corpus written as train/ and eval/ containers plus pairs.jsonl.
struct Workspace {
  fixtures::TempDir dir{"gaussurp_cli"};
  std::string train, eval, pairs;

  explicit Workspace(const synthetic::PlantedSpec& spec = {}) {
    const auto c = synthetic::planted_corpus(spec);
    train = (dir / "train").string();
    eval = (dir / "eval").string();
    pairs = (dir / "pairs.jsonl").string();
    write_dataset(c.train, train);
    write_dataset(c.eval, eval);
    std::ofstream(pairs) << c.pairs_jsonl;
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST(Cli, FitWritesOneModelPerLayer) {
  fixtures::TempDir dir;
  write_dataset(fixtures::random_records(10, 13, 3, 5), dir / "emb");
  const auto r = run(dir, "fit --embeddings " + (dir / "emb").string() + " --out " + (dir / "m").string());
  ASSERT_EQ(r.status, 0) << r.err;
  for (int l = 0; l < 13; ++l) EXPECT_TRUE(std::filesystem::exists(dir / ("m/layer_" + std::to_string(l) + ".gpm")));
  EXPECT_FALSE(std::filesystem::exists(dir / "m/layer_13.gpm"));
  const auto meta = nlohmann::json::parse(fixtures::read_bytes(dir / "m/fit_meta.json"));
  EXPECT_EQ(meta["seed"], 42);
  EXPECT_EQ(meta["layers"].size(), 13u);
  EXPECT_EQ(meta["layers"][0]["train_token_count"], open_dataset(dir / "emb").total_tokens());
}

TEST(Cli, MixtureWithDiagonalCovarianceIsConfigConflict) {
  Workspace ws;
  const auto r = run(ws.dir, "fit --embeddings " + ws.train + " --components 4 --cov diag --out " + ws.path("m"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("error[config_conflict]"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(ws.dir / "m"));
}

TEST(Cli, FitIsByteReproducible) {
  Workspace ws;
  for (const char* flags : {"", " --components 2 --layer 0,2"}) {
    ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + flags + " --out " + ws.path("a")).status, 0);
    ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + flags + " --threads 3 --out " + ws.path("b")).status, 0);
    for (const char* f : {"layer_0.gpm", "layer_2.gpm", "fit_meta.json"}) {
      EXPECT_EQ(fixtures::read_bytes(ws.dir / (std::string("a/") + f)), fixtures::read_bytes(ws.dir / (std::string("b/") + f))) << f;
    }
  }
}

TEST(Cli, EvalSeparableFixtureIsPerfect) {
  synthetic::PlantedSpec spec;
  spec.shift = 50.0;
  spec.n_pairs = 40;
  Workspace ws(spec);
  ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + " --out " + ws.path("m")).status, 0);
  const auto r = run(ws.dir, "eval --embeddings " + ws.eval + " --pairs " + ws.pairs + " --model " + ws.path("m") +
                                 " --layer 1 --out " + ws.path("r"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto csv = fixtures::read_bytes(ws.dir / "r/report.csv");
  EXPECT_NE(csv.find("planted,gm-full,1,accuracy,1\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("planted,gm-full,1,significant,1\n"), std::string::npos);
  EXPECT_NE(csv.find("planted,mlm,,mlm_n_excluded,4\n"), std::string::npos);
  const auto j = nlohmann::json::parse(fixtures::read_bytes(ws.dir / "r/report.json"));
  EXPECT_EQ(j["metadata"]["seed"], "42");
  EXPECT_EQ(j["metadata"]["aggregation"], "sum");
}

TEST(Cli, EvalShuffledLabelsMatchesPermutationOracle) {
  synthetic::PlantedSpec spec;
  spec.shift = 50.0;
  spec.n_pairs = 60;
  spec.with_mlm = false;
  Workspace ws(spec);
  // Swap good/bad in a seeded random subset; accuracy must equal the unswapped fraction.
  detail::Rng coin(99);
  std::ifstream in(ws.pairs);
  std::string line, shuffled;
  std::size_t kept = 0, n = 0;
  while (std::getline(in, line)) {
    auto p = nlohmann::ordered_json::parse(line);
    if (coin.uniform() < 0.5) {
      std::swap(p["good_id"], p["bad_id"]);
    } else {
      ++kept;
    }
    ++n;
    shuffled += p.dump() + "\n";
  }
  std::ofstream(ws.path("shuffled.jsonl")) << shuffled;
  ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + " --out " + ws.path("m")).status, 0);
  const auto r = run(ws.dir, "eval --embeddings " + ws.eval + " --pairs " + ws.path("shuffled.jsonl") + " --model " +
                                 ws.path("m") + " --layer 1 --out " + ws.path("r"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto j = nlohmann::json::parse(fixtures::read_bytes(ws.dir / "r/report.json"));
  std::optional<double> acc, p;
  for (const auto& row : j["rows"]) {
    if (row["metric"] == "accuracy") acc = row["value"].get<double>();
    if (row["metric"] == "p_value") p = row["value"].get<double>();
  }
  ASSERT_TRUE(acc && p);
  EXPECT_EQ(*acc, static_cast<double>(kept) / static_cast<double>(n));
  EXPECT_NEAR(*acc, 0.5, 0.15);
  EXPECT_NEAR(*p, oracle::binomial_upper_tail_half(static_cast<unsigned>(kept), static_cast<unsigned>(n)), 1e-12);
  EXPECT_GT(*p, 0.05);
}

TEST(Cli, EvalBestLayerRecordsAndReusesSweep) {
  Workspace ws;
  ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + " --out " + ws.path("m")).status, 0);
  const std::string base = "eval --embeddings " + ws.eval + " --pairs " + ws.pairs + " --model " + ws.path("m");
  auto r = run(ws.dir, base + " --out " + ws.path("r"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto sweep = nlohmann::json::parse(fixtures::read_bytes(ws.dir / "r/sweep.json"));
  EXPECT_EQ(sweep["best_layer"], 1);
  EXPECT_EQ(sweep["accuracy"].size(), 3u);
  const auto first = fixtures::read_bytes(ws.dir / "r/report.csv");
  EXPECT_NE(first.find("planted,gm-full,1,accuracy,"), std::string::npos);
  r = run(ws.dir, base + " --layer best --out " + ws.path("r"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(fixtures::read_bytes(ws.dir / "r/report.csv"), first);
  r = run(ws.dir, base + " --layer best --sweep " + ws.path("nope.json") + " --out " + ws.path("r2"));
  EXPECT_NE(r.err.find("error[missing_file]"), std::string::npos);
}

TEST(Cli, GapOnSinglePairIsUndefined) {
  synthetic::PlantedSpec spec;
  spec.n_pairs = 1;
  Workspace ws(spec);
  ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + " --out " + ws.path("m")).status, 0);
  const auto r = run(ws.dir, "gap --embeddings " + ws.eval + " --pairs " + ws.pairs + " --model " + ws.path("m") +
                                 " --out " + ws.path("g"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto csv = fixtures::read_bytes(ws.dir / "g/gap_profile.csv");
  EXPECT_EQ(csv, "task,anomaly_type,layer,surprisal_gap,status,n_pairs\n"
                 "planted,morphosyntactic,0,undefined,undefined_too_few_pairs,1\n"
                 "planted,morphosyntactic,1,undefined,undefined_too_few_pairs,1\n"
                 "planted,morphosyntactic,2,undefined,undefined_too_few_pairs,1\n");
  EXPECT_NE(fixtures::read_bytes(ws.dir / "g/report.csv").find("planted,gm-full,0,surprisal_gap,undefined"), std::string::npos);
}

TEST(Cli, GapProfilePeaksAtPlantedLayer) {
  Workspace ws;
  ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + " --out " + ws.path("m")).status, 0);
  ASSERT_EQ(run(ws.dir, "gap --embeddings " + ws.eval + " --pairs " + ws.pairs + " --model " + ws.path("m") + " --out " +
                            ws.path("g")).status, 0);
  const auto j = nlohmann::json::parse(fixtures::read_bytes(ws.dir / "g/report.json"));
  ASSERT_EQ(j["rows"].size(), 3u);
  EXPECT_GT(j["rows"][1]["value"].get<double>(), 3.0);
  EXPECT_LT(std::abs(j["rows"][0]["value"].get<double>()), 0.3);
  EXPECT_LT(std::abs(j["rows"][2]["value"].get<double>()), 0.3);
}

TEST(Cli, ValidateReportsCorruptBlob) {
  fixtures::TempDir dir;
  const auto emb = dir / "emb";
  write_dataset(fixtures::random_records(5, 2, 3, 1), emb);
  auto r = run(dir, "validate --embeddings " + emb.string());
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out.rfind("ok: 5 sentences", 0), 0u);
  {
    std::fstream f(emb / "layer_1.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(12);
    const float inf = std::numeric_limits<float>::infinity();
    f.write(reinterpret_cast<const char*>(&inf), 4);
  }
  r = run(dir, "validate --embeddings " + emb.string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("error[non_finite]"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("byte offset 12"), std::string::npos) << r.err;
  std::filesystem::resize_file(emb / "layer_0.bin", 7);
  r = run(dir, "validate --embeddings " + emb.string());
  EXPECT_NE(r.err.find("error[size_mismatch]"), std::string::npos) << r.err;
}

TEST(Cli, FreqcorrEqualsLibraryCall) {
  Workspace ws;
  ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + " --out " + ws.path("m")).status, 0);
  const auto r = run(ws.dir, "freqcorr --embeddings " + ws.eval + " --freq-source " + ws.train + " --model " +
                                 ws.path("m") + " --out " + ws.path("f"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto ds = open_dataset(ws.eval);
  std::vector<DensityModel> models;
  for (int l = 0; l < 3; ++l) models.push_back(load_model(ws.dir / ("m/layer_" + std::to_string(l) + ".gpm")));
  const auto rows = freq_surprisal_correlation(ds, models, build_freq_table(open_dataset(ws.train)));
  EXPECT_EQ(fixtures::read_bytes(ws.dir / "f/freqcorr.csv"), freqcorr_csv(rows));
  EXPECT_GT(rows[0].n_excluded, 0u);  // "x"-prefixed bad tokens never occur in training
}

TEST(Cli, ScoreAndPcaOutputs) {
  synthetic::PlantedSpec spec;
  spec.n_pairs = 20;
  Workspace ws(spec);
  ASSERT_EQ(run(ws.dir, "fit --embeddings " + ws.train + " --cov spherical --out " + ws.path("m")).status, 0);
  auto r = run(ws.dir, "score --embeddings " + ws.eval + " --model " + ws.path("m") + " --agg max --out " + ws.path("s"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto sentences = fixtures::read_bytes(ws.dir / "s/sentence_scores.csv");
  EXPECT_EQ(std::count(sentences.begin(), sentences.end(), '\n'), 1 + 3 * 40);
  EXPECT_EQ(sentences.rfind("sentence_id,layer,aggregation,sentence_surprisal\ng0,0,max,", 0), 0u);
  const auto tokens = fixtures::read_bytes(ws.dir / "s/token_scores.csv");
  EXPECT_EQ(std::count(tokens.begin(), tokens.end(), '\n'), 1 + 3 * 40 * 4);

  r = run(ws.dir, "score --embeddings " + ws.eval + " --model " + ws.path("m/layer_2.gpm") + " --layer 2 --out " + ws.path("s1"));
  ASSERT_EQ(r.status, 0) << r.err;
  r = run(ws.dir, "score --embeddings " + ws.eval + " --model " + ws.path("m/layer_2.gpm") + " --layer all --out " + ws.path("s2"));
  EXPECT_NE(r.err.find("error[config_conflict]"), std::string::npos);

  const std::string pca = "pca --embeddings " + ws.eval + " --sample 50 --layer 0,1 --out ";
  ASSERT_EQ(run(ws.dir, pca + ws.path("p1")).status, 0);
  ASSERT_EQ(run(ws.dir, pca + ws.path("p2")).status, 0);
  const auto a = fixtures::read_bytes(ws.dir / "p1/pca_layer_1.csv");
  EXPECT_EQ(a, fixtures::read_bytes(ws.dir / "p2/pca_layer_1.csv"));
  EXPECT_EQ(a.rfind("token,sentence_id,token_index,pc1,pc2,bucket\n", 0), 0u);
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 51);
  EXPECT_NE(a.find(",rare\n"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(ws.dir / "p1/pca_layer_2.csv"));
  const auto meta = nlohmann::json::parse(fixtures::read_bytes(ws.dir / "p1/run.json"));
  EXPECT_EQ(meta["layers"][0]["explained_variance"].size(), 2u);
}

TEST(Cli, ErrorsCarryMachineReadableCodes) {
  Workspace ws;
  auto r = run(ws.dir, "fit --embeddings " + ws.path("missing") + " --out " + ws.path("m"));
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error[missing_file]: fit:", 0), 0u) << r.err;
  r = run(ws.dir, "eval --embeddings " + ws.eval + " --model " + ws.path("m") + " --out " + ws.path("r"));
  EXPECT_EQ(r.err.rfind("error[invalid_argument]", 0), 0u) << r.err;
  r = run(ws.dir, "fit --embeddings " + ws.train + " --layer 9 --out " + ws.path("m"));
  EXPECT_EQ(r.err.rfind("error[out_of_range]", 0), 0u) << r.err;
  r = run(ws.dir, "fit --embeddings " + ws.train + " --cov banana --out " + ws.path("m"));
  EXPECT_EQ(r.err.rfind("error[invalid_argument]", 0), 0u) << r.err;
  r = run(ws.dir, "frobnicate");
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error[usage]", 0), 0u) << r.err;
}
