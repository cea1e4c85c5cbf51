#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "fedlev/experiment.hpp"
#include "test_util.hpp"

namespace fedlev {
namespace {

using testing::TempDir;

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_config_json(const std::filesystem::path& out, double rho = 0.5) {
  nlohmann::json j = {
      {"scenario", "homogeneous"},
      {"scale", 0.02},
      {"seed", 4},
      {"output_dir", out.string()},
      {"synth", {{"d", 400}, {"peaks_per_type", 20}, {"shared_peaks", 20}, {"depth_mean", 60}}},
      {"fed",
       {{"rounds", 2}, {"local_steps", 3}, {"rho", rho}, {"batch_size", 16}, {"probe_size", 32}, {"sketch_size", 32}}},
      {"vae", {{"n_blocks", 4}, {"block_hidden", 4}, {"trunk_hidden", 8}, {"latent_dim", 3}}},
      {"metrics", {{"restarts", 2}}}};
  return j.dump();
}

TEST(Config, DefaultsAndRoundTrip) {
  const auto c = parse_config("{}");
  EXPECT_EQ(c.scenario, Scenario::Homogeneous);
  EXPECT_FALSE(c.fed.lr_local.has_value());
  EXPECT_EQ(c.fed.rho, 0.2);
  const auto again = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(again), config_to_json(c));
  EXPECT_EQ(config_hash(again), config_hash(c));
}

TEST(Config, RejectsUnknownKeysWrongTypesAndBadValues) {
  EXPECT_THROW(parse_config(R"({"sead": 1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"fed": {"rhoo": 0.2}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"fed": {"rounds": "ten"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"fed": {"rounds": -3}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"fed": {"rho": 0}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"fed": {"rho": 1.2}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"scenario": "mystery"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"vae": {"likelihood": "poisson"}})"), ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_NO_THROW(parse_config(R"({"fed": {"lr_local": null, "rho": 1}})"));
  EXPECT_EQ(*parse_config(R"({"fed": {"lr_local": 0.25}})").fed.lr_local, 0.25);
}

TEST(Config, HashIgnoresOutputDirButNotSettings) {
  auto a = parse_config(R"({"output_dir": "x"})");
  auto b = parse_config(R"({"output_dir": "y"})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.fed.rho = 0.3;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, SchemaListsEverySection) {
  const auto schema = nlohmann::json::parse(config_schema());
  EXPECT_EQ(schema.at("additionalProperties"), false);
  for (const auto* key : {"scenario", "seed", "synth", "fed", "vae", "metrics"}) {
    EXPECT_TRUE(schema.at("properties").contains(key)) << key;
  }
  EXPECT_TRUE(schema["properties"]["fed"]["properties"].contains("lr_local"));
}

TEST(Config, ManifestResolvedAgainstConfigDirectory) {
  TempDir dir("cfg");
  std::ofstream(dir / "c.json") << R"({"manifest": "data/manifest.json"})";
  const auto c = load_config(dir / "c.json");
  ASSERT_TRUE(c.manifest.has_value());
  EXPECT_EQ(*c.manifest, dir.path() / "data/manifest.json");
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
}

TEST(Seeds, StreamsAreDistinct) {
  EXPECT_NE(synth_seed(1), fed_seed(1));
  EXPECT_NE(fed_seed(1), kmeans_seed(1));
  EXPECT_NE(synth_seed(1), synth_seed(2));
  EXPECT_EQ(fed_seed(7), fed_seed(7));
}

TEST(Experiment, RunIsReproducibleByteForByte) {
  TempDir dir("run");
  const auto cfg_a = parse_config(tiny_config_json(dir / "a"));
  const auto cfg_b = parse_config(tiny_config_json(dir / "b"));
  const auto rep = run_experiment(cfg_a);
  run_experiment(cfg_b);
  for (const auto* f : {"report.json", "embeddings.csv", "history.csv", "ledger.json", "params.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / f)) << f;
    EXPECT_EQ(read_file(dir.path() / "a" / f), read_file(dir.path() / "b" / f)) << f;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "timing.json"));
  EXPECT_TRUE(rep.ledger.conserved());
  EXPECT_EQ(rep.s, 200u);
  EXPECT_EQ(rep.n_cells, 1000u);
  EXPECT_EQ(rep.history.size(), 2u);

  const auto back = RunReport::from_json(read_file(dir.path() / "a" / "report.json"));
  EXPECT_EQ(back.to_json(), rep.to_json());
  EXPECT_EQ(back.config_hash, config_hash(cfg_a));

  const auto table = read_embeddings_csv(dir.path() / "a" / "embeddings.csv");
  EXPECT_EQ(table.values.rows(), 1000);
  EXPECT_EQ(table.values.cols(), 3);
}

TEST(Experiment, WorkersDoNotChangeResults) {
  TempDir dir("run");
  const auto cfg = parse_config(tiny_config_json(dir / "w"));
  const auto a = run_pipeline(cfg, 1);
  const auto b = run_pipeline(cfg, 3);
  EXPECT_EQ(a.embedding, b.embedding);
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
}

TEST(Experiment, ManifestInputMatchesGeneratedInput) {
  TempDir dir("run");
  auto cfg = parse_config(tiny_config_json(dir / "gen"));
  const auto shards = load_or_generate(cfg);
  write_federation(dir.path() / "data", shards, "homogeneous", cfg.seed);
  auto from_disk = cfg;
  from_disk.manifest = dir.path() / "data" / "manifest.json";
  const auto a = run_pipeline(cfg);
  const auto b = run_pipeline(from_disk);
  EXPECT_EQ(a.embedding, b.embedding);
}

TEST(Experiment, FailingStageIsNamed) {
  TempDir dir("run");
  auto cfg = parse_config(tiny_config_json(dir / "bad"));
  cfg.manifest = dir.path() / "nowhere" / "manifest.json";
  try {
    run_experiment(cfg);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "data");
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "bad" / "report.json"));
}

RunReport fake_report(double rho, const std::string& scenario = "homogeneous") {
  RunReport r;
  r.scenario = scenario;
  r.rho = rho;
  r.metrics.ari = 0.5;
  r.metrics.silhouette = 0.25;
  r.comm.mb_per_round = 1.0;
  r.comm.total_gb = 0.03;
  r.comm.reduction = 0.5;
  return r;
}

TEST(Compare, CsvRowsAndErrors) {
  const std::vector<RunReport> two{fake_report(0.2), fake_report(1.0)};
  const auto csv = compare_runs(two);
  std::stringstream ss(csv);
  std::string header, row;
  std::getline(ss, header);
  EXPECT_EQ(header, "rho,ari,silhouette,mb_per_round,total_gb,reduction_pct");
  std::getline(ss, row);
  EXPECT_EQ(row.substr(0, 4), "0.2,");
  const std::vector<RunReport> one{fake_report(0.2)};
  EXPECT_THROW(compare_runs(one), ConfigError);
  const std::vector<RunReport> mixed{fake_report(0.2), fake_report(1.0, "imbalance")};
  EXPECT_THROW(compare_runs(mixed), ConfigError);
}

TEST(EmbeddingsCsv, RoundTripIsExact) {
  TempDir dir("emb");
  Eigen::MatrixXd e(3, 2);
  e << 0.1, -1e-300, 1.0 / 3.0, 2.5e10, -7, 0;
  const std::vector<std::string> ids{"a", "b", "c"};
  write_embeddings_csv(dir / "e.csv", ids, e);
  const auto t = read_embeddings_csv(dir / "e.csv");
  EXPECT_EQ(t.cell_ids, ids);
  EXPECT_EQ(t.values, e);
  std::ofstream(dir / "bad.csv") << "cell_id,z_1\na,1,2\n";
  EXPECT_THROW(read_embeddings_csv(dir / "bad.csv"), ConfigError);
}

TEST(ReportFromEmbeddings, MatchesByCellId) {
  Eigen::MatrixXd e(4, 1);
  e << 0, 10, 0.1, 10.1;
  EmbeddingTable t{{"w", "x", "y", "z"}, e};
  std::vector<CellRecord> cells{{"z", 1, 0, 1}, {"y", 0, 0, 1}, {"x", 1, 0, 1}, {"w", 0, 0, 1}};
  const auto rep = report_from_embeddings(t, cells, MetricOptions{}, 1);
  EXPECT_EQ(rep.ari, 1.0);
  cells[0].cell_id = "q";
  EXPECT_THROW(report_from_embeddings(t, cells, MetricOptions{}, 1), ConfigError);
}

}  // namespace
}  // namespace fedlev
