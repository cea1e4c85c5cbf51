#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedlev/dataset.hpp"
#include "fedlev/experiment.hpp"
#include "fedlev/leverage.hpp"
#include "fedlev/synthgen.hpp"
#include "fedlev/verify.hpp"

namespace fs = std::filesystem;
using namespace fedlev;

namespace {

constexpr const char* kSeedEnv = "FEDLEV_SEED";

// Default seed: FEDLEV_SEED if set, else 0.
std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv(kSeedEnv);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 0);
  if (*end != '\0') throw ConfigError(std::string(kSeedEnv) + " is not an unsigned integer: " + v);
  return s;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

struct Common {
  std::size_t workers = 1;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated leverage-score feature sampling for single-cell clustering"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--workers", common.workers, "Worker threads (never changes numeric output)")
      ->check(CLI::PositiveNumber);

  std::optional<std::uint64_t> seed_opt;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a preset federation as Matrix Market + cell CSV files");
  std::string scenario = "homogeneous";
  double scale = 0.1;
  fs::path synth_out = "data";
  SynthParams base;
  synth->add_option("--scenario", scenario, "homogeneous | varying_depth | confounded_hetero | imbalance")
      ->capture_default_str();
  synth->add_option("--scale", scale, "Fraction of the full-size cell counts")->capture_default_str();
  synth->add_option("--d", base.d, "Number of features")->capture_default_str();
  synth->add_option("--n-types", base.n_types, "Number of cell types")->capture_default_str();
  synth->add_option("--peaks-per-type", base.peaks_per_type)->capture_default_str();
  synth->add_option("--shared-peaks", base.shared_peaks)->capture_default_str();
  synth->add_option("--snr", base.snr)->capture_default_str();
  synth->add_option("--depth", base.depth_mean, "Mean fragments per cell")->capture_default_str();
  synth->add_option("--seed", seed_opt, "Master seed (default $FEDLEV_SEED or 0)");
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

  // leverage
  auto* lev = app.add_subcommand("leverage", "Column leverage scores of one matrix");
  fs::path matrix_path;
  std::string mode = "exact";
  std::size_t sketch = 256;
  fs::path lev_out = "scores.csv";
  lev->add_option("--matrix", matrix_path, "Matrix Market file (cells x features)")->required();
  lev->add_option("--mode", mode, "exact | randomized")
      ->check(CLI::IsMember({"exact", "randomized"}))
      ->capture_default_str();
  lev->add_option("--sketch", sketch, "Sketch size for randomized mode")->capture_default_str();
  lev->add_option("--seed", seed_opt, "Sketch seed (default $FEDLEV_SEED or 0)");
  lev->add_option("--out", lev_out)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Run a full experiment from a JSON config");
  std::optional<fs::path> config_path;
  std::optional<fs::path> train_out;
  bool print_schema = false;
  train->add_option("config", config_path, "Experiment config (JSON)");
  train->add_flag("--print-schema", print_schema, "Print the config JSON Schema and exit");
  train->add_option("--out", train_out, "Override output_dir");
  train->add_option("--seed", seed_opt, "Override the config seed (also $FEDLEV_SEED)");

  // verify
  auto* ver = app.add_subcommand("verify", "Run a property verification suite");
  std::string suite;
  std::size_t trials = 0;
  fs::path ver_out = "result.json";
  std::vector<std::string> suites;
  for (auto n : suite_names()) suites.emplace_back(n);
  ver->add_option("--suite", suite)->required()->check(CLI::IsMember(suites));
  ver->add_option("--trials", trials, "Trials (0 = suite default)")->capture_default_str();
  ver->add_option("--seed", seed_opt, "Seed (default $FEDLEV_SEED or 0)");
  ver->add_option("--out", ver_out)->capture_default_str();

  // report
  auto* rep = app.add_subcommand("report", "Cluster an embeddings CSV and score it against cell metadata");
  fs::path emb_path;
  std::vector<fs::path> cell_paths;
  MetricOptions metric_opts;
  fs::path rep_out = "metrics.json";
  std::optional<fs::path> row_out;
  rep->add_option("--embeddings", emb_path)->required();
  rep->add_option("--cells", cell_paths, "Cell metadata CSV(s)")->required();
  rep->add_option("--k", metric_opts.k, "Clusters (0 = number of labels)")->capture_default_str();
  rep->add_option("--restarts", metric_opts.restarts)->capture_default_str();
  rep->add_option("--seed", seed_opt, "k-means seed (default $FEDLEV_SEED or 0)");
  rep->add_option("--out", rep_out)->capture_default_str();
  rep->add_option("--row", row_out, "Also write a one-row CSV");

  // compare
  auto* cmp = app.add_subcommand("compare", "Tabulate several run reports");
  std::vector<fs::path> reports;
  std::optional<fs::path> cmp_out;
  cmp->add_option("reports", reports, "report.json files")->required();
  cmp->add_option("--out", cmp_out, "CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto seed_or_default = [&] { return seed_opt ? *seed_opt : env_seed().value_or(0); };

    if (*synth) {
      base.type_counts.assign(base.n_types, 1000);
      base.seed = seed_or_default();
      const Scenario sc = parse_scenario(scenario);
      const auto data = build_scenario(make_preset(sc, base), scale, base);
      write_federation(synth_out, data.shards, std::string(scenario_name(sc)), base.seed);
      std::size_t n = 0;
      for (const auto& s : data.shards) n += s.n();
      std::printf("wrote %zu clients, %zu cells, d = %zu to %s\n", data.shards.size(), n, base.d,
                  (synth_out / "manifest.json").c_str());
      return 0;
    }

    if (*lev) {
      const auto m = load_matrix(matrix_path);
      const auto scores = mode == "exact" ? exact_column_leverage(m)
                                          : approx_column_leverage(m, sketch, seed_or_default());
      std::ostringstream csv;
      csv << "feature_index,score\n";
      char buf[64];
      for (Eigen::Index j = 0; j < scores.scores.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%td,%.17g\n", static_cast<std::ptrdiff_t>(j), scores.scores(j));
        csv << buf;
      }
      write_file(lev_out, csv.str());
      std::printf("%s leverage: d = %td, rank estimate %zu, sum %.6f\n", mode.c_str(),
                  static_cast<std::ptrdiff_t>(scores.scores.size()), scores.rank_estimate, scores.scores.sum());
      return 0;
    }

    if (*train) {
      if (print_schema) {
        std::cout << config_schema() << '\n';
        return 0;
      }
      if (!config_path) throw ConfigError("train: a config file is required (or --print-schema)");
      ExperimentConfig cfg = load_config(*config_path);
      if (seed_opt) {
        cfg.seed = *seed_opt;
      } else if (auto s = env_seed()) {
        cfg.seed = *s;
      }
      if (train_out) cfg.output_dir = *train_out;
      const auto report = run_experiment(cfg, common.workers);
      std::printf("scenario %s, rho %.3g, s = %zu of %zu\n", report.scenario.c_str(), report.rho, report.s, report.d);
      std::printf("ARI %.4f  silhouette %.4f  MB/round %.3f  reduction %.1f%%\n", report.metrics.ari,
                  report.metrics.silhouette, report.comm.mb_per_round, 100.0 * report.comm.reduction);
      std::printf("outputs in %s\n", cfg.output_dir.c_str());
      if (!report.ledger.conserved()) {
        std::fprintf(stderr, "error: communication ledger is not conserved\n");
        return 1;
      }
      return 0;
    }

    if (*ver) {
      const auto result = run_suite(suite, trials, seed_or_default());
      write_file(ver_out, property_result_json(result));
      const double rate = suite_required_rate(suite);
      const bool ok = suite_passed(result, rate);
      std::printf("%s: %zu/%zu applicable trials passed (required %.0f%%), %zu not applicable -> %s\n",
                  suite.c_str(), result.successes, result.applicable(), 100.0 * rate, result.not_applicable,
                  ok ? "PASS" : "FAIL");
      return ok ? 0 : 1;
    }

    if (*rep) {
      const auto table = read_embeddings_csv(emb_path);
      std::vector<CellRecord> cells;
      for (const auto& p : cell_paths) {
        auto c = load_cells(p);
        cells.insert(cells.end(), c.begin(), c.end());
      }
      const auto m = report_from_embeddings(table, cells, metric_opts, seed_or_default());
      write_file(rep_out, metric_report_json(m));
      if (row_out) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "n_cells,ari,silhouette,davies_bouldin\n%zu,%.6f,%.6f,%.6f\n",
                      table.cell_ids.size(), m.ari, m.silhouette, m.davies_bouldin);
        write_file(*row_out, buf);
      }
      std::printf("ARI %.4f  silhouette %.4f  DB %.4f\n", m.ari, m.silhouette, m.davies_bouldin);
      return 0;
    }

    if (*cmp) {
      std::vector<RunReport> runs;
      for (const auto& p : reports) runs.push_back(RunReport::from_json(read_file(p)));
      const auto table = compare_runs(runs);
      if (cmp_out) {
        write_file(*cmp_out, table);
      } else {
        std::cout << table;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
