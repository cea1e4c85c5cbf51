#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedlev/fedsim.hpp"
#include "fedlev/metrics.hpp"
#include "fedlev/synthgen.hpp"
#include "fedlev/verify.hpp"

namespace fedlev {

inline constexpr std::string_view kVersion = "0.1.0";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Error raised by run_experiment, tagged with the failing stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, std::uint64_t seed, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct MetricOptions {
  std::size_t k = 0;  // 0: number of distinct labels
  std::size_t restarts = 10;
  std::size_t max_iters = 100;

  friend bool operator==(const MetricOptions&, const MetricOptions&) = default;
};

struct ExperimentConfig {
  /// Preset name; ignored when `manifest` is set.
  Scenario scenario = Scenario::Homogeneous;
  std::optional<std::filesystem::path> manifest;
  double scale = 0.1;
  SynthParams synth;  // seed is derived from `seed`
  FedConfig fed;      // seed is derived from `seed`
  MetricOptions metrics;
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// Parses JSON; every key is optional, unknown keys are rejected.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved config as canonical JSON (sorted keys).
std::string config_to_json(const ExperimentConfig& config);

/// JSON Schema of the config file.
std::string config_schema();

/// 16 hex digits of FNV-1a over the canonical config JSON minus output_dir.
std::string config_hash(const ExperimentConfig& config);

/// Seeds of each stage, derived from the master seed.
std::uint64_t synth_seed(std::uint64_t master);
std::uint64_t fed_seed(std::uint64_t master);
std::uint64_t kmeans_seed(std::uint64_t master);

/// Loads the manifest or builds the preset.
std::vector<ClientShard> load_or_generate(const ExperimentConfig& config);

struct RunReport {
  std::string scenario;
  std::string config_hash;
  std::string config_json;
  double rho = 0.0;
  std::size_t d = 0;
  std::size_t s = 0;
  std::size_t n_cells = 0;
  /// Highest-probability features (index, probability), at most 20.
  std::vector<std::pair<std::uint32_t, double>> top_features;
  std::vector<RoundHistory> history;
  CommLedger ledger;
  CommSummary comm;
  MetricReport metrics;
  std::size_t empty_clusters = 0;

  std::string to_json() const;
  static RunReport from_json(std::string_view text);
};

struct RunOutputs {
  RunReport report;
  VaeParams params;
  std::vector<std::string> cell_ids;
  std::vector<int> labels;
  Eigen::MatrixXd embedding;  // n x latent_dim
};

/// synth/load -> phase 1 -> phase 2 -> embed -> k-means -> metrics.
/// Nothing is written to disk.
RunOutputs run_pipeline(const ExperimentConfig& config, std::size_t workers = 1);

/// run_pipeline plus files under config.output_dir: config.json,
/// report.json, embeddings.csv, history.csv, ledger.json, params.ckpt and a
/// timing.json sidecar. Files written by a failed run are removed.
RunReport run_experiment(const ExperimentConfig& config, std::size_t workers = 1);

/// One CSV row per report: rho, ari, silhouette, MB/round, total GB, reduction%.
std::string compare_runs(std::span<const RunReport> reports);

// --- File helpers ------------------------------------------------------------

void write_embeddings_csv(const std::filesystem::path& path, std::span<const std::string> cell_ids,
                          const Eigen::MatrixXd& embedding);

struct EmbeddingTable {
  std::vector<std::string> cell_ids;
  Eigen::MatrixXd values;  // n x dim
};
EmbeddingTable read_embeddings_csv(const std::filesystem::path& path);

void write_history_csv(const std::filesystem::path& path, std::span<const RoundHistory> history);

std::string ledger_json(const CommLedger& ledger, const CommSummary& summary);
std::string metric_report_json(const MetricReport& report);
std::string property_result_json(const PropertyResult& result);

/// Clusters an embedding and scores it against labels matched by cell_id.
MetricReport report_from_embeddings(const EmbeddingTable& table, std::span<const CellRecord> cells,
                                    const MetricOptions& options, std::uint64_t seed);

}  // namespace fedlev
