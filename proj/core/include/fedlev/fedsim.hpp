#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedlev/dataset.hpp"
#include "fedlev/leverage.hpp"
#include "fedlev/vae.hpp"

namespace fedlev {

class FedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wire format for every message: 32-bit values.
inline constexpr std::uint64_t kBytesPerValue = 4;

/// Numerator of the default local learning rate, which is kAutoLrScale / ((1 + lambda) s).
inline constexpr double kAutoLrScale = 20.0;

struct FedConfig {
  std::size_t rounds = 30;
  std::size_t local_steps = 40;
  /// Unset: kAutoLrScale / ((1 + lambda) s), since the reconstruction term sums over
  /// s features and carries weight 1 + lambda.
  std::optional<double> lr_local;
  double lr_global = 1.0;
  double rho = 0.2;
  std::size_t sketch_size = 256;
  std::size_t batch_size = 64;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  /// Multiply selected columns by 1/sqrt(s p_j) instead of keeping raw 0/1 values.
  bool rescale_inputs = false;
  std::size_t probe_size = 512;
  VaeArch model;

  /// s = floor(rho * d).
  std::size_t sample_size(std::size_t d) const;
  /// lr_local, or kAutoLrScale / ((1 + lambda) s) when unset.
  double local_learning_rate(std::size_t s) const;
  /// Throws FedError on invalid settings for a federation of dimension d.
  void validate(std::size_t d) const;

  friend bool operator==(const FedConfig&, const FedConfig&) = default;
};

/// Byte-accurate record of every simulated message.
struct CommLedger {
  std::size_t n_clients = 0;
  std::size_t d = 0;
  std::size_t s = 0;
  std::size_t params_count = 0;
  /// Phase 1, per client: score vector up, selected indices down.
  std::vector<std::uint64_t> phase1_uplink;
  std::vector<std::uint64_t> phase1_downlink;
  /// Phase 2, [round][client].
  std::vector<std::vector<std::uint64_t>> round_uplink;
  std::vector<std::vector<std::uint64_t>> round_downlink;

  std::uint64_t total_uplink = 0;
  std::uint64_t total_downlink = 0;
  std::uint64_t total = 0;

  std::uint64_t phase1_total() const;
  std::uint64_t phase2_total() const;
  /// Recomputes the totals from the per-message entries.
  void finalize();
  /// True when the stored totals equal the sums of all entries.
  bool conserved() const;
};

struct RoundHistory {
  std::size_t round = 0;  // 1-based
  LossBreakdown probe;
  /// Loss of each client's last local step, in client_id order.
  std::vector<LossBreakdown> client_loss;
};

/// Runs the client sketches (one seed substream per client_id), aggregates,
/// samples s = floor(rho d) features without replacement and charges the
/// ledger. With s = d every feature is kept and the rescaling is the identity.
FeatureSample phase1_select(std::span<const ClientShard> clients, double rho, std::size_t sketch_size,
                            std::uint64_t seed, CommLedger* ledger = nullptr);

/// Server update U + lr_global * sum_i w_i delta_i, summed in the given order.
void aggregate_updates(VaeParams& global, std::span<const VaeParams> deltas, std::span<const double> weights,
                       double lr_global);

/// n_i / n for each client, in the given order.
std::vector<double> client_weights(std::span<const std::size_t> sizes);

/// Seed of client `client_id`'s local run in `round` (1-based).
std::uint64_t local_seed(std::uint64_t master, std::uint32_t client_id, std::size_t round);

/// Everything clients need to train in the sampled space.
struct SubspaceSetup {
  std::vector<std::uint32_t> client_ids;  // ascending
  std::vector<TrainingData> data;         // aligned with client_ids
  ConfounderEncoder confounders;
  VaeConfig vae;
  Batch probe;
  Eigen::MatrixXd probe_noise;
};

/// Restricts every shard to the sample, pools depth moments, derives the VAE
/// shape and draws the probe set.
SubspaceSetup prepare_subspace(std::span<const ClientShard> clients, const FeatureSample& sample,
                               const FedConfig& cfg);

struct Phase2Result {
  VaeParams params;
  std::vector<RoundHistory> history;
};

/// Subspace FedAvg. `workers` threads run clients in parallel; results do not
/// depend on it. Passing `start` overrides the seeded initialisation.
Phase2Result phase2_train(const SubspaceSetup& setup, const FedConfig& cfg, CommLedger* ledger = nullptr,
                          std::size_t workers = 1, const VaeParams* start = nullptr);

struct FederatedRun {
  FeatureSample sample;
  SubspaceSetup setup;
  Phase2Result phase2;
  CommLedger ledger;
};

FederatedRun run_federated(std::span<const ClientShard> clients, const FedConfig& cfg, std::size_t workers = 1);

/// Parameter counts and traffic implied by the architecture at s = floor(rho d),
/// assuming every block keeps at least one feature.
struct CommSummary {
  std::size_t d = 0;
  std::size_t s = 0;
  std::size_t params_count = 0;
  std::size_t baseline_params_count = 0;  // rho = 1
  std::size_t input_layer_params = 0;     // per-block encoder and decoder head weights and biases
  double mb_per_round = 0.0;              // one model transfer, MiB
  double total_gb = 0.0;                  // mb_per_round * rounds / 1024
  double reduction = 0.0;                 // 1 - params / baseline
};

std::size_t vae_param_count(const VaeArch& arch, std::size_t s, std::size_t confounder_dim);
CommSummary comm_report(const FedConfig& cfg, std::size_t d, std::size_t confounder_dim);

}  // namespace fedlev
