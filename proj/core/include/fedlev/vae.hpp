#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "fedlev/dataset.hpp"

namespace fedlev {

class VaeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Likelihood { Bernoulli, Gaussian };

/// Posterior log-variances are clamped to this range.
inline constexpr double kLogVarBound = 10.0;
/// Initial per-feature output: accessibility rate 0.05 (as a logit for Bernoulli).
inline constexpr double kInitAccessibility = 0.05;

struct VaeConfig {
  std::size_t input_dim = 0;
  /// Sizes of contiguous feature blocks covering [0, input_dim).
  std::vector<std::size_t> block_sizes;
  std::size_t block_hidden = 32;
  std::size_t trunk_hidden = 64;
  std::size_t latent_dim = 10;
  std::size_t confounder_dim = 1;
  double lambda = 1.0;
  Likelihood likelihood = Likelihood::Bernoulli;

  std::size_t n_blocks() const { return block_sizes.size(); }
  void validate() const;

  friend bool operator==(const VaeConfig&, const VaeConfig&) = default;
};

/// Architecture knobs that do not depend on the data.
struct VaeArch {
  std::size_t n_blocks = 20;
  std::size_t block_hidden = 32;
  std::size_t trunk_hidden = 64;
  std::size_t latent_dim = 10;
  Likelihood likelihood = Likelihood::Bernoulli;

  friend bool operator==(const VaeArch&, const VaeArch&) = default;
};

VaeConfig make_vae_config(const VaeArch& arch, std::vector<std::size_t> block_sizes, std::size_t confounder_dim,
                          double lambda);

std::string_view likelihood_name(Likelihood l);
Likelihood parse_likelihood(std::string_view name);

/// Splits the original [0, d) feature range into n_blocks contiguous ranges
/// of near-equal width, maps the (ascending) selected features into them and
/// drops blocks that received no feature.
std::vector<std::size_t> block_sizes_for_selection(std::span<const SparseBinaryMatrix::Index> selected,
                                                   std::size_t d, std::size_t n_blocks);

/// Same, with an explicit feature -> block map over the original d features.
/// The map must be non-decreasing so blocks stay contiguous after selection.
std::vector<std::size_t> block_sizes_for_selection(std::span<const SparseBinaryMatrix::Index> selected,
                                                   std::span<const std::size_t> block_of_feature);

/// Offsets of every named tensor inside the flat parameter vector. Tensors
/// are column-major, shaped (out x in) for weights.
class VaeLayout {
 public:
  struct Tensor {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }
  };

  explicit VaeLayout(VaeConfig config);

  const VaeConfig& config() const { return config_; }
  std::size_t size() const { return size_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const Tensor& tensor(std::size_t id) const { return tensors_[id]; }

  std::size_t enc_w(std::size_t block) const { return 2 * block; }
  std::size_t enc_b(std::size_t block) const { return 2 * block + 1; }
  std::size_t trunk_w() const { return 2 * nb_; }
  std::size_t trunk_b() const { return 2 * nb_ + 1; }
  std::size_t mu_w() const { return 2 * nb_ + 2; }
  std::size_t mu_b() const { return 2 * nb_ + 3; }
  std::size_t logvar_w() const { return 2 * nb_ + 4; }
  std::size_t logvar_b() const { return 2 * nb_ + 5; }
  std::size_t dec_w() const { return 2 * nb_ + 6; }
  std::size_t dec_b() const { return 2 * nb_ + 7; }
  std::size_t out_w(std::size_t block) const { return 2 * nb_ + 8 + 2 * block; }
  std::size_t out_b(std::size_t block) const { return 2 * nb_ + 9 + 2 * block; }

  std::size_t block_start(std::size_t block) const { return block_starts_[block]; }
  /// Block that owns sampled feature j.
  std::size_t block_of(std::size_t j) const { return block_of_[j]; }

 private:
  VaeConfig config_;
  std::size_t nb_ = 0;
  std::size_t size_ = 0;
  std::vector<Tensor> tensors_;
  std::vector<std::size_t> block_starts_;
  std::vector<std::uint32_t> block_of_;
};

/// Flat parameter (or gradient) vector tied to a shared layout.
class VaeParams {
 public:
  using MatMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

  VaeParams() = default;
  /// All-zero parameters.
  explicit VaeParams(const VaeConfig& config);
  explicit VaeParams(std::shared_ptr<const VaeLayout> layout);

  const VaeLayout& layout() const { return *layout_; }
  std::shared_ptr<const VaeLayout> layout_ptr() const { return layout_; }
  const VaeConfig& config() const { return layout_->config(); }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

  MatMap tensor(std::size_t id);
  ConstMatMap tensor(std::size_t id) const;

  /// Same layout, zero values.
  VaeParams zeros_like() const;
  bool all_finite() const { return values_.allFinite(); }

 private:
  std::shared_ptr<const VaeLayout> layout_;
  Eigen::VectorXd values_;
};

/// Weights ~ N(0, 1/fan_in), biases zero except the decoder output biases,
/// which start at kInitAccessibility; log-variance head scaled down so
/// initial posteriors start near unit variance.
VaeParams init_params(const VaeConfig& config, std::uint64_t seed);

struct LatentPosterior {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_var;
};

/// Encoder on a single dense input of length input_dim.
LatentPosterior encode(const VaeParams& params, const Eigen::VectorXd& x);

/// z = mu + exp(log_var / 2) * noise.
Eigen::VectorXd reparameterize(const LatentPosterior& post, const Eigen::VectorXd& noise);

/// Decoder: logits (bernoulli) or means (gaussian) of length input_dim.
Eigen::VectorXd decode(const VaeParams& params, const Eigen::VectorXd& z, const Eigen::VectorXd& c);

/// Columns are cells. x is input_dim x m, c is confounder_dim x m.
struct Batch {
  Eigen::SparseMatrix<double> x;
  Eigen::MatrixXd c;
  Eigen::Index size() const { return x.cols(); }
};

struct LossBreakdown {
  double total = 0.0;
  double prior = 0.0;
  double marginal = 0.0;
  double recon = 0.0;
};

/// Posterior means and log-variances (latent_dim x m) for a batch.
struct BatchPosterior {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd log_var;
};
BatchPosterior encode_batch(const VaeParams& params, const Eigen::SparseMatrix<double>& x);

/// prior + lambda * marginal + (1 + lambda) * recon, all batch means.
/// noise is latent_dim x m standard normal, one column per cell.
LossBreakdown loss(const VaeParams& params, const Batch& batch, const Eigen::MatrixXd& noise, double lambda);

struct LossAndGrad {
  LossBreakdown loss;
  VaeParams grad;
};

/// Loss plus its exact gradient under the given (frozen) noise.
LossAndGrad loss_and_grad(const VaeParams& params, const Batch& batch, const Eigen::MatrixXd& noise, double lambda);

inline VaeParams grad(const VaeParams& params, const Batch& batch, const Eigen::MatrixXd& noise, double lambda) {
  return loss_and_grad(params, batch, noise, lambda).grad;
}

/// Unweighted gradients of each loss term.
struct GradComponents {
  VaeParams prior;
  VaeParams marginal;
  VaeParams recon;
};
GradComponents grad_components(const VaeParams& params, const Batch& batch, const Eigen::MatrixXd& noise);

// --- Confounders -------------------------------------------------------------

/// Count, mean and population variance of log(1 + depth) on one client.
struct DepthMoments {
  std::size_t n = 0;
  double mean = 0.0;
  double var = 0.0;
};

DepthMoments depth_moments(std::span<const CellRecord> cells);

/// c = [standardised log(1 + depth)] ++ one_hot(batch_id).
class ConfounderEncoder {
 public:
  ConfounderEncoder() = default;
  ConfounderEncoder(double mean, double stddev, std::size_t n_batches);

  /// Pools per-client moments; no raw depths are needed.
  static ConfounderEncoder from_moments(std::span<const DepthMoments> clients, std::size_t n_batches);

  std::size_t dim() const { return 1 + n_batches_; }
  Eigen::VectorXd encode(const CellRecord& cell) const;
  double mean() const { return mean_; }
  double stddev() const { return stddev_; }

 private:
  double mean_ = 0.0;
  double stddev_ = 1.0;
  std::size_t n_batches_ = 0;
};

/// A client's cells in the sampled feature space, ready for training.
struct TrainingData {
  Eigen::SparseMatrix<double> x;  // s x n
  Eigen::MatrixXd c;              // c_dim x n
  std::vector<std::string> cell_ids;
  std::size_t n() const { return static_cast<std::size_t>(x.cols()); }
};

/// Restricts a shard to `selected` columns; values are 1 or, when
/// `scale` is non-empty, the per-column rescaling factors.
TrainingData make_training_data(const ClientShard& shard, std::span<const SparseBinaryMatrix::Index> selected,
                                const Eigen::VectorXd& scale, const ConfounderEncoder& confounders);

/// Batch from the given cells of `data`, in the given order.
Batch gather_batch(const TrainingData& data, std::span<const std::size_t> cells);

/// Standard normal noise (latent_dim x m) used by local_train at a given step.
Eigen::MatrixXd step_noise(std::uint64_t seed, std::size_t step, std::size_t latent_dim, std::size_t m);

struct LocalTrainOptions {
  std::size_t steps = 1;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  double lambda = 1.0;
  std::uint64_t seed = 0;
};

struct LocalTrainResult {
  VaeParams params;
  /// params - start, accumulated step by step.
  VaeParams delta;
  LossBreakdown last_loss;
};

/// Plain SGD. Minibatches are consecutive slices of a seeded permutation,
/// reshuffled whenever the next slice would run past the end; a batch size
/// of at least n means full-batch steps in data order. Throws VaeError on an
/// empty shard or non-finite parameters.
LocalTrainResult local_train(const VaeParams& start, const TrainingData& data, const LocalTrainOptions& options);

/// Posterior means for every cell (latent_dim x n).
Eigen::MatrixXd embed(const VaeParams& params, const TrainingData& data, std::size_t chunk = 512);

// --- Checkpoints -------------------------------------------------------------

/// One JSON header line describing the config and tensor shapes, followed by
/// the parameters as raw little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const VaeParams& params);
VaeParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fedlev
