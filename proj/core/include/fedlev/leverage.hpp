#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "fedlev/sparse_matrix.hpp"

namespace fedlev {

class LeverageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Singular values below this fraction of the largest count as zero.
inline constexpr double kRankTolerance = 1e-10;

struct LeverageScores {
  enum class Mode { Exact, Randomized };

  Eigen::VectorXd scores;
  Mode mode = Mode::Exact;
  std::size_t sketch_size = 0;   // randomized only
  std::size_t rank_estimate = 0;
};

/// Orthonormal basis of the row space of A (right singular vectors).
struct RowSpace {
  Eigen::MatrixXd basis;  // d x r
  Eigen::VectorXd singular_values;  // length r, descending
  std::size_t rank() const { return static_cast<std::size_t>(basis.cols()); }
};

/// Thin SVD with the kRankTolerance cut. Throws LeverageError for an all-zero matrix.
RowSpace row_space(const Eigen::MatrixXd& a);

/// Column leverage l_j = a_j^T (A A^T)^+ a_j, computed as squared row norms of V.
LeverageScores exact_column_leverage(const Eigen::MatrixXd& a);
LeverageScores exact_column_leverage(const RowSpace& rs);
LeverageScores exact_column_leverage(const SparseBinaryMatrix& a);

/// Gaussian sketch B = Omega A (Omega is sketch_size x n), then a
/// rank-revealing thin QR of B^T; scores are squared row norms of the
/// retained Q columns. sketch_size may exceed n; the retained rank never
/// exceeds rank(B).
LeverageScores approx_column_leverage(const SparseBinaryMatrix& a, std::size_t sketch_size, std::uint64_t seed);
LeverageScores approx_column_leverage(const Eigen::MatrixXd& a, std::size_t sketch_size, std::uint64_t seed);

/// One client's score message.
struct ClientScores {
  std::uint32_t client_id = 0;
  Eigen::VectorXd scores;
  std::size_t n = 0;
};

/// p_j proportional to sum_i (n_i / n) l_ij. Clients are summed in ascending
/// client_id order regardless of input order.
Eigen::VectorXd aggregate_scores(std::span<const ClientScores> clients);

/// Selected feature set S (ascending), the distribution it was drawn from and
/// the rescaling 1/sqrt(s p_j) aligned with S.
struct FeatureSample {
  std::vector<SparseBinaryMatrix::Index> selected;
  Eigen::VectorXd probs;
  Eigen::VectorXd scale;

  std::size_t size() const { return selected.size(); }
  std::size_t d() const { return static_cast<std::size_t>(probs.size()); }
};

Eigen::VectorXd uniform_probabilities(std::size_t d);

/// Weighted sampling without replacement by exponential keys: index j gets
/// key log(u_j) / p_j and the s largest keys win. p is renormalised to sum 1.
FeatureSample sample_without_replacement(const Eigen::VectorXd& p, std::size_t s, std::uint64_t seed);

/// A T: selected columns, multiplied by `scale` when rescale is true.
Eigen::MatrixXd apply_sample(const Eigen::MatrixXd& a, const FeatureSample& sample, bool rescale = true);

/// Largest spectral distortion eps such that
/// (1-eps) A A^T <= (AT)(AT)^T <= (1+eps) A A^T on col(A). Returns exactly 1.0
/// when the sample loses part of the column space.
double check_subspace_embedding(const RowSpace& rs, const FeatureSample& sample);
double check_subspace_embedding(const Eigen::MatrixXd& a, const FeatureSample& sample);

/// Subspace-embedding sample size ceil(4 r ln(r / delta) / eps^2).
std::size_t embedding_sample_size(std::size_t rank, double eps, double delta);

}  // namespace fedlev
