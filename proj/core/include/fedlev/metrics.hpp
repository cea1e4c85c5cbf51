#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace fedlev {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Cluster or class ids, one per point.
using Labeling = std::vector<int>;

/// Relabels ids to 0..k-1 in order of first appearance.
Labeling canonicalize(std::span<const int> labels);
std::size_t count_clusters(std::span<const int> labels);

struct KMeansResult {
  Labeling labels;
  Eigen::MatrixXd centers;  // k x dim
  double inertia = 0.0;
  std::size_t iterations = 0;
  /// Clusters left without points (only possible with fewer than k distinct points).
  std::vector<int> empty_clusters;
  /// Inertia after each assignment step of the winning restart.
  std::vector<double> inertia_trace;
};

/// k-means++ seeding and Lloyd iterations until the relative inertia change
/// drops below 1e-6 or max_iters is reached; best of `restarts` by inertia.
/// Points are rows. Throws std::logic_error if an iteration ever increases
/// the inertia.
KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, std::size_t restarts = 10,
                    std::size_t max_iters = 100);

/// Adjusted Rand index from the contingency table; computed as one ratio of
/// exact integer pair counts.
double ari(std::span<const int> a, std::span<const int> b);

/// ARI from pair counts: pairs together in both labelings, together in a,
/// together in b, and all pairs.
double ari_from_pair_counts(std::int64_t both, std::int64_t pairs_a, std::int64_t pairs_b, std::int64_t total_pairs);

/// Mean silhouette over all points; points in singleton clusters score 0.
double silhouette(const Eigen::MatrixXd& points, std::span<const int> labels);

/// sigma_i is the RMS distance to the centroid. Returns +infinity when two
/// centroids are closer than kCentroidFloor.
double davies_bouldin(const Eigen::MatrixXd& points, std::span<const int> labels);

inline constexpr double kCentroidFloor = 1e-9;

/// ||mu_i - mu_j|| / sqrt(sigma_i^2 + sigma_j^2) with sigma^2 the mean squared
/// distance to the class centroid. Both variances zero gives +infinity for
/// distinct means and NaN for coincident ones.
double separability(const Eigen::MatrixXd& points, std::span<const int> labels, int i, int j);

/// Spearman rank correlation; ties get average ranks.
double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct MetricReport {
  double ari = 0.0;
  double silhouette = 0.0;
  double davies_bouldin = 0.0;
  /// Keyed by (i, j), i < j, over the true classes.
  std::map<std::pair<int, int>, double> separability;
};

/// Clustering quality of `predicted` against `truth` on the embedding.
/// Silhouette and DB are NaN when `predicted` has a single cluster.
MetricReport metric_report(const Eigen::MatrixXd& points, std::span<const int> predicted, std::span<const int> truth);

}  // namespace fedlev
