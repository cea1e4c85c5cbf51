#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fedlev/metrics.hpp"
#include "oracles.hpp"

namespace fedlev {
namespace {

using Eigen::MatrixXd;
using testing::brute_ari;
using testing::brute_db;
using testing::brute_silhouette;

struct Instance {
  MatrixXd x;
  std::vector<int> labels;
};

Instance random_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(4, 12), pick(0, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  Instance inst;
  const int n = size(rng);
  inst.x = MatrixXd(n, 3);
  for (Eigen::Index k = 0; k < inst.x.size(); ++k) inst.x.data()[k] = normal(rng);
  for (int i = 0; i < n; ++i) inst.labels.push_back(i < 3 ? i : pick(rng));
  return inst;
}

TEST(Ari, MatchesPairCountingOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    std::uniform_int_distribution<int> size(2, 12), pick(0, 3);
    const int n = size(rng);
    std::vector<int> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = pick(rng);
      b[i] = pick(rng);
    }
    EXPECT_NEAR(ari(a, b), brute_ari(a, b), 1e-12) << "trial " << t;
  }
}

TEST(Ari, KnownValues) {
  const std::vector<int> a{0, 0, 1, 1}, b{5, 5, 9, 9}, c{0, 1, 0, 1};
  EXPECT_EQ(ari(a, b), 1.0);
  EXPECT_NEAR(ari(a, c), -0.5, 1e-15);
  EXPECT_EQ(ari(std::vector<int>{0, 0, 0}, std::vector<int>{1, 1, 1}), 1.0);
  EXPECT_THROW(ari(a, std::vector<int>{0, 1}), MetricError);
}

TEST(Silhouette, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = random_instance(seed);
    EXPECT_NEAR(silhouette(inst.x, inst.labels), brute_silhouette(inst.x, inst.labels), 1e-12) << seed;
  }
}

TEST(Silhouette, RejectsSingleCluster) {
  EXPECT_THROW(silhouette(MatrixXd::Random(4, 2), std::vector<int>{1, 1, 1, 1}), MetricError);
}

TEST(DaviesBouldin, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = random_instance(seed);
    EXPECT_NEAR(davies_bouldin(inst.x, inst.labels), brute_db(inst.x, inst.labels),
                1e-12 * (1.0 + brute_db(inst.x, inst.labels)))
        << seed;
  }
}

TEST(DaviesBouldin, CoincidentCentroidsGiveInfinity) {
  MatrixXd x(4, 1);
  x << -1, 1, -2, 2;
  EXPECT_EQ(davies_bouldin(x, std::vector<int>{0, 0, 1, 1}), std::numeric_limits<double>::infinity());
}

TEST(Separability, DefinitionAndDegenerateCases) {
  MatrixXd x(4, 1);
  x << 0, 2, 10, 12;  // means 1, 11; variances 1, 1
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_NEAR(separability(x, labels, 0, 1), 10.0 / std::sqrt(2.0), 1e-12);
  MatrixXd y(4, 1);
  y << 1, 1, 3, 3;
  EXPECT_EQ(separability(y, labels, 0, 1), std::numeric_limits<double>::infinity());
  MatrixXd z = MatrixXd::Ones(4, 1);
  EXPECT_TRUE(std::isnan(separability(z, labels, 0, 1)));
}

TEST(KMeans, RecoversWellSeparatedClusters) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 0.1);
  MatrixXd x(60, 2);
  std::vector<int> truth;
  for (int i = 0; i < 60; ++i) {
    const int c = i % 3;
    x(i, 0) = 10.0 * c + normal(rng);
    x(i, 1) = -5.0 * c + normal(rng);
    truth.push_back(c);
  }
  const auto km = kmeans(x, 3, 7);
  EXPECT_EQ(ari(km.labels, truth), 1.0);
  EXPECT_TRUE(km.empty_clusters.empty());
  EXPECT_EQ(km.centers.rows(), 3);
}

TEST(KMeans, InertiaTraceNeverIncreasesAndIsDeterministic) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixXd x = MatrixXd::Random(80, 4);
    const auto km = kmeans(x, 5, seed, 3, 100);
    for (std::size_t i = 1; i < km.inertia_trace.size(); ++i) {
      EXPECT_LE(km.inertia_trace[i], km.inertia_trace[i - 1] * (1 + 1e-12));
    }
    EXPECT_EQ(kmeans(x, 5, seed, 3, 100).labels, km.labels);
    // Reported inertia is the sum of squared distances to assigned centers.
    double inertia = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) inertia += (x.row(i) - km.centers.row(km.labels[i])).squaredNorm();
    EXPECT_NEAR(km.inertia, inertia, 1e-9 * inertia);
  }
}

TEST(KMeans, FewerDistinctPointsThanClusters) {
  MatrixXd x(6, 1);
  x << 0, 0, 0, 1, 1, 1;
  const auto km = kmeans(x, 3, 1);
  EXPECT_EQ(km.empty_clusters.size(), 1u);
  EXPECT_EQ(km.inertia, 0.0);
  EXPECT_THROW(kmeans(x, 0, 1), MetricError);
  EXPECT_THROW(kmeans(x, 7, 1), MetricError);
}

TEST(Spearman, RanksWithTies) {
  Eigen::VectorXd x(5), y(5);
  x << 1, 2, 3, 4, 5;
  y << 10, 20, 30, 40, 50;
  EXPECT_NEAR(spearman(x, y), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, -y), -1.0, 1e-15);
  // Average ranks for ties: y ranks 1.5, 1.5, 3, 4, 5.
  y << 1, 1, 2, 3, 4;
  const double rx[] = {1, 2, 3, 4, 5}, ry[] = {1.5, 1.5, 3, 4, 5};
  double mx = 3, my = 3, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 5; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(spearman(x, y), sxy / std::sqrt(sxx * syy), 1e-15);
}

TEST(Labels, CanonicalizeAndCount) {
  const std::vector<int> l{7, 3, 7, 9};
  EXPECT_EQ(canonicalize(l), (Labeling{0, 1, 0, 2}));
  EXPECT_EQ(count_clusters(l), 3u);
}

TEST(MetricReport, CombinesMetrics) {
  const auto inst = random_instance(4);
  const auto rep = metric_report(inst.x, inst.labels, inst.labels);
  EXPECT_EQ(rep.ari, 1.0);
  EXPECT_NEAR(rep.silhouette, brute_silhouette(inst.x, inst.labels), 1e-12);
  EXPECT_EQ(rep.separability.size(), 3u);
  EXPECT_TRUE(rep.separability.count({0, 2}));
}

}  // namespace
}  // namespace fedlev
