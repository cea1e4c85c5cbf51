#include "fedlev/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include "fedlev/random.hpp"

namespace fedlev {

namespace {

__extension__ using Int128 = __int128;

double distance(const Eigen::MatrixXd& p, Eigen::Index i, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    const double d = p(i, k) - p(j, k);
    s += d * d;
  }
  return std::sqrt(s);
}

double sq_distance_to(const Eigen::MatrixXd& p, Eigen::Index i, const Eigen::MatrixXd& c, Eigen::Index r) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    const double d = p(i, k) - c(r, k);
    s += d * d;
  }
  return s;
}

void check_points(const Eigen::MatrixXd& points, std::span<const int> labels) {
  if (static_cast<std::size_t>(points.rows()) != labels.size()) {
    throw MetricError("point count and label count differ");
  }
  if (!points.allFinite()) throw MetricError("points must be finite");
}

struct ClassStats {
  Eigen::MatrixXd centroids;  // k x dim
  Eigen::VectorXd var;        // mean squared distance to centroid
  std::vector<std::size_t> count;
};

ClassStats class_stats(const Eigen::MatrixXd& points, const Labeling& canon, std::size_t k) {
  ClassStats s;
  s.centroids = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), points.cols());
  s.var = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  s.count.assign(k, 0);
  for (std::size_t i = 0; i < canon.size(); ++i) {
    s.centroids.row(canon[i]) += points.row(static_cast<Eigen::Index>(i));
    ++s.count[static_cast<std::size_t>(canon[i])];
  }
  for (std::size_t c = 0; c < k; ++c) s.centroids.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(s.count[c]);
  for (std::size_t i = 0; i < canon.size(); ++i) {
    s.var(canon[i]) += sq_distance_to(points, static_cast<Eigen::Index>(i), s.centroids, canon[i]);
  }
  for (std::size_t c = 0; c < k; ++c) s.var(static_cast<Eigen::Index>(c)) /= static_cast<double>(s.count[c]);
  return s;
}

}  // namespace

Labeling canonicalize(std::span<const int> labels) {
  std::unordered_map<int, int> ids;
  Labeling out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto [it, inserted] = ids.try_emplace(l, static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

std::size_t count_clusters(std::span<const int> labels) {
  std::vector<int> v(labels.begin(), labels.end());
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

// --- k-means -----------------------------------------------------------------

namespace {

KMeansResult kmeans_once(const Eigen::MatrixXd& x, std::size_t k, Rng& rng, std::size_t max_iters) {
  const Eigen::Index n = x.rows();
  const auto kk = static_cast<Eigen::Index>(k);
  KMeansResult r;
  r.centers.resize(kk, x.cols());

  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  r.centers.row(0) = x.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_distance_to(x, i, r.centers, 0);
  for (Eigen::Index c = 1; c < kk; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[static_cast<std::size_t>(i)];
        if (target < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[static_cast<std::size_t>(pick)] == 0.0 && pick > 0) --pick;
    } else {
      pick = first(rng);  // every point already coincides with a center
    }
    r.centers.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_distance_to(x, i, r.centers, c));
    }
  }

  r.labels.assign(static_cast<std::size_t>(n), 0);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iters; ++it) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (Eigen::Index c = 0; c < kk; ++c) {
        const double dd = sq_distance_to(x, i, r.centers, c);
        if (dd < best) {
          best = dd;
          arg = static_cast<int>(c);
        }
      }
      r.labels[static_cast<std::size_t>(i)] = arg;
      inertia += best;
    }
    if (inertia > prev * (1.0 + 1e-12) + 1e-300) {
      throw std::logic_error("kmeans: inertia increased between Lloyd iterations");
    }
    r.inertia_trace.push_back(inertia);
    r.inertia = inertia;
    r.iterations = it + 1;
    const bool converged = std::isfinite(prev) && (prev - inertia) <= 1e-6 * prev;
    prev = inertia;
    if (converged) break;

    // Update step; empty clusters keep their previous center.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(kk, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(r.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(i)])];
    }
    for (Eigen::Index c = 0; c < kk; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
  }
  std::vector<std::size_t> counts(k, 0);
  for (int l : r.labels) ++counts[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) r.empty_clusters.push_back(static_cast<int>(c));
  }
  return r;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, std::size_t restarts,
                    std::size_t max_iters) {
  if (k == 0) throw MetricError("kmeans: k must be positive");
  if (static_cast<std::size_t>(points.rows()) < k) throw MetricError("kmeans: fewer points than clusters");
  if (!points.allFinite()) throw MetricError("kmeans: points must be finite");
  if (restarts == 0 || max_iters == 0) throw MetricError("kmeans: restarts and max_iters must be positive");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng = make_rng(seed, {0x6b6d65616e73ULL, r});
    auto res = kmeans_once(points, k, rng, max_iters);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

// --- ARI ---------------------------------------------------------------------

double ari(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw MetricError("ari: labelings differ in length");
  const auto ca = canonicalize(a);
  const auto cb = canonicalize(b);
  const std::size_t ka = count_clusters(ca);
  const std::size_t kb = count_clusters(cb);
  std::vector<std::int64_t> table(ka * kb, 0);
  std::vector<std::int64_t> ra(ka, 0);
  std::vector<std::int64_t> rb(kb, 0);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    ++table[static_cast<std::size_t>(ca[i]) * kb + static_cast<std::size_t>(cb[i])];
    ++ra[static_cast<std::size_t>(ca[i])];
    ++rb[static_cast<std::size_t>(cb[i])];
  }
  auto pairs = [](std::int64_t m) { return m * (m - 1) / 2; };
  std::int64_t index = 0;
  std::int64_t sa = 0;
  std::int64_t sb = 0;
  for (auto v : table) index += pairs(v);
  for (auto v : ra) sa += pairs(v);
  for (auto v : rb) sb += pairs(v);
  return ari_from_pair_counts(index, sa, sb, pairs(static_cast<std::int64_t>(ca.size())));
}

double ari_from_pair_counts(std::int64_t both, std::int64_t pairs_a, std::int64_t pairs_b, std::int64_t total_pairs) {
  // (index - E) / (max - E) with E = a b / T and max = (a + b) / 2, scaled by 2T.
  const Int128 t = total_pairs;
  const Int128 ab2 = 2 * static_cast<Int128>(pairs_a) * pairs_b;
  const Int128 num = 2 * t * both - ab2;
  const Int128 den = t * (static_cast<Int128>(pairs_a) + pairs_b) - ab2;
  if (den == 0) return 1.0;  // both partitions trivial in the same way
  return static_cast<double>(num) / static_cast<double>(den);
}

// --- Silhouette, Davies-Bouldin, separability --------------------------------

double silhouette(const Eigen::MatrixXd& points, std::span<const int> labels) {
  check_points(points, labels);
  const auto canon = canonicalize(labels);
  const std::size_t k = count_clusters(canon);
  if (k < 2) throw MetricError("silhouette: need at least two clusters");
  const std::size_t n = canon.size();
  std::vector<std::size_t> count(k, 0);
  for (int l : canon) ++count[static_cast<std::size_t>(l)];

  double total = 0.0;
  std::vector<double> sum(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(canon[i]);
    if (count[own] == 1) continue;  // singleton scores 0
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sum[static_cast<std::size_t>(canon[j])] +=
          distance(points, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    const double a = sum[own] / static_cast<double>(count[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, sum[c] / static_cast<double>(count[c]));
    }
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

double davies_bouldin(const Eigen::MatrixXd& points, std::span<const int> labels) {
  check_points(points, labels);
  const auto canon = canonicalize(labels);
  const std::size_t k = count_clusters(canon);
  if (k < 2) throw MetricError("davies_bouldin: need at least two clusters");
  const auto st = class_stats(points, canon, k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      double d2 = 0.0;
      for (Eigen::Index c = 0; c < points.cols(); ++c) {
        const double d = st.centroids(static_cast<Eigen::Index>(i), c) - st.centroids(static_cast<Eigen::Index>(j), c);
        d2 += d * d;
      }
      const double dist = std::sqrt(d2);
      if (dist < kCentroidFloor) return std::numeric_limits<double>::infinity();
      const double r =
          (std::sqrt(st.var(static_cast<Eigen::Index>(i))) + std::sqrt(st.var(static_cast<Eigen::Index>(j)))) / dist;
      worst = std::max(worst, r);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

double separability(const Eigen::MatrixXd& points, std::span<const int> labels, int i, int j) {
  check_points(points, labels);
  Eigen::VectorXd mu_i = Eigen::VectorXd::Zero(points.cols());
  Eigen::VectorXd mu_j = Eigen::VectorXd::Zero(points.cols());
  std::size_t n_i = 0;
  std::size_t n_j = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == i) {
      mu_i += points.row(static_cast<Eigen::Index>(r)).transpose();
      ++n_i;
    } else if (labels[r] == j) {
      mu_j += points.row(static_cast<Eigen::Index>(r)).transpose();
      ++n_j;
    }
  }
  if (n_i == 0 || n_j == 0) throw MetricError("separability: both classes must be nonempty");
  mu_i /= static_cast<double>(n_i);
  mu_j /= static_cast<double>(n_j);
  double v_i = 0.0;
  double v_j = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == i) v_i += (points.row(static_cast<Eigen::Index>(r)).transpose() - mu_i).squaredNorm();
    else if (labels[r] == j) v_j += (points.row(static_cast<Eigen::Index>(r)).transpose() - mu_j).squaredNorm();
  }
  v_i /= static_cast<double>(n_i);
  v_j /= static_cast<double>(n_j);
  const double dist = (mu_i - mu_j).norm();
  const double spread = std::sqrt(v_i + v_j);
  if (spread == 0.0) {
    return dist > 0.0 ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
  }
  return dist / spread;
}

// --- Spearman ----------------------------------------------------------------

namespace {

Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(a)) < v(static_cast<Eigen::Index>(b));
  });
  Eigen::VectorXd r(v.size());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v(static_cast<Eigen::Index>(idx[j + 1])) == v(static_cast<Eigen::Index>(idx[i]))) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r(static_cast<Eigen::Index>(idx[t])) = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw MetricError("spearman: lengths differ");
  if (x.size() < 2) throw MetricError("spearman: need at least two values");
  if (!x.allFinite() || !y.allFinite()) throw MetricError("spearman: values must be finite");
  const Eigen::VectorXd rx = average_ranks(x);
  const Eigen::VectorXd ry = average_ranks(y);
  const Eigen::VectorXd cx = rx.array() - rx.mean();
  const Eigen::VectorXd cy = ry.array() - ry.mean();
  const double den = std::sqrt(cx.squaredNorm() * cy.squaredNorm());
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return cx.dot(cy) / den;
}

MetricReport metric_report(const Eigen::MatrixXd& points, std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw MetricError("metric report: labelings differ in length");
  MetricReport r;
  r.ari = ari(predicted, truth);
  if (count_clusters(predicted) >= 2) {
    r.silhouette = silhouette(points, predicted);
    r.davies_bouldin = davies_bouldin(points, predicted);
  } else {
    // A single predicted cluster has no silhouette or DB index.
    r.silhouette = std::numeric_limits<double>::quiet_NaN();
    r.davies_bouldin = std::numeric_limits<double>::quiet_NaN();
  }
  std::vector<int> classes(truth.begin(), truth.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  for (std::size_t a = 0; a < classes.size(); ++a) {
    for (std::size_t b = a + 1; b < classes.size(); ++b) {
      r.separability[{classes[a], classes[b]}] = separability(points, truth, classes[a], classes[b]);
    }
  }
  return r;
}

}  // namespace fedlev
