#include "fedlev/leverage.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "fedlev/random.hpp"

namespace fedlev {

RowSpace row_space(const Eigen::MatrixXd& a) {
  if (a.size() == 0 || a.cwiseAbs().maxCoeff() == 0.0) {
    throw LeverageError("leverage scores undefined for an all-zero matrix");
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cut = kRankTolerance * sv(0);
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > cut) ++r;
  return {svd.matrixV().leftCols(r), sv.head(r)};
}

LeverageScores exact_column_leverage(const RowSpace& rs) {
  LeverageScores out;
  out.scores = rs.basis.rowwise().squaredNorm();
  out.mode = LeverageScores::Mode::Exact;
  out.rank_estimate = rs.rank();
  return out;
}

namespace {

// A zero column has zero leverage in exact arithmetic; pin it against
// round-off from the factorization.
void zero_empty_columns(const Eigen::MatrixXd& a, Eigen::VectorXd& scores) {
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if ((a.col(j).array() == 0.0).all()) scores(j) = 0.0;
  }
}

}  // namespace

LeverageScores exact_column_leverage(const Eigen::MatrixXd& a) {
  auto out = exact_column_leverage(row_space(a));
  zero_empty_columns(a, out.scores);
  return out;
}

LeverageScores exact_column_leverage(const SparseBinaryMatrix& a) { return exact_column_leverage(a.to_dense()); }

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x736b65746368ULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd omega(rows, cols);
  // Column-major fill: column i is the sketch weight vector of row i of A.
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) omega(i, j) = normal(rng);
  }
  return omega;
}

LeverageScores scores_from_sketch(const Eigen::MatrixXd& b, std::size_t sketch_size) {
  // b is s_k x d; factor b^T = Q R with column pivoting to expose rank(b).
  const Eigen::MatrixXd bt = b.transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(bt);
  qr.setThreshold(kRankTolerance);
  const Eigen::Index r = qr.rank();
  LeverageScores out;
  out.mode = LeverageScores::Mode::Randomized;
  out.sketch_size = sketch_size;
  out.rank_estimate = static_cast<std::size_t>(r);
  if (r == 0) {
    out.scores = Eigen::VectorXd::Zero(bt.rows());
    return out;
  }
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(bt.rows(), r);
  q.applyOnTheLeft(qr.householderQ().setLength(r));
  out.scores = q.rowwise().squaredNorm();
  zero_empty_columns(b, out.scores);
  return out;
}

void check_sketch_size(std::size_t sketch_size) {
  if (sketch_size == 0) throw LeverageError("sketch size must be at least 1");
}

}  // namespace

LeverageScores approx_column_leverage(const SparseBinaryMatrix& a, std::size_t sketch_size, std::uint64_t seed) {
  check_sketch_size(sketch_size);
  const auto sk = static_cast<Eigen::Index>(sketch_size);
  const Eigen::MatrixXd omega = gaussian_matrix(sk, static_cast<Eigen::Index>(a.n_rows()), seed);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(sk, static_cast<Eigen::Index>(a.n_cols()));
  for (std::size_t i = 0; i < a.n_rows(); ++i) {
    const auto w = omega.col(static_cast<Eigen::Index>(i));
    for (auto j : a.row(i)) b.col(j) += w;
  }
  return scores_from_sketch(b, sketch_size);
}

LeverageScores approx_column_leverage(const Eigen::MatrixXd& a, std::size_t sketch_size, std::uint64_t seed) {
  check_sketch_size(sketch_size);
  const Eigen::MatrixXd omega = gaussian_matrix(static_cast<Eigen::Index>(sketch_size), a.rows(), seed);
  return scores_from_sketch(omega * a, sketch_size);
}

Eigen::VectorXd aggregate_scores(std::span<const ClientScores> clients) {
  if (clients.empty()) throw LeverageError("aggregate_scores: no clients");
  std::vector<const ClientScores*> order;
  for (const auto& c : clients) order.push_back(&c);
  std::sort(order.begin(), order.end(),
            [](const ClientScores* x, const ClientScores* y) { return x->client_id < y->client_id; });

  const Eigen::Index d = order.front()->scores.size();
  std::size_t n_total = 0;
  for (const auto* c : order) {
    if (c->scores.size() != d) throw LeverageError("aggregate_scores: score vectors differ in length");
    if (c->n == 0) throw LeverageError("aggregate_scores: client with zero cells");
    if ((c->scores.array() < 0.0).any() || !c->scores.allFinite()) {
      throw LeverageError("aggregate_scores: scores must be finite and nonnegative");
    }
    n_total += c->n;
  }
  Eigen::VectorXd global = Eigen::VectorXd::Zero(d);
  for (const auto* c : order) {
    const double w = static_cast<double>(c->n) / static_cast<double>(n_total);
    global += w * c->scores;
  }
  const double total = global.sum();
  if (!(total > 0.0)) throw LeverageError("aggregate_scores: total score is zero");
  return global / total;
}

Eigen::VectorXd uniform_probabilities(std::size_t d) {
  return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 1.0 / static_cast<double>(d));
}

FeatureSample sample_without_replacement(const Eigen::VectorXd& p, std::size_t s, std::uint64_t seed) {
  if (s == 0) throw LeverageError("sample size must be positive");
  if (!p.allFinite() || (p.array() < 0.0).any()) throw LeverageError("probabilities must be finite and nonnegative");
  const double total = p.sum();
  if (!(total > 0.0)) throw LeverageError("probabilities sum to zero");
  const Eigen::VectorXd probs = p / total;
  const auto support = static_cast<std::size_t>((probs.array() > 0.0).count());
  if (s > support) {
    throw LeverageError("cannot draw " + std::to_string(s) + " distinct features from a support of " +
                        std::to_string(support));
  }

  Rng rng = make_rng(seed, {0x6b657973ULL});
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto d = static_cast<std::size_t>(probs.size());
  std::vector<double> key(d);
  for (std::size_t j = 0; j < d; ++j) {
    double u = unif(rng);
    while (u == 0.0) u = unif(rng);
    const double pj = probs(static_cast<Eigen::Index>(j));
    key[j] = pj > 0.0 ? std::log(u) / pj : -std::numeric_limits<double>::infinity();
  }
  std::vector<SparseBinaryMatrix::Index> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](SparseBinaryMatrix::Index a, SparseBinaryMatrix::Index b) {
    return key[a] != key[b] ? key[a] > key[b] : a < b;
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(s - 1), idx.end(), better);
  idx.resize(s);
  std::sort(idx.begin(), idx.end());

  FeatureSample out;
  out.selected = std::move(idx);
  out.probs = probs;
  out.scale.resize(static_cast<Eigen::Index>(s));
  for (std::size_t m = 0; m < s; ++m) {
    out.scale(static_cast<Eigen::Index>(m)) =
        1.0 / std::sqrt(static_cast<double>(s) * probs(out.selected[m]));
  }
  return out;
}

Eigen::MatrixXd apply_sample(const Eigen::MatrixXd& a, const FeatureSample& sample, bool rescale) {
  if (static_cast<std::size_t>(a.cols()) != sample.d()) throw LeverageError("apply_sample: dimension mismatch");
  Eigen::MatrixXd out(a.rows(), static_cast<Eigen::Index>(sample.size()));
  for (std::size_t m = 0; m < sample.size(); ++m) {
    const auto k = static_cast<Eigen::Index>(m);
    out.col(k) = a.col(sample.selected[m]);
    if (rescale) out.col(k) *= sample.scale(k);
  }
  return out;
}

double check_subspace_embedding(const RowSpace& rs, const FeatureSample& sample) {
  if (static_cast<std::size_t>(rs.basis.rows()) != sample.d()) {
    throw LeverageError("check_subspace_embedding: dimension mismatch");
  }
  // With A = U S V^T, (AA^T)^{+/2} (AT)(AT)^T (AA^T)^{+/2} restricted to
  // col(A) is unitarily similar to W^T W where W = T^T V.
  const Eigen::Index r = rs.basis.cols();
  Eigen::MatrixXd w(static_cast<Eigen::Index>(sample.size()), r);
  for (std::size_t m = 0; m < sample.size(); ++m) {
    const auto k = static_cast<Eigen::Index>(m);
    w.row(k) = sample.scale(k) * rs.basis.row(sample.selected[m]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w.transpose() * w, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (lo <= kRankTolerance * std::max(1.0, hi)) return 1.0;
  return std::max(std::abs(hi - 1.0), std::abs(1.0 - lo));
}

double check_subspace_embedding(const Eigen::MatrixXd& a, const FeatureSample& sample) {
  return check_subspace_embedding(row_space(a), sample);
}

std::size_t embedding_sample_size(std::size_t rank, double eps, double delta) {
  const double r = static_cast<double>(rank);
  return static_cast<std::size_t>(std::ceil(4.0 * r * std::log(r / delta) / (eps * eps)));
}

}  // namespace fedlev
