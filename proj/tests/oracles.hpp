#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include <Eigen/Dense>

// Brute-force metric references: pair enumeration and full distance tables.
namespace fedlev::testing {

using Eigen::MatrixXd;

// Rand index adjusted by its permutation expectation, counted pair by pair.
inline double brute_ari(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double both = 0, in_a = 0, in_b = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      in_a += sa;
      in_b += sb;
      pairs += 1;
    }
  }
  const double expected = in_a * in_b / pairs;
  const double max_index = 0.5 * (in_a + in_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

inline double dist(const MatrixXd& x, std::size_t i, std::size_t j) {
  return (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
}

inline double brute_silhouette(const MatrixXd& x, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> by;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      by[labels[j]].first += dist(x, i, j);
      by[labels[j]].second += 1;
    }
    if (by.find(labels[i]) == by.end()) continue;  // singleton scores 0
    const double a = by[labels[i]].first / by[labels[i]].second;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [k, v] : by) {
      if (k != labels[i]) b = std::min(b, v.first / v.second);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

inline double brute_db(const MatrixXd& x, const std::vector<int>& labels) {
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  std::vector<Eigen::RowVectorXd> mu;
  std::vector<double> sigma;
  for (const auto& [k, idx] : members) {
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(x.cols());
    for (auto i : idx) m += x.row(static_cast<Eigen::Index>(i));
    m /= static_cast<double>(idx.size());
    double ss = 0;
    for (auto i : idx) ss += (x.row(static_cast<Eigen::Index>(i)) - m).squaredNorm();
    mu.push_back(m);
    sigma.push_back(std::sqrt(ss / static_cast<double>(idx.size())));
  }
  double total = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    double worst = 0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
      if (i != j) worst = std::max(worst, (sigma[i] + sigma[j]) / (mu[i] - mu[j]).norm());
    }
    total += worst;
  }
  return total / static_cast<double>(mu.size());
}

}  // namespace fedlev::testing
