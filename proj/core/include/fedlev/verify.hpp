#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fedlev/fedsim.hpp"
#include "fedlev/leverage.hpp"
#include "fedlev/metrics.hpp"
#include "fedlev/synthgen.hpp"

namespace fedlev {

enum class TrialStatus { Success, Failure, NotApplicable };

/// Tally of a property check. Non-applicable trials count neither way.
struct PropertyResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t successes = 0;
  std::size_t failures = 0;
  std::size_t not_applicable = 0;
  /// Largest amount by which any failing or passing trial exceeded its bound (0 if none).
  double worst_violation = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<TrialStatus> status;
  /// Per-trial measured quantity (distortion, residual gap, ...), NaN if not applicable.
  std::vector<double> measure;
  std::string note;

  void record(TrialStatus s, std::uint64_t seed, double violation = 0.0, double value = 0.0);
  void merge(const PropertyResult& other);
  /// successes + failures + not_applicable == trials and vector lengths agree.
  bool audited() const;
  std::size_t applicable() const { return successes + failures; }
};

// --- Instance generators -----------------------------------------------------

/// G1 (n x r) * G2 (r x d) with standard normal factors.
Eigen::MatrixXd random_low_rank(std::size_t n, std::size_t d, std::size_t rank, std::uint64_t seed);

struct LabeledInstance {
  Eigen::MatrixXd a;
  std::vector<int> labels;
};

/// Three classes of `per_class` rows: class mean (Gaussian, scaled by
/// `separation`) plus a shared rank-`noise_rank` Gaussian perturbation, so
/// rank(A) <= 3 + noise_rank.
LabeledInstance planted_classes(std::size_t per_class, std::size_t d, std::size_t noise_rank, double separation,
                                std::uint64_t seed);

// --- Single-instance oracles -------------------------------------------------

/// Checks ||A T w~* - y||^2 == ||A w* - y||^2 with w* = A^+ y and w~* = (AT)^+ y.
/// Success when the residuals agree to 1e-8 relative to ||A w* - y||^2.
/// Non-applicable when T^T V loses rank.
PropertyResult verify_lsq_reconstruction(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                         const FeatureSample& sample, std::uint64_t seed = 0);

/// For `probes` Gaussian w~: (1-e)||grad f(Tw~)||^2 <= ||grad f~(w~)||^2 <= (1+e)||grad f(Tw~)||^2
/// with e = eps_hat measured on this very sample. All probes are
/// non-applicable when eps_hat >= 1.
PropertyResult verify_gradient_sandwich(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                        const FeatureSample& sample, double eps_hat, std::size_t probes,
                                        std::uint64_t seed);

/// Relative slack used by the inequality checks to absorb round-off.
inline constexpr double kInequalitySlack = 1e-10;
/// Pairs with Delta below this floor are not tested.
inline constexpr double kSeparabilityFloor = 1e-6;

struct StructureOptions {
  std::size_t s = 0;            // features kept per trial
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  bool uniform = false;         // uniform instead of exact-leverage probabilities
};

/// Per trial: sample with rescaling, measure eps_hat, require every class pair
/// to satisfy (1-2e) Delta <= Delta~ <= (1+2e) Delta on the rows of A T.
PropertyResult verify_separability_preservation(const Eigen::MatrixXd& a, std::span<const int> labels,
                                                const StructureOptions& options);

/// Same with |DB~ - DB| <= 2 e DB.
PropertyResult verify_db_preservation(const Eigen::MatrixXd& a, std::span<const int> labels,
                                      const StructureOptions& options);

struct MarkerInclusion {
  std::size_t feature = 0;
  int cls = 0;
  std::size_t s = 0;
  std::size_t trials = 0;
  std::size_t hits = 0;
  double pi_hat = 0.0;
  double sigma_hat = 0.0;
  /// 1 - exp(-(s/r) d_j^2 / sum_l d_l^2), d = class mean minus rest mean.
  double floor = 0.0;
  bool success = false;
};

/// Monte Carlo inclusion frequency of `feature` under exact-leverage sampling
/// of size s. `cls` < 0 picks the class with the largest mean at the feature.
MarkerInclusion estimate_marker_inclusion(const Eigen::MatrixXd& a, std::span<const int> labels,
                                          std::size_t feature, std::size_t s, std::size_t trials,
                                          std::uint64_t seed, int cls = -1);

// --- Loss decomposition ------------------------------------------------------

struct DecompositionRun {
  double rho = 0.0;
  std::uint64_t seed = 0;
  std::size_t s = 0;
  /// Probe loss per round, and its reconstruction term divided by s.
  std::vector<double> total;
  std::vector<double> recon_per_feature;
  bool diverged = false;
};

struct DecompositionReport {
  std::vector<DecompositionRun> runs;
  /// Median probe total decreases overall and never rises more than 5% after round 3.
  PropertyResult monotone;
  /// Final per-feature reconstruction loss at each rho within `band` (relative) of rho = 1.
  PropertyResult band;
  double band_width = 0.0;
};

DecompositionReport verify_error_decomposition(const ScenarioData& data, std::span<const double> rhos,
                                               std::span<const std::uint64_t> seeds, const FedConfig& base,
                                               double band = 0.25, std::size_t workers = 1);

// --- Suites ------------------------------------------------------------------

/// Named generated-instance suites: embedding, lsq, gradsandwich,
/// separability, db, marker. `trials` of 0 selects the suite default.
PropertyResult run_suite(std::string_view suite, std::size_t trials, std::uint64_t seed);

std::vector<std::string_view> suite_names();

/// Fraction of applicable trials that must succeed for a suite to pass:
/// 0.95 for the probabilistic suites (embedding, separability, db), 1 otherwise.
double suite_required_rate(std::string_view suite);

/// Audited, at least one applicable trial, and the success rate reaches `required_rate`.
bool suite_passed(const PropertyResult& result, double required_rate);

}  // namespace fedlev
