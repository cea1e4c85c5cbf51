#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedlev/verify.hpp"

namespace fedlev {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST(PropertyResult, RecordAndMergeStayAudited) {
  PropertyResult a;
  a.record(TrialStatus::Success, 1, 0.0, 0.1);
  a.record(TrialStatus::Failure, 2, 0.3, 0.8);
  a.record(TrialStatus::NotApplicable, 3, 5.0);
  EXPECT_TRUE(a.audited());
  EXPECT_EQ(a.applicable(), 2u);
  EXPECT_EQ(a.worst_violation, 0.3);
  EXPECT_TRUE(std::isnan(a.measure[2]));
  PropertyResult b;
  b.record(TrialStatus::Success, 4);
  a.merge(b);
  EXPECT_EQ(a.trials, 4u);
  EXPECT_EQ(a.successes, 2u);
  EXPECT_TRUE(a.audited());
  a.trials += 1;
  EXPECT_FALSE(a.audited());
}

TEST(SuitePassed, RateAndApplicability) {
  PropertyResult r;
  for (int i = 0; i < 19; ++i) r.record(TrialStatus::Success, i);
  r.record(TrialStatus::Failure, 19);
  EXPECT_TRUE(suite_passed(r, 0.95));
  EXPECT_FALSE(suite_passed(r, 1.0));
  PropertyResult none;
  none.record(TrialStatus::NotApplicable, 0);
  EXPECT_FALSE(suite_passed(none, 0.0));
  EXPECT_EQ(suite_required_rate("embedding"), 0.95);
  EXPECT_EQ(suite_required_rate("lsq"), 1.0);
}

TEST(Generators, LowRankAndPlantedShapes) {
  const MatrixXd a = random_low_rank(20, 50, 4, 1);
  EXPECT_EQ(row_space(a).rank(), 4u);
  const auto inst = planted_classes(10, 40, 2, 1.0, 3);
  EXPECT_EQ(inst.a.rows(), 30);
  EXPECT_EQ(inst.labels.size(), 30u);
  EXPECT_LE(row_space(inst.a).rank(), 5u);
  EXPECT_EQ(random_low_rank(5, 6, 2, 9), random_low_rank(5, 6, 2, 9));
}

TEST(LeastSquares, FullSampleReproducesResidual) {
  const MatrixXd a = random_low_rank(12, 40, 3, 2);
  const VectorXd y = VectorXd::LinSpaced(12, -1.0, 1.0);
  const auto sample = sample_without_replacement(uniform_probabilities(40), 40, 1);
  const auto r = verify_lsq_reconstruction(a, y, sample);
  EXPECT_EQ(r.successes, 1u);
  EXPECT_TRUE(r.audited());
}

TEST(LeastSquares, RankLossIsNotApplicable) {
  MatrixXd a = MatrixXd::Zero(3, 4);
  a(0, 0) = 1;
  a(1, 1) = 1;
  a(2, 3) = 1;
  VectorXd p(4);
  p << 1, 1, 1, 0;
  const auto sample = sample_without_replacement(p, 2, 0);
  const auto r = verify_lsq_reconstruction(a, VectorXd::Ones(3), sample);
  EXPECT_EQ(r.not_applicable, 1u);
  EXPECT_EQ(r.applicable(), 0u);
}

TEST(GradientSandwich, LargeDistortionIsNotApplicable) {
  const MatrixXd a = random_low_rank(10, 30, 3, 4);
  const auto sample = sample_without_replacement(uniform_probabilities(30), 10, 2);
  const auto r = verify_gradient_sandwich(a, VectorXd::Ones(10), sample, 1.5, 5, 1);
  EXPECT_EQ(r.not_applicable, 5u);
}

TEST(Structure, FullUniformSamplePreservesEverything) {
  const auto inst = planted_classes(10, 60, 2, 2.0, 5);
  const StructureOptions opt{60, 3, 7, true};
  const auto sep = verify_separability_preservation(inst.a, inst.labels, opt);
  EXPECT_EQ(sep.failures, 0u);
  EXPECT_GT(sep.successes, 0u);
  const auto db = verify_db_preservation(inst.a, inst.labels, opt);
  EXPECT_EQ(db.failures, 0u);
  EXPECT_EQ(db.successes, 3u);
}

TEST(Suites, SmallRunsPassAndAreDeterministic) {
  for (const auto* name : {"embedding", "lsq", "gradsandwich", "separability", "db"}) {
    const auto r = run_suite(name, 5, 3);
    EXPECT_TRUE(r.audited()) << name;
    EXPECT_EQ(r.name, name);
    EXPECT_TRUE(suite_passed(r, suite_required_rate(name))) << name << ": " << r.successes << "/" << r.applicable();
  }
  const auto a = run_suite("lsq", 3, 11), b = run_suite("lsq", 3, 11);
  EXPECT_EQ(a.seeds, b.seeds);
  EXPECT_EQ(a.status, b.status);
  EXPECT_THROW(run_suite("nope", 1, 0), std::invalid_argument);
  EXPECT_EQ(suite_names().size(), 7u);
}

TEST(MarkerInclusion, FrequencyMatchesBinomialAndFloor) {
  // Two classes differing only at feature 0; feature 0 carries all class signal.
  MatrixXd a = MatrixXd::Zero(20, 10);
  std::vector<int> labels(20);
  for (int i = 0; i < 20; ++i) {
    labels[i] = i < 10 ? 0 : 1;
    a(i, 0) = i < 10 ? 1.0 : 0.0;
    a(i, 1 + i % 9) = 1.0;
  }
  const auto m = estimate_marker_inclusion(a, labels, 0, 3, 2000, 5, 0);
  EXPECT_EQ(m.trials, 2000u);
  EXPECT_NEAR(m.pi_hat, static_cast<double>(m.hits) / 2000.0, 1e-15);
  EXPECT_NEAR(m.sigma_hat, std::sqrt(m.pi_hat * (1 - m.pi_hat) / 2000.0), 1e-12);
  EXPECT_GT(m.floor, 0.0);
  EXPECT_TRUE(m.success);
}

}  // namespace
}  // namespace fedlev
