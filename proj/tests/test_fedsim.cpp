#include <gtest/gtest.h>

#include <algorithm>

#include "fedlev/fedsim.hpp"
#include "test_util.hpp"

namespace fedlev {
namespace {

std::vector<ClientShard> small_federation(std::size_t n_clients, std::size_t d = 60) {
  std::vector<ClientShard> shards(n_clients);
  for (std::size_t c = 0; c < n_clients; ++c) {
    shards[c].client_id = static_cast<std::uint32_t>(c);
    shards[c].matrix = testing::random_binary(20 + 5 * c, d, 0.2, 100 + c);
    shards[c].cells = testing::cells_for(shards[c].matrix, "c" + std::to_string(c) + "_", static_cast<int>(c));
  }
  return shards;
}

FedConfig small_config() {
  FedConfig cfg;
  cfg.rounds = 3;
  cfg.local_steps = 4;
  cfg.lr_local = 0.05;
  cfg.rho = 0.5;
  cfg.sketch_size = 16;
  cfg.batch_size = 8;
  cfg.probe_size = 32;
  cfg.seed = 11;
  cfg.model.n_blocks = 4;
  cfg.model.block_hidden = 4;
  cfg.model.trunk_hidden = 8;
  cfg.model.latent_dim = 2;
  return cfg;
}

TEST(FedConfig, SampleSizeAndLearningRate) {
  FedConfig cfg;
  cfg.rho = 0.2;
  EXPECT_EQ(cfg.sample_size(10'000), 2000u);
  EXPECT_EQ(cfg.sample_size(9), 1u);
  cfg.lambda = 0.0;
  EXPECT_DOUBLE_EQ(cfg.local_learning_rate(2000), 0.01);
  cfg.lambda = 1.0;
  EXPECT_DOUBLE_EQ(cfg.local_learning_rate(2000), 0.005);
  cfg.lr_local = 0.3;
  EXPECT_DOUBLE_EQ(cfg.local_learning_rate(2000), 0.3);
  cfg.lr_local.reset();
  EXPECT_THROW(cfg.local_learning_rate(0), FedError);
}

TEST(FedConfig, ValidateRejectsBadSettings) {
  FedConfig cfg;
  EXPECT_NO_THROW(cfg.validate(100));
  cfg.rho = 0.0;
  EXPECT_THROW(cfg.validate(100), FedError);
  cfg.rho = 1.5;
  EXPECT_THROW(cfg.validate(100), FedError);
  cfg.rho = 0.001;
  EXPECT_THROW(cfg.validate(100), FedError);  // s = 0
  cfg = FedConfig{};
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(100), FedError);
  cfg.lambda = 0.0;
  EXPECT_NO_THROW(cfg.validate(100));
  cfg.lr_local = -0.1;
  EXPECT_THROW(cfg.validate(100), FedError);
  cfg = FedConfig{};
  cfg.rounds = 0;
  EXPECT_THROW(cfg.validate(100), FedError);
}

TEST(Phase1, FullSampleKeepsEveryFeatureUnscaled) {
  const auto fed = small_federation(3);
  const auto sample = phase1_select(fed, 1.0, 16, 4);
  ASSERT_EQ(sample.size(), 60u);
  for (std::size_t j = 0; j < 60; ++j) EXPECT_EQ(sample.selected[j], j);
  EXPECT_TRUE(sample.scale.isOnes());
  EXPECT_NEAR(sample.probs.sum(), 1.0, 1e-12);
}

TEST(Phase1, OrderFreeAndLedgerCharged) {
  auto fed = small_federation(3);
  CommLedger ledger;
  const auto a = phase1_select(fed, 0.5, 16, 4, &ledger);
  std::reverse(fed.begin(), fed.end());
  const auto b = phase1_select(fed, 0.5, 16, 4);
  EXPECT_EQ(a.selected, b.selected);
  EXPECT_EQ(a.probs, b.probs);
  EXPECT_EQ(ledger.phase1_uplink, (std::vector<std::uint64_t>(3, 4 * 60)));
  EXPECT_EQ(ledger.phase1_downlink, (std::vector<std::uint64_t>(3, 4 * 30)));
  EXPECT_TRUE(ledger.conserved());
}

TEST(Phase1, RejectsBadInput) {
  EXPECT_THROW(phase1_select(std::vector<ClientShard>{}, 0.5, 16, 1), FedError);
  auto fed = small_federation(2);
  fed[1].client_id = 0;
  EXPECT_THROW(phase1_select(fed, 0.5, 16, 1), FedError);
  fed = small_federation(2);
  EXPECT_THROW(phase1_select(fed, 0.0, 16, 1), FedError);
}

TEST(Aggregate, WeightedSumInGivenOrder) {
  VaeConfig c;
  c.input_dim = 2;
  c.block_sizes = {2};
  c.block_hidden = 1;
  c.trunk_hidden = 1;
  c.latent_dim = 1;
  c.confounder_dim = 1;
  VaeParams global(c);
  global.values().setConstant(1.0);
  VaeParams a = global.zeros_like(), b = global.zeros_like();
  a.values().setConstant(2.0);
  b.values().setConstant(-4.0);
  const std::vector<VaeParams> deltas{a, b};
  const auto w = client_weights(std::vector<std::size_t>{3, 1});
  EXPECT_EQ(w, (std::vector<double>{0.75, 0.25}));
  aggregate_updates(global, deltas, w, 0.5);
  // 1 + 0.5 * (0.75 * 2 - 0.25 * 4) = 1.25
  EXPECT_TRUE((global.values().array() == 1.25).all());
  EXPECT_THROW(aggregate_updates(global, deltas, std::vector<double>{1.0}, 1.0), FedError);
  EXPECT_THROW(client_weights(std::vector<std::size_t>{0, 0}), FedError);
}

TEST(Phase2, SingleClientEqualsSequentialLocalTraining) {
  const auto fed = small_federation(1);
  const auto cfg = small_config();
  const auto sample = phase1_select(fed, cfg.rho, cfg.sketch_size, cfg.seed);
  const auto setup = prepare_subspace(fed, sample, cfg);
  VaeParams p = init_params(setup.vae, 5);
  const auto fedrun = phase2_train(setup, cfg, nullptr, 1, &p);

  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    LocalTrainOptions opt;
    opt.steps = cfg.local_steps;
    opt.learning_rate = *cfg.lr_local;
    opt.batch_size = cfg.batch_size;
    opt.lambda = cfg.lambda;
    opt.seed = local_seed(cfg.seed, 0, r);
    p = local_train(p, setup.data[0], opt).params;
  }
  EXPECT_EQ(fedrun.params.values(), p.values());
}

TEST(Phase2, OneFullBatchStepIsWeightedGradientStep) {
  const auto fed = small_federation(3);
  auto cfg = small_config();
  cfg.rounds = 1;
  cfg.local_steps = 1;
  cfg.batch_size = 1000;
  cfg.lr_global = 0.7;
  const auto sample = phase1_select(fed, cfg.rho, cfg.sketch_size, cfg.seed);
  const auto setup = prepare_subspace(fed, sample, cfg);
  const VaeParams start = init_params(setup.vae, 5);
  const auto out = phase2_train(setup, cfg, nullptr, 1, &start);

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(start.size()));
  const double n = 20 + 25 + 30;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<std::size_t> all(setup.data[i].n());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    const auto g = grad(start, gather_batch(setup.data[i], all),
                        step_noise(local_seed(cfg.seed, static_cast<std::uint32_t>(i), 1), 0, 2, all.size()),
                        cfg.lambda);
    const Eigen::VectorXd delta = -(*cfg.lr_local * g.values());
    sum += (static_cast<double>(all.size()) / n) * delta;
  }
  const Eigen::VectorXd expected = start.values() + cfg.lr_global * sum;
  EXPECT_EQ(out.params.values(), expected);
}

TEST(Phase2, ClientOrderAndWorkersDoNotMatter) {
  auto fed = small_federation(4);
  const auto cfg = small_config();
  const auto a = run_federated(fed, cfg, 1);
  std::rotate(fed.begin(), fed.begin() + 2, fed.end());
  const auto b = run_federated(fed, cfg, 3);
  EXPECT_EQ(a.phase2.params.values(), b.phase2.params.values());
  ASSERT_EQ(a.phase2.history.size(), b.phase2.history.size());
  for (std::size_t r = 0; r < a.phase2.history.size(); ++r) {
    EXPECT_EQ(a.phase2.history[r].probe.total, b.phase2.history[r].probe.total);
  }
}

TEST(Phase2, ZeroLocalRateKeepsTrajectoryFlat) {
  const auto fed = small_federation(2);
  auto cfg = small_config();
  cfg.lr_local = 0.0;
  const auto sample = phase1_select(fed, cfg.rho, cfg.sketch_size, cfg.seed);
  const auto setup = prepare_subspace(fed, sample, cfg);
  const auto init = init_params(setup.vae, 2);
  const auto out = phase2_train(setup, cfg, nullptr, 1, &init);
  EXPECT_EQ(out.params.values(), init.values());
  for (const auto& h : out.history) EXPECT_EQ(h.probe.total, out.history.front().probe.total);
}

TEST(Phase2, TrainingLowersProbeLoss) {
  const auto fed = small_federation(3);
  auto cfg = small_config();
  cfg.rounds = 10;
  cfg.local_steps = 10;
  const auto run = run_federated(fed, cfg);
  EXPECT_LT(run.phase2.history.back().probe.total, run.phase2.history.front().probe.total);
}

TEST(Phase2, StartWithWrongShapeIsRejected) {
  const auto fed = small_federation(2);
  const auto cfg = small_config();
  const auto sample = phase1_select(fed, cfg.rho, cfg.sketch_size, cfg.seed);
  const auto setup = prepare_subspace(fed, sample, cfg);
  auto other = setup.vae;
  other.latent_dim = 3;
  const auto bad = init_params(other, 1);
  EXPECT_THROW(phase2_train(setup, cfg, nullptr, 1, &bad), FedError);
}

TEST(Ledger, ConservedAndMatchesArithmetic) {
  const auto fed = small_federation(3);
  const auto cfg = small_config();
  const auto run = run_federated(fed, cfg);
  const auto& L = run.ledger;
  EXPECT_TRUE(L.conserved());
  const std::uint64_t p = run.phase2.params.size();
  EXPECT_EQ(L.params_count, p);
  EXPECT_EQ(L.round_uplink.size(), cfg.rounds);
  const std::uint64_t n = 3, d = 60, s = 30;
  EXPECT_EQ(L.total, n * 4 * (d + s) + cfg.rounds * n * 2 * 4 * p);
  EXPECT_EQ(L.total_uplink, n * 4 * d + cfg.rounds * n * 4 * p);

  CommLedger broken = L;
  broken.total += 1;
  EXPECT_FALSE(broken.conserved());
}

TEST(CommReport, ParamCountMatchesLayout) {
  VaeArch arch;
  arch.n_blocks = 5;
  arch.block_hidden = 3;
  arch.trunk_hidden = 7;
  arch.latent_dim = 4;
  const std::size_t s = 23;
  const std::vector<std::size_t> blocks{5, 5, 5, 4, 4};
  const VaeLayout layout(make_vae_config(arch, blocks, 3, 1.0));
  EXPECT_EQ(vae_param_count(arch, s, 3), layout.size());
}

TEST(CommReport, DefaultArchitectureFrozenValues) {
  FedConfig cfg;  // rho 0.2, 30 rounds, 20 blocks of 32, trunk 64, latent 10
  const auto r = comm_report(cfg, 10'000, 6);
  EXPECT_EQ(r.s, 2000u);
  EXPECT_EQ(r.params_count, 238'052u);
  EXPECT_EQ(r.baseline_params_count, 1'014'052u);
  EXPECT_NEAR(r.reduction, 1.0 - 238052.0 / 1014052.0, 1e-15);
  EXPECT_NEAR(100.0 * r.reduction, 76.5, 0.05);
  EXPECT_DOUBLE_EQ(r.mb_per_round, 4.0 * 238052.0 / 1048576.0);
  EXPECT_DOUBLE_EQ(r.total_gb, r.mb_per_round * 30.0 / 1024.0);
  EXPECT_EQ(r.input_layer_params, 32u * 2000 + 20 * 32 + 2000 * 64 + 2000);
}

}  // namespace
}  // namespace fedlev
