#include "fedlev/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "fedlev/random.hpp"

namespace fedlev {

namespace {

constexpr std::uint64_t kPhase1Key = 0x706861736531ULL;
constexpr std::uint64_t kSampleKey = 0x73616d706c65ULL;
constexpr std::uint64_t kInitKey = 0x696e6974ULL;
constexpr std::uint64_t kProbeKey = 0x70726f6265ULL;
constexpr std::uint64_t kLocalKey = 0x6c6f63616cULL;

std::vector<const ClientShard*> sorted_by_id(std::span<const ClientShard> clients) {
  std::vector<const ClientShard*> out;
  for (const auto& c : clients) out.push_back(&c);
  std::sort(out.begin(), out.end(), [](const ClientShard* a, const ClientShard* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i]->client_id == out[i - 1]->client_id) throw FedError("duplicate client_id " + std::to_string(out[i]->client_id));
  }
  return out;
}

}  // namespace

std::size_t FedConfig::sample_size(std::size_t d) const {
  return static_cast<std::size_t>(std::floor(rho * static_cast<double>(d)));
}

double FedConfig::local_learning_rate(std::size_t s) const {
  if (lr_local) return *lr_local;
  if (s == 0) throw FedError("learning rate: empty feature sample");
  return kAutoLrScale / ((1.0 + lambda) * static_cast<double>(s));
}

void FedConfig::validate(std::size_t d) const {
  if (!(rho > 0.0 && rho <= 1.0)) throw FedError("rho must lie in (0, 1]");
  if (sample_size(d) < 1) throw FedError("rho * d must be at least 1");
  if (rounds == 0) throw FedError("rounds must be at least 1");
  if (local_steps == 0) throw FedError("local_steps must be at least 1");
  if (lr_local && (!(*lr_local >= 0.0) || !std::isfinite(*lr_local))) throw FedError("lr_local must be finite and nonnegative");
  if (!std::isfinite(lr_global)) throw FedError("lr_global must be finite");
  if (sketch_size == 0) throw FedError("sketch_size must be positive");
  if (batch_size == 0) throw FedError("batch_size must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw FedError("lambda must be finite and nonnegative");
  if (lambda > 0.0 && batch_size < 2) throw FedError("lambda > 0 needs batch_size of at least 2");
  if (probe_size == 0) throw FedError("probe_size must be positive");
  if (model.n_blocks == 0 || model.block_hidden == 0 || model.trunk_hidden == 0 || model.latent_dim == 0) {
    throw FedError("model sizes must be positive");
  }
}

// --- Ledger ------------------------------------------------------------------

std::uint64_t CommLedger::phase1_total() const {
  return std::accumulate(phase1_uplink.begin(), phase1_uplink.end(), std::uint64_t{0}) +
         std::accumulate(phase1_downlink.begin(), phase1_downlink.end(), std::uint64_t{0});
}

std::uint64_t CommLedger::phase2_total() const {
  std::uint64_t t = 0;
  for (const auto& r : round_uplink) t = std::accumulate(r.begin(), r.end(), t);
  for (const auto& r : round_downlink) t = std::accumulate(r.begin(), r.end(), t);
  return t;
}

void CommLedger::finalize() {
  total_uplink = std::accumulate(phase1_uplink.begin(), phase1_uplink.end(), std::uint64_t{0});
  for (const auto& r : round_uplink) total_uplink = std::accumulate(r.begin(), r.end(), total_uplink);
  total_downlink = std::accumulate(phase1_downlink.begin(), phase1_downlink.end(), std::uint64_t{0});
  for (const auto& r : round_downlink) total_downlink = std::accumulate(r.begin(), r.end(), total_downlink);
  total = total_uplink + total_downlink;
}

bool CommLedger::conserved() const {
  CommLedger copy = *this;
  copy.finalize();
  return copy.total_uplink == total_uplink && copy.total_downlink == total_downlink && copy.total == total &&
         total == phase1_total() + phase2_total();
}

// --- Phase 1 -----------------------------------------------------------------

FeatureSample phase1_select(std::span<const ClientShard> clients, double rho, std::size_t sketch_size,
                            std::uint64_t seed, CommLedger* ledger) {
  if (clients.empty()) throw FedError("phase 1: no clients");
  const auto order = sorted_by_id(clients);
  const std::size_t d = order.front()->matrix.n_cols();
  for (const auto* c : order) {
    if (c->matrix.n_cols() != d) throw FedError("phase 1: clients disagree on d");
  }
  if (!(rho > 0.0 && rho <= 1.0)) throw FedError("phase 1: rho must lie in (0, 1]");
  const auto s = static_cast<std::size_t>(std::floor(rho * static_cast<double>(d)));
  if (s == 0) throw FedError("phase 1: rho * d must be at least 1");

  std::vector<ClientScores> msgs;
  msgs.reserve(order.size());
  for (const auto* c : order) {
    if (c->n() == 0) throw FedError("phase 1: client " + std::to_string(c->client_id) + " has no cells");
    const auto seed_i = derive_seed(seed, {kPhase1Key, c->client_id});
    msgs.push_back({c->client_id, approx_column_leverage(c->matrix, sketch_size, seed_i).scores, c->n()});
  }
  const Eigen::VectorXd p = aggregate_scores(msgs);

  FeatureSample sample;
  if (s == d) {
    sample.selected.resize(d);
    std::iota(sample.selected.begin(), sample.selected.end(), 0);
    sample.probs = p;
    sample.scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d));
  } else {
    sample = sample_without_replacement(p, s, derive_seed(seed, {kSampleKey}));
  }

  if (ledger) {
    ledger->n_clients = order.size();
    ledger->d = d;
    ledger->s = s;
    ledger->phase1_uplink.assign(order.size(), kBytesPerValue * d);
    ledger->phase1_downlink.assign(order.size(), kBytesPerValue * s);
    ledger->finalize();
  }
  return sample;
}

// --- Phase 2 -----------------------------------------------------------------

std::vector<double> client_weights(std::span<const std::size_t> sizes) {
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (n == 0) throw FedError("client weights: no cells");
  std::vector<double> w;
  w.reserve(sizes.size());
  for (auto ni : sizes) w.push_back(static_cast<double>(ni) / static_cast<double>(n));
  return w;
}

void aggregate_updates(VaeParams& global, std::span<const VaeParams> deltas, std::span<const double> weights,
                       double lr_global) {
  if (deltas.size() != weights.size()) throw FedError("aggregate: deltas and weights differ in length");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(global.size()));
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (deltas[i].size() != global.size()) throw FedError("aggregate: update has the wrong shape");
    sum += weights[i] * deltas[i].values();
  }
  global.values() += lr_global * sum;
}

std::uint64_t local_seed(std::uint64_t master, std::uint32_t client_id, std::size_t round) {
  return derive_seed(master, {kLocalKey, client_id, round});
}

SubspaceSetup prepare_subspace(std::span<const ClientShard> clients, const FeatureSample& sample,
                               const FedConfig& cfg) {
  if (clients.empty()) throw FedError("phase 2: no clients");
  if (sample.size() == 0) throw FedError("phase 2: empty feature sample");
  const auto order = sorted_by_id(clients);
  const std::size_t d = order.front()->matrix.n_cols();
  if (sample.d() != d) throw FedError("phase 2: sample dimension does not match the clients");

  SubspaceSetup setup;
  std::vector<DepthMoments> moments;
  int max_batch = -1;
  for (const auto* c : order) {
    c->validate();
    if (c->matrix.n_cols() != d) throw FedError("phase 2: clients disagree on d");
    setup.client_ids.push_back(c->client_id);
    moments.push_back(depth_moments(c->cells));
    for (const auto& cell : c->cells) max_batch = std::max(max_batch, cell.batch_id);
  }
  setup.confounders = ConfounderEncoder::from_moments(moments, static_cast<std::size_t>(max_batch + 1));

  const Eigen::VectorXd no_scale;
  for (const auto* c : order) {
    setup.data.push_back(make_training_data(*c, sample.selected, cfg.rescale_inputs ? sample.scale : no_scale,
                                            setup.confounders));
  }
  setup.vae = make_vae_config(cfg.model, block_sizes_for_selection(sample.selected, d, cfg.model.n_blocks),
                              setup.confounders.dim(), cfg.lambda);

  // Probe cells: a seeded draw from the union of shards in client_id order.
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t i = 0; i < setup.data.size(); ++i) {
    for (std::size_t k = 0; k < setup.data[i].n(); ++k) pool.emplace_back(i, k);
  }
  Rng rng = make_rng(cfg.seed, {kProbeKey});
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(pool.size(), cfg.probe_size));
  std::sort(pool.begin(), pool.end());
  const auto m = static_cast<Eigen::Index>(pool.size());
  std::vector<Eigen::Triplet<double>> trip;
  setup.probe.c.resize(static_cast<Eigen::Index>(setup.confounders.dim()), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto [i, cell] = pool[static_cast<std::size_t>(k)];
    const auto& x = setup.data[i].x;
    for (Eigen::SparseMatrix<double>::InnerIterator it(x, static_cast<Eigen::Index>(cell)); it; ++it) {
      trip.emplace_back(it.row(), k, it.value());
    }
    setup.probe.c.col(k) = setup.data[i].c.col(static_cast<Eigen::Index>(cell));
  }
  setup.probe.x.resize(static_cast<Eigen::Index>(sample.size()), m);
  setup.probe.x.setFromTriplets(trip.begin(), trip.end());
  setup.probe_noise = step_noise(derive_seed(cfg.seed, {kProbeKey}), 0, setup.vae.latent_dim,
                                 static_cast<std::size_t>(m));
  return setup;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
// failure by index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

Phase2Result phase2_train(const SubspaceSetup& setup, const FedConfig& cfg, CommLedger* ledger, std::size_t workers,
                          const VaeParams* start) {
  const std::size_t n_clients = setup.data.size();
  if (n_clients == 0) throw FedError("phase 2: no clients");
  if (cfg.rounds == 0 || cfg.local_steps == 0) throw FedError("phase 2: rounds and local_steps must be at least 1");

  Phase2Result out;
  if (start) {
    if (!(start->config() == setup.vae)) throw FedError("phase 2: starting parameters have a different shape");
    out.params = *start;
  } else {
    out.params = init_params(setup.vae, derive_seed(cfg.seed, {kInitKey}));
  }

  std::vector<std::size_t> sizes;
  for (const auto& d : setup.data) sizes.push_back(d.n());
  const auto weights = client_weights(sizes);
  const std::uint64_t msg_bytes = kBytesPerValue * out.params.size();
  if (ledger) {
    ledger->params_count = out.params.size();
    ledger->round_uplink.clear();
    ledger->round_downlink.clear();
  }

  const double lr = cfg.local_learning_rate(setup.vae.input_dim);
  std::vector<LocalTrainResult> results(n_clients);
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const VaeParams& global = out.params;
    parallel_for(n_clients, workers, [&](std::size_t i) {
      LocalTrainOptions opt;
      opt.steps = cfg.local_steps;
      opt.learning_rate = lr;
      opt.batch_size = cfg.batch_size;
      opt.lambda = cfg.lambda;
      opt.seed = local_seed(cfg.seed, setup.client_ids[i], round);
      try {
        results[i] = local_train(global, setup.data[i], opt);
      } catch (const VaeError& e) {
        throw FedError("round " + std::to_string(round) + ", client " + std::to_string(setup.client_ids[i]) + ": " +
                       e.what());
      }
    });

    std::vector<VaeParams> deltas;
    deltas.reserve(n_clients);
    RoundHistory h;
    h.round = round;
    for (auto& r : results) {
      deltas.push_back(std::move(r.delta));
      h.client_loss.push_back(r.last_loss);
    }
    aggregate_updates(out.params, deltas, weights, cfg.lr_global);
    if (!out.params.all_finite()) {
      throw FedError("round " + std::to_string(round) + ": aggregated parameters are not finite");
    }
    h.probe = loss(out.params, setup.probe, setup.probe_noise, setup.probe.size() >= 2 ? cfg.lambda : 0.0);
    out.history.push_back(std::move(h));

    if (ledger) {
      ledger->round_uplink.emplace_back(n_clients, msg_bytes);
      ledger->round_downlink.emplace_back(n_clients, msg_bytes);
    }
  }
  if (ledger) ledger->finalize();
  return out;
}

FederatedRun run_federated(std::span<const ClientShard> clients, const FedConfig& cfg, std::size_t workers) {
  if (clients.empty()) throw FedError("no clients");
  cfg.validate(clients.front().matrix.n_cols());
  FederatedRun run;
  run.sample = phase1_select(clients, cfg.rho, cfg.sketch_size, cfg.seed, &run.ledger);
  run.setup = prepare_subspace(clients, run.sample, cfg);
  run.phase2 = phase2_train(run.setup, cfg, &run.ledger, workers);
  return run;
}

// --- Communication arithmetic ------------------------------------------------

std::size_t vae_param_count(const VaeArch& arch, std::size_t s, std::size_t confounder_dim) {
  const std::size_t nb = std::min(arch.n_blocks, s);
  const std::size_t hb = arch.block_hidden;
  const std::size_t ht = arch.trunk_hidden;
  const std::size_t z = arch.latent_dim;
  const std::size_t input_layers = hb * s + nb * hb + s * ht + s;
  const std::size_t core = ht * nb * hb + ht + 2 * (z * ht + z) + ht * (z + confounder_dim) + ht;
  return input_layers + core;
}

CommSummary comm_report(const FedConfig& cfg, std::size_t d, std::size_t confounder_dim) {
  CommSummary r;
  r.d = d;
  r.s = cfg.sample_size(d);
  if (r.s == 0) throw FedError("comm report: rho * d must be at least 1");
  const auto& a = cfg.model;
  r.params_count = vae_param_count(a, r.s, confounder_dim);
  r.baseline_params_count = vae_param_count(a, d, confounder_dim);
  r.input_layer_params = a.block_hidden * r.s + std::min(a.n_blocks, r.s) * a.block_hidden + r.s * a.trunk_hidden + r.s;
  r.mb_per_round = static_cast<double>(kBytesPerValue * r.params_count) / static_cast<double>(1 << 20);
  r.total_gb = r.mb_per_round * static_cast<double>(cfg.rounds) / 1024.0;
  r.reduction = 1.0 - static_cast<double>(r.params_count) / static_cast<double>(r.baseline_params_count);
  return r;
}

}  // namespace fedlev
