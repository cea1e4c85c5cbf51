#include "fedlev/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedlev/random.hpp"

namespace fedlev {

void SynthParams::validate() const {
  if (n_types == 0) throw DataError("synth: n_types must be positive");
  if (peaks_per_type == 0) throw DataError("synth: peaks_per_type must be positive");
  if (d == 0) throw DataError("synth: d must be positive");
  if (signal_end() > d) throw DataError("synth: n_types*peaks_per_type + shared_peaks exceeds d");
  if (!(snr > 0.0 && snr <= 1.0)) throw DataError("synth: snr must lie in (0, 1]");
  if (snr < 1.0 && signal_end() == d) throw DataError("synth: snr < 1 requires background features");
  if (!(depth_mean > 0.0) || !std::isfinite(depth_mean)) throw DataError("synth: depth_mean must be positive");
  if (type_counts.size() != n_types) throw DataError("synth: type_counts must have n_types entries");
  for (auto c : type_counts) {
    if (c == 0) throw DataError("synth: type counts must be positive");
  }
}

SynthDataset generate(const SynthParams& params, std::string_view id_prefix, std::size_t first_cell) {
  params.validate();
  const std::size_t K = params.n_types;
  const std::size_t own = params.peaks_per_type;
  const std::size_t shared_begin = K * own;
  const std::size_t n_signal = own + params.shared_peaks;
  const std::size_t bg_begin = params.signal_end();
  const std::size_t n_background = params.d - bg_begin;

  std::size_t n = 0;
  for (auto c : params.type_counts) n += c;

  SynthDataset out;
  out.cells.reserve(n);
  out.fragments.reserve(n);
  std::vector<std::vector<SparseBinaryMatrix::Index>> rows(n);

  std::size_t cell = 0;
  for (std::size_t type = 0; type < K; ++type) {
    for (std::size_t c = 0; c < params.type_counts[type]; ++c, ++cell) {
      const std::size_t global = first_cell + cell;
      Rng rng = make_rng(params.seed, {global});
      std::poisson_distribution<std::uint64_t> depth(params.depth_mean);
      std::bernoulli_distribution to_signal(params.snr);
      std::uniform_int_distribution<std::size_t> pick_signal(0, n_signal - 1);
      std::uniform_int_distribution<std::size_t> pick_background(0, n_background == 0 ? 0 : n_background - 1);

      const std::uint64_t fragments = depth(rng);
      auto& row = rows[cell];
      row.reserve(static_cast<std::size_t>(fragments));
      for (std::uint64_t f = 0; f < fragments; ++f) {
        std::size_t feature;
        if (to_signal(rng)) {
          const std::size_t k = pick_signal(rng);
          feature = k < own ? type * own + k : shared_begin + (k - own);
        } else {
          feature = bg_begin + pick_background(rng);
        }
        row.push_back(static_cast<SparseBinaryMatrix::Index>(feature));
      }
      std::sort(row.begin(), row.end());
      row.erase(std::unique(row.begin(), row.end()), row.end());

      CellRecord rec;
      rec.cell_id = std::string(id_prefix) + "_" + std::to_string(global);
      rec.label = static_cast<int>(type);
      rec.batch_id = 0;
      rec.depth = row.size();
      out.cells.push_back(std::move(rec));
      out.fragments.push_back(fragments);
    }
  }
  out.matrix = SparseBinaryMatrix::from_rows(params.d, std::move(rows));
  return out;
}

Scenario parse_scenario(std::string_view name) {
  if (name == "homogeneous") return Scenario::Homogeneous;
  if (name == "varying_depth") return Scenario::VaryingDepth;
  if (name == "confounded_hetero") return Scenario::ConfoundedHetero;
  if (name == "imbalance") return Scenario::Imbalance;
  throw DataError("unknown scenario '" + std::string(name) + "'");
}

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Homogeneous: return "homogeneous";
    case Scenario::VaryingDepth: return "varying_depth";
    case Scenario::ConfoundedHetero: return "confounded_hetero";
    case Scenario::Imbalance: return "imbalance";
  }
  return "unknown";
}

ScenarioPreset make_preset(Scenario scenario, const SynthParams& base) {
  constexpr std::size_t kClients = 5;
  ScenarioPreset preset;
  preset.scenario = scenario;
  switch (scenario) {
    case Scenario::Homogeneous:
      for (std::size_t c = 0; c < kClients; ++c) {
        preset.clients.push_back({base.snr, base.depth_mean, std::vector<std::size_t>(base.n_types, 2000)});
      }
      break;
    case Scenario::VaryingDepth:
      for (std::size_t c = 0; c < kClients; ++c) {
        preset.clients.push_back(
            {base.snr, 3000.0 + 1000.0 * static_cast<double>(c), std::vector<std::size_t>(base.n_types, 2000)});
      }
      break;
    case Scenario::ConfoundedHetero: {
      if (base.n_types != 5) throw DataError("confounded_hetero preset requires 5 cell types");
      // Columns MONO, NEU, CMP, MEGA, ERY; each client shifts the row left by one.
      const std::vector<std::size_t> first{5000, 4000, 3000, 2000, 1000};
      for (std::size_t c = 0; c < kClients; ++c) {
        std::vector<std::size_t> counts(5);
        for (std::size_t t = 0; t < 5; ++t) counts[t] = first[(t + c) % 5];
        preset.clients.push_back({0.4 + 0.1 * static_cast<double>(c), base.depth_mean, counts});
      }
      break;
    }
    case Scenario::Imbalance: {
      if (base.n_types != 5) throw DataError("imbalance preset requires 5 cell types");
      // Pooled counts MONO 8000, NEU 5000, CMP 500, MEGA 5000, ERY 5000 split evenly.
      const std::vector<std::size_t> pooled{8000, 5000, 500, 5000, 5000};
      std::vector<std::size_t> per_client(5);
      for (std::size_t t = 0; t < 5; ++t) per_client[t] = pooled[t] / kClients;
      for (std::size_t c = 0; c < kClients; ++c) {
        preset.clients.push_back({base.snr, base.depth_mean, per_client});
      }
      break;
    }
  }
  return preset;
}

ScenarioData build_scenario(const ScenarioPreset& preset, double scale, const SynthParams& base) {
  if (!(scale > 0.0 && scale <= 1.0)) throw DataError("scenario: scale must lie in (0, 1]");
  ScenarioData out;
  out.preset = preset;
  for (std::size_t c = 0; c < preset.clients.size(); ++c) {
    for (auto& count : out.preset.clients[c].type_counts) {
      if (count == 0) continue;
      const auto scaled = static_cast<std::size_t>(std::llround(static_cast<double>(count) * scale));
      if (scaled < 10) {
        throw DataError("scenario: scale " + std::to_string(scale) + " leaves client " + std::to_string(c) +
                        " with fewer than 10 cells of some type");
      }
      count = scaled;
    }
  }

  std::size_t first_cell = 0;
  for (std::size_t c = 0; c < out.preset.clients.size(); ++c) {
    const auto& spec = out.preset.clients[c];
    SynthParams p = base;
    p.snr = spec.snr;
    p.depth_mean = spec.depth_mean;
    p.type_counts = spec.type_counts;
    p.seed = derive_seed(base.seed, {0x636c69656e74ULL, c});
    auto data = generate(p, "c" + std::to_string(c), first_cell);
    for (auto& cell : data.cells) cell.batch_id = static_cast<int>(c);
    first_cell += data.cells.size();

    ClientShard shard;
    shard.client_id = static_cast<std::uint32_t>(c);
    shard.matrix = std::move(data.matrix);
    shard.cells = std::move(data.cells);
    out.shards.push_back(std::move(shard));

    const auto stem = "client_" + std::to_string(c);
    out.manifest.clients.push_back({stem + ".mtx", stem + ".cells.csv"});
  }
  out.manifest.d = base.d;
  out.manifest.scenario = std::string(scenario_name(preset.scenario));
  out.manifest.seed = base.seed;
  return out;
}

}  // namespace fedlev
