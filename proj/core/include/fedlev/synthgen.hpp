#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fedlev/dataset.hpp"

namespace fedlev {

/// Canonical names of the five hematopoietic cell types, indexed by label code.
inline constexpr std::string_view kCellTypeNames[] = {"MONO", "NEU", "CMP", "MEGA", "ERY"};

/// Planted-peak generator parameters.
///
/// Feature layout: [0, K*peaks_per_type) holds contiguous type-specific
/// blocks, then shared_peaks features common to all types, then background.
struct SynthParams {
  std::size_t n_types = 5;
  std::size_t d = 10'000;
  std::size_t peaks_per_type = 200;
  std::size_t shared_peaks = 500;
  double snr = 0.8;
  double depth_mean = 3'000.0;
  std::vector<std::size_t> type_counts{1000, 1000, 1000, 1000, 1000};
  std::uint64_t seed = 0;

  /// Throws DataError on invariant violations.
  void validate() const;

  std::size_t signal_end() const { return n_types * peaks_per_type + shared_peaks; }
  std::size_t type_block_begin(std::size_t type) const { return type * peaks_per_type; }
};

struct SynthDataset {
  SparseBinaryMatrix matrix;
  std::vector<CellRecord> cells;
  /// Pre-binarization fragment count per cell.
  std::vector<std::uint64_t> fragments;
};

/// Cells are emitted grouped by type in label order. Per-cell randomness is
/// derived from (seed, first_cell + i) so output does not depend on scheduling.
SynthDataset generate(const SynthParams& params, std::string_view id_prefix = "cell",
                      std::size_t first_cell = 0);

enum class Scenario { Homogeneous, VaryingDepth, ConfoundedHetero, Imbalance };

Scenario parse_scenario(std::string_view name);
std::string_view scenario_name(Scenario s);

struct ClientSynthSpec {
  double snr = 0.8;
  double depth_mean = 3'000.0;
  std::vector<std::size_t> type_counts;
};

/// Full-scale per-client settings of a named preset.
struct ScenarioPreset {
  Scenario scenario = Scenario::Homogeneous;
  std::vector<ClientSynthSpec> clients;
};

/// Builds the full-scale preset. `base` supplies the feature layout, the snr
/// for presets that do not vary it, and the depth for presets that do not
/// vary depth.
ScenarioPreset make_preset(Scenario scenario, const SynthParams& base = {});

struct ScenarioData {
  ScenarioPreset preset;  // already scaled
  /// Planned file layout (client_<i>.mtx / client_<i>.cells.csv, relative).
  DatasetManifest manifest;
  std::vector<ClientShard> shards;
};

/// Scales every (client, type) count by `scale` (rounded to nearest) and
/// generates each client with its own seed substream. Throws DataError if
/// scale is outside (0, 1] or any nonzero count falls below 10.
ScenarioData build_scenario(const ScenarioPreset& preset, double scale, const SynthParams& base);

}  // namespace fedlev
