#include <algorithm>
#include <numeric>

#include "fedlev/dataset.hpp"
#include "fedlev/random.hpp"

namespace fedlev {

namespace {

ClientShard make_shard(const SparseBinaryMatrix& matrix, const std::vector<CellRecord>& cells,
                       std::vector<std::size_t> rows, std::uint32_t client) {
  std::sort(rows.begin(), rows.end());
  ClientShard shard;
  shard.client_id = client;
  shard.matrix = matrix.select_rows(rows);
  shard.cells.reserve(rows.size());
  for (std::size_t r : rows) {
    CellRecord rec = cells[r];
    rec.batch_id = static_cast<int>(client);
    shard.cells.push_back(std::move(rec));
  }
  return shard;
}

}  // namespace

std::vector<ClientShard> partition_dataset(const SparseBinaryMatrix& matrix,
                                           const std::vector<CellRecord>& cells,
                                           const PartitionScheme& scheme, std::uint64_t seed) {
  if (matrix.n_rows() != cells.size()) throw DataError("partition: matrix rows != cell records");
  Rng rng = make_rng(seed, {0x7061727469ULL});
  std::vector<ClientShard> shards;

  if (const auto* iid = std::get_if<IidUniform>(&scheme)) {
    if (iid->n_clients == 0) throw DataError("partition: n_clients must be positive");
    if (iid->n_clients > cells.size()) throw DataError("partition: more clients than cells");
    std::vector<std::size_t> perm(cells.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t n = cells.size(), N = iid->n_clients;
    std::size_t start = 0;
    for (std::size_t c = 0; c < N; ++c) {
      const std::size_t size = n / N + (c < n % N ? 1 : 0);
      std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                    perm.begin() + static_cast<std::ptrdiff_t>(start + size));
      shards.push_back(make_shard(matrix, cells, std::move(rows), static_cast<std::uint32_t>(c)));
      start += size;
    }
    return shards;
  }

  const auto& table = std::get<ByTable>(scheme).counts;
  if (table.empty()) throw DataError("partition: empty count table");
  int max_label = -1;
  for (const auto& c : cells) max_label = std::max(max_label, c.label);
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].label < 0) throw DataError("partition: negative label code");
    by_label[static_cast<std::size_t>(cells[i].label)].push_back(i);
  }
  for (auto& idx : by_label) std::shuffle(idx.begin(), idx.end(), rng);

  std::vector<std::size_t> taken(by_label.size(), 0);
  for (std::size_t c = 0; c < table.size(); ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t label = 0; label < table[c].size(); ++label) {
      const std::size_t want = table[c][label];
      if (want == 0) continue;
      const std::size_t have = label < by_label.size() ? by_label[label].size() : 0;
      if (taken.size() <= label || taken[label] + want > have) {
        throw DataError("partition: client " + std::to_string(c) + " requests " + std::to_string(want) +
                        " cells of label " + std::to_string(label) + " but only " +
                        std::to_string(have - (label < taken.size() ? taken[label] : 0)) + " remain");
      }
      rows.insert(rows.end(), by_label[label].begin() + static_cast<std::ptrdiff_t>(taken[label]),
                  by_label[label].begin() + static_cast<std::ptrdiff_t>(taken[label] + want));
      taken[label] += want;
    }
    shards.push_back(make_shard(matrix, cells, std::move(rows), static_cast<std::uint32_t>(c)));
  }
  return shards;
}

}  // namespace fedlev
