#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "fedlev/sparse_matrix.hpp"

namespace fedlev {

/// Per-cell metadata. depth is the row's nonzero count in the full,
/// pre-selection matrix and is never recomputed after feature sampling.
struct CellRecord {
  std::string cell_id;
  int label = 0;
  int batch_id = 0;
  std::uint64_t depth = 0;

  friend bool operator==(const CellRecord&, const CellRecord&) = default;
};

/// One client's private data. All shards of a federation share n_cols.
struct ClientShard {
  std::uint32_t client_id = 0;
  SparseBinaryMatrix matrix;
  std::vector<CellRecord> cells;

  std::size_t n() const { return cells.size(); }

  /// Throws DataError if row count, cell count or depths disagree.
  void validate() const;
};

/// Throws DataError unless every shard validates and all share the same d.
void validate_federation(const std::vector<ClientShard>& shards);

struct DatasetManifest {
  struct ClientFiles {
    std::filesystem::path matrix;
    std::filesystem::path cells;
  };
  std::vector<ClientFiles> clients;
  std::size_t d = 0;
  std::string scenario;
  std::uint64_t seed = 0;
};

// --- Matrix Market -----------------------------------------------------------

class MatrixMarketError : public DataError {
 public:
  enum class Kind { Io, MalformedHeader, MalformedEntry, OutOfRange, DuplicateEntry, CountMismatch };

  MatrixMarketError(Kind kind, std::size_t line, const std::string& what);

  Kind kind() const { return kind_; }
  /// 1-based line number of the offending input line (0 for I/O errors).
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

/// Reads "%%MatrixMarket matrix coordinate pattern general" (1-indexed).
SparseBinaryMatrix read_matrix_market(std::istream& in);
SparseBinaryMatrix load_matrix(const std::filesystem::path& path);

/// Writes canonical form: header, size line, entries in row-major order.
void write_matrix_market(std::ostream& out, const SparseBinaryMatrix& m);
void write_matrix(const std::filesystem::path& path, const SparseBinaryMatrix& m);

// --- Cell metadata CSV (cell_id,label,batch_id,depth) ------------------------

std::vector<CellRecord> read_cells_csv(std::istream& in);
std::vector<CellRecord> load_cells(const std::filesystem::path& path);
void write_cells_csv(std::ostream& out, const std::vector<CellRecord>& cells);
void write_cells(const std::filesystem::path& path, const std::vector<CellRecord>& cells);

/// Recomputes depth from the matrix row sums.
void assign_depths(const SparseBinaryMatrix& m, std::vector<CellRecord>& cells);

// --- Manifest JSON -----------------------------------------------------------

/// Relative paths in the manifest resolve against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Loads every client's files and checks d agreement. Client ids follow
/// manifest order.
std::vector<ClientShard> load_federation(const DatasetManifest& manifest);

/// Writes client_<i>.mtx / client_<i>.cells.csv plus manifest.json under dir.
DatasetManifest write_federation(const std::filesystem::path& dir, const std::vector<ClientShard>& shards,
                                 const std::string& scenario, std::uint64_t seed);

// --- Partitioning ------------------------------------------------------------

struct IidUniform {
  std::size_t n_clients = 1;
};

/// counts[client][label] cells of each label go to each client.
struct ByTable {
  std::vector<std::vector<std::size_t>> counts;
};

using PartitionScheme = std::variant<IidUniform, ByTable>;

/// Splits a pooled dataset into disjoint client shards, deterministic in seed.
/// Within each shard rows keep their original relative order. Each cell's
/// batch_id becomes its client index.
std::vector<ClientShard> partition_dataset(const SparseBinaryMatrix& matrix,
                                           const std::vector<CellRecord>& cells,
                                           const PartitionScheme& scheme, std::uint64_t seed);

}  // namespace fedlev
