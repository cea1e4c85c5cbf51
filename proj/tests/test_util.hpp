#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "fedlev/dataset.hpp"

namespace fedlev::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fedlev_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline SparseBinaryMatrix random_binary(std::size_t n, std::size_t d, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(density);
  std::vector<std::vector<SparseBinaryMatrix::Index>> rows(n);
  for (auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) {
      if (on(rng)) r.push_back(static_cast<SparseBinaryMatrix::Index>(j));
    }
  }
  return SparseBinaryMatrix::from_rows(d, std::move(rows));
}

inline std::vector<CellRecord> cells_for(const SparseBinaryMatrix& m, const std::string& prefix, int batch = 0) {
  std::vector<CellRecord> cells(m.n_rows());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].cell_id = prefix + std::to_string(i);
    cells[i].label = static_cast<int>(i % 3);
    cells[i].batch_id = batch;
    cells[i].depth = m.row_nnz(i);
  }
  return cells;
}

}  // namespace fedlev::testing
