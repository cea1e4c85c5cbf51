#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fedlev/dataset.hpp"
#include "test_util.hpp"

namespace fedlev {
namespace {

using testing::TempDir;
using Kind = MatrixMarketError::Kind;

SparseBinaryMatrix small() { return SparseBinaryMatrix::from_rows(4, {{0, 2}, {}, {3, 1, 0}}); }

TEST(SparseBinaryMatrix, FromRowsSortsAndCounts) {
  const auto m = small();
  EXPECT_EQ(m.n_rows(), 3u);
  EXPECT_EQ(m.n_cols(), 4u);
  EXPECT_EQ(m.nnz(), 5u);
  EXPECT_EQ(std::vector<SparseBinaryMatrix::Index>(m.row(2).begin(), m.row(2).end()),
            (std::vector<SparseBinaryMatrix::Index>{0, 1, 3}));
  EXPECT_TRUE(m.contains(0, 2));
  EXPECT_FALSE(m.contains(1, 2));
  EXPECT_DOUBLE_EQ(m.density(), 5.0 / 12.0);
}

TEST(SparseBinaryMatrix, RejectsBadStructure) {
  EXPECT_THROW(SparseBinaryMatrix::from_rows(3, {{1, 1}}), DataError);
  EXPECT_THROW(SparseBinaryMatrix::from_rows(3, {{3}}), DataError);
  EXPECT_THROW(SparseBinaryMatrix(1, 3, {0, 2}, {2, 1}), DataError);
  EXPECT_THROW(SparseBinaryMatrix(2, 3, {0, 1}, {0}), DataError);
  EXPECT_THROW(SparseBinaryMatrix(1, 3, {0, 2}, {0}), DataError);
}

TEST(SparseBinaryMatrix, TransposeMatchesDense) {
  const auto m = testing::random_binary(17, 23, 0.2, 4);
  EXPECT_TRUE(m.transpose().to_dense().isApprox(m.to_dense().transpose()));
  EXPECT_EQ(m.transpose().transpose(), m);
}

TEST(SparseBinaryMatrix, SelectColumnsRenumbersInGivenOrder) {
  const auto m = small();
  const std::vector<SparseBinaryMatrix::Index> cols{3, 0};
  const auto s = m.select_columns(cols);
  Eigen::MatrixXd expected(3, 2);
  expected << 0, 1, 0, 0, 1, 1;
  EXPECT_EQ(s.to_dense(), expected);
}

TEST(SparseBinaryMatrix, ColumnCountsAndVstack) {
  const auto a = small();
  const auto b = SparseBinaryMatrix::from_rows(4, {{1}});
  const std::vector<SparseBinaryMatrix> parts{a, b};
  const auto v = SparseBinaryMatrix::vstack(parts);
  EXPECT_EQ(v.n_rows(), 4u);
  EXPECT_EQ(v.column_counts(), (std::vector<std::size_t>{2, 2, 1, 1}));
  const std::vector<SparseBinaryMatrix> bad{a, SparseBinaryMatrix::from_rows(5, {{4}})};
  EXPECT_THROW(SparseBinaryMatrix::vstack(bad), DataError);
}

TEST(SparseBinaryMatrix, SelectRows) {
  const auto m = small();
  const std::vector<std::size_t> rows{2, 0};
  const auto s = m.select_rows(rows);
  EXPECT_EQ(s.n_rows(), 2u);
  EXPECT_EQ(s.row_nnz(0), 3u);
  EXPECT_EQ(s.row_nnz(1), 2u);
}

TEST(MatrixMarket, RoundTripIsCanonical) {
  const auto m = testing::random_binary(30, 40, 0.1, 9);
  std::stringstream ss;
  write_matrix_market(ss, m);
  const std::string first = ss.str();
  std::stringstream in(first);
  const auto back = read_matrix_market(in);
  EXPECT_EQ(back, m);
  std::stringstream again;
  write_matrix_market(again, back);
  EXPECT_EQ(again.str(), first);
}

TEST(MatrixMarket, AcceptsCommentsAndUnorderedEntries) {
  std::stringstream in(
      "%%MatrixMarket matrix coordinate pattern general\n% note\n2 3 3\n2 3\n1 1\n% mid\n1 2\n");
  const auto m = read_matrix_market(in);
  EXPECT_EQ(m, SparseBinaryMatrix::from_rows(3, {{0, 1}, {2}}));
}

MatrixMarketError parse_error(const std::string& text) {
  std::stringstream in(text);
  try {
    read_matrix_market(in);
  } catch (const MatrixMarketError& e) {
    return e;
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return MatrixMarketError(Kind::Io, 0, "");
}

TEST(MatrixMarket, ErrorsCarryKindAndLine) {
  const std::string head = "%%MatrixMarket matrix coordinate pattern general\n";
  auto e = parse_error("%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 1.0\n");
  EXPECT_EQ(e.kind(), Kind::MalformedHeader);
  EXPECT_EQ(e.line(), 1u);

  e = parse_error(head + "2 2 2\n1 1\n3 1\n");
  EXPECT_EQ(e.kind(), Kind::OutOfRange);
  EXPECT_EQ(e.line(), 4u);

  e = parse_error(head + "2 2 2\n1 1\n1 x\n");
  EXPECT_EQ(e.kind(), Kind::MalformedEntry);
  EXPECT_EQ(e.line(), 4u);

  e = parse_error(head + "2 2 2\n1 1\n1 1\n");
  EXPECT_EQ(e.kind(), Kind::DuplicateEntry);
  EXPECT_EQ(e.line(), 4u);

  e = parse_error(head + "2 2 3\n1 1\n2 2\n");
  EXPECT_EQ(e.kind(), Kind::CountMismatch);

  e = parse_error(head + "% only comments\n");
  EXPECT_EQ(e.kind(), Kind::MalformedHeader);

  e = parse_error(head + "2 2 1\n0 1\n");
  EXPECT_EQ(e.kind(), Kind::OutOfRange);
}

TEST(CellsCsv, RoundTrip) {
  const auto m = testing::random_binary(5, 8, 0.3, 2);
  auto cells = testing::cells_for(m, "c", 1);
  std::stringstream ss;
  write_cells_csv(ss, cells);
  EXPECT_EQ(read_cells_csv(ss), cells);
}

TEST(CellsCsv, RejectsMalformedRows) {
  std::stringstream bad_header("id,label,batch,depth\n");
  EXPECT_THROW(read_cells_csv(bad_header), DataError);
  std::stringstream bad_row("cell_id,label,batch_id,depth\na,1,0\n");
  EXPECT_THROW(read_cells_csv(bad_row), DataError);
  std::stringstream bad_number("cell_id,label,batch_id,depth\na,1,0,-3\n");
  EXPECT_THROW(read_cells_csv(bad_number), DataError);
}

TEST(ClientShard, ValidateChecksDepthAndCounts) {
  ClientShard s;
  s.matrix = testing::random_binary(6, 10, 0.3, 1);
  s.cells = testing::cells_for(s.matrix, "x");
  EXPECT_NO_THROW(s.validate());
  s.cells[2].depth += 1;
  EXPECT_THROW(s.validate(), DataError);
  s.cells.pop_back();
  EXPECT_THROW(s.validate(), DataError);
}

TEST(Federation, WriteAndLoadRoundTrip) {
  TempDir dir("fed");
  std::vector<ClientShard> shards(2);
  for (std::uint32_t c = 0; c < 2; ++c) {
    shards[c].client_id = c;
    shards[c].matrix = testing::random_binary(7 + c, 12, 0.25, 10 + c);
    shards[c].cells = testing::cells_for(shards[c].matrix, "c" + std::to_string(c) + "_", static_cast<int>(c));
  }
  const auto manifest = write_federation(dir.path(), shards, "homogeneous", 42);
  EXPECT_EQ(manifest.d, 12u);
  const auto loaded_manifest = load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded_manifest.scenario, "homogeneous");
  EXPECT_EQ(loaded_manifest.seed, 42u);
  const auto back = load_federation(loaded_manifest);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(back[c].client_id, shards[c].client_id);
    EXPECT_EQ(back[c].matrix, shards[c].matrix);
    EXPECT_EQ(back[c].cells, shards[c].cells);
  }
}

TEST(Federation, RejectsDimensionMismatch) {
  std::vector<ClientShard> shards(2);
  shards[0].matrix = testing::random_binary(3, 5, 0.5, 1);
  shards[0].cells = testing::cells_for(shards[0].matrix, "a");
  shards[1].client_id = 1;
  shards[1].matrix = testing::random_binary(3, 6, 0.5, 2);
  shards[1].cells = testing::cells_for(shards[1].matrix, "b");
  EXPECT_THROW(validate_federation(shards), DataError);
}

TEST(Partition, IidIsDisjointCoveringAndBalanced) {
  const auto m = testing::random_binary(23, 9, 0.3, 5);
  const auto cells = testing::cells_for(m, "p");
  const auto shards = partition_dataset(m, cells, IidUniform{4}, 3);
  ASSERT_EQ(shards.size(), 4u);
  std::set<std::string> seen;
  for (const auto& s : shards) {
    EXPECT_NO_THROW(s.validate());
    EXPECT_TRUE(s.n() == 5 || s.n() == 6);
    for (const auto& c : s.cells) {
      EXPECT_TRUE(seen.insert(c.cell_id).second);
      EXPECT_EQ(c.batch_id, static_cast<int>(s.client_id));
    }
  }
  EXPECT_EQ(seen.size(), 23u);
  EXPECT_EQ(partition_dataset(m, cells, IidUniform{4}, 3)[2].cells, shards[2].cells);
}

TEST(Partition, ByTableHonoursCounts) {
  const auto m = testing::random_binary(30, 9, 0.3, 6);
  const auto cells = testing::cells_for(m, "t");  // labels cycle 0,1,2
  const ByTable table{{{3, 0, 2}, {7, 10, 1}}};
  const auto shards = partition_dataset(m, cells, table, 8);
  ASSERT_EQ(shards.size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<std::size_t> count(3, 0);
    for (const auto& cell : shards[c].cells) ++count[static_cast<std::size_t>(cell.label)];
    EXPECT_EQ(count, table.counts[c]);
  }
  EXPECT_THROW(partition_dataset(m, cells, ByTable{{{11, 0, 0}}}, 8), DataError);
}

}  // namespace
}  // namespace fedlev
