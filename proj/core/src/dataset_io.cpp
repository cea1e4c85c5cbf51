#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "fedlev/dataset.hpp"

namespace fedlev {

namespace fs = std::filesystem;
using Kind = MatrixMarketError::Kind;

MatrixMarketError::MatrixMarketError(Kind kind, std::size_t line, const std::string& what)
    : DataError(line > 0 ? "line " + std::to_string(line) + ": " + what : what), kind_(kind), line_(line) {}

void ClientShard::validate() const {
  if (matrix.n_rows() != cells.size()) {
    throw DataError("client " + std::to_string(client_id) + ": matrix has " +
                    std::to_string(matrix.n_rows()) + " rows but " + std::to_string(cells.size()) +
                    " cell records");
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].depth != matrix.row_nnz(i)) {
      throw DataError("client " + std::to_string(client_id) + ": depth of cell '" + cells[i].cell_id +
                      "' does not match its row sum");
    }
  }
}

void validate_federation(const std::vector<ClientShard>& shards) {
  if (shards.empty()) throw DataError("federation has no clients");
  const std::size_t d = shards.front().matrix.n_cols();
  for (const auto& s : shards) {
    s.validate();
    if (s.matrix.n_cols() != d) throw DataError("clients disagree on feature count d");
  }
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

SparseBinaryMatrix read_matrix_market(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw MatrixMarketError(Kind::MalformedHeader, 1, "empty input");
  ++lineno;
  {
    auto toks = split_ws(line);
    if (toks.size() != 5 || toks[0] != "%%MatrixMarket" || lower(std::string(toks[1])) != "matrix" ||
        lower(std::string(toks[2])) != "coordinate" || lower(std::string(toks[3])) != "pattern" ||
        lower(std::string(toks[4])) != "general") {
      throw MatrixMarketError(Kind::MalformedHeader, lineno,
                              "expected '%%MatrixMarket matrix coordinate pattern general'");
    }
  }

  std::size_t n_rows = 0, n_cols = 0, n_entries = 0;
  bool have_size = false;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty() || toks[0].front() == '%') continue;
    if (toks.size() != 3 || !parse_number(toks[0], n_rows) || !parse_number(toks[1], n_cols) ||
        !parse_number(toks[2], n_entries)) {
      throw MatrixMarketError(Kind::MalformedHeader, lineno, "malformed size line");
    }
    have_size = true;
    break;
  }
  if (!have_size) throw MatrixMarketError(Kind::MalformedHeader, lineno, "missing size line");

  struct Entry {
    std::size_t row, col, line;
  };
  std::vector<Entry> entries;
  entries.reserve(n_entries);
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty() || toks[0].front() == '%') continue;
    std::size_t r = 0, c = 0;
    if (toks.size() != 2 || !parse_number(toks[0], r) || !parse_number(toks[1], c)) {
      throw MatrixMarketError(Kind::MalformedEntry, lineno, "expected two integer indices");
    }
    if (r < 1 || r > n_rows || c < 1 || c > n_cols) {
      throw MatrixMarketError(Kind::OutOfRange, lineno,
                              "entry (" + std::to_string(r) + "," + std::to_string(c) +
                                  ") outside declared " + std::to_string(n_rows) + "x" +
                                  std::to_string(n_cols));
    }
    entries.push_back({r - 1, c - 1, lineno});
  }
  if (entries.size() != n_entries) {
    throw MatrixMarketError(Kind::CountMismatch, lineno,
                            "declared " + std::to_string(n_entries) + " entries, found " +
                                std::to_string(entries.size()));
  }

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.row, a.col, a.line) < std::tie(b.row, b.col, b.line);
  });
  std::vector<std::size_t> offsets(n_rows + 1, 0);
  std::vector<SparseBinaryMatrix::Index> cols;
  cols.reserve(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (k > 0 && entries[k].row == entries[k - 1].row && entries[k].col == entries[k - 1].col) {
      throw MatrixMarketError(Kind::DuplicateEntry, entries[k].line,
                              "duplicate entry (" + std::to_string(entries[k].row + 1) + "," +
                                  std::to_string(entries[k].col + 1) + "), first seen on line " +
                                  std::to_string(entries[k - 1].line));
    }
    ++offsets[entries[k].row + 1];
    cols.push_back(static_cast<SparseBinaryMatrix::Index>(entries[k].col));
  }
  for (std::size_t i = 0; i < n_rows; ++i) offsets[i + 1] += offsets[i];
  return SparseBinaryMatrix(n_rows, n_cols, std::move(offsets), std::move(cols));
}

SparseBinaryMatrix load_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MatrixMarketError(Kind::Io, 0, "cannot open " + path.string());
  return read_matrix_market(in);
}

void write_matrix_market(std::ostream& out, const SparseBinaryMatrix& m) {
  out << "%%MatrixMarket matrix coordinate pattern general\n";
  out << m.n_rows() << ' ' << m.n_cols() << ' ' << m.nnz() << '\n';
  for (std::size_t i = 0; i < m.n_rows(); ++i) {
    for (auto j : m.row(i)) out << (i + 1) << ' ' << (j + 1) << '\n';
  }
}

void write_matrix(const fs::path& path, const SparseBinaryMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_matrix_market(out, m);
}

std::vector<CellRecord> read_cells_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("cell metadata: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "cell_id,label,batch_id,depth") {
    throw DataError("cell metadata: expected header 'cell_id,label,batch_id,depth'");
  }
  std::vector<CellRecord> cells;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos;) {
      fields.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    fields.push_back(rest);
    CellRecord rec;
    if (fields.size() != 4 || fields[0].empty() || !parse_number(fields[1], rec.label) ||
        !parse_number(fields[2], rec.batch_id) || !parse_number(fields[3], rec.depth)) {
      throw DataError("cell metadata: malformed row on line " + std::to_string(lineno));
    }
    rec.cell_id = std::string(fields[0]);
    cells.push_back(std::move(rec));
  }
  return cells;
}

std::vector<CellRecord> load_cells(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_cells_csv(in);
}

void write_cells_csv(std::ostream& out, const std::vector<CellRecord>& cells) {
  out << "cell_id,label,batch_id,depth\n";
  for (const auto& c : cells) {
    out << c.cell_id << ',' << c.label << ',' << c.batch_id << ',' << c.depth << '\n';
  }
}

void write_cells(const fs::path& path, const std::vector<CellRecord>& cells) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_cells_csv(out, cells);
}

void assign_depths(const SparseBinaryMatrix& m, std::vector<CellRecord>& cells) {
  if (m.n_rows() != cells.size()) throw DataError("assign_depths: row/cell count mismatch");
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i].depth = m.row_nnz(i);
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  DatasetManifest m;
  try {
    for (const auto& c : j.at("clients")) {
      fs::path mtx = c.at("matrix").get<std::string>();
      fs::path cells = c.at("cells").get<std::string>();
      m.clients.push_back({mtx.is_absolute() ? mtx : base / mtx, cells.is_absolute() ? cells : base / cells});
    }
    m.d = j.at("d").get<std::size_t>();
    m.scenario = j.value("scenario", "");
    m.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  for (const auto& c : m.clients) {
    if (!fs::exists(c.matrix)) throw DataError("manifest references missing file " + c.matrix.string());
    if (!fs::exists(c.cells)) throw DataError("manifest references missing file " + c.cells.string());
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  nlohmann::json j;
  j["clients"] = nlohmann::json::array();
  const fs::path base = path.parent_path();
  for (const auto& c : manifest.clients) {
    j["clients"].push_back({{"matrix", fs::relative(c.matrix, base).generic_string()},
                            {"cells", fs::relative(c.cells, base).generic_string()}});
  }
  j["d"] = manifest.d;
  j["scenario"] = manifest.scenario;
  j["seed"] = manifest.seed;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<ClientShard> load_federation(const DatasetManifest& manifest) {
  std::vector<ClientShard> shards;
  for (std::size_t i = 0; i < manifest.clients.size(); ++i) {
    ClientShard s;
    s.client_id = static_cast<std::uint32_t>(i);
    s.matrix = load_matrix(manifest.clients[i].matrix);
    s.cells = load_cells(manifest.clients[i].cells);
    if (s.matrix.n_cols() != manifest.d) {
      throw DataError("client " + std::to_string(i) + " has " + std::to_string(s.matrix.n_cols()) +
                      " features; manifest declares d=" + std::to_string(manifest.d));
    }
    shards.push_back(std::move(s));
  }
  validate_federation(shards);
  return shards;
}

DatasetManifest write_federation(const fs::path& dir, const std::vector<ClientShard>& shards,
                                 const std::string& scenario, std::uint64_t seed) {
  validate_federation(shards);
  fs::create_directories(dir);
  DatasetManifest m;
  m.d = shards.front().matrix.n_cols();
  m.scenario = scenario;
  m.seed = seed;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    const auto stem = "client_" + std::to_string(i);
    DatasetManifest::ClientFiles files{dir / (stem + ".mtx"), dir / (stem + ".cells.csv")};
    write_matrix(files.matrix, shards[i].matrix);
    write_cells(files.cells, shards[i].cells);
    m.clients.push_back(std::move(files));
  }
  write_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace fedlev
