#include "cpl/pool.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "cpl/errors.hpp"

namespace cpl {
namespace {

constexpr char kMagic[4] = {'C', 'P', 'L', '1'};

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw FormatError("truncated header");
  return static_cast<std::uint32_t>(buf[0]) |
         (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) |
         (static_cast<std::uint32_t>(buf[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char buf[4] = {static_cast<unsigned char>(v & 0xFF),
                                static_cast<unsigned char>((v >> 8) & 0xFF),
                                static_cast<unsigned char>((v >> 16) & 0xFF),
                                static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

double assemble_f64_le(const unsigned char* b) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
  return std::bit_cast<double>(bits);
}

void emit_f64_le(unsigned char* b, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
}

double parse_double_field(const std::string& field, Index row) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  while (ptr != last && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
  if (ec != std::errc() || ptr != last)
    throw FormatError("row " + std::to_string(row) + ": unparsable field '" +
                      field + "'");
  return value;
}

long parse_int_field(const std::string& field, Index row) {
  long value = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  while (ptr != last && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
  if (ec != std::errc() || ptr != last)
    throw FormatError("row " + std::to_string(row) +
                      ": unparsable integer '" + field + "'");
  return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

EmbeddingPool load_csv(const std::filesystem::path& path,
                       bool csv_label_column) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    const std::size_t n_values =
        csv_label_column ? fields.size() - 1 : fields.size();
    if (csv_label_column) {
      if (fields.size() < 2)
        throw FormatError("row " + std::to_string(row) +
                          ": label column requires at least 2 fields");
      const long label = parse_int_field(fields.back(), row);
      if (label < 0)
        throw ConsistencyError("row " + std::to_string(row) +
                               ": negative label");
      labels.push_back(static_cast<int>(label));
    }
    std::vector<double> values(n_values);
    for (std::size_t j = 0; j < n_values; ++j)
      values[j] = parse_double_field(fields[j], row);
    if (!rows.empty() && values.size() != rows.front().size())
      throw FormatError("row " + std::to_string(row) + ": ragged row");
    rows.push_back(std::move(values));
    ++row;
  }
  if (rows.empty()) throw ConsistencyError("empty pool: no data rows");
  Matrix vectors(static_cast<Index>(rows.size()),
                 static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < vectors.rows(); ++i)
    for (Index j = 0; j < vectors.cols(); ++j)
      vectors(i, j) = rows[static_cast<std::size_t>(i)]
                          [static_cast<std::size_t>(j)];
  std::optional<std::vector<int>> eval_labels;
  if (csv_label_column) eval_labels = std::move(labels);
  return make_pool(std::move(vectors), std::move(eval_labels));
}

}  // namespace

EmbeddingPool make_pool(Matrix vectors,
                        std::optional<std::vector<int>> eval_labels) {
  if (vectors.rows() < 1) throw ConsistencyError("empty pool: N = 0");
  if (vectors.cols() < 1) throw ConsistencyError("empty pool: dim = 0");
  for (Index i = 0; i < vectors.rows(); ++i) {
    if (!vectors.row(i).allFinite())
      throw ConsistencyError("data error: non-finite value at row " +
                             std::to_string(i));
  }
  if (eval_labels) {
    if (static_cast<Index>(eval_labels->size()) != vectors.rows())
      throw ConsistencyError("eval labels misaligned with pool");
    for (int label : *eval_labels)
      if (label < 0) throw ConsistencyError("negative eval label");
  }
  return EmbeddingPool{std::move(vectors), std::move(eval_labels)};
}

CenterSet make_center_set(std::vector<Index> indices, std::vector<int> labels,
                          Vector margin_lb, Index n_points) {
  if (indices.size() != labels.size() ||
      static_cast<Index>(indices.size()) != margin_lb.size())
    throw ConsistencyError("center set fields misaligned");
  std::set<Index> seen;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= n_points)
      throw ConsistencyError("center index " + std::to_string(indices[i]) +
                             " out of range");
    if (!seen.insert(indices[i]).second)
      throw ConsistencyError("duplicate center index " +
                             std::to_string(indices[i]));
    if (labels[i] < 0) throw ConsistencyError("negative center label");
    if (!(margin_lb[static_cast<Index>(i)] >= 0.0))
      throw ConsistencyError("negative margin bound at center " +
                             std::to_string(indices[i]));
  }
  return CenterSet{std::move(indices), std::move(labels),
                   std::move(margin_lb)};
}

Matrix load_packed_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad magic in " + path.string());
  const std::uint32_t rows = read_u32_le(in);
  const std::uint32_t cols = read_u32_le(in);
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  std::vector<unsigned char> buf(static_cast<std::size_t>(cols) * 8);
  for (std::uint32_t i = 0; i < rows; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (!in) throw FormatError("truncated payload in " + path.string());
    for (std::uint32_t j = 0; j < cols; ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) =
          assemble_f64_le(buf.data() + static_cast<std::size_t>(j) * 8);
  }
  return m;
}

void save_packed_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kMagic, 4);
  write_u32_le(out, static_cast<std::uint32_t>(m.rows()));
  write_u32_le(out, static_cast<std::uint32_t>(m.cols()));
  std::vector<unsigned char> buf(static_cast<std::size_t>(m.cols()) * 8);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j)
      emit_f64_le(buf.data() + static_cast<std::size_t>(j) * 8, m(i, j));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

EmbeddingPool load_embeddings(const std::filesystem::path& path,
                              PoolFormat format, bool csv_label_column) {
  if (format == PoolFormat::csv) return load_csv(path, csv_label_column);
  Matrix vectors = load_packed_matrix(path);
  if (vectors.rows() == 0) throw ConsistencyError("empty pool: N = 0");
  return make_pool(std::move(vectors));
}

void save_embeddings(const std::filesystem::path& path,
                     const EmbeddingPool& pool) {
  save_packed_matrix(path, pool.vectors);
}

std::vector<int> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<int> labels;
  std::string line;
  Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const long v = parse_int_field(line, row);
    if (v < 0) throw ConsistencyError("negative label at line " +
                                      std::to_string(row));
    labels.push_back(static_cast<int>(v));
    ++row;
  }
  return labels;
}

void save_labels(const std::filesystem::path& path,
                 std::span<const int> labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (int label : labels) out << label << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

EmbeddingPool normalize_rows(const EmbeddingPool& pool) {
  Matrix normalized = pool.vectors;
  for (Index i = 0; i < normalized.rows(); ++i) {
    const double norm = normalized.row(i).norm();
    if (norm == 0.0)
      throw ConsistencyError("degenerate vector: zero row " +
                             std::to_string(i));
    normalized.row(i) /= norm;
  }
  return EmbeddingPool{std::move(normalized), pool.eval_labels};
}

DistanceView build_distance_view(const EmbeddingPool& pool,
                                 std::span<const Index> centers) {
  const Index n = pool.n_points();
  Matrix distances(static_cast<Index>(centers.size()), n);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const Index c = centers[i];
    if (c < 0 || c >= n)
      throw ConsistencyError("center index " + std::to_string(c) +
                             " out of range");
    distances.row(static_cast<Index>(i)) =
        (pool.vectors.rowwise() - pool.vectors.row(c)).rowwise().norm();
  }
  return DistanceView{std::vector<Index>(centers.begin(), centers.end()),
                      std::move(distances)};
}

}  // namespace cpl
