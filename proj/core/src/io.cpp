#include "mfda/io.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "mfda/errors.hpp"

namespace mfda::io {
namespace {

constexpr std::array<char, 8> kMagic{'M', 'F', 'D', 'A', 'M', 'A', 'T', '1'};

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  ensure_parent(path);
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

}  // namespace

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_out(path);
  std::array<char, 64> buf{};
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out.put(',');
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), m(i, j),
                                     std::chars_format::general, 17);
      out.write(buf.data(), res.ptr - buf.data());
    }
    out.put('\n');
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<double> values;
  Eigen::Index cols = -1;
  Eigen::Index rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    Eigen::Index count = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      double v = 0.0;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) {
        throw InvalidArgument("malformed number in " + path.string() + " line " + std::to_string(rows + 1));
      }
      values.push_back(v);
      ++count;
      p = res.ptr;
      if (p < end && (*p == ',' || *p == '\r')) ++p;
    }
    if (cols < 0) cols = count;
    if (count != cols) throw InvalidArgument("ragged rows in " + path.string());
    ++rows;
  }
  if (cols < 0) cols = 0;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = values[static_cast<std::size_t>(i * cols + j)];
  }
  return m;
}

void write_matrix_binary(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out.write(kMagic.data(), kMagic.size());
  const std::uint64_t rows = static_cast<std::uint64_t>(m.rows());
  const std::uint64_t cols = static_cast<std::uint64_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Matrix read_matrix_binary(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidArgument("not an mfda matrix file: " + path.string());
  std::uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!in) throw InvalidArgument("truncated matrix file: " + path.string());
  return rm;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  if (path.extension() == ".bin") {
    write_matrix_binary(path, m);
  } else {
    write_matrix_csv(path, m);
  }
}

Matrix read_matrix(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? read_matrix_binary(path) : read_matrix_csv(path);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string file_hash(const std::filesystem::path& path) { return fnv1a_hex(read_text(path)); }

void write_text(const std::filesystem::path& path, std::string_view text) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path sidecar_path(const std::filesystem::path& data_path) {
  auto p = data_path;
  p.replace_extension(".json");
  return p;
}

}  // namespace mfda::io
