#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "mfda/linalg.hpp"

namespace mfda::io {

/// Comma-separated, one matrix row per line, 17 significant digits so that
/// doubles round-trip exactly.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

/// Little-endian binary: "MFDAMAT1", uint64 rows, uint64 cols, row-major
/// doubles.
void write_matrix_binary(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_binary(const std::filesystem::path& path);

/// Dispatches on extension: ".bin" is binary, anything else CSV.
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

/// FNV-1a 64-bit digest, 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// `<stem>.json` next to `data_path`.
std::filesystem::path sidecar_path(const std::filesystem::path& data_path);

}  // namespace mfda::io
