// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "lorasp/matrix.hpp"

namespace lorasp {

// Binary matrix container: 8-byte magic "LSPMAT01", u64 rows, u64 cols
// (little-endian), then rows*cols IEEE-754 doubles, little-endian,
// row-major. Finite values round-trip exactly.

inline constexpr char kMatrixMagic[8] = {'L', 'S', 'P', 'M', 'A', 'T', '0', '1'};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_matrix(const Matrix& m) {
  if (!m.is_finite())
    throw IoError("encode_matrix: refusing to serialize non-finite " + shape_str(m) + " matrix");
  std::string out;
  out.reserve(24 + 8 * m.size());
  out.append(kMatrixMagic, 8);
  detail::put_u64_le(out, m.rows());
  detail::put_u64_le(out, m.cols());
  for (double v : m.values()) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

// Decodes one matrix record starting at `offset` within `bytes`; advances
// `offset` past the record. `origin` names the source in error messages.
inline Matrix decode_matrix(const std::string& bytes, std::size_t& offset, const std::string& origin) {
  const auto fail = [&](const std::string& what, std::size_t at) -> Matrix {
    throw IoError(origin + ": " + what + " at byte offset " + std::to_string(at));
  };
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < offset + 24) return fail("truncated matrix header", offset);
  if (std::string_view(bytes.data() + offset, 8) != std::string_view(kMatrixMagic, 8))
    return fail("bad magic bytes", offset);
  const std::uint64_t rows = detail::get_u64_le(p + offset + 8);
  const std::uint64_t cols = detail::get_u64_le(p + offset + 16);
  const std::uint64_t count = rows * cols;
  if (rows > (1u << 20) || cols > (1u << 20)) return fail("implausible dimensions", offset + 8);
  if (bytes.size() < offset + 24 + 8 * count) return fail("truncated matrix payload", offset + 24);
  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (std::uint64_t i = 0; i < count; ++i) {
    const double v = std::bit_cast<double>(detail::get_u64_le(p + offset + 24 + 8 * i));
    if (!std::isfinite(v)) return fail("non-finite value", offset + 24 + 8 * i);
    m.data()[i] = v;
  }
  offset += 24 + 8 * static_cast<std::size_t>(count);
  return m;
}

inline void save_matrix(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_matrix: cannot open " + path.string());
  const std::string bytes = encode_matrix(m);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("save_matrix: write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t offset = 0;
  Matrix m = decode_matrix(bytes, offset, path.string());
  if (offset != bytes.size())
    throw IoError(path.string() + ": trailing bytes at offset " + std::to_string(offset));
  return m;
}

// CSV export with shortest-round-trip doubles; one matrix row per line.
inline void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_matrix_csv: cannot open " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      f << buf << (j + 1 == m.cols() ? "" : ",");
    }
    f << "\n";
  }
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_matrix_csv: cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = line.find(',', pos);
      const std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      row.push_back(std::stod(cell));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError("read_matrix_csv: ragged rows in " + path.string());
    rows.push_back(std::move(row));
  }
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace lorasp
