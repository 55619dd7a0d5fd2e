// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lorasp/io.hpp"

namespace lorasp {

// Minimal CSV table: a header row plus string cells. Cells in this repo
// never contain commas, quotes, or newlines, so no quoting layer is needed;
// the writer rejects cells that would break that assumption.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw IoError("csv: no column named '" + name + "'");
  }
};

inline std::string csv_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_csv: cannot open " + path.string());
  const auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i].find_first_of(",\"\n") != std::string::npos)
        throw IoError("write_csv: cell needs quoting, refusing: " + row[i]);
      f << row[i] << (i + 1 == row.size() ? "" : ",");
    }
    f << "\n";
  };
  write_row(table.header);
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw IoError("write_csv: row width " + std::to_string(row.size()) + " != header width " +
                    std::to_string(table.header.size()));
    write_row(row);
  }
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_csv: cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        row.push_back(line.substr(pos));
        break;
      }
      row.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (first) {
      table.header = std::move(row);
      first = false;
    } else {
      if (row.size() != table.header.size())
        throw IoError("read_csv: ragged row in " + path.string());
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

}  // namespace lorasp
