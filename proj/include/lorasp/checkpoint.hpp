// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorasp/io.hpp"

namespace lorasp {

// Adapter checkpoint: 8-byte magic, u64 header length, JSON header (adapter
// kind, config echo, matrix name order), then one binary matrix record per
// name in header order.
inline constexpr char kCheckpointMagic[8] = {'L', 'S', 'P', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::vector<std::string> names;
  std::map<std::string, Matrix> matrices;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["config"] = ckpt.config;
  header["matrices"] = ckpt.names;
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kCheckpointMagic, 8);
  detail::put_u64_le(out, header_bytes.size());
  out += header_bytes;
  for (const std::string& name : ckpt.names) out += encode_matrix(ckpt.matrices.at(name));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string origin = path.string();
  if (bytes.size() < 16 || std::string_view(bytes.data(), 8) != std::string_view(kCheckpointMagic, 8))
    throw IoError(origin + ": not a checkpoint file (bad magic) at byte offset 0");
  const std::uint64_t header_len =
      detail::get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
  if (bytes.size() < 16 + header_len)
    throw IoError(origin + ": truncated header at byte offset 16");

  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(origin + ": bad header JSON at byte offset 16: " + e.what());
  }
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.config = header.value("config", nlohmann::json::object());
  ckpt.names = header.at("matrices").get<std::vector<std::string>>();

  std::size_t offset = 16 + static_cast<std::size_t>(header_len);
  for (const std::string& name : ckpt.names)
    ckpt.matrices[name] = decode_matrix(bytes, offset, origin);
  if (offset != bytes.size())
    throw IoError(origin + ": trailing bytes at offset " + std::to_string(offset));
  return ckpt;
}

}  // namespace lorasp
