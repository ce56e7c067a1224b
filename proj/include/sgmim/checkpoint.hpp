#pragma once

// Checkpoint container:
//   "SGMIMCKP" | u64 LE manifest length | manifest (JSON) | blob
// The manifest lists every tensor's name, shape, dtype, byte offset and size
// within the blob; the blob holds little-endian float32 values, row-major,
// tensors in manifest order without gaps.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgmim/tensor.hpp"

namespace sgmim {

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'M', 'I', 'M', 'C', 'K', 'P'};
inline constexpr int kCheckpointVersion = 1;

struct TensorFile {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor<float>> tensors;
};

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline void append_f32_le(std::vector<unsigned char>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                             std::uint32_t(p[3]) << 24;
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline std::vector<unsigned char> encode_tensor_file(const TensorFile& file) {
  std::vector<unsigned char> blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : file.tensors) {
    entries.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"dtype", "float32"},
                       {"offset", blob.size()},
                       {"nbytes", t.size() * 4}});
    for (float v : t.data()) detail::append_f32_le(blob, v);
  }
  nlohmann::json manifest = {{"format", "sgmim-checkpoint"},
                             {"version", kCheckpointVersion},
                             {"tensors", entries},
                             {"blob_bytes", blob.size()},
                             {"blob_fnv1a64", detail::hex64(fnv1a64(blob.data(), blob.size()))},
                             {"meta", file.meta}};
  const std::string text = manifest.dump(1);
  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 8);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

// Validates the whole manifest against the blob before materializing any tensor.
inline TensorFile decode_tensor_file(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IntegrityError("not a checkpoint file (bad magic)");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + i]) << (8 * i);
  if (len > bytes.size() - 16) throw IntegrityError("checkpoint manifest is truncated");
  const auto manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len),
                                              nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) throw IntegrityError("checkpoint manifest is not valid JSON");
  const unsigned char* blob = bytes.data() + 16 + len;
  const std::size_t blob_size = bytes.size() - 16 - len;

  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, nbytes;
  };
  std::vector<Entry> entries;
  try {
    if (manifest.at("format") != "sgmim-checkpoint" || manifest.at("version") != kCheckpointVersion) {
      throw IntegrityError("unsupported checkpoint format or version");
    }
    if (manifest.at("blob_bytes").get<std::size_t>() != blob_size) {
      throw IntegrityError("checkpoint blob is " + std::to_string(blob_size) + " bytes, manifest expects " +
                           manifest.at("blob_bytes").dump());
    }
    if (manifest.at("blob_fnv1a64").get<std::string>() != detail::hex64(fnv1a64(blob, blob_size))) {
      throw IntegrityError("checkpoint blob checksum mismatch");
    }
    std::set<std::string> names;
    std::size_t expected_offset = 0;
    for (const auto& e : manifest.at("tensors")) {
      Entry entry{e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>(),
                  e.at("nbytes").get<std::size_t>()};
      if (e.at("dtype") != "float32") throw IntegrityError("tensor '" + entry.name + "' has unsupported dtype");
      if (!names.insert(entry.name).second) throw IntegrityError("tensor '" + entry.name + "' listed twice");
      for (auto d : entry.shape) {
        if (d == 0) throw IntegrityError("tensor '" + entry.name + "' has a zero dimension");
      }
      if (entry.nbytes != shape_size(entry.shape) * 4) throw IntegrityError("tensor '" + entry.name + "' size mismatch");
      if (entry.offset != expected_offset) {
        throw IntegrityError("tensor '" + entry.name + "' offset " + std::to_string(entry.offset) + " expected " +
                             std::to_string(expected_offset));
      }
      expected_offset += entry.nbytes;
      if (expected_offset > blob_size) throw IntegrityError("tensor '" + entry.name + "' extends past the blob");
      entries.push_back(std::move(entry));
    }
    if (expected_offset != blob_size) throw IntegrityError("checkpoint blob has trailing bytes");
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed checkpoint manifest: ") + e.what());
  }

  TensorFile file;
  file.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& e : entries) {
    std::vector<float> values(shape_size(e.shape));
    const unsigned char* p = blob + e.offset;
    for (auto& v : values) v = detail::read_f32_le(p), p += 4;
    file.tensors.emplace(e.name, Tensor<float>(e.shape, std::move(values)));
  }
  return file;
}

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  const auto bytes = encode_tensor_file(file);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor_file(bytes);
}

}  // namespace sgmim
