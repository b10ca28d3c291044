#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "carpe/model.hpp"

// Weight file layout, all integers and floats little-endian:
//
//   bytes 0..7   magic "CARPE001"
//   bytes 8..11  u32 manifest length in bytes
//   manifest     text, one key=value per line: beta, T, C1, C2, count
//   payload      count float32 values, parameters in declared order, each
//                weight tensor row-major, kernels as [out, in, kh, kw]
//
// Save and load are exact inverses on float32 models; double models round to
// float32 on save.

namespace carpe {

inline constexpr char kWeightMagic[8] = {'C', 'A', 'R', 'P', 'E', '0', '0', '1'};

struct WeightManifest {
  int beta = 0;
  int horizon = 0;
  int c1 = 0;
  int c2 = 0;
  std::uint64_t count = 0;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32_le(std::string& out, float v) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32_le(const unsigned char* p) {
  return std::bit_cast<float>(get_u32_le(p));
}

inline std::map<std::string, std::string> parse_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) {
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("weight manifest line without '=': " + line);
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline long manifest_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) {
    throw std::runtime_error("weight manifest missing key '" + key + "'");
  }
  try {
    std::size_t used = 0;
    const long v = std::stol(it->second, &used);
    if (used != it->second.size()) {
      throw std::invalid_argument(it->second);
    }
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("weight manifest key '" + key + "' is not an integer: " + it->second);
  }
}

}  // namespace detail

inline std::string render_manifest(const ModelConfig& config, std::uint64_t count) {
  std::ostringstream os;
  os << "beta=" << config.beta << "\n"
     << "T=" << config.horizon << "\n"
     << "C1=" << config.c1 << "\n"
     << "C2=" << config.c2 << "\n"
     << "count=" << count << "\n";
  return os.str();
}

template <class S>
void save_weights(const CarpeModel<S>& model, const std::filesystem::path& path) {
  std::string blob;
  blob.append(kWeightMagic, sizeof(kWeightMagic));
  const std::string manifest = render_manifest(model.config, count_params(model));
  detail::put_u32_le(blob, static_cast<std::uint32_t>(manifest.size()));
  blob += manifest;
  for (const Tensor<S>& p : model.parameters()) {
    for (S v : p.values()) {
      detail::put_f32_le(blob, static_cast<float>(v));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) {
    throw std::runtime_error("short write to " + path.string());
  }
}

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open weight file " + path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

inline WeightManifest parse_header(const std::vector<unsigned char>& bytes,
                                   const std::filesystem::path& path, std::size_t& payload_offset) {
  if (bytes.size() < sizeof(kWeightMagic) + 4 ||
      std::memcmp(bytes.data(), kWeightMagic, sizeof(kWeightMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a weight file (bad magic)");
  }
  const std::uint32_t manifest_len = get_u32_le(bytes.data() + sizeof(kWeightMagic));
  const std::size_t manifest_begin = sizeof(kWeightMagic) + 4;
  if (bytes.size() < manifest_begin + manifest_len) {
    throw std::runtime_error(path.string() + " is truncated inside the manifest");
  }
  const std::string text(reinterpret_cast<const char*>(bytes.data()) + manifest_begin, manifest_len);
  const auto kv = parse_manifest(text);
  WeightManifest m;
  m.beta = static_cast<int>(manifest_int(kv, "beta"));
  m.horizon = static_cast<int>(manifest_int(kv, "T"));
  m.c1 = static_cast<int>(manifest_int(kv, "C1"));
  m.c2 = static_cast<int>(manifest_int(kv, "C2"));
  m.count = static_cast<std::uint64_t>(manifest_int(kv, "count"));
  payload_offset = manifest_begin + manifest_len;
  return m;
}

}  // namespace detail

// Reads just the header (for inspection tools).
inline WeightManifest peek_weights(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
  std::size_t payload_offset = 0;
  return detail::parse_header(bytes, path, payload_offset);
}

template <class S>
CarpeModel<S> load_weights(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
  std::size_t payload_offset = 0;
  const WeightManifest m = detail::parse_header(bytes, path, payload_offset);

  ModelConfig config;
  config.beta = m.beta;
  config.horizon = m.horizon;
  config.c1 = m.c1;
  config.c2 = m.c2;
  CarpeModel<S> model = make_model<S>(config, 0);
  const std::uint64_t expected = count_params(model);
  if (m.count != expected) {
    throw std::runtime_error(path.string() + ": manifest count " + std::to_string(m.count) +
                             " does not match the declared architecture (" + std::to_string(expected) +
                             " parameters)");
  }
  const std::size_t payload = bytes.size() - payload_offset;
  if (payload != expected * 4) {
    throw std::runtime_error(path.string() + ": payload holds " + std::to_string(payload / 4) +
                             " values, manifest declares " + std::to_string(expected));
  }
  const unsigned char* p = bytes.data() + payload_offset;
  for (Tensor<S>& param : model.parameters()) {
    for (S& v : param.values()) {
      v = static_cast<S>(detail::get_f32_le(p));
      p += 4;
    }
  }
  return model;
}

}  // namespace carpe
