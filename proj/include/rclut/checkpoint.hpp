#pragma once

// Checkpoint container: a text manifest followed by a little-endian float32
// blob. Manifest lines:
//   rclut-checkpoint 1
//   config <single-line JSON>
//   iteration <n>
//   rng <engine state>
//   arrays <count>
//   <name> <d0,d1,...> <byte offset> <element count>     (count lines)
//   end
// Offsets are relative to the first byte after "end\n".

#include <rclut/config.hpp>
#include <rclut/error.hpp>
#include <rclut/network.hpp>
#include <rclut/random.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace rclut {

/// Parameters, Adam moments, step count and RNG state of a training run.
struct TrainState {
  NetworkConfig config;
  NetworkParams<float> params;
  NetworkParams<float> m;  // first moments
  NetworkParams<float> v;  // second moments
  std::uint64_t iteration = 0;
  Rng rng;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

namespace detail {

inline std::string join_shape(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s;
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace detail

inline std::string serialize_checkpoint(const TrainState& s) {
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::span<const float> data;
  };
  std::vector<Entry> entries;
  auto collect = [&](const NetworkParams<float>& p, const std::string& prefix) {
    for_each_array(p, [&](const std::string& name, std::span<const float> a, const std::vector<int>& shape) {
      entries.push_back({prefix + name, shape, a});
    });
  };
  collect(s.params, "");
  collect(s.m, "adam.m.");
  collect(s.v, "adam.v.");

  std::ostringstream head;
  head << "rclut-checkpoint 1\n";
  head << "config " << nlohmann::json(s.config).dump() << "\n";
  head << "iteration " << s.iteration << "\n";
  head << "rng " << s.rng.state() << "\n";
  head << "arrays " << entries.size() << "\n";
  std::size_t offset = 0;
  for (const auto& e : entries) {
    head << e.name << ' ' << detail::join_shape(e.shape) << ' ' << offset << ' ' << e.data.size() << "\n";
    offset += e.data.size() * 4;
  }
  head << "end\n";

  std::string out = head.str();
  out.reserve(out.size() + offset);
  for (const auto& e : entries)
    for (float f : e.data) detail::put_f32(out, f);
  return out;
}

inline TrainState deserialize_checkpoint(const std::string& bytes) {
  auto corrupt = [](const std::string& m) { fail(ErrorCode::DataError, "checkpoint: " + m); };
  const std::size_t end_pos = bytes.find("\nend\n");
  if (end_pos == std::string::npos) corrupt("missing manifest terminator");
  const std::size_t blob = end_pos + 5;
  std::istringstream in(bytes.substr(0, end_pos + 1));

  std::string line, key;
  if (!std::getline(in, line) || line != "rclut-checkpoint 1") corrupt("bad magic line");

  TrainState s;
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) corrupt("missing config line");
  try {
    s.config = nlohmann::json::parse(line.substr(7)).get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("config: ") + e.what());
  }
  validate(s.config);
  if (!(in >> key >> s.iteration) || key != "iteration") corrupt("missing iteration");
  std::getline(in, line);
  if (!std::getline(in, line) || line.rfind("rng ", 0) != 0) corrupt("missing rng state");
  s.rng.restore(line.substr(4));
  std::size_t count = 0;
  if (!(in >> key >> count) || key != "arrays") corrupt("missing array count");

  struct Slot {
    std::vector<int> shape;
    std::size_t offset, count;
  };
  std::map<std::string, Slot> slots;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name, shape;
    Slot slot;
    if (!(in >> name >> shape >> slot.offset >> slot.count)) corrupt("truncated manifest");
    std::stringstream ss(shape);
    for (std::string d; std::getline(ss, d, ',');) slot.shape.push_back(std::stoi(d));
    if (blob + slot.offset + slot.count * 4 > bytes.size()) corrupt("array '" + name + "' exceeds the file");
    slots[name] = std::move(slot);
  }

  // Shapes come from the config; the manifest must agree with them.
  Rng unused;
  s.params = init_network<float>(s.config, unused);
  s.m = zeros_like(s.params);
  s.v = zeros_like(s.params);
  auto fill = [&](NetworkParams<float>& p, const std::string& prefix) {
    for_each_array(p, [&](const std::string& name, std::span<float> a, const std::vector<int>& shape) {
      auto it = slots.find(prefix + name);
      if (it == slots.end()) corrupt("missing array '" + prefix + name + "'");
      if (it->second.shape != shape || it->second.count != a.size())
        corrupt("array '" + prefix + name + "' does not match the config");
      const auto* src = reinterpret_cast<const unsigned char*>(bytes.data()) + blob + it->second.offset;
      for (std::size_t k = 0; k < a.size(); ++k) a[k] = detail::get_f32(src + 4 * k);
    });
  };
  fill(s.params, "");
  fill(s.m, "adam.m.");
  fill(s.v, "adam.v.");
  return s;
}

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(s);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::Io, "write failed for " + path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace rclut
