#pragma once

// Network -> LUT transfer, the .rclt container and table-size arithmetic.
//
// Container layout (little-endian):
//   "RCLT" | u16 version | u8 scale | u8 flags | u16 table count
//   per table: u16 id length | id | u8 kind | u32 input dims | u32 out channels
//              | u32 sample count | payload (sample_count^input_dims * out bytes)
//   u32 CRC-32 over all payloads in order
// flags bit 0: rotation ensemble. Table ids encode the topology:
//   s<stage>.b<branch>.rc.<offset>   1D table of one RC offset
//   s<stage>.b<branch>.block         4D table or 1-input table

#include <rclut/config.hpp>
#include <rclut/conv_block.hpp>
#include <rclut/error.hpp>
#include <rclut/network.hpp>
#include <rclut/plane.hpp>
#include <rclut/rc_module.hpp>

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace rclut {

inline constexpr int kSampleCount = 17;     // levels per axis at interval 2^4
inline constexpr int kFullCount = 256;
inline constexpr int kSamples4D = kSampleCount * kSampleCount * kSampleCount * kSampleCount;

/// p_j = min(16 j, 255), j = 0..16.
inline std::vector<int> sample_points(int interval_bits = 4) {
  require(interval_bits == 4, ErrorCode::UnsupportedInterval,
          "only the 2^4 sampling interval is supported (got 2^" + std::to_string(interval_bits) + ")");
  std::vector<int> p(kSampleCount);
  for (int j = 0; j < kSampleCount; ++j) p[j] = std::min(16 * j, 255);
  return p;
}

struct Lut1D {
  int offset_index = 0;
  std::vector<std::uint8_t> entries;  // 17 (sampled) or 256 (full)

  int sample_count() const noexcept { return static_cast<int>(entries.size()); }
  friend bool operator==(const Lut1D&, const Lut1D&) = default;
};

/// Conv-block table. 4-input kinds: 17^4 cells in (i0, i1, i2, i3) row-major
/// order, then channel. In1Out4: 256 cells, then channel.
struct BlockLut {
  BlockKind kind = BlockKind::In4Out1;
  int out_channels = 1;
  std::vector<std::uint8_t> entries;

  int inputs() const noexcept { return block_inputs(kind); }
  std::size_t cells() const noexcept { return kind == BlockKind::In1Out4 ? kFullCount : kSamples4D; }
  friend bool operator==(const BlockLut&, const BlockLut&) = default;
};

struct BranchLut {
  int rc_size = 0;  // 0: no RC tables
  std::vector<Lut1D> rc;
  BlockLut block;
  friend bool operator==(const BranchLut&, const BranchLut&) = default;
};

struct LutPack {
  static constexpr std::uint16_t kVersion = 1;
  int scale = 4;
  bool rotation_ensemble = true;
  std::vector<std::vector<BranchLut>> stages;

  /// Entry bytes only; headers are excluded.
  std::size_t total_bytes() const noexcept {
    std::size_t n = 0;
    for (const auto& s : stages)
      for (const auto& b : s) {
        for (const auto& t : b.rc) n += t.entries.size();
        n += b.block.entries.size();
      }
    return n;
  }
  friend bool operator==(const LutPack&, const LutPack&) = default;
};

// ---------------------------------------------------------------------------
// Transfer

/// Level index j of a 1D table -> input level.
inline int table_level(int j, int sample_count) { return sample_count == kFullCount ? j : std::min(16 * j, 255); }

template <class T>
std::vector<Lut1D> transfer_rc(const RcParams<T>& p, bool sampled = true) {
  const int count = sampled ? kSampleCount : kFullCount;
  std::vector<Lut1D> tables(p.offsets());
  for (int o = 0; o < p.offsets(); ++o) {
    tables[o].offset_index = o;
    tables[o].entries.resize(count);
    for (int j = 0; j < count; ++j)
      tables[o].entries[j] = unit_to_level(rc_offset_response(p, o, level_to_unit<T>(table_level(j, count))));
  }
  return tables;
}

template <class T>
BlockLut transfer_block4(const ConvBlockParams<T>& p) {
  require(p.kind != BlockKind::In1Out4, ErrorCode::InvalidArgument, "transfer_block4 needs a 4-input block");
  const auto pts = sample_points();
  std::vector<T> rows(static_cast<std::size_t>(kSamples4D) * 4);
  std::size_t k = 0;
  for (int a = 0; a < kSampleCount; ++a)
    for (int b = 0; b < kSampleCount; ++b)
      for (int c = 0; c < kSampleCount; ++c)
        for (int d = 0; d < kSampleCount; ++d) {
          rows[k++] = level_to_unit<T>(pts[a]);
          rows[k++] = level_to_unit<T>(pts[b]);
          rows[k++] = level_to_unit<T>(pts[c]);
          rows[k++] = level_to_unit<T>(pts[d]);
        }
  std::vector<T> out(static_cast<std::size_t>(kSamples4D) * p.head_channels);
  block_forward_rows<T>(p, rows, kSamples4D, out);
  // The container cannot tell a one-channel head from a 4-1 block; both run identically.
  const BlockKind kind = p.head_channels == 1 ? BlockKind::In4Out1 : BlockKind::In4OutHead;
  BlockLut lut{kind, p.head_channels, std::vector<std::uint8_t>(out.size())};
  std::transform(out.begin(), out.end(), lut.entries.begin(), unit_to_level<T>);
  return lut;
}

template <class T>
BlockLut transfer_block1(const ConvBlockParams<T>& p) {
  require(p.kind == BlockKind::In1Out4, ErrorCode::InvalidArgument, "transfer_block1 needs an In1Out4 block");
  std::vector<T> rows(kFullCount);
  for (int v = 0; v < kFullCount; ++v) rows[v] = level_to_unit<T>(v);
  std::vector<T> out(static_cast<std::size_t>(kFullCount) * p.head_channels);
  block_forward_rows<T>(p, rows, kFullCount, out);
  BlockLut lut{p.kind, p.head_channels, std::vector<std::uint8_t>(out.size())};
  std::transform(out.begin(), out.end(), lut.entries.begin(), unit_to_level<T>);
  return lut;
}

template <class T>
BlockLut transfer_block(const ConvBlockParams<T>& p) {
  return p.kind == BlockKind::In1Out4 ? transfer_block1(p) : transfer_block4(p);
}

/// Caches every table of a trained network.
template <class T>
LutPack export_pack(const NetworkConfig& config, const NetworkParams<T>& params, bool rc_sampled = true) {
  validate(config);
  require(params.stages.size() == config.stages.size(), ErrorCode::TopologyMismatch,
          "parameters do not match the config");
  LutPack pack;
  pack.scale = config.scale;
  pack.rotation_ensemble = config.rotation_ensemble;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    auto& stage = pack.stages.emplace_back();
    require(params.stages[s].size() == config.stages[s].branches.size(), ErrorCode::TopologyMismatch,
            "parameters do not match the config");
    for (const auto& bp : params.stages[s]) {
      BranchLut b;
      if (bp.rc) {
        b.rc_size = bp.rc->size;
        b.rc = transfer_rc(*bp.rc, rc_sampled);
      }
      b.block = transfer_block(bp.block);
      stage.push_back(std::move(b));
    }
  }
  return pack;
}

/// Structural topology of a pack, as a network config (block widths unknown).
inline NetworkConfig pack_topology(const LutPack& pack) {
  NetworkConfig c;
  c.name = "pack";
  c.scale = pack.scale;
  c.rotation_ensemble = pack.rotation_ensemble;
  for (const auto& s : pack.stages) {
    StageConfig sc;
    for (const auto& b : s) {
      BranchConfig bc;
      bc.rc_size = b.rc_size;
      bc.block = b.block.kind;
      bc.head_channels = b.block.out_channels;
      sc.branches.push_back(bc);
    }
    c.stages.push_back(sc);
  }
  return c;
}

/// Throws CorruptPack unless every table matches its declared shape.
inline void check_pack(const LutPack& pack) {
  auto bad = [](const std::string& m) { fail(ErrorCode::CorruptPack, m); };
  if (pack.scale < 1 || pack.scale > 8) bad("scale out of range");
  if (pack.stages.empty()) bad("pack has no stages");
  for (std::size_t s = 0; s < pack.stages.size(); ++s) {
    if (pack.stages[s].empty()) bad("stage " + std::to_string(s) + " has no branches");
    const bool final_stage = s + 1 == pack.stages.size();
    for (const auto& b : pack.stages[s]) {
      if (b.rc_size < 0 || static_cast<std::size_t>(b.rc_size) * b.rc_size != b.rc.size())
        bad("RC table count does not match the kernel size");
      for (std::size_t o = 0; o < b.rc.size(); ++o) {
        const auto& t = b.rc[o];
        if (t.offset_index != static_cast<int>(o)) bad("RC tables out of order");
        if (t.sample_count() != kSampleCount && t.sample_count() != kFullCount) bad("bad 1D sample count");
        if (t.sample_count() != b.rc.front().sample_count()) bad("mixed 1D sample counts in a branch");
      }
      const int want = final_stage ? pack.scale * pack.scale : 1;
      if (b.block.out_channels != want) bad("block emits " + std::to_string(b.block.out_channels) +
                                            " channels, stage needs " + std::to_string(want));
      if (b.block.entries.size() != b.block.cells() * b.block.out_channels) bad("block entry count mismatch");
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint32_t v) { out_.push_back(static_cast<char>(v & 0xFF)); }
  void u16(std::uint32_t v) { u8(v), u8(v >> 8); }
  void u32(std::uint32_t v) { u16(v & 0xFFFF), u16(v >> 16); }
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(const std::string& s, std::size_t end) : s_(s), end_(end) {}
  std::uint32_t u8() {
    need(1);
    return static_cast<unsigned char>(s_[pos_++]);
  }
  std::uint32_t u16() { const std::uint32_t a = u8(); return a | (u8() << 8); }
  std::uint32_t u32() { const std::uint32_t a = u16(); return a | (u16() << 16); }
  const unsigned char* take(std::size_t n) {
    need(n);
    const auto* p = reinterpret_cast<const unsigned char*>(s_.data()) + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const noexcept { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) fail(ErrorCode::CorruptPack, "truncated pack");
  }
  const std::string& s_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::string table_id(std::size_t s, std::size_t b) {
  return "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
}

}  // namespace detail

enum class TableKind : std::uint8_t { Lut1D = 1, Lut4D = 2, OneInput = 3 };

inline std::string serialize_pack(const LutPack& pack) {
  check_pack(pack);
  detail::ByteWriter w;
  w.bytes("RCLT", 4);
  w.u16(LutPack::kVersion);
  w.u8(static_cast<std::uint32_t>(pack.scale));
  w.u8(pack.rotation_ensemble ? 1u : 0u);
  std::size_t count = 0;
  for (const auto& s : pack.stages)
    for (const auto& b : s) count += b.rc.size() + 1;
  require(count <= 0xFFFF, ErrorCode::InvalidArgument, "too many tables for the container");
  w.u16(static_cast<std::uint32_t>(count));

  uLong crc = ::crc32(0L, Z_NULL, 0);
  auto table = [&](const std::string& id, TableKind kind, std::uint32_t dims, std::uint32_t out,
                   std::uint32_t samples, const std::vector<std::uint8_t>& payload) {
    w.u16(static_cast<std::uint32_t>(id.size()));
    w.bytes(id.data(), id.size());
    w.u8(static_cast<std::uint32_t>(kind));
    w.u32(dims);
    w.u32(out);
    w.u32(samples);
    w.bytes(payload.data(), payload.size());
    crc = ::crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
  };
  for (std::size_t s = 0; s < pack.stages.size(); ++s) {
    for (std::size_t b = 0; b < pack.stages[s].size(); ++b) {
      const auto& br = pack.stages[s][b];
      const std::string prefix = detail::table_id(s, b);
      for (const auto& t : br.rc)
        table(prefix + "rc." + std::to_string(t.offset_index), TableKind::Lut1D, 1, 1,
              static_cast<std::uint32_t>(t.sample_count()), t.entries);
      if (br.block.kind == BlockKind::In1Out4)
        table(prefix + "block", TableKind::OneInput, 1, static_cast<std::uint32_t>(br.block.out_channels), kFullCount,
              br.block.entries);
      else
        table(prefix + "block", TableKind::Lut4D, 4, static_cast<std::uint32_t>(br.block.out_channels), kSampleCount,
              br.block.entries);
    }
  }
  w.u32(static_cast<std::uint32_t>(crc));
  return w.take();
}

inline LutPack deserialize_pack(const std::string& bytes) {
  auto bad = [](const std::string& m) { fail(ErrorCode::CorruptPack, m); };
  if (bytes.size() < 14) bad("file too short");
  detail::ByteReader r(bytes, bytes.size() - 4);
  const unsigned char* magic = r.take(4);
  if (std::string(reinterpret_cast<const char*>(magic), 4) != "RCLT") bad("bad magic");
  const std::uint32_t version = r.u16();
  if (version != LutPack::kVersion) bad("unsupported version " + std::to_string(version));
  LutPack pack;
  pack.scale = static_cast<int>(r.u8());
  const std::uint32_t flags = r.u8();
  if (flags & ~1u) bad("unknown flags");
  pack.rotation_ensemble = flags & 1u;
  const std::uint32_t count = r.u16();

  uLong crc = ::crc32(0L, Z_NULL, 0);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t id_len = r.u16();
    const std::string id(reinterpret_cast<const char*>(r.take(id_len)), id_len);
    const auto kind = static_cast<TableKind>(r.u8());
    const std::uint32_t dims = r.u32(), out = r.u32(), samples = r.u32();

    unsigned s = 0, b = 0;
    int used = 0;
    if (std::sscanf(id.c_str(), "s%u.b%u.%n", &s, &b, &used) != 2 || used == 0) bad("bad table id '" + id + "'");
    const std::string rest = id.substr(static_cast<std::size_t>(used));
    if (s > 64 || b > 64) bad("table id out of range");
    if (s > pack.stages.size() || (s == pack.stages.size() && b != 0)) bad("tables out of order at '" + id + "'");
    if (s == pack.stages.size()) pack.stages.emplace_back();
    auto& stage = pack.stages[s];
    if (b > stage.size()) bad("tables out of order at '" + id + "'");
    if (b == stage.size()) stage.emplace_back().block.entries.clear();
    auto& br = stage[b];

    std::size_t payload = 0;
    switch (kind) {
      case TableKind::Lut1D:
        if (dims != 1 || out != 1 || (samples != kSampleCount && samples != kFullCount)) bad("bad 1D table header");
        payload = samples;
        break;
      case TableKind::Lut4D:
        if (dims != 4 || samples != kSampleCount || out == 0 || out > 64) bad("bad 4D table header");
        payload = static_cast<std::size_t>(kSamples4D) * out;
        break;
      case TableKind::OneInput:
        if (dims != 1 || samples != kFullCount || out == 0 || out > 64) bad("bad 1-input table header");
        payload = static_cast<std::size_t>(kFullCount) * out;
        break;
      default: bad("unknown table kind");
    }
    const unsigned char* data = r.take(payload);
    crc = ::crc32(crc, data, static_cast<uInt>(payload));
    std::vector<std::uint8_t> entries(data, data + payload);

    if (kind == TableKind::Lut1D) {
      if (rest.rfind("rc.", 0) != 0) bad("bad table id '" + id + "'");
      if (!br.block.entries.empty()) bad("RC table after block table in '" + id + "'");
      const int o = std::atoi(rest.c_str() + 3);
      if (rest.substr(3) != std::to_string(o) || o != static_cast<int>(br.rc.size())) bad("RC tables out of order");
      br.rc.push_back({o, std::move(entries)});
    } else {
      if (rest != "block" || !br.block.entries.empty()) bad("bad block table '" + id + "'");
      br.block.out_channels = static_cast<int>(out);
      br.block.kind = kind == TableKind::OneInput ? BlockKind::In1Out4 : (out == 1 ? BlockKind::In4Out1
                                                                                   : BlockKind::In4OutHead);
      br.block.entries = std::move(entries);
      const auto n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(br.rc.size()))));
      br.rc_size = br.rc.empty() ? 0 : n;
    }
  }
  if (r.pos() != bytes.size() - 4) bad("trailing bytes after the last table");
  detail::ByteReader tail(bytes, bytes.size());
  tail.take(bytes.size() - 4);
  if (tail.u32() != static_cast<std::uint32_t>(crc)) bad("CRC mismatch");
  for (const auto& s : pack.stages)
    for (const auto& b : s)
      if (b.block.entries.empty()) bad("branch without a block table");
  check_pack(pack);
  return pack;
}

inline void write_pack(const LutPack& pack, const std::filesystem::path& path) {
  const std::string bytes = serialize_pack(pack);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::Io, "write failed for " + path.string());
}

inline LutPack read_pack(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_pack(ss.str());
}

// ---------------------------------------------------------------------------
// Size arithmetic

enum class SizeKind { FullSrlut, SampledSrlut, Full1D };

inline SizeKind parse_size_kind(const std::string& s) {
  if (s == "full" || s == "full_srlut") return SizeKind::FullSrlut;
  if (s == "sampled" || s == "sampled_srlut") return SizeKind::SampledSrlut;
  if (s == "1d" || s == "full_1d") return SizeKind::Full1D;
  fail(ErrorCode::InvalidArgument, "unknown size kind '" + s + "' (full_srlut, sampled_srlut, full_1d)");
}

/// Exact byte count when it fits in 128 bits; otherwise `overflow` is set and
/// only the decimal logarithm is meaningful.
struct SizeEstimate {
  bool overflow = false;
  unsigned __int128 bytes = 0;
  double log10_bytes = 0;
};

namespace detail {

inline bool mul_overflows(unsigned __int128& acc, unsigned __int128 f) {
  if (f != 0 && acc > ~static_cast<unsigned __int128>(0) / f) return true;
  acc *= f;
  return false;
}

inline std::string u128_to_string(unsigned __int128 v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  return s;
}

}  // namespace detail

/// full_srlut = 256^(n^2) r^2, sampled_srlut = 17^(n^2) r^2, full_1d = 256 n^2 r^2.
inline SizeEstimate size_formula(SizeKind kind, int n, int r) {
  require(n >= 1 && r >= 1, ErrorCode::InvalidArgument, "size_formula needs n >= 1 and r >= 1");
  SizeEstimate e;
  const auto n2 = static_cast<unsigned __int128>(n) * n;
  const auto r2 = static_cast<unsigned __int128>(r) * r;
  unsigned __int128 acc = 1;
  bool over = false;
  switch (kind) {
    case SizeKind::Full1D:
      over = detail::mul_overflows(acc, 256) || detail::mul_overflows(acc, n2) || detail::mul_overflows(acc, r2);
      e.log10_bytes = std::log10(256.0) + 2 * std::log10(static_cast<double>(n)) + 2 * std::log10(static_cast<double>(r));
      break;
    case SizeKind::FullSrlut:
    case SizeKind::SampledSrlut: {
      const unsigned base = kind == SizeKind::FullSrlut ? 256 : 17;
      for (unsigned __int128 i = 0; i < n2 && !over; ++i) over = detail::mul_overflows(acc, base);
      over = over || detail::mul_overflows(acc, r2);
      e.log10_bytes = static_cast<double>(n) * n * std::log10(static_cast<double>(base)) +
                      2 * std::log10(static_cast<double>(r));
      break;
    }
  }
  e.overflow = over;
  e.bytes = over ? 0 : acc;
  return e;
}

inline std::string exact_bytes_string(const SizeEstimate& e) {
  return e.overflow ? "astronomical" : detail::u128_to_string(e.bytes);
}

/// Binary units (KB = 1024 B). Up to three decimals, trailing zeros removed;
/// beyond 10^4 PB the mantissa/exponent form "6.7x10^7 PB" is used.
inline std::string format_bytes(const SizeEstimate& e) {
  static const char* units[] = {"B", "KB", "MB", "GB", "TB", "PB"};
  const double log10_1024 = std::log10(1024.0);
  auto trim = [](double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string s = buf;
    if (s.find('.') != std::string::npos) {
      while (s.back() == '0') s.pop_back();
      if (s.back() == '.') s.pop_back();
    }
    return s;
  };
  const double log_pb = e.log10_bytes - 5 * log10_1024;
  if (e.overflow || log_pb >= 4.0) {
    int exp10 = static_cast<int>(std::floor(log_pb));
    double mant = std::pow(10.0, log_pb - exp10);
    if (std::round(mant * 10) >= 100) {
      mant /= 10;
      ++exp10;
    }
    return trim(mant, 1) + "x10^" + std::to_string(exp10) + " PB";
  }
  long double v = static_cast<long double>(e.bytes);
  int u = 0;
  while (u < 5 && v >= 1024.0L) {
    v /= 1024.0L;
    ++u;
  }
  return trim(static_cast<double>(v), 3) + " " + units[u];
}

/// Entry bytes of the pack a config would export, without training it. Custom
/// block spans (hand-crafted sampling patterns) still index four pixels.
inline std::size_t config_table_bytes(const NetworkConfig& c, bool rc_sampled = true) {
  validate(c, false);
  std::size_t n = 0;
  for (const auto& s : c.stages)
    for (const auto& b : s.branches) {
      if (b.rc_size > 0) n += static_cast<std::size_t>(b.rc_size) * b.rc_size * (rc_sampled ? kSampleCount : kFullCount);
      n += (b.block == BlockKind::In1Out4 ? kFullCount : kSamples4D) * static_cast<std::size_t>(b.head_channels);
    }
  return n;
}

}  // namespace rclut
