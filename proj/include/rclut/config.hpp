#pragma once

#include <rclut/error.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <string>
#include <vector>

namespace rclut {

/// Conv-block family. In4* blocks read a 2x2 window, In1Out4 reads one pixel.
enum class BlockKind { In4Out1, In1Out4, In4OutHead };

NLOHMANN_JSON_SERIALIZE_ENUM(BlockKind, {
  {BlockKind::In4Out1, "In4Out1"},
  {BlockKind::In1Out4, "In1Out4"},
  {BlockKind::In4OutHead, "In4OutHead"},
})

inline int block_inputs(BlockKind kind) noexcept { return kind == BlockKind::In1Out4 ? 1 : 4; }
/// Side of the square window a block reads (its receptive field M).
inline int block_window(BlockKind kind) noexcept { return kind == BlockKind::In1Out4 ? 1 : 2; }

struct BranchConfig {
  int rc_size = 0;  // RC kernel size N; 0 means the branch has no RC module
  int rc_channels = 64;
  BlockKind block = BlockKind::In4Out1;
  int head_channels = 1;
  int hidden_width = 64;
  int hidden_depth = 3;
  // Window span used only by the receptive-field calculator. Nonzero values
  // describe hand-crafted sampling patterns (e.g. dilated 3x3) that the
  // network itself does not implement.
  int block_span = 0;

  int span() const noexcept { return block_span > 0 ? block_span : block_window(block); }
  int effective_rc() const noexcept { return rc_size > 0 ? rc_size : 1; }
  /// Padding added on the bottom/right so the output keeps the input size.
  int margin() const noexcept { return (effective_rc() - 1) + (block_window(block) - 1); }

  friend bool operator==(const BranchConfig&, const BranchConfig&) = default;
};

struct StageConfig {
  std::vector<BranchConfig> branches;
  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct NetworkConfig {
  std::string name;
  int scale = 4;
  std::vector<StageConfig> stages;
  bool quantize_between_stages = true;
  bool rotation_ensemble = true;

  bool is_final(std::size_t stage) const noexcept { return stage + 1 == stages.size(); }
  int head_channels(std::size_t stage) const noexcept {
    return is_final(stage) ? scale * scale : 1;
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline void to_json(nlohmann::json& j, const BranchConfig& b) {
  j = {{"rc", b.rc_size},
       {"rc_channels", b.rc_channels},
       {"block", b.block},
       {"head_channels", b.head_channels},
       {"hidden_width", b.hidden_width},
       {"hidden_depth", b.hidden_depth}};
  if (b.block_span > 0) j["block_span"] = b.block_span;
}

inline void from_json(const nlohmann::json& j, BranchConfig& b) {
  b = BranchConfig{};
  b.rc_size = j.value("rc", 0);
  b.rc_channels = j.value("rc_channels", 64);
  b.block = j.value("block", BlockKind::In4Out1);
  b.head_channels = j.value("head_channels", 0);  // 0: resolved from the stage position
  b.hidden_width = j.value("hidden_width", 64);
  b.hidden_depth = j.value("hidden_depth", 3);
  b.block_span = j.value("block_span", 0);
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) stages.push_back({{"branches", s.branches}});
  j = {{"name", c.name},
       {"scale", c.scale},
       {"quantize_between_stages", c.quantize_between_stages},
       {"rotation_ensemble", c.rotation_ensemble},
       {"stages", stages}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  c = NetworkConfig{};
  c.name = j.value("name", std::string{});
  c.scale = j.value("scale", 4);
  c.quantize_between_stages = j.value("quantize_between_stages", true);
  c.rotation_ensemble = j.value("rotation_ensemble", true);
  for (const auto& s : j.at("stages")) {
    StageConfig stage;
    stage.branches = s.at("branches").get<std::vector<BranchConfig>>();
    c.stages.push_back(std::move(stage));
  }
  for (std::size_t s = 0; s < c.stages.size(); ++s)
    for (auto& b : c.stages[s].branches)
      if (b.head_channels == 0) b.head_channels = c.head_channels(s);
}

/// Structural checks shared by every consumer. With `trainable`, also rejects
/// calculator-only features (custom block spans).
inline void validate(const NetworkConfig& c, bool trainable = true) {
  auto bad = [&](const std::string& m) { fail(ErrorCode::InvalidConfig, c.name + ": " + m); };
  if (c.scale < 1 || c.scale > 8) bad("scale must be in [1, 8]");
  if (c.stages.empty()) bad("at least one stage is required");
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    const auto& stage = c.stages[s];
    if (stage.branches.empty()) bad("stage " + std::to_string(s) + " has no branches");
    for (const auto& b : stage.branches) {
      if (b.rc_size < 0 || b.rc_size > 15) bad("rc size must be in [0, 15]");
      if (b.rc_channels < 1) bad("rc_channels must be >= 1");
      if (b.hidden_width < 1 || b.hidden_depth < 0) bad("invalid conv-block width/depth");
      if (b.block == BlockKind::In4Out1 && b.head_channels != 1) bad("In4Out1 blocks emit one channel");
      if (b.head_channels != c.head_channels(s))
        bad("stage " + std::to_string(s) + " branches must emit " + std::to_string(c.head_channels(s)) +
            " channels");
      if (trainable && b.block_span != 0 && b.block_span != block_window(b.block))
        bad("custom block spans are only supported by the size/RF calculators");
    }
  }
}

// ---------------------------------------------------------------------------
// Receptive field

/// Receptive field of the whole network, using each stage's widest branch.
/// With the rotation ensemble every stage extends M+N-2 pixels in all
/// directions around the anchor; without it the window is one-sided.
inline int receptive_field(const NetworkConfig& c) {
  require(!c.stages.empty(), ErrorCode::InvalidConfig, "config has no stages");
  require(c.stages.size() <= 2, ErrorCode::InvalidConfig,
          "receptive-field algebra is defined for one or two stages");
  std::vector<int> M, N;
  for (const auto& stage : c.stages) {
    require(!stage.branches.empty(), ErrorCode::InvalidConfig, "stage has no branches");
    auto widest = std::max_element(stage.branches.begin(), stage.branches.end(),
                                   [](const BranchConfig& a, const BranchConfig& b) {
                                     return a.span() + a.effective_rc() < b.span() + b.effective_rc();
                                   });
    M.push_back(widest->span());
    N.push_back(widest->effective_rc());
  }
  if (!c.rotation_ensemble) {
    int window = M[0] + N[0] - 1;
    if (M.size() == 2) window += M[1] + N[1] - 2;
    return window;
  }
  if (M.size() == 1) return 2 * (M[0] + N[0] - 1) - 1;
  return 2 * M[0] + 2 * M[1] + 2 * N[0] + 2 * N[1] - 7;
}

// ---------------------------------------------------------------------------
// Presets

namespace presets {

inline BranchConfig branch(int rc, BlockKind kind, int head) {
  BranchConfig b;
  b.rc_size = rc;
  b.block = kind;
  b.head_channels = head;
  return b;
}

inline NetworkConfig single_stage(std::string name, const std::vector<int>& rc_sizes, int scale = 4) {
  NetworkConfig c;
  c.name = std::move(name);
  c.scale = scale;
  StageConfig s;
  for (int rc : rc_sizes) s.branches.push_back(branch(rc, BlockKind::In4OutHead, scale * scale));
  c.stages.push_back(s);
  return c;
}

/// Two cascaded stages of RC-3/5/7 branches. Stage 1 uses 4-1 blocks; stage 2
/// pairs RC-5 with the 4-input head and RC-3/RC-7 with 1-input heads.
inline NetworkConfig rclut_default(int scale = 4) {
  NetworkConfig c;
  c.name = "rclut-default";
  c.scale = scale;
  const int head = scale * scale;
  c.stages.push_back({{branch(3, BlockKind::In4Out1, 1), branch(5, BlockKind::In4Out1, 1),
                       branch(7, BlockKind::In4Out1, 1)}});
  c.stages.push_back({{branch(3, BlockKind::In1Out4, head), branch(5, BlockKind::In4OutHead, head),
                       branch(7, BlockKind::In1Out4, head)}});
  return c;
}

inline NetworkConfig srlut_baseline(int scale = 4) { return single_stage("srlut-baseline", {0}, scale); }
inline NetworkConfig rc5_plus_srlut(int scale = 4) { return single_stage("rc5-plus-srlut", {5}, scale); }

/// Calculator-only MuLUT shape: two stages of S/D/Y branches whose sampling
/// patterns span 2, 3 and 3 pixels.
inline NetworkConfig mulut_shape(int plugin_rc = 0, int scale = 4) {
  NetworkConfig c;
  c.name = plugin_rc > 0 ? "rc" + std::to_string(plugin_rc) + "-plus-mulut" : "mulut";
  c.scale = scale;
  for (int s = 0; s < 2; ++s) {
    StageConfig stage;
    for (int span : {2, 3, 3}) {
      BranchConfig b = branch(s == 0 ? plugin_rc : 0, s == 0 ? BlockKind::In4Out1 : BlockKind::In4OutHead,
                              s == 0 ? 1 : scale * scale);
      b.block_span = span;
      stage.branches.push_back(b);
    }
    c.stages.push_back(stage);
  }
  return c;
}

inline std::vector<std::string> names() {
  return {"rclut-default", "rclut-3_5_7-x2", "srlut-baseline", "rc5-plus-srlut", "rclut-3",
          "rclut-3_5",     "rclut-5_7",      "rclut-3_5_7",    "rclut-5_7_9",    "mulut",
          "rc5-plus-mulut"};
}

inline NetworkConfig by_name(const std::string& name) {
  if (name == "rclut-default") return rclut_default();
  if (name == "rclut-3_5_7-x2") {
    auto c = rclut_default();
    c.name = name;
    return c;
  }
  if (name == "srlut-baseline") return srlut_baseline();
  if (name == "rc5-plus-srlut") return rc5_plus_srlut();
  if (name == "rclut-3") return single_stage(name, {3});
  if (name == "rclut-3_5") return single_stage(name, {3, 5});
  if (name == "rclut-5_7") return single_stage(name, {5, 7});
  if (name == "rclut-3_5_7") return single_stage(name, {3, 5, 7});
  if (name == "rclut-5_7_9") return single_stage(name, {5, 7, 9});
  if (name == "mulut") return mulut_shape();
  if (name == "rc5-plus-mulut") return mulut_shape(5);
  fail(ErrorCode::InvalidConfig, "unknown preset '" + name + "'");
}

}  // namespace presets
}  // namespace rclut
