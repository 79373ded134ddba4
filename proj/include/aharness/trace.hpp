#pragma once

#include <filesystem>
#include <string>

#include "aharness/runtime.hpp"

namespace aharness {

inline constexpr const char* kTraceFormat = "aharness-trace/1";

// One JSON object per line: a {"header": ...} line, then for every step its
// evidence records (bare, fixed field names) followed by a {"step": ...}
// line, then {"fusion": ...} and {"summary": ...}.
std::string serialize_trace(const EpisodeTrace& trace);
EpisodeTrace parse_trace(const std::string& text);
void save_trace(const EpisodeTrace& trace, const std::filesystem::path& path);
EpisodeTrace load_trace(const std::filesystem::path& path);

/// Standalone run-length file of a fused mask.
void save_mask(const Mask& mask, const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

struct ReplayOutcome {
  bool identical = false;
  bool mask_identical = false;
  /// First differing trace line, when any.
  std::string divergence;
  EpisodeResult rerun;
};

/// Re-executes the episode from the trace's scene, config, seed and
/// retrieved priors against `registry`, then compares both traces line by line.
ReplayOutcome replay_trace(const EpisodeTrace& trace, const Registry& registry);

}  // namespace aharness
