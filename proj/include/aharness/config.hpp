#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "aharness/json_io.hpp"
#include "aharness/router.hpp"
#include "aharness/skills.hpp"
#include "aharness/verifier.hpp"

namespace aharness {

enum class RunMode { adaptive, det_seg, full_chain };

std::string to_string(RunMode m);
RunMode run_mode_from_string(const std::string& text);

struct RunConfig {
  VerifierConfig verifier;
  RouterConfig router;
  /// Reliabilities and zoom factor; seed and difficulty are set per episode.
  NoiseModel noise;
  double budget = 3.0;
  std::size_t top_n = 2;
  std::size_t capacity_cs = 1000;
  std::size_t capacity_tt = 80;
  std::uint64_t seed = 0;
  int orderings = 1;
  RunMode mode = RunMode::adaptive;
  bool budget_truncation = true;
  /// Step cap when budget truncation is off.
  int max_steps = 12;
  bool use_cs = true;
  bool use_tt = true;
  /// Router-only ablation: no verifier gating; every episode is accepted.
  bool router_only = false;
  int parallel = 1;

  /// Normalizes weights and rejects out-of-range values.
  void validate();
};

/// Flat key/value view; every field has one key (for example "delta",
/// "p_det", "cost_weight.web_search").
json config_to_json(const RunConfig& cfg);
/// Applies the keys present in `j`; unknown keys are an error.
void apply_config_json(RunConfig& cfg, const json& j);
/// Applies AHARNESS_<KEY> variables (key upper-cased, dots as underscores).
void apply_env_overrides(RunConfig& cfg, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> current_environment();

RunConfig load_config(const std::filesystem::path& path);

}  // namespace aharness
