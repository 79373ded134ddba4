#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "aharness/config.hpp"
#include "aharness/evidence.hpp"
#include "aharness/fusion.hpp"
#include "aharness/memory.hpp"
#include "aharness/router.hpp"
#include "aharness/scene.hpp"
#include "aharness/skills.hpp"
#include "aharness/verifier.hpp"

namespace aharness {

struct Charge {
  int step = 0;
  SkillAction action;
  double cost = 0.0;

  friend bool operator==(const Charge&, const Charge&) = default;
};

/// b = B − Σ charges; append-only. Fusion cost is tracked apart from B.
class BudgetLedger {
 public:
  BudgetLedger() = default;
  explicit BudgetLedger(double initial) : initial_(initial), remaining_(initial) {}

  void charge(int step, const SkillAction& action, double cost);
  void charge_fusion(double cost) { fusion_cost_ += cost; }

  [[nodiscard]] double initial() const { return initial_; }
  [[nodiscard]] double remaining() const { return remaining_; }
  [[nodiscard]] double charged() const { return initial_ - remaining_; }
  [[nodiscard]] double fusion_cost() const { return fusion_cost_; }
  [[nodiscard]] const std::vector<Charge>& charges() const { return charges_; }

 private:
  double initial_ = 0.0;
  double remaining_ = 0.0;
  double fusion_cost_ = 0.0;
  std::vector<Charge> charges_;
};

struct StepRecord {
  int step = 0;
  SkillAction action;
  double cost = 0.0;
  std::vector<std::uint64_t> evidence_ids;
  std::vector<std::string> rejected;
  /// Empty unless the invocation failed.
  std::string failure;
  bool routed = false;  // false for the step-one action and fixed scripts
  bool used_fallback = false;
  std::string fallback_reason;
  std::string incident;
  std::optional<DiagnosticReport> report;
};

struct EpisodeTrace {
  Scene scene;
  std::string instruction;
  RunConfig config;
  std::uint64_t seed = 0;
  std::vector<RetrievedMemory> retrieved;
  std::vector<StepRecord> steps;
  std::vector<EvidenceRecord> evidence;
  FusionResult fusion;
  bool accepted = false;
  double charged_cost = 0.0;
  double fusion_cost = 0.0;

  [[nodiscard]] int in_loop_calls() const { return static_cast<int>(steps.size()); }
  /// Calls whose evidence is a fresh detection (detect and zoom re-detection).
  [[nodiscard]] int detection_calls() const;
  [[nodiscard]] int routing_decisions() const;
  [[nodiscard]] int fallback_decisions() const;
};

struct EpisodeResult {
  FusionResult fusion;
  EpisodeTrace trace;
  bool accepted = false;
  double iou = 0.0;
};

struct Banks {
  MemoryBank cs{Tier::cs, 1000};
  MemoryBank tt{Tier::tt, 80};

  static Banks with_capacities(std::size_t cs_capacity, std::size_t tt_capacity);
};

/// Shared collaborators of an episode. Only `registry` is required.
struct EpisodeEnv {
  const Registry* registry = nullptr;
  Banks* banks = nullptr;
  const Embedder* embedder = nullptr;
  DecisionBrain* brain = nullptr;
  /// Serializes bank access when episodes run concurrently.
  std::mutex* bank_mutex = nullptr;
};

std::uint64_t episode_seed(std::uint64_t run_seed, const Scene& scene);

/// One adaptive episode. `priors` replaces retrieval (used by replay).
EpisodeResult run_episode(const Scene& scene, const std::string& instruction, const EpisodeEnv& env, const RunConfig& cfg,
                          std::uint64_t seed, const std::optional<std::vector<RetrievedMemory>>& priors = std::nullopt);

/// det_seg or full_chain script: fixed calls, no routing, gating or memory.
EpisodeResult run_fixed_chain(const Scene& scene, const std::string& instruction, const EpisodeEnv& env,
                              const RunConfig& cfg, RunMode variant, std::uint64_t seed);

/// Dispatches on cfg.mode.
EpisodeResult run_any(const Scene& scene, const EpisodeEnv& env, const RunConfig& cfg,
                      const std::optional<std::vector<RetrievedMemory>>& priors = std::nullopt);

/// Memory entry distilled from an accepted trace.
MemoryEntry entry_from_trace(const EpisodeTrace& trace, const Embedder& embedder);

}  // namespace aharness
