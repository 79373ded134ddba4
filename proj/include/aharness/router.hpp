#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aharness/memory.hpp"
#include "aharness/skills.hpp"
#include "aharness/verifier.hpp"

namespace aharness {

struct RouterConfig {
  double lambda_omega = 1.0;
  double lambda_zeta = 0.8;
  double lambda_mu = 0.6;
  double eta_off = 0.5;
  double tie_gap = 0.10;
  int repeat_limit = 2;
  /// Minimum retrieval similarity for a memory entry to steer the episode.
  double similarity_floor = 0.85;
  /// Fractional padding and minimum size (as a fraction of the frame) of a
  /// region transferred from memory.
  double memory_region_padding = 0.25;
  double memory_region_min_fraction = 0.25;
  std::chrono::milliseconds brain_timeout{200};
  std::map<std::string, double> cost_weights;

  void validate() const;
  [[nodiscard]] double lambda(Dimension d) const;
};

struct RouterState {
  double remaining_budget = 0.0;
  /// Feasibility ignores the budget (no-truncation mode).
  bool ignore_budget = false;
  std::optional<SkillAction> last_proposal;
  Dimension last_deficiency = Dimension::none;
  /// Retries already spent on the current deficiency without clearing it.
  int consecutive_same_deficiency = 0;
  std::vector<RetrievedMemory> retrieved_priors;
  std::vector<SkillAction> past_actions;
  std::string query;
  Grid frame{};
  /// Best current localizer; anchors default segment and zoom templates.
  std::optional<Box> focus;

  /// Updates the deficiency streak from a fresh report.
  void observe(const DiagnosticReport& report);
};

struct GainEstimate {
  SkillAction action;
  double delta_v = 0.0;
  double cost = 1.0;
  double utility = 0.0;
  bool is_proposal = false;
  int skill_index = 0;
};

void to_json(json& j, const GainEstimate& g);

/// Memory entry steering this episode, if its similarity clears the floor.
const RetrievedMemory* memory_hit(const std::vector<RetrievedMemory>& priors, const RouterConfig& cfg);
/// Memory region padded and widened to the configured minimum size.
std::optional<Box> memory_region(const std::vector<RetrievedMemory>& priors, const RouterConfig& cfg, const Grid& frame);

std::vector<SkillAction> feasible_actions(const RouterState& state, const Registry& registry,
                                          const std::optional<DiagnosticReport>& report, const RouterConfig& cfg);

double estimate_gain(const SkillAction& action, const DiagnosticReport& report, const Registry& registry,
                     const RouterConfig& rcfg, const VerifierConfig& vcfg);

std::vector<GainEstimate> score_candidates(const std::vector<SkillAction>& candidates, const DiagnosticReport& report,
                                           const Registry& registry, const RouterConfig& rcfg,
                                           const VerifierConfig& vcfg);

struct BrainRequest {
  json evidence_summary;
  DiagnosticReport report;
  std::vector<GainEstimate> candidates;
  std::vector<RetrievedMemory> memories;
};

struct BrainResponse {
  int candidate_index = -1;
  std::string rationale;
};

json encode_brain_request(std::uint64_t message_id, const BrainRequest& request);
BrainResponse decode_brain_response(const json& j);

/// Reasoning component consulted when the heuristic is indecisive.
class DecisionBrain {
 public:
  virtual ~DecisionBrain() = default;
  virtual BrainResponse decide(const BrainRequest& request) = 0;
  /// In-process brains are called directly; others run on a worker thread
  /// under the router timeout and must outlive the call.
  [[nodiscard]] virtual bool in_process() const { return false; }
};

/// Returns the verifier proposal when it is a candidate, else the highest
/// utility (lowest skill index on ties).
class StubBrain final : public DecisionBrain {
 public:
  BrainResponse decide(const BrainRequest& request) override;
  [[nodiscard]] bool in_process() const override { return true; }
};

struct Selection {
  SkillAction action;
  bool used_fallback = false;
  std::string fallback_reason;
  /// Set when the brain answered with a non-candidate or timed out.
  std::string incident;
  std::vector<GainEstimate> scored;
};

/// Argmax utility with proposal-first, lowest-index tie breaking, deferring
/// to the brain on near ties, zero top utility, or a stuck deficiency.
Selection select_action(const RouterState& state, const std::vector<GainEstimate>& scored, const DiagnosticReport& report,
                        const RouterConfig& cfg, DecisionBrain* brain, const json& evidence_summary = json::object());

/// Step-one action: replay of the best memory hit's first action, narrowed
/// to the remembered region, else a full-frame detection.
SkillAction first_action(const RouterState& state, const RouterConfig& cfg);

}  // namespace aharness
