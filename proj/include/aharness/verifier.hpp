#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aharness/evidence.hpp"

namespace aharness {

/// Reliability classes of the evidence-type prior.
enum class SourceClass { seg, det, dream, web, none };

SourceClass source_class(EvidenceType kind);
std::string to_string(SourceClass c);

struct VerifierConfig {
  double alpha = 0.5;
  double beta = 0.3;
  double gamma = 0.2;
  double delta = 0.8;
  double omega_floor = 0.5;
  double tau_zeta = 0.7;
  double tau_mu = 0.6;
  double sigmoid_slope = 10.0;
  double sigmoid_center = 0.5;
  double w_seg = 0.35;
  double w_det = 0.30;
  double w_dream = 0.20;
  double w_web = 0.15;
  double corroboration_iou = 0.5;
  double stability_floor = 0.7;
  /// Minimum self-confidence of a box or mask that corroborates the hypothesis.
  double support_confidence = 0.5;
  /// Compare μ against τ_μ after squashing (default) or raw.
  bool mu_deficit_squashed = true;
  double refine_padding = 0.1;
  /// When false every diagnostic is reported as zero and commit never fires;
  /// used by the router-only ablation.
  bool enabled = true;

  /// Rescales (α, β, γ) and the base weights to sum to one; throws on
  /// negative or all-zero groups and on thresholds outside their ranges.
  void normalize();
  [[nodiscard]] double base_weight(SourceClass c) const;
};

struct DiagnosticReport {
  int step = 0;
  double omega = 0.0;
  double zeta = 1.0;
  double mu = 0.0;
  double mu_squashed = 0.0;
  double v = 0.0;
  bool commit = false;
  Dimension deficiency = Dimension::none;
  std::optional<SkillAction> proposal;
  bool has_hypothesis = false;
};

void to_json(json& j, const DiagnosticReport& r);
void from_json(const json& j, DiagnosticReport& r);

// Diagnostics over a store snapshot.
double cross_skill_consistency(const EvidenceStore& store, const Box& roi);
double cross_scale_stability(const EvidenceStore& store);
/// Mean pairwise agreement (1 − drift) of each record that takes part in a
/// cross-scale pair.
std::map<std::uint64_t, double> record_stability(const EvidenceStore& store);
/// Normalized w̃ per non-sentinel record; empty when there are no records.
std::map<std::uint64_t, double> effective_weights(const EvidenceStore& store,
                                                   const std::map<std::uint64_t, double>& stability,
                                                   const VerifierConfig& cfg);
/// κ(ξ, h) for every non-sentinel record.
std::map<std::uint64_t, bool> support_indicators(const EvidenceStore& store, const Hypothesis& hypothesis,
                                                 const VerifierConfig& cfg);
double evidence_sufficiency(const EvidenceStore& store, const std::optional<Hypothesis>& hypothesis,
                            const std::map<std::uint64_t, double>& weights, const VerifierConfig& cfg);

double squash(double mu, const VerifierConfig& cfg);
double commit_score(double omega, double zeta, double mu, const VerifierConfig& cfg);
bool commit_decision(double v, double omega, const VerifierConfig& cfg);

/// Per-dimension positive deficits (ω, ζ, μ) in that order.
std::array<double, 3> deficits(double omega, double zeta, double mu_compared, const VerifierConfig& cfg);
/// Dominant deficiency; priority ω > ζ > μ on ties. μ is left out when no
/// mask hypothesis exists yet.
Dimension dominant_deficiency(double omega, double zeta, double mu_compared, const VerifierConfig& cfg,
                              bool has_hypothesis = true);

/// Crop window and zoom the episode is currently looking through.
struct ActiveView {
  Box roi;
  int scale = 1;
};

struct ProposalContext {
  Grid frame{};
  std::string query;
  bool memory_hit = false;
  /// Region transferred from a retrieved memory entry, in the current frame.
  std::optional<Box> memory_region;
  ActiveView view;
  std::vector<SkillAction> past_actions;
};

/// Γ(ℓ): corrective action for the flagged dimension.
SkillAction propose(Dimension deficiency, const EvidenceStore& store, const std::optional<Hypothesis>& hypothesis,
                    const ProposalContext& ctx, const VerifierConfig& cfg);

class Verifier {
 public:
  explicit Verifier(VerifierConfig cfg = {});

  [[nodiscard]] const VerifierConfig& config() const { return cfg_; }
  [[nodiscard]] DiagnosticReport evaluate(const EvidenceStore& store, const ProposalContext& ctx, int step) const;

 private:
  VerifierConfig cfg_;
};

}  // namespace aharness
