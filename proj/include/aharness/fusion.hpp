#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aharness/evidence.hpp"
#include "aharness/memory.hpp"
#include "aharness/router.hpp"
#include "aharness/skills.hpp"
#include "aharness/verifier.hpp"

namespace aharness {

enum class FusionSource { prompted_segmentation, scale_stable_selection, consistent_average, empty };

std::string to_string(FusionSource s);
FusionSource fusion_source_from_string(const std::string& text);

struct KeypointChoice {
  KeyPoint point;
  /// Record the point came from; zero when it came from memory alone.
  std::uint64_t record_id = 0;
  std::string origin;  // "mask", "box", "dream", "memory"
  bool snapped = false;
};

struct FusionResult {
  Mask mask;
  std::optional<KeyPoint> keypoint;
  FusionSource source = FusionSource::empty;
  std::optional<SkillAction> prompt_action;
  double fusion_cost = 0.0;
  std::string note;
};

void to_json(json& j, const FusionResult& r);
void from_json(const json& j, FusionResult& r);

/// Interaction point: the top-weighted (then most stable) corroborated mask,
/// else the best mask, else the most confident box, else a dreamer point.
/// A point not backed by a corroborated mask is snapped into a retrieved
/// common-sense reference mask.
std::optional<KeypointChoice> select_keypoint(const EvidenceStore& store, const std::vector<RetrievedMemory>& priors,
                                              const VerifierConfig& vcfg, const RouterConfig& rcfg);

/// Evidence-only fallback: most stable cross-scale mask, else the pixelwise
/// majority of mutually consistent masks, else empty.
FusionResult fallback_fusion(const EvidenceStore& store, const VerifierConfig& vcfg);

/// Pixels present in at least half of the masks.
Mask majority_mask(const std::vector<Mask>& masks, const Grid& grid);

struct FusionInputs {
  const Scene* scene = nullptr;
  std::string instruction;
  const EvidenceStore* store = nullptr;
  std::vector<RetrievedMemory> priors;
  const Registry* registry = nullptr;
  NoiseModel noise;
  VerifierConfig vcfg;
  RouterConfig rcfg;
};

FusionResult fuse(const FusionInputs& in);

}  // namespace aharness
