#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aharness/action.hpp"
#include "aharness/scene.hpp"

namespace aharness {

/// Skill invocation failed; the runtime turns this into a sentinel record and
/// still charges the call.
class SkillFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public SkillFailure {
 public:
  using SkillFailure::SkillFailure;
};

class RoutingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NoiseModel {
  std::uint64_t seed = 0;
  double difficulty = 0.0;
  double p_det = 0.6;
  double p_seg = 0.7;
  double p_web = 0.8;
  double p_dream = 0.7;
  /// Effective difficulty shrinks by this factor per doubling of scale.
  double zoom_factor = 0.5;

  [[nodiscard]] double effective_difficulty(int scale) const;
};

struct SkillRequest {
  const Scene* scene = nullptr;
  std::string instruction;
  SkillAction action;
  int step = 1;
  NoiseModel noise;
};

using SkillInvoker = std::function<SkillOutput(const SkillRequest&)>;

struct SkillDescriptor {
  SkillId id;
  /// Evidence types the skill may emit; decides which diagnostic it serves.
  std::vector<EvidenceType> emits;
  double cost_hint = 1.0;
  SkillInvoker invoker;
  std::string origin = "simulated";
  /// Empty means always available. A withdrawn skill is skipped by skills()
  /// and refused by invoke().
  std::function<bool()> available;
};

/// Diagnostic a skill addresses: masks repair consistency, boxes repair
/// stability, semantic evidence repairs sufficiency.
Dimension addressed_dimension(const SkillId& id, const std::vector<EvidenceType>& emits);

class Registry {
 public:
  /// Throws std::invalid_argument on a duplicate id.
  void register_skill(SkillDescriptor descriptor);
  void deregister(const SkillId& id);

  [[nodiscard]] bool contains(const SkillId& id) const;
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  /// Stable integer of a skill: registration order starting at 1.
  [[nodiscard]] int index_of(const SkillId& id) const;
  [[nodiscard]] Dimension dimension_of(const SkillId& id) const;
  [[nodiscard]] const SkillDescriptor& descriptor(const SkillId& id) const;
  /// Available skills in stable-index order.
  [[nodiscard]] std::vector<SkillId> skills() const;

  /// Throws RoutingError for unregistered skills.
  SkillOutput invoke(const SkillRequest& request) const;

 private:
  struct Entry {
    int index;
    SkillDescriptor descriptor;
  };
  const Entry& entry(const SkillId& id) const;

  std::vector<Entry> entries_;
  int next_index_ = 1;
};

/// 1.0 per call unless a per-skill latency weight is given.
double estimate_cost(const SkillAction& action, const std::map<std::string, double>* weights = nullptr);

/// Validates roi, scale and the per-skill requirements. Throws ParameterError.
void validate_params(const SkillAction& action, const Grid& frame);

// Simulated suite over synthetic scenes. Draws come from the counter stream
// keyed by (combine(noise.seed, scene.seed), skill name, step).
SkillOutput simulate_detect(const SkillRequest& request);
SkillOutput simulate_segment(const SkillRequest& request);
/// Narrowed, upscaled re-detection. The action already carries the zoomed
/// roi and scale; the output is box evidence in the global frame.
SkillOutput simulate_zoom(const SkillRequest& request);
SkillOutput simulate_web_search(const SkillRequest& request);
SkillOutput simulate_dreamer(const SkillRequest& request);

/// Registers detect, segment, zoom, web_search and dreamer in that order.
void register_simulated_suite(Registry& registry);
Registry simulated_registry();

std::uint64_t skill_stream_seed(const NoiseModel& noise, const Scene& scene);

}  // namespace aharness
