#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "aharness/geometry.hpp"
#include "aharness/json_io.hpp"

namespace aharness {

enum class EvidenceType {
  box,
  mask,
  keypoint,
  text_cue,
  imagined_interaction,
  /// Sentinel appended when a call produced nothing usable; it carries the
  /// call's cost so the ledger and retry logic can observe the failure.
  empty_result,
};

std::string to_string(EvidenceType type);
EvidenceType evidence_type_from_string(const std::string& text);
bool is_spatial(EvidenceType type);

struct TextCue {
  std::string summary;
  bool semantic_agreement = false;

  friend bool operator==(const TextCue&, const TextCue&) = default;
};

struct EmptyResult {
  std::string reason;

  friend bool operator==(const EmptyResult&, const EmptyResult&) = default;
};

/// Boxes and key points are in the global frame; masks are in the crop frame
/// implied by the record's roi and scale.
using Payload = std::variant<Box, Mask, KeyPoint, TextCue, EmptyResult>;

/// Diagnostic dimension a deficiency (or a skill) refers to.
enum class Dimension { omega, zeta, mu, none };

std::string to_string(Dimension d);
Dimension dimension_from_string(const std::string& text);

/// Name of a registered skill. The simulated suite uses the five names below;
/// external skills register under their own names.
class SkillId {
 public:
  SkillId() = default;
  explicit SkillId(std::string name) : name_(std::move(name)) {}

  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] bool empty() const { return name_.empty(); }

  friend auto operator<=>(const SkillId&, const SkillId&) = default;
  friend bool operator==(const SkillId&, const SkillId&) = default;

 private:
  std::string name_;
};

namespace skill_ids {
inline const SkillId detect{"detect"};
inline const SkillId segment{"segment"};
inline const SkillId zoom{"zoom"};
inline const SkillId web_search{"web_search"};
inline const SkillId dreamer{"dreamer"};
}  // namespace skill_ids

struct SkillParams {
  Box roi;
  int scale = 1;
  std::string query;
  std::optional<KeyPoint> prompt_point;
  std::map<std::string, double> extras;

  friend bool operator==(const SkillParams&, const SkillParams&) = default;
};

struct SkillAction {
  SkillId skill;
  SkillParams params;

  friend bool operator==(const SkillAction&, const SkillAction&) = default;
};

struct OutputItem {
  EvidenceType kind = EvidenceType::empty_result;
  Payload payload;
  double confidence = 0.0;

  friend bool operator==(const OutputItem&, const OutputItem&) = default;
};

struct SkillOutput {
  SkillId producer;
  std::vector<OutputItem> items;

  friend bool operator==(const SkillOutput&, const SkillOutput&) = default;
};

void to_json(json& j, const SkillParams& p);
void from_json(const json& j, SkillParams& p);
void to_json(json& j, const SkillAction& a);
void from_json(const json& j, SkillAction& a);
/// Payloads are encoded according to `kind` (box → array, mask → run lengths,
/// key point → [x, y, c], text → {summary, semantic_agreement}).
json payload_to_json(const Payload& payload);
Payload payload_from_json(EvidenceType kind, const json& j);
void to_json(json& j, const OutputItem& item);
void from_json(const json& j, OutputItem& item);

std::string describe(const SkillAction& action);

/// Class query derived from an instruction of the form
/// "<verb> the <object> by its <part>" ("mug handle"); the instruction
/// itself when it does not follow that form.
std::string instruction_query(const std::string& instruction);

}  // namespace aharness
