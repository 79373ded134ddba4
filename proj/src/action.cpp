#include "aharness/action.hpp"

#include <sstream>
#include <stdexcept>

namespace aharness {

std::string to_string(EvidenceType type) {
  switch (type) {
    case EvidenceType::box: return "box";
    case EvidenceType::mask: return "mask";
    case EvidenceType::keypoint: return "keypoint";
    case EvidenceType::text_cue: return "text_cue";
    case EvidenceType::imagined_interaction: return "imagined_interaction";
    case EvidenceType::empty_result: return "empty_result";
  }
  return "empty_result";
}

EvidenceType evidence_type_from_string(const std::string& text) {
  if (text == "box") return EvidenceType::box;
  if (text == "mask") return EvidenceType::mask;
  if (text == "keypoint") return EvidenceType::keypoint;
  if (text == "text_cue") return EvidenceType::text_cue;
  if (text == "imagined_interaction") return EvidenceType::imagined_interaction;
  if (text == "empty_result") return EvidenceType::empty_result;
  throw std::invalid_argument("unknown evidence type: " + text);
}

bool is_spatial(EvidenceType type) {
  return type == EvidenceType::box || type == EvidenceType::mask || type == EvidenceType::keypoint ||
         type == EvidenceType::imagined_interaction;
}

std::string to_string(Dimension d) {
  switch (d) {
    case Dimension::omega: return "omega";
    case Dimension::zeta: return "zeta";
    case Dimension::mu: return "mu";
    case Dimension::none: return "none";
  }
  return "none";
}

Dimension dimension_from_string(const std::string& text) {
  if (text == "omega") return Dimension::omega;
  if (text == "zeta") return Dimension::zeta;
  if (text == "mu") return Dimension::mu;
  if (text == "none") return Dimension::none;
  throw std::invalid_argument("unknown dimension: " + text);
}

void to_json(json& j, const SkillParams& p) {
  j = json{{"roi", p.roi}, {"scale", p.scale}, {"query", p.query}};
  j["prompt_point"] = p.prompt_point ? json(json::array({p.prompt_point->x, p.prompt_point->y})) : json(nullptr);
  if (!p.extras.empty()) j["extras"] = p.extras;
}

void from_json(const json& j, SkillParams& p) {
  p.roi = j.at("roi").get<Box>();
  p.scale = j.at("scale").get<int>();
  p.query = j.value("query", std::string{});
  p.prompt_point.reset();
  if (j.contains("prompt_point") && !j.at("prompt_point").is_null()) {
    const auto& pp = j.at("prompt_point");
    p.prompt_point = KeyPoint{pp.at(0).get<double>(), pp.at(1).get<double>(), 1.0};
  }
  p.extras.clear();
  if (j.contains("extras")) p.extras = j.at("extras").get<std::map<std::string, double>>();
}

void to_json(json& j, const SkillAction& a) { j = json{{"skill", a.skill.name()}, {"params", a.params}}; }

void from_json(const json& j, SkillAction& a) {
  a.skill = SkillId(j.at("skill").get<std::string>());
  a.params = j.at("params").get<SkillParams>();
}

json payload_to_json(const Payload& payload) {
  return std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TextCue>) {
          return json{{"summary", p.summary}, {"semantic_agreement", p.semantic_agreement}};
        } else if constexpr (std::is_same_v<T, EmptyResult>) {
          return json{{"reason", p.reason}};
        } else {
          return json(p);
        }
      },
      payload);
}

Payload payload_from_json(EvidenceType kind, const json& j) {
  switch (kind) {
    case EvidenceType::box: return j.get<Box>();
    case EvidenceType::mask: return j.get<Mask>();
    case EvidenceType::keypoint:
    case EvidenceType::imagined_interaction: return j.get<KeyPoint>();
    case EvidenceType::text_cue:
      return TextCue{j.at("summary").get<std::string>(), j.at("semantic_agreement").get<bool>()};
    case EvidenceType::empty_result: return EmptyResult{j.value("reason", std::string{})};
  }
  throw std::invalid_argument("unhandled evidence type");
}

void to_json(json& j, const OutputItem& item) {
  j = json{{"kind", to_string(item.kind)}, {"payload", payload_to_json(item.payload)}, {"confidence", item.confidence}};
}

void from_json(const json& j, OutputItem& item) {
  item.kind = evidence_type_from_string(j.at("kind").get<std::string>());
  item.payload = payload_from_json(item.kind, j.at("payload"));
  item.confidence = j.at("confidence").get<double>();
}

std::string describe(const SkillAction& action) {
  std::ostringstream os;
  os << action.skill.name() << "(roi=" << to_string(action.params.roi) << ", scale=" << action.params.scale;
  if (action.params.prompt_point) os << ", point=(" << action.params.prompt_point->x << ',' << action.params.prompt_point->y << ')';
  os << ')';
  return os.str();
}

std::string instruction_query(const std::string& instruction) {
  const auto the = instruction.find(" the ");
  const auto its = instruction.find(" by its ");
  if (the == std::string::npos || its == std::string::npos || its <= the) return instruction;
  return instruction.substr(the + 5, its - the - 5) + " " + instruction.substr(its + 8);
}

}  // namespace aharness
