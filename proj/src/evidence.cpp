#include "aharness/evidence.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

namespace aharness {

void to_json(json& j, const EvidenceRecord& r) {
  j = json{{"id", r.id},
           {"kind", to_string(r.kind)},
           {"payload", payload_to_json(r.payload)},
           {"roi", r.roi},
           {"scale", r.scale},
           {"producer", r.producer.name()},
           {"cost", r.cost},
           {"step", r.step},
           {"confidence", r.confidence}};
}

void from_json(const json& j, EvidenceRecord& r) {
  r.id = j.at("id").get<std::uint64_t>();
  r.kind = evidence_type_from_string(j.at("kind").get<std::string>());
  r.payload = payload_from_json(r.kind, j.at("payload"));
  r.roi = j.at("roi").get<Box>();
  r.scale = j.at("scale").get<int>();
  r.producer = SkillId(j.at("producer").get<std::string>());
  r.cost = j.at("cost").get<double>();
  r.step = j.at("step").get<int>();
  r.confidence = j.at("confidence").get<double>();
}

const EvidenceRecord* EvidenceStore::find(std::uint64_t id) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), id,
                             [](const EvidenceRecord& r, std::uint64_t key) { return r.id < key; });
  return it != records_.end() && it->id == id ? &*it : nullptr;
}

std::optional<std::string> EvidenceStore::validate(const OutputItem& item, const SkillAction& action) const {
  if (item.confidence < 0.0 || item.confidence > 1.0) return "confidence outside [0, 1]";
  const auto expected_payload = [&]() -> bool {
    switch (item.kind) {
      case EvidenceType::box: return std::holds_alternative<Box>(item.payload);
      case EvidenceType::mask: return std::holds_alternative<Mask>(item.payload);
      case EvidenceType::keypoint:
      case EvidenceType::imagined_interaction: return std::holds_alternative<KeyPoint>(item.payload);
      case EvidenceType::text_cue: return std::holds_alternative<TextCue>(item.payload);
      case EvidenceType::empty_result: return std::holds_alternative<EmptyResult>(item.payload);
    }
    return false;
  }();
  if (!expected_payload) return "payload does not match kind " + to_string(item.kind);

  switch (item.kind) {
    case EvidenceType::box: {
      const Box& b = std::get<Box>(item.payload);
      if (!b.well_formed() || !b.within(grid_)) return "box " + to_string(b) + " outside scene grid";
      break;
    }
    case EvidenceType::mask: {
      const Mask& m = std::get<Mask>(item.payload);
      const RoiTransform t{grid_, action.params.roi, action.params.scale};
      if (!(m.grid() == t.local_grid())) return "mask grid does not match the crop of the call";
      break;
    }
    case EvidenceType::keypoint:
    case EvidenceType::imagined_interaction: {
      const KeyPoint& p = std::get<KeyPoint>(item.payload);
      if (!p.within(grid_)) return "key point outside scene grid";
      if (p.confidence < 0.0 || p.confidence > 1.0) return "key point confidence outside [0, 1]";
      break;
    }
    case EvidenceType::text_cue:
      if (std::get<TextCue>(item.payload).summary.empty()) return "text cue with empty summary";
      break;
    case EvidenceType::empty_result: break;
  }
  return std::nullopt;
}

ParseResult EvidenceStore::parse_and_append(const SkillOutput& raw, const SkillAction& action, int step, double cost) {
  if (step < 1 || step < last_step()) throw std::invalid_argument("evidence step must not go backwards");
  if (cost < 0.0) throw std::invalid_argument("negative call cost");
  const RoiTransform t{grid_, action.params.roi, action.params.scale};
  t.validate();

  ParseResult result;
  bool charged = false;
  const auto append = [&](EvidenceType kind, Payload payload, double confidence) {
    EvidenceRecord r;
    r.id = next_id_++;
    r.kind = kind;
    r.payload = std::move(payload);
    r.roi = action.params.roi;
    r.scale = action.params.scale;
    r.producer = action.skill;
    r.cost = charged ? 0.0 : cost;
    r.step = step;
    r.confidence = confidence;
    charged = true;
    cumulative_cost_ += r.cost;
    result.ids.push_back(r.id);
    records_.push_back(std::move(r));
  };

  for (const OutputItem& item : raw.items) {
    if (item.kind == EvidenceType::empty_result) continue;
    if (auto problem = validate(item, action)) {
      result.rejected.push_back(*problem);
      continue;
    }
    append(item.kind, item.payload, item.confidence);
  }
  if (!charged) {
    std::string reason = "no usable output";
    for (const OutputItem& item : raw.items) {
      if (item.kind == EvidenceType::empty_result) reason = std::get<EmptyResult>(item.payload).reason;
    }
    if (!result.rejected.empty()) reason = "all items rejected: " + result.rejected.front();
    append(EvidenceType::empty_result, EmptyResult{reason}, 0.0);
  }
  return result;
}

void EvidenceStore::restore(EvidenceRecord record) {
  if (record.id < next_id_ && !records_.empty()) throw std::invalid_argument("restored record ids must increase");
  if (record.step < last_step()) throw std::invalid_argument("restored record steps must not go backwards");
  next_id_ = record.id + 1;
  cumulative_cost_ += record.cost;
  records_.push_back(std::move(record));
}

Mask EvidenceStore::global_mask(const EvidenceRecord& record) const {
  switch (record.kind) {
    case EvidenceType::mask: return project_to_global(std::get<Mask>(record.payload), record.transform(grid_));
    case EvidenceType::box: return chi_fill(std::get<Box>(record.payload), grid_);
    default: return Mask(grid_);
  }
}

Localizers latest_boxes_and_masks(const EvidenceStore& store, const Box& roi) {
  // producer -> latest step holding a box or mask inside the query roi
  std::map<SkillId, int> latest;
  for (const EvidenceRecord& r : store.records()) {
    if (r.kind != EvidenceType::box && r.kind != EvidenceType::mask) continue;
    if (!overlaps(r.roi, roi)) continue;
    auto& s = latest[r.producer];
    s = std::max(s, r.step);
  }
  Localizers out;
  for (const EvidenceRecord& r : store.records()) {
    if (r.kind != EvidenceType::box && r.kind != EvidenceType::mask) continue;
    if (!overlaps(r.roi, roi)) continue;
    if (latest[r.producer] != r.step) continue;
    if (r.kind == EvidenceType::box) {
      out.boxes.push_back({r.id, std::get<Box>(r.payload), r.confidence});
    } else {
      out.masks.push_back({r.id, store.global_mask(r), r.confidence});
    }
  }
  return out;
}

std::optional<Hypothesis> best_hypothesis(const EvidenceStore& store) {
  const EvidenceRecord* best = nullptr;
  for (const EvidenceRecord& r : store.records()) {
    if (r.kind != EvidenceType::mask) continue;
    if (best == nullptr || r.confidence > best->confidence ||
        (r.confidence == best->confidence && (r.step > best->step || (r.step == best->step && r.id > best->id)))) {
      best = &r;
    }
  }
  if (best == nullptr) return std::nullopt;
  return Hypothesis{best->id, store.global_mask(*best), best->roi, best->scale};
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> stability_pairs(const EvidenceStore& store) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
  for (const bool masks : {true, false}) {
    std::map<std::pair<SkillId, int>, std::uint64_t> latest;
    for (const EvidenceRecord& r : store.records()) {
      const bool is_mask = r.kind == EvidenceType::mask;
      const bool is_point = r.kind == EvidenceType::keypoint || r.kind == EvidenceType::imagined_interaction;
      if (masks ? !is_mask : !is_point) continue;
      latest[{r.producer, r.scale}] = r.id;  // records are in id order
    }
    std::vector<std::pair<int, std::uint64_t>> chosen;
    for (const auto& [key, id] : latest) chosen.emplace_back(key.second, id);
    std::sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      for (std::size_t k = i + 1; k < chosen.size(); ++k) {
        if (chosen[i].first != chosen[k].first) pairs.emplace_back(chosen[i].second, chosen[k].second);
      }
    }
  }
  return pairs;
}

std::vector<std::pair<EvidenceType, int>> type_counts(const EvidenceStore& store) {
  std::vector<std::pair<EvidenceType, int>> counts;
  for (EvidenceType t : {EvidenceType::box, EvidenceType::mask, EvidenceType::keypoint, EvidenceType::text_cue,
                         EvidenceType::imagined_interaction, EvidenceType::empty_result}) {
    counts.emplace_back(t, 0);
  }
  for (const EvidenceRecord& r : store.records()) {
    for (auto& [t, n] : counts) {
      if (t == r.kind) ++n;
    }
  }
  return counts;
}

}  // namespace aharness
