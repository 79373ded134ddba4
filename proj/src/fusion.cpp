#include "aharness/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace aharness {

std::string to_string(FusionSource s) {
  switch (s) {
    case FusionSource::prompted_segmentation: return "prompted-segmentation";
    case FusionSource::scale_stable_selection: return "scale-stable-selection";
    case FusionSource::consistent_average: return "consistent-average";
    case FusionSource::empty: return "empty";
  }
  return "empty";
}

FusionSource fusion_source_from_string(const std::string& text) {
  if (text == "prompted-segmentation") return FusionSource::prompted_segmentation;
  if (text == "scale-stable-selection") return FusionSource::scale_stable_selection;
  if (text == "consistent-average") return FusionSource::consistent_average;
  if (text == "empty") return FusionSource::empty;
  throw std::invalid_argument("unknown fusion source: " + text);
}

void to_json(json& j, const FusionResult& r) {
  j = json{{"mask", r.mask}, {"source", to_string(r.source)}, {"fusion_cost", r.fusion_cost}, {"note", r.note}};
  j["keypoint"] = r.keypoint ? json(*r.keypoint) : json(nullptr);
  j["prompt_action"] = r.prompt_action ? json(*r.prompt_action) : json(nullptr);
}

void from_json(const json& j, FusionResult& r) {
  r.mask = j.at("mask").get<Mask>();
  r.source = fusion_source_from_string(j.at("source").get<std::string>());
  r.fusion_cost = j.at("fusion_cost").get<double>();
  r.note = j.value("note", std::string{});
  r.keypoint.reset();
  if (!j.at("keypoint").is_null()) r.keypoint = j.at("keypoint").get<KeyPoint>();
  r.prompt_action.reset();
  if (!j.at("prompt_action").is_null()) r.prompt_action = j.at("prompt_action").get<SkillAction>();
}

namespace {

KeyPoint inside_point(const Mask& m) {
  const auto c = m.centroid();
  const auto p = nearest_point_inside(m, c->first, c->second);
  return p.value_or(KeyPoint{c->first, c->second, 1.0});
}

const RetrievedMemory* reference_hit(const std::vector<RetrievedMemory>& priors, const RouterConfig& rcfg) {
  const RetrievedMemory* best = nullptr;
  for (const RetrievedMemory& m : priors) {
    if (!m.reference_mask || m.similarity < rcfg.similarity_floor) continue;
    if (best == nullptr || m.similarity > best->similarity) best = &m;
  }
  return best;
}

}  // namespace

std::optional<KeypointChoice> select_keypoint(const EvidenceStore& store, const std::vector<RetrievedMemory>& priors,
                                              const VerifierConfig& vcfg, const RouterConfig& rcfg) {
  const auto stability = record_stability(store);
  const auto weights = effective_weights(store, stability, vcfg);
  const auto stab_of = [&](std::uint64_t id) {
    const auto it = stability.find(id);
    return it == stability.end() ? 1.0 : it->second;
  };

  std::optional<KeypointChoice> choice;
  const EvidenceRecord* best_mask = nullptr;
  for (const EvidenceRecord& r : store.records()) {
    if (r.kind != EvidenceType::mask) continue;
    const double w = weights.count(r.id) ? weights.at(r.id) : 0.0;
    if (w <= 0.0 || store.global_mask(r).empty()) continue;
    if (best_mask == nullptr) {
      best_mask = &r;
      continue;
    }
    const double bw = weights.at(best_mask->id);
    const auto key = [&](const EvidenceRecord& x, double wx) {
      return std::tuple{wx, stab_of(x.id), x.confidence, x.id};
    };
    if (key(r, w) > key(*best_mask, bw)) best_mask = &r;
  }
  if (best_mask != nullptr) {
    choice = KeypointChoice{inside_point(store.global_mask(*best_mask)), best_mask->id, "mask", false};
    return choice;  // a corroborated mask is never overridden by memory
  }

  if (const auto h = best_hypothesis(store); h && !h->mask.empty()) {
    choice = KeypointChoice{inside_point(h->mask), h->record_id, "mask", false};
  } else {
    const EvidenceRecord* best_box = nullptr;
    for (const EvidenceRecord& r : store.records()) {
      if (r.kind == EvidenceType::box && (best_box == nullptr || r.confidence >= best_box->confidence)) best_box = &r;
    }
    if (best_box != nullptr) {
      const auto [x, y] = std::get<Box>(best_box->payload).center();
      choice = KeypointChoice{{x, y, best_box->confidence}, best_box->id, "box", false};
    } else {
      for (const EvidenceRecord& r : store.records()) {
        if (r.kind == EvidenceType::keypoint || r.kind == EvidenceType::imagined_interaction) {
          choice = KeypointChoice{std::get<KeyPoint>(r.payload), r.id, "dream", false};
        }
      }
    }
  }

  const RetrievedMemory* ref = reference_hit(priors, rcfg);
  if (ref == nullptr) return choice;
  const Mask reference = resample(*ref->reference_mask, store.grid());
  if (reference.empty()) return choice;
  if (!choice) return KeypointChoice{inside_point(reference), 0, "memory", true};
  if (choice->origin == "dream") {
    if (const auto p = nearest_point_inside(reference, choice->point.x, choice->point.y)) {
      choice->point.x = p->x;
      choice->point.y = p->y;
      choice->snapped = true;
    }
  }
  return choice;
}

Mask majority_mask(const std::vector<Mask>& masks, const Grid& grid) {
  if (masks.empty()) return Mask(grid);
  std::vector<int> votes(static_cast<std::size_t>(grid.area()), 0);
  for (const Mask& m : masks) {
    if (!(m.grid() == grid)) throw GeometryError("majority over masks of different grids");
    const auto bits = m.to_bitmap();
    for (std::size_t i = 0; i < bits.size(); ++i) votes[i] += bits[i];
  }
  std::vector<std::uint8_t> keep(votes.size());
  const int n = static_cast<int>(masks.size());
  for (std::size_t i = 0; i < votes.size(); ++i) keep[i] = votes[i] > 0 && 2 * votes[i] >= n;
  return Mask::from_bitmap(grid, keep);
}

FusionResult fallback_fusion(const EvidenceStore& store, const VerifierConfig& vcfg) {
  FusionResult out;
  out.mask = Mask(store.grid());
  const auto stability = record_stability(store);
  const auto weights = effective_weights(store, stability, vcfg);
  const auto weight_of = [&](std::uint64_t id) { return weights.count(id) ? weights.at(id) : 0.0; };

  const EvidenceRecord* stable = nullptr;
  for (const EvidenceRecord& r : store.records()) {
    if (r.kind != EvidenceType::mask || !stability.count(r.id)) continue;
    if (stable == nullptr) {
      stable = &r;
      continue;
    }
    const auto key = [&](const EvidenceRecord& x) { return std::tuple{stability.at(x.id), weight_of(x.id), x.id}; };
    if (key(r) > key(*stable)) stable = &r;
  }
  if (stable != nullptr) {
    out.mask = store.global_mask(*stable);
    out.source = FusionSource::scale_stable_selection;
    return out;
  }

  std::vector<const EvidenceRecord*> masks;
  for (const EvidenceRecord& r : store.records()) {
    if (r.kind == EvidenceType::mask) masks.push_back(&r);
  }
  if (masks.empty()) return out;
  std::stable_sort(masks.begin(), masks.end(), [&](const EvidenceRecord* a, const EvidenceRecord* b) {
    if (weight_of(a->id) != weight_of(b->id)) return weight_of(a->id) > weight_of(b->id);
    if (a->confidence != b->confidence) return a->confidence > b->confidence;
    return a->id > b->id;
  });
  std::vector<Mask> consistent;
  for (const EvidenceRecord* r : masks) {
    Mask m = store.global_mask(*r);
    const bool fits = std::all_of(consistent.begin(), consistent.end(),
                                  [&](const Mask& c) { return iou(c, m) >= vcfg.corroboration_iou; });
    if (fits) consistent.push_back(std::move(m));
  }
  out.mask = majority_mask(consistent, store.grid());
  out.source = FusionSource::consistent_average;
  return out;
}

FusionResult fuse(const FusionInputs& in) {
  const EvidenceStore& store = *in.store;
  const auto choice = select_keypoint(store, in.priors, in.vcfg, in.rcfg);
  const bool can_segment = in.registry != nullptr && in.registry->contains(skill_ids::segment) && in.scene != nullptr;
  if (choice && can_segment) {
    const Grid& frame = store.grid();
    Box roi = Box::full(frame);
    if (const auto h = best_hypothesis(store); h && h->roi.contains(choice->point.x, choice->point.y)) roi = h->roi;
    SkillAction action{skill_ids::segment, {}};
    action.params.roi = roi;
    action.params.scale = zoom_scale_for(roi, frame);
    action.params.query = instruction_query(in.instruction);
    action.params.prompt_point = KeyPoint{choice->point.x, choice->point.y, 1.0};

    FusionResult out;
    out.keypoint = choice->point;
    out.prompt_action = action;
    out.fusion_cost = estimate_cost(action, &in.rcfg.cost_weights);
    try {
      SkillRequest req{in.scene, in.instruction, action, store.last_step() + 1, in.noise};
      const SkillOutput raw = in.registry->invoke(req);
      for (const OutputItem& item : raw.items) {
        if (item.kind != EvidenceType::mask) continue;
        const Mask& local = std::get<Mask>(item.payload);
        const RoiTransform t{frame, roi, action.params.scale};
        if (!(local.grid() == t.local_grid())) continue;
        out.mask = project_to_global(local, t);
        out.source = FusionSource::prompted_segmentation;
        out.note = "keypoint from " + choice->origin + (choice->snapped ? " (snapped to reference)" : "");
        return out;
      }
      out.note = "prompted segmentation returned no mask";
    } catch (const std::exception& e) {
      out.note = std::string("prompted segmentation failed: ") + e.what();
    }
    FusionResult fb = fallback_fusion(store, in.vcfg);
    fb.keypoint = out.keypoint;
    fb.prompt_action = out.prompt_action;
    fb.fusion_cost = out.fusion_cost;
    fb.note = out.note;
    return fb;
  }
  FusionResult fb = fallback_fusion(store, in.vcfg);
  if (choice) fb.keypoint = choice->point;
  fb.note = choice ? "segmentation unavailable" : "no keypoint";
  return fb;
}

}  // namespace aharness
