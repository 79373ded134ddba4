#pragma once

#include <cstdint>
#include <vector>

#include "aharness/evidence.hpp"
#include "aharness/geometry.hpp"

namespace aharness::testing {

// Brute-force raster of a box, independent of the run-length code.
inline std::vector<std::uint8_t> raster_box(const Box& b, const Grid& g) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(g.area()), 0);
  for (int y = std::max(0, b.y_min); y < std::min(g.height, b.y_max); ++y) {
    for (int x = std::max(0, b.x_min); x < std::min(g.width, b.x_max); ++x) {
      bits[static_cast<std::size_t>(y) * g.width + x] = 1;
    }
  }
  return bits;
}

inline double raster_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  long inter = 0;
  long uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] & b[i]);
    uni += (a[i] | b[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline Mask box_mask(const Box& b, const Grid& g) { return Mask::from_bitmap(g, raster_box(b, g)); }

inline SkillAction action_for(const SkillId& skill, const Box& roi, int scale = 1) {
  SkillAction a{skill, {}};
  a.params.roi = roi;
  a.params.scale = scale;
  return a;
}

inline std::uint64_t add_box(EvidenceStore& store, const SkillId& producer, const Box& box, double conf, int step,
                             const Box& roi) {
  const SkillOutput out{producer, {OutputItem{EvidenceType::box, box, conf}}};
  return store.parse_and_append(out, action_for(producer, roi), step, 1.0).ids.front();
}

inline std::uint64_t add_box(EvidenceStore& store, const SkillId& producer, const Box& box, double conf, int step) {
  return add_box(store, producer, box, conf, step, Box::full(store.grid()));
}

// `global` is the mask's footprint in the scene frame; it is rendered into the
// crop of (roi, scale) before it is stored.
inline std::uint64_t add_mask(EvidenceStore& store, const SkillId& producer, const Box& global, double conf, int step,
                              const Box& roi, int scale) {
  const RoiTransform t{store.grid(), roi, scale};
  const Mask local = lift_to_local(box_mask(global, store.grid()), t);
  const SkillOutput out{producer, {OutputItem{EvidenceType::mask, local, conf}}};
  return store.parse_and_append(out, action_for(producer, roi, scale), step, 1.0).ids.front();
}

inline std::uint64_t add_mask(EvidenceStore& store, const SkillId& producer, const Box& global, double conf, int step) {
  return add_mask(store, producer, global, conf, step, Box::full(store.grid()), 1);
}

inline std::uint64_t add_text(EvidenceStore& store, const SkillId& producer, bool agreement, double conf, int step) {
  const SkillOutput out{producer, {OutputItem{EvidenceType::text_cue, TextCue{"cue", agreement}, conf}}};
  return store.parse_and_append(out, action_for(producer, Box::full(store.grid())), step, 1.0).ids.front();
}

inline std::uint64_t add_point(EvidenceStore& store, const SkillId& producer, EvidenceType kind, double x, double y,
                               double conf, int step) {
  const SkillOutput out{producer, {OutputItem{kind, KeyPoint{x, y, conf}, conf}}};
  return store.parse_and_append(out, action_for(producer, Box::full(store.grid())), step, 1.0).ids.front();
}

}  // namespace aharness::testing
