#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aharness/action.hpp"

namespace aharness {

struct EvidenceRecord {
  std::uint64_t id = 0;
  EvidenceType kind = EvidenceType::empty_result;
  Payload payload;
  Box roi;
  int scale = 1;
  SkillId producer;
  double cost = 0.0;
  int step = 1;
  double confidence = 0.0;

  [[nodiscard]] bool is_sentinel() const { return kind == EvidenceType::empty_result; }
  [[nodiscard]] RoiTransform transform(const Grid& frame) const { return {frame, roi, scale}; }

  friend bool operator==(const EvidenceRecord&, const EvidenceRecord&) = default;
};

void to_json(json& j, const EvidenceRecord& r);
void from_json(const json& j, EvidenceRecord& r);

struct ParseResult {
  std::vector<std::uint64_t> ids;
  /// One message per item that failed validation.
  std::vector<std::string> rejected;
};

/// Append-only, per-episode evidence log.
class EvidenceStore {
 public:
  EvidenceStore() = default;
  explicit EvidenceStore(Grid grid) : grid_(grid) {}

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] const std::vector<EvidenceRecord>& records() const { return records_; }
  [[nodiscard]] std::size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }
  [[nodiscard]] double cumulative_cost() const { return cumulative_cost_; }
  [[nodiscard]] int last_step() const { return records_.empty() ? 0 : records_.back().step; }
  [[nodiscard]] const EvidenceRecord* find(std::uint64_t id) const;

  /// Wraps a raw skill output into records. Cost lands on the first record of
  /// the call; a call with no usable item leaves one sentinel carrying it.
  ParseResult parse_and_append(const SkillOutput& raw, const SkillAction& action, int step, double cost);

  /// Re-inserts a record read from a trace. Ids must keep increasing.
  void restore(EvidenceRecord record);

  /// Payload of a spatial record mapped into the global frame. Boxes and key
  /// points are already global; masks are projected from their crop.
  [[nodiscard]] Mask global_mask(const EvidenceRecord& record) const;

 private:
  std::optional<std::string> validate(const OutputItem& item, const SkillAction& action) const;

  Grid grid_{};
  std::vector<EvidenceRecord> records_;
  double cumulative_cost_ = 0.0;
  std::uint64_t next_id_ = 1;
};

struct BoxEvidence {
  std::uint64_t id;
  Box box;
  double confidence;
};

struct MaskEvidence {
  std::uint64_t id;
  Mask mask;  // global frame
  double confidence;
};

struct Localizers {
  std::vector<BoxEvidence> boxes;
  std::vector<MaskEvidence> masks;
};

/// Per producer, the box and mask records of its most recent step whose roi
/// intersects the query roi.
Localizers latest_boxes_and_masks(const EvidenceStore& store, const Box& roi);

struct Hypothesis {
  std::uint64_t record_id = 0;
  Mask mask;  // global frame
  Box roi;
  int scale = 1;
};

/// Highest-confidence mask; ties go to the later step, then the higher id.
std::optional<Hypothesis> best_hypothesis(const EvidenceStore& store);

/// Unordered pairs of latest-per-(producer, scale) records at different
/// scales, for masks and for point-like records separately.
std::vector<std::pair<std::uint64_t, std::uint64_t>> stability_pairs(const EvidenceStore& store);

/// Count of records per evidence type (sentinels included).
std::vector<std::pair<EvidenceType, int>> type_counts(const EvidenceStore& store);

}  // namespace aharness
