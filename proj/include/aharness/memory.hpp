#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aharness/action.hpp"
#include "aharness/evidence.hpp"

namespace aharness {

using Embedding = std::vector<double>;

/// Any embedder must return unit-norm vectors of a fixed dimension.
class Embedder {
 public:
  virtual ~Embedder() = default;
  [[nodiscard]] virtual Embedding embed(const std::vector<std::string>& descriptor,
                                        const std::string& instruction) const = 0;
  [[nodiscard]] virtual std::size_t dimension() const = 0;
};

/// Signed token feature hashing: descriptor tokens fill the visual block,
/// lower-cased instruction words fill the instruction block.
class HashingEmbedder final : public Embedder {
 public:
  HashingEmbedder(std::size_t visual_dim = 192, std::size_t instruction_dim = 64, bool normalize_halves = false);

  [[nodiscard]] Embedding embed(const std::vector<std::string>& descriptor, const std::string& instruction) const override;
  [[nodiscard]] std::size_t dimension() const override { return visual_dim_ + instruction_dim_; }
  /// True when the last call had no usable tokens and fell back to the
  /// uniform vector.
  [[nodiscard]] static bool is_uninformative(const Embedding& e);

 private:
  std::size_t visual_dim_;
  std::size_t instruction_dim_;
  bool normalize_halves_;
};

double cosine(const Embedding& a, const Embedding& b);

enum class Tier { cs, tt };
std::string to_string(Tier t);

struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;

  friend bool operator==(const ParamRange&, const ParamRange&) = default;
};

/// skill → scalar parameter → observed [lo, hi].
using ParamRanges = std::map<std::string, std::map<std::string, ParamRange>>;

ParamRanges ranges_of(const std::vector<SkillAction>& actions);
void merge_ranges(ParamRanges& into, const ParamRanges& other);

struct EvidenceSummary {
  std::map<std::string, int> counts;
  double omega = 0.0;
  double zeta = 0.0;
  double mu = 0.0;
  double v = 0.0;
  std::optional<Box> hypothesis_box;
  Grid frame{};
  std::vector<SkillParams> step_params;

  friend bool operator==(const EvidenceSummary&, const EvidenceSummary&) = default;
};

struct MemoryEntry {
  std::uint64_t inserted_at = 0;
  std::string source;
  Embedding embedding;
  std::vector<SkillAction> action_sequence;
  ParamRanges param_ranges;
  EvidenceSummary summary;
  double outcome_score = 0.0;
  std::optional<Mask> reference_mask;

  friend bool operator==(const MemoryEntry&, const MemoryEntry&) = default;
};

struct ExperienceCapsule {
  std::uint64_t created_at = 0;
  /// Insertion stamp of the newest entry folded in.
  std::uint64_t inserted_at = 0;
  Embedding embedding;
  EvidenceSummary summary;
  ParamRanges param_ranges;
  std::vector<SkillAction> action_sequence;
  double outcome_score = 0.0;
  int merge_count = 1;

  friend bool operator==(const ExperienceCapsule&, const ExperienceCapsule&) = default;
};

ExperienceCapsule compress(const MemoryEntry& entry, std::uint64_t created_at);
/// Folds `older` into `into`: counts and merge counts add, ranges union,
/// diagnostics and embeddings average by merge count.
void merge_capsule(ExperienceCapsule& into, const ExperienceCapsule& older);

class MemoryBank {
 public:
  MemoryBank(Tier tier, std::size_t capacity);

  [[nodiscard]] Tier tier() const { return tier_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t capsule_capacity() const { return capacity_; }
  [[nodiscard]] const std::deque<MemoryEntry>& entries() const { return entries_; }
  [[nodiscard]] const std::vector<ExperienceCapsule>& capsules() const { return capsules_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] std::uint64_t clock() const { return clock_; }

  /// Appends and stamps the entry, then restores the capacity bound.
  void insert(MemoryEntry entry);
  /// Moves the oldest entry into a capsule while over capacity; a full
  /// capsule list merges its oldest capsule into the nearest one.
  void metabolize();
  void clear();

  /// Restores snapshot content verbatim.
  void restore(std::deque<MemoryEntry> entries, std::vector<ExperienceCapsule> capsules, std::uint64_t clock);

 private:
  Tier tier_;
  std::size_t capacity_;
  std::deque<MemoryEntry> entries_;
  std::vector<ExperienceCapsule> capsules_;
  std::uint64_t clock_ = 0;
};

/// Writes an accepted episode; a rejected one leaves the bank untouched.
void write_back(MemoryBank& tt, MemoryEntry entry, bool accepted);

struct LibraryItem {
  std::string source;
  std::vector<std::string> descriptor;
  std::string instruction;
  Mask reference_mask;
  std::vector<SkillAction> solved_actions;
};

struct SeedReport {
  std::size_t stored = 0;
  std::size_t rejected = 0;
};

SeedReport seed_cs(MemoryBank& cs, const std::vector<LibraryItem>& library, const Embedder& embedder);

struct RetrievedMemory {
  double similarity = 0.0;
  Tier tier = Tier::tt;
  bool capsule = false;
  std::string source;
  std::uint64_t inserted_at = 0;
  double outcome_score = 0.0;
  std::vector<SkillAction> action_sequence;
  ParamRanges param_ranges;
  std::optional<Mask> reference_mask;
  std::optional<Box> region;
  Grid frame{};

  friend bool operator==(const RetrievedMemory&, const RetrievedMemory&) = default;
};

/// Top-n by cosine over every entry and capsule of the given banks; ties
/// prefer higher outcome score, then the more recent insertion.
std::vector<RetrievedMemory> retrieve(const std::vector<const MemoryBank*>& banks, const Embedding& query, std::size_t n);

/// Region of a retrieved memory mapped into `frame` (reference-mask extent
/// for common-sense entries, verified hypothesis box otherwise).
std::optional<Box> transfer_region(const RetrievedMemory& m, const Grid& frame);

void to_json(json& j, const EvidenceSummary& s);
void from_json(const json& j, EvidenceSummary& s);
void to_json(json& j, const MemoryEntry& e);
void from_json(const json& j, MemoryEntry& e);
void to_json(json& j, const ExperienceCapsule& c);
void from_json(const json& j, ExperienceCapsule& c);
void to_json(json& j, const RetrievedMemory& m);
void from_json(const json& j, RetrievedMemory& m);

/// JSON lines: a bank header, then one line per entry and per capsule.
std::string serialize_bank(const MemoryBank& bank);
void save_bank(const MemoryBank& bank, const std::filesystem::path& path);
MemoryBank load_bank(const std::filesystem::path& path);

}  // namespace aharness
