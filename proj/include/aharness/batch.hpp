#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aharness/runtime.hpp"
#include "aharness/scenario.hpp"

namespace aharness {

struct EpisodeSummary {
  std::string scene_id;
  Band band = Band::easy;
  double iou = 0.0;
  bool accepted = false;
  int in_loop_calls = 0;
  int detection_calls = 0;
  int routing_decisions = 0;
  int fallback_decisions = 0;
  double charged_cost = 0.0;
  double fusion_cost = 0.0;
  std::string fusion_source;
};

void to_json(json& j, const EpisodeSummary& s);

struct BatchOptions {
  /// Keep full episode results in memory (in execution order).
  bool keep_results = false;
  /// Writes one trace and one mask file per episode plus manifest.json.
  std::optional<std::filesystem::path> trace_dir;
};

struct BatchResult {
  /// In execution order.
  std::vector<EpisodeSummary> episodes;
  std::vector<EpisodeResult> results;
  MetricsReport metrics;
  std::map<std::string, MetricsReport> by_band;
  /// Mean in-loop calls over the early, middle and late thirds of the order.
  std::array<double, 3> thirds{};
  int routing_decisions = 0;
  int fallback_decisions = 0;
  /// Episodes whose in-loop charged cost exceeds the budget.
  int over_budget = 0;
  bool order_nondeterministic = false;

  [[nodiscard]] double fallback_rate() const {
    return routing_decisions == 0 ? 0.0 : static_cast<double>(fallback_decisions) / routing_decisions;
  }
};

/// Episodes run in `order` sharing `env.banks`. With cfg.parallel > 1 they
/// run concurrently with serialized bank access and the result is labeled
/// order-nondeterministic.
BatchResult run_batch(const std::vector<Scene>& scenes, const std::vector<std::size_t>& order, const EpisodeEnv& env,
                      const RunConfig& cfg, const BatchOptions& options = {});

/// Contiguous thirds of n items: boundaries at ⌊i·n/3⌋.
std::array<std::pair<std::size_t, std::size_t>, 3> thirds_of(std::size_t n);

/// Permutation k of [0, n) drawn from the batch seed.
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int k);

struct OrderingsResult {
  std::vector<BatchResult> runs;
  /// Per scalar: {"mean": m, "sd": s} across orderings.
  json stats;
};

/// One batch per ordering, each starting from a copy of `initial`. A single
/// ordering runs the scenes in their given order.
OrderingsResult run_orderings(const std::vector<Scene>& scenes, const Banks& initial, const EpisodeEnv& env,
                              const RunConfig& cfg);

/// Mean and sample sd of each summary scalar across runs.
json orderings_stats(const std::vector<BatchResult>& runs);

json batch_report_json(const BatchResult& r);
json orderings_report_json(const OrderingsResult& r, const RunConfig& cfg);

}  // namespace aharness
