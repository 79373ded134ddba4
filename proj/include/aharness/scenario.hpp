#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aharness/memory.hpp"
#include "aharness/scene.hpp"

namespace aharness {

struct RetryBin {
  int count = 0;
  /// Mean in-loop skill calls of the bin's episodes.
  double mean_calls = 0.0;
  double mean_iou = 0.0;
  double ciou = 0.0;

  friend bool operator==(const RetryBin&, const RetryBin&) = default;
};

struct MetricsReport {
  double giou = 0.0;
  double ciou = 0.0;
  double p50 = 0.0;
  double p50_95 = 0.0;
  int n_samples = 0;
  double mean_skill_calls = 0.0;
  /// Keyed by detection calls per episode.
  std::map<int, RetryBin> retry_histogram;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

void to_json(json& j, const MetricsReport& r);
void from_json(const json& j, MetricsReport& r);

/// Threshold tests use IoU ≥ t.
MetricsReport evaluate(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truths,
                       const std::vector<int>& detection_calls = {}, const std::vector<int>& skill_calls = {});

enum class Band { easy, medium, hard };
std::string to_string(Band b);
Band band_from_string(const std::string& text);
/// [0, .33) easy, [.33, .66) medium, [.66, 1] hard.
Band band_of(double difficulty);

struct BenchmarkSpec {
  int easy = 0;
  int medium = 0;
  int hard = 0;
  std::uint64_t seed = 0;

  [[nodiscard]] int total() const { return easy + medium + hard; }
};

struct Benchmark {
  BenchmarkSpec spec;
  std::vector<Scene> eval;
  std::vector<Scene> library;
  std::vector<LibraryItem> library_items;
};

/// Evaluation and library splits with the same band counts and disjoint
/// scene seeds. Library items carry the action sequence that solves the
/// scene at zero noise.
Benchmark build_benchmark(const BenchmarkSpec& spec);

/// Zero-noise solve of one scene: [detect, segment] with the segment zoomed
/// onto the detected box.
LibraryItem solve_scene(const Scene& scene);

/// Directory layout: manifest.json, eval/<id>.json, library/<id>.json.
void save_benchmark(const Benchmark& bench, const std::filesystem::path& dir);
Benchmark load_benchmark(const std::filesystem::path& dir);

}  // namespace aharness
