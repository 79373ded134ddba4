#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "aharness/trace.hpp"
#include "support.hpp"

using namespace aharness;

namespace {

EpisodeResult sample_episode(std::uint64_t seed, double difficulty, Banks* banks = nullptr) {
  static const Registry reg = simulated_registry();
  static const HashingEmbedder emb;
  RunConfig c;
  c.validate();
  const Scene scene = generate_scene(seed, difficulty, 0.1 * difficulty);
  return run_episode(scene, scene.instruction, {&reg, banks, &emb}, c, seed);
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("trace") {
  TEST_CASE("layout") {
    const EpisodeResult r = sample_episode(5, 0.5);
    const auto lines = lines_of(serialize_trace(r.trace));
    REQUIRE(lines.size() == 1 + r.trace.steps.size() + r.trace.evidence.size() + 2);
    CHECK(json::parse(lines.front()).contains("header"));
    CHECK(json::parse(lines.front()).at("header").at("format") == kTraceFormat);
    CHECK(json::parse(lines[lines.size() - 2]).contains("fusion"));
    const json summary = json::parse(lines.back()).at("summary");
    CHECK(summary.at("in_loop_calls") == r.trace.in_loop_calls());
    CHECK(summary.at("iou").get<double>() == r.iou);
    int steps = 0;
    for (std::size_t i = 1; i + 2 < lines.size(); ++i) {
      const json j = json::parse(lines[i]);
      if (j.size() == 1 && j.contains("step")) {
        ++steps;
      } else {
        CHECK(j.contains("producer"));
        CHECK(j.at("step").get<int>() >= 1);
      }
    }
    CHECK(steps == r.trace.in_loop_calls());
  }

  TEST_CASE("parse inverts serialize") {
    Banks banks;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      const EpisodeResult r = sample_episode(seed, static_cast<double>(seed % 4) / 3.0, &banks);
      const std::string text = serialize_trace(r.trace);
      const EpisodeTrace back = parse_trace(text);
      CHECK(serialize_trace(back) == text);
      CHECK(back.evidence == r.trace.evidence);
      CHECK(back.fusion.mask == r.fusion.mask);
    }
  }

  TEST_CASE("replay reproduces episodes with and without priors") {
    const Registry reg = simulated_registry();
    Banks banks;
    int with_priors = 0;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
      const EpisodeResult r = sample_episode(seed, static_cast<double>(seed % 4) / 3.0, &banks);
      if (!r.trace.retrieved.empty()) ++with_priors;
      const ReplayOutcome o = replay_trace(parse_trace(serialize_trace(r.trace)), reg);
      CHECK(o.identical);
      CHECK(o.mask_identical);
      CHECK(o.divergence.empty());
    }
    CHECK(with_priors > 0);
  }

  TEST_CASE("replay reports the first divergence") {
    const Registry reg = simulated_registry();
    const EpisodeResult r = sample_episode(9, 0.8);
    EpisodeTrace tampered = parse_trace(serialize_trace(r.trace));
    REQUIRE_FALSE(tampered.evidence.empty());
    tampered.evidence.front().confidence *= 0.5;
    const ReplayOutcome o = replay_trace(tampered, reg);
    CHECK_FALSE(o.identical);
    CHECK_FALSE(o.divergence.empty());
  }

  TEST_CASE("files") {
    const auto dir = std::filesystem::temp_directory_path() / "aharness-unit-trace";
    std::filesystem::create_directories(dir);
    const EpisodeResult r = sample_episode(3, 0.3);
    save_trace(r.trace, dir / "t.jsonl");
    CHECK(serialize_trace(load_trace(dir / "t.jsonl")) == serialize_trace(r.trace));
    save_mask(r.fusion.mask, dir / "m.json");
    CHECK(load_mask(dir / "m.json") == r.fusion.mask);
    CHECK_THROWS(load_trace(dir / "missing.jsonl"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("malformed traces are rejected") {
    const EpisodeResult r = sample_episode(3, 0.3);
    const std::string text = serialize_trace(r.trace);
    CHECK_THROWS(parse_trace(""));
    CHECK_THROWS(parse_trace("{not json}\n"));
    CHECK_THROWS(parse_trace(text + "{\"mystery\": 1}\n"));
    std::string wrong = text;
    wrong.replace(wrong.find(kTraceFormat), std::string(kTraceFormat).size(), "other/9");
    CHECK_THROWS(parse_trace(wrong));
  }
}
