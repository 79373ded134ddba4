#include <doctest.h>

#include <algorithm>

#include "aharness/evidence.hpp"
#include "aharness/scene.hpp"
#include "aharness/skills.hpp"
#include "support.hpp"

using namespace aharness;
using namespace aharness::testing;

TEST_SUITE("evidence") {
  TEST_CASE("cost lands on the first record of a call") {
    EvidenceStore store(Grid::make(100, 100));
    const SkillOutput out{skill_ids::detect,
                          {OutputItem{EvidenceType::box, Box{0, 0, 10, 10}, 0.9},
                           OutputItem{EvidenceType::box, Box{50, 50, 60, 60}, 0.4}}};
    const ParseResult r = store.parse_and_append(out, action_for(skill_ids::detect, {0, 0, 100, 100}), 1, 1.0);
    REQUIRE(r.ids.size() == 2);
    CHECK(store.find(r.ids[0])->cost == 1.0);
    CHECK(store.find(r.ids[1])->cost == 0.0);
    CHECK(store.cumulative_cost() == 1.0);
  }

  TEST_CASE("simulated detector with two boxes") {
    // A hard scene keeps clutter boxes beside the target.
    NoiseModel noise;
    noise.difficulty = 1.0;
    const Registry reg = simulated_registry();
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const Scene scene = generate_scene(seed, 1.0, 0.0);
      noise.seed = seed;
      const SkillAction a = action_for(skill_ids::detect, Box::full(scene.grid));
      const SkillOutput out = reg.invoke({&scene, scene.instruction, a, 1, noise});
      if (out.items.size() != 2) continue;
      EvidenceStore store(scene.grid);
      const auto r = store.parse_and_append(out, a, 1, 1.0);
      REQUIRE(r.ids.size() == 2);
      CHECK(store.records()[0].kind == EvidenceType::box);
      CHECK(store.records()[0].cost == 1.0);
      CHECK(store.records()[1].cost == 0.0);
      return;
    }
    FAIL("no two-box detection found");
  }

  TEST_CASE("empty output leaves a sentinel carrying the cost") {
    EvidenceStore store(Grid::make(100, 100));
    const auto r = store.parse_and_append(SkillOutput{skill_ids::detect, {}}, action_for(skill_ids::detect, {0, 0, 100, 100}),
                                          1, 1.0);
    REQUIRE(r.ids.size() == 1);
    CHECK(store.records()[0].is_sentinel());
    CHECK(store.records()[0].cost == 1.0);
    CHECK(store.cumulative_cost() == 1.0);
  }

  TEST_CASE("web cue keeps its agreement flag") {
    const Scene scene = generate_scene(4, 0.0, 0.0);
    NoiseModel noise;
    noise.p_web = 1.0;
    SkillAction a = action_for(skill_ids::web_search, Box::full(scene.grid));
    a.params.query = instruction_query(scene.instruction);
    const SkillOutput out = simulated_registry().invoke({&scene, scene.instruction, a, 1, noise});
    REQUIRE(out.items.size() == 1);
    EvidenceStore store(scene.grid);
    store.parse_and_append(out, a, 1, 1.0);
    REQUIRE(store.size() == 1);
    CHECK(store.records()[0].kind == EvidenceType::text_cue);
    CHECK(std::get<TextCue>(store.records()[0].payload).semantic_agreement ==
          std::get<TextCue>(out.items[0].payload).semantic_agreement);
  }

  TEST_CASE("invalid items are rejected") {
    EvidenceStore store(Grid::make(100, 100));
    const SkillOutput out{skill_ids::detect,
                          {OutputItem{EvidenceType::box, Box{0, 0, 200, 10}, 0.9},
                           OutputItem{EvidenceType::mask, Mask(Grid::make(5, 5)), 0.9},
                           OutputItem{EvidenceType::box, Box{0, 0, 10, 10}, 1.5}}};
    const auto r = store.parse_and_append(out, action_for(skill_ids::detect, {0, 0, 100, 100}), 1, 1.0);
    CHECK(r.rejected.size() == 3);
    REQUIRE(store.size() == 1);
    CHECK(store.records()[0].is_sentinel());
  }

  TEST_CASE("steps must not go backwards") {
    EvidenceStore store(Grid::make(10, 10));
    add_box(store, skill_ids::detect, {0, 0, 5, 5}, 1.0, 3);
    CHECK_THROWS(add_box(store, skill_ids::detect, {0, 0, 5, 5}, 1.0, 2));
  }

  TEST_CASE("latest boxes and masks") {
    const Grid g = Grid::make(100, 100);
    {
      EvidenceStore store(g);
      add_box(store, skill_ids::detect, {0, 0, 10, 10}, 1.0, 1);
      add_mask(store, skill_ids::segment, {0, 0, 10, 10}, 1.0, 2);
      const Localizers l = latest_boxes_and_masks(store, Box::full(g));
      CHECK(l.boxes.size() == 1);
      CHECK(l.masks.size() == 1);
    }
    {
      EvidenceStore store(g);
      add_box(store, skill_ids::detect, {0, 0, 10, 10}, 1.0, 1);
      add_box(store, skill_ids::detect, {20, 20, 30, 30}, 1.0, 3);
      add_box(store, skill_ids::detect, {40, 40, 50, 50}, 1.0, 3);
      const Localizers l = latest_boxes_and_masks(store, Box::full(g));
      REQUIRE(l.boxes.size() == 2);
      CHECK(l.boxes[0].box == Box{20, 20, 30, 30});
      CHECK(l.boxes[1].box == Box{40, 40, 50, 50});
    }
    {
      EvidenceStore store(g);
      add_mask(store, skill_ids::segment, {0, 0, 10, 10}, 1.0, 1, {0, 0, 20, 20}, 2);
      const Localizers l = latest_boxes_and_masks(store, {50, 50, 100, 100});
      CHECK(l.masks.empty());
    }
  }

  TEST_CASE("best hypothesis") {
    const Grid g = Grid::make(100, 100);
    {
      EvidenceStore store(g);
      add_mask(store, skill_ids::segment, {0, 0, 10, 10}, 0.9, 1);
      add_mask(store, skill_ids::segment, {20, 0, 30, 10}, 0.7, 2);
      const auto h = best_hypothesis(store);
      REQUIRE(h);
      CHECK(h->mask == box_mask({0, 0, 10, 10}, g));
    }
    {
      EvidenceStore store(g);
      add_mask(store, skill_ids::segment, {0, 0, 10, 10}, 0.8, 2);
      add_mask(store, skill_ids::segment, {20, 0, 30, 10}, 0.8, 4);
      const auto h = best_hypothesis(store);
      REQUIRE(h);
      CHECK(h->mask == box_mask({20, 0, 30, 10}, g));
    }
    {
      EvidenceStore store(g);
      add_box(store, skill_ids::detect, {0, 0, 10, 10}, 1.0, 1);
      CHECK_FALSE(best_hypothesis(store));
    }
  }

  TEST_CASE("stability pairs") {
    const Grid g = Grid::make(100, 100);
    {
      EvidenceStore store(g);
      add_mask(store, skill_ids::segment, {10, 10, 30, 30}, 1.0, 1);
      add_mask(store, skill_ids::segment, {10, 10, 30, 30}, 1.0, 2, {0, 0, 50, 50}, 2);
      CHECK(stability_pairs(store).size() == 1);
    }
    {
      EvidenceStore store(g);
      add_mask(store, skill_ids::segment, {10, 10, 30, 30}, 1.0, 1);
      add_mask(store, skill_ids::segment, {10, 10, 30, 30}, 1.0, 2);
      CHECK(stability_pairs(store).empty());
    }
    {
      EvidenceStore store(g);
      add_mask(store, skill_ids::segment, {10, 10, 30, 30}, 1.0, 1);
      add_mask(store, skill_ids::segment, {10, 10, 30, 30}, 1.0, 2, {0, 0, 50, 50}, 2);
      add_mask(store, skill_ids::segment, {10, 10, 30, 30}, 1.0, 3, {0, 0, 25, 25}, 4);
      CHECK(stability_pairs(store).size() == 3);
    }
  }

  TEST_CASE("ids increase and cost accumulates over a simulated episode") {
    const Scene scene = generate_scene(12, 0.5, 0.1);
    const Registry reg = simulated_registry();
    NoiseModel noise;
    noise.seed = 5;
    noise.difficulty = scene.difficulty;
    EvidenceStore store(scene.grid);
    double charged = 0.0;
    std::uint64_t last_id = 0;
    std::size_t last_size = 0;
    int step = 1;
    for (const SkillId& skill : reg.skills()) {
      SkillAction a = action_for(skill, Box::full(scene.grid), skill == skill_ids::zoom ? 2 : 1);
      if (skill == skill_ids::zoom) a.params.roi = {40, 30, 120, 90};
      a.params.query = instruction_query(scene.instruction);
      if (skill == skill_ids::segment) a.params.prompt_point = KeyPoint{80, 60, 1};
      SkillOutput out;
      try {
        out = reg.invoke({&scene, scene.instruction, a, step, noise});
      } catch (const SkillFailure&) {
      }
      store.parse_and_append(out, a, step, 1.0);
      charged += 1.0;
      ++step;
      CHECK(store.size() >= last_size);
      last_size = store.size();
      CHECK(store.cumulative_cost() == doctest::Approx(charged));
      for (const EvidenceRecord& r : store.records()) {
        CHECK(reg.contains(r.producer));
      }
      CHECK(store.records().back().id > last_id);
      last_id = store.records().back().id;
    }
    for (std::size_t i = 1; i < store.size(); ++i) CHECK(store.records()[i - 1].id < store.records()[i].id);
  }

  TEST_CASE("records round-trip through json") {
    EvidenceStore store(Grid::make(100, 100));
    add_box(store, skill_ids::detect, {1, 2, 30, 40}, 0.75, 1);
    add_mask(store, skill_ids::segment, {10, 10, 30, 30}, 0.5, 2, {0, 0, 50, 50}, 2);
    add_text(store, skill_ids::web_search, true, 0.8, 3);
    add_point(store, skill_ids::dreamer, EvidenceType::imagined_interaction, 12.5, 20.25, 0.6, 4);
    EvidenceStore copy(store.grid());
    for (const EvidenceRecord& r : store.records()) {
      const json j = r;
      copy.restore(json::parse(j.dump()).get<EvidenceRecord>());
    }
    CHECK(copy.records() == store.records());
    CHECK(copy.cumulative_cost() == store.cumulative_cost());
  }
}
