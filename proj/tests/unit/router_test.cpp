#include <doctest.h>

#include <random>
#include <thread>

#include "aharness/router.hpp"
#include "support.hpp"

using namespace aharness;
using namespace aharness::testing;

namespace {

RouterState fresh_state(double budget = 3.0) {
  RouterState s;
  s.remaining_budget = budget;
  s.frame = Grid::make(160, 120);
  s.query = "mug handle";
  return s;
}

VerifierConfig vdefaults() {
  VerifierConfig c;
  c.normalize();
  return c;
}

DiagnosticReport report_with(double omega, double zeta, double mu, const VerifierConfig& vcfg) {
  DiagnosticReport r;
  r.omega = omega;
  r.zeta = zeta;
  r.mu = mu;
  r.mu_squashed = squash(mu, vcfg);
  r.v = commit_score(omega, zeta, mu, vcfg);
  r.commit = commit_decision(r.v, omega, vcfg);
  r.has_hypothesis = true;
  if (!r.commit) r.deficiency = dominant_deficiency(omega, zeta, r.mu_squashed, vcfg);
  return r;
}

GainEstimate gain(double u, int index, bool proposal = false) {
  GainEstimate g;
  g.action = action_for(SkillId("s" + std::to_string(index)), {0, 0, 10, 10});
  g.delta_v = u;
  g.utility = u;
  g.skill_index = index;
  g.is_proposal = proposal;
  return g;
}

RetrievedMemory memory_with(double similarity, const SkillAction& first) {
  RetrievedMemory m;
  m.similarity = similarity;
  m.frame = Grid::make(160, 120);
  m.action_sequence = {first};
  return m;
}

}  // namespace

TEST_SUITE("router") {
  TEST_CASE("feasible set") {
    const Registry reg = simulated_registry();
    const RouterConfig cfg;
    CHECK(feasible_actions(fresh_state(3.0), reg, std::nullopt, cfg).size() == 5);
    CHECK(feasible_actions(fresh_state(0.5), reg, std::nullopt, cfg).empty());

    DiagnosticReport r;
    r.deficiency = Dimension::zeta;
    r.proposal = action_for(skill_ids::zoom, {20, 20, 60, 50}, 4);
    const auto acts = feasible_actions(fresh_state(), reg, r, cfg);
    const auto zoom = std::find_if(acts.begin(), acts.end(), [](const SkillAction& a) { return a.skill == skill_ids::zoom; });
    REQUIRE(zoom != acts.end());
    CHECK(zoom->params.roi == Box{20, 20, 60, 50});
    CHECK(zoom->params.scale == 4);
  }

  TEST_CASE("feasible set skips repeated actions") {
    const Registry reg = simulated_registry();
    RouterState s = fresh_state();
    const auto first = feasible_actions(s, reg, std::nullopt, RouterConfig{});
    s.past_actions = first;
    CHECK(feasible_actions(s, reg, std::nullopt, RouterConfig{}).empty());
  }

  TEST_CASE("gain estimates") {
    const Registry reg = simulated_registry();
    const RouterConfig rcfg;
    const VerifierConfig vcfg = vdefaults();

    DiagnosticReport r = report_with(0.3, 0.9, 1.0, vcfg);
    REQUIRE(r.deficiency == Dimension::omega);
    r.proposal = action_for(skill_ids::segment, {0, 0, 50, 50});
    CHECK(estimate_gain(*r.proposal, r, reg, rcfg, vcfg) == doctest::Approx(1.0 * 0.2));

    DiagnosticReport z = report_with(0.6, 0.4, 1.0, vcfg);
    REQUIRE(z.deficiency == Dimension::zeta);
    z.proposal = action_for(skill_ids::zoom, {0, 0, 80, 60}, 2);
    const SkillAction other_zoom = action_for(skill_ids::zoom, {10, 10, 90, 70}, 2);
    CHECK(estimate_gain(other_zoom, z, reg, rcfg, vcfg) == doctest::Approx(0.8 * 0.3 * 0.5));

    CHECK(estimate_gain(action_for(skill_ids::web_search, {0, 0, 160, 120}), z, reg, rcfg, vcfg) == 0.0);
  }

  TEST_CASE("selection and fallback triggers") {
    const RouterState s = fresh_state();
    const RouterConfig cfg;
    const DiagnosticReport r;
    {
      const Selection sel = select_action(s, {gain(0.20, 1), gain(0.12, 2), gain(0.0, 3)}, r, cfg, nullptr);
      CHECK(sel.action.skill.name() == "s1");
      CHECK(sel.fallback_reason.empty());
    }
    {
      StubBrain brain;
      const Selection sel = select_action(s, {gain(0.20, 1), gain(0.19, 2)}, r, cfg, &brain);
      CHECK(sel.used_fallback);
      CHECK(sel.fallback_reason == "near tie");
    }
    {
      RouterState stuck = s;
      stuck.consecutive_same_deficiency = 2;
      StubBrain brain;
      const Selection sel = select_action(stuck, {gain(0.20, 1), gain(0.05, 2)}, r, cfg, &brain);
      CHECK(sel.used_fallback);
    }
    {
      StubBrain brain;
      const Selection sel = select_action(s, {gain(0.0, 1), gain(0.0, 2)}, r, cfg, &brain);
      CHECK(sel.used_fallback);
    }
  }

  TEST_CASE("ties go to the proposal, then the lowest index") {
    const RouterState s = fresh_state();
    const RouterConfig cfg;
    const DiagnosticReport r;
    CHECK(select_action(s, {gain(0.2, 1), gain(0.2, 3, true)}, r, cfg, nullptr).action.skill.name() == "s3");
    CHECK(select_action(s, {gain(0.2, 4), gain(0.2, 2)}, r, cfg, nullptr).action.skill.name() == "s2");
  }

  TEST_CASE("misbehaving brains are recorded and ignored") {
    struct Wrong final : DecisionBrain {
      BrainResponse decide(const BrainRequest&) override { return {99, ""}; }
      bool in_process() const override { return true; }
    } wrong;
    struct Slow final : DecisionBrain {
      BrainResponse decide(const BrainRequest&) override {
        std::this_thread::sleep_for(std::chrono::milliseconds(300));
        return {1, ""};
      }
    };
    const RouterState s = fresh_state();
    RouterConfig cfg;
    cfg.brain_timeout = std::chrono::milliseconds(20);
    const DiagnosticReport r;
    const Selection a = select_action(s, {gain(0.2, 1), gain(0.19, 2)}, r, cfg, &wrong);
    CHECK(a.action.skill.name() == "s1");
    CHECK_FALSE(a.incident.empty());
    auto slow = std::make_shared<Slow>();
    const Selection b = select_action(s, {gain(0.2, 1), gain(0.19, 2)}, r, cfg, slow.get());
    CHECK(b.action.skill.name() == "s1");
    CHECK(b.incident == "decision brain timed out");
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
  }

  TEST_CASE("first action") {
    const RouterConfig cfg;
    RouterState s = fresh_state();
    SkillAction a = first_action(s, cfg);
    CHECK(a.skill == skill_ids::detect);
    CHECK(a.params.roi == Box::full(s.frame));

    SkillAction stored = action_for(skill_ids::detect, {0, 0, 160, 120});
    stored.params.query = "mug handle";
    s.retrieved_priors = {memory_with(0.95, stored)};
    a = first_action(s, cfg);
    CHECK(a.skill == skill_ids::detect);
    CHECK(a.params.query == "mug handle");

    s.retrieved_priors = {memory_with(0.5, action_for(skill_ids::segment, {0, 0, 50, 50}))};
    a = first_action(s, cfg);
    CHECK(a.skill == skill_ids::detect);
    CHECK(a.params.roi == Box::full(s.frame));
  }

  TEST_CASE("memory hit narrows the first call to the remembered region") {
    const RouterConfig cfg;
    RouterState s = fresh_state();
    RetrievedMemory m = memory_with(0.9, action_for(skill_ids::detect, {0, 0, 160, 120}));
    m.region = Box{100, 70, 120, 90};
    s.retrieved_priors = {m};
    const SkillAction a = first_action(s, cfg);
    CHECK(a.params.roi.contains(110, 80));
    CHECK(a.params.roi.area() < Box::full(s.frame).area());
    CHECK(a.params.scale > 1);
    CHECK_NOTHROW(validate_params(a, s.frame));
  }

  TEST_CASE("streak tracking") {
    RouterState s = fresh_state();
    DiagnosticReport r;
    r.deficiency = Dimension::omega;
    s.observe(r);
    CHECK(s.consecutive_same_deficiency == 0);
    s.observe(r);
    s.observe(r);
    CHECK(s.consecutive_same_deficiency == 2);
    r.deficiency = Dimension::zeta;
    s.observe(r);
    CHECK(s.consecutive_same_deficiency == 0);
  }

  TEST_CASE("the proposal wins whenever no fallback triggers") {
    const Registry reg = simulated_registry();
    const RouterConfig rcfg;
    const VerifierConfig vcfg = vdefaults();
    std::mt19937 gen(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::array<SkillId, 3> proposer{skill_ids::segment, skill_ids::zoom, skill_ids::web_search};
    int checked = 0;
    while (checked < 2000) {
      const DiagnosticReport base = report_with(u(gen), u(gen), u(gen), vcfg);
      if (base.commit) continue;
      const auto d = deficits(base.omega, base.zeta, base.mu_squashed, vcfg);
      if (std::count_if(d.begin(), d.end(), [](double x) { return x > 0.0; }) != 1) continue;
      DiagnosticReport r = base;
      const int dim = static_cast<int>(r.deficiency);
      r.proposal = action_for(proposer[static_cast<std::size_t>(dim)], {10, 10, 90, 70}, dim == 1 ? 2 : 1);
      RouterState s = fresh_state();
      auto cands = feasible_actions(s, reg, r, rcfg);
      const auto scored = score_candidates(cands, r, reg, rcfg, vcfg);
      const Selection sel = select_action(s, scored, r, rcfg, nullptr);
      if (!sel.fallback_reason.empty()) continue;
      CHECK(sel.action == *r.proposal);
      ++checked;
    }
  }

  TEST_CASE("selection never exceeds the budget") {
    const Registry reg = simulated_registry();
    RouterConfig rcfg;
    rcfg.cost_weights = {{"web_search", 2.5}, {"dreamer", 1.5}};
    const VerifierConfig vcfg = vdefaults();
    std::mt19937 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      RouterState s = fresh_state(3.0 * u(gen));
      DiagnosticReport r = report_with(u(gen), u(gen), u(gen), vcfg);
      const auto cands = feasible_actions(s, reg, r, rcfg);
      if (cands.empty()) continue;
      StubBrain brain;
      const Selection a = select_action(s, score_candidates(cands, r, reg, rcfg, vcfg), r, rcfg, &brain);
      CHECK(estimate_cost(a.action, &rcfg.cost_weights) <= s.remaining_budget);
      const Selection b = select_action(s, score_candidates(cands, r, reg, rcfg, vcfg), r, rcfg, &brain);
      CHECK(a.action == b.action);
    }
  }

  TEST_CASE("brain request encoding") {
    BrainRequest req;
    req.candidates = {gain(0.2, 1), gain(0.1, 2)};
    const json j = encode_brain_request(7, req);
    CHECK(j.at("id") == 7);
    CHECK(j.at("body").at("candidates").size() == 2);
    CHECK(j.at("body").at("candidates")[1].at("index") == 1);
    CHECK(decode_brain_response(json{{"body", {{"candidate", 1}, {"rationale", "x"}}}}).candidate_index == 1);
  }
}
