#include "aharness/router.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <stdexcept>
#include <thread>

namespace aharness {

void RouterConfig::validate() const {
  if (lambda_omega < 0 || lambda_zeta < 0 || lambda_mu < 0 || eta_off < 0) {
    throw std::invalid_argument("router scales must be nonnegative");
  }
  if (!(tie_gap > 0.0 && tie_gap < 1.0)) throw std::invalid_argument("tie_gap must lie in (0, 1)");
  if (repeat_limit < 0) throw std::invalid_argument("repeat_limit must be nonnegative");
  for (const auto& [skill, w] : cost_weights) {
    if (!(w > 0.0)) throw std::invalid_argument("cost weight of " + skill + " must be positive");
  }
}

double RouterConfig::lambda(Dimension d) const {
  switch (d) {
    case Dimension::omega: return lambda_omega;
    case Dimension::zeta: return lambda_zeta;
    case Dimension::mu: return lambda_mu;
    case Dimension::none: return 0.0;
  }
  return 0.0;
}

void RouterState::observe(const DiagnosticReport& report) {
  if (report.commit || report.deficiency == Dimension::none) {
    consecutive_same_deficiency = 0;
    last_deficiency = Dimension::none;
    last_proposal.reset();
    return;
  }
  consecutive_same_deficiency = report.deficiency == last_deficiency ? consecutive_same_deficiency + 1 : 0;
  last_deficiency = report.deficiency;
  last_proposal = report.proposal;
}

void to_json(json& j, const GainEstimate& g) {
  j = json{{"action", g.action}, {"delta_v", g.delta_v}, {"cost", g.cost},
           {"utility", g.utility}, {"is_proposal", g.is_proposal}, {"skill_index", g.skill_index}};
}

const RetrievedMemory* memory_hit(const std::vector<RetrievedMemory>& priors, const RouterConfig& cfg) {
  const RetrievedMemory* best = nullptr;
  for (const RetrievedMemory& m : priors) {
    if (m.similarity >= cfg.similarity_floor && (best == nullptr || m.similarity > best->similarity)) best = &m;
  }
  return best;
}

std::optional<Box> memory_region(const std::vector<RetrievedMemory>& priors, const RouterConfig& cfg, const Grid& frame) {
  const RetrievedMemory* hit = memory_hit(priors, cfg);
  if (hit == nullptr) return std::nullopt;
  const auto region = transfer_region(*hit, frame);
  if (!region) return std::nullopt;
  Box b = pad(*region, cfg.memory_region_padding, frame);
  const int min_w = std::min(frame.width, static_cast<int>(std::ceil(cfg.memory_region_min_fraction * frame.width)));
  const int min_h = std::min(frame.height, static_cast<int>(std::ceil(cfg.memory_region_min_fraction * frame.height)));
  if (b.width() < min_w || b.height() < min_h) {
    const int w = std::max(b.width(), min_w);
    const int h = std::max(b.height(), min_h);
    const auto [cx, cy] = b.center();
    const int x0 = std::clamp(static_cast<int>(std::lround(cx - 0.5 * w)), 0, frame.width - w);
    const int y0 = std::clamp(static_cast<int>(std::lround(cy - 0.5 * h)), 0, frame.height - h);
    b = {x0, y0, x0 + w, y0 + h};
  }
  return b;
}

namespace {

KeyPoint center_point(const Box& b) {
  const auto [x, y] = b.center();
  return {x, y, 1.0};
}

// Stored action rescaled into the current frame, with its prompt kept inside
// the roi.
SkillAction transfer_action(const SkillAction& stored, const Grid& from, const Grid& to) {
  SkillAction a = stored;
  if (!(from == to)) a.params.roi = rescale(stored.params.roi, from, to);
  a.params.roi = clamp_to(a.params.roi, to);
  if (a.params.roi.empty()) a.params.roi = Box::full(to);
  if (a.params.prompt_point) {
    KeyPoint p = *a.params.prompt_point;
    if (!(from == to)) {
      p.x = p.x * to.width / from.width;
      p.y = p.y * to.height / from.height;
    }
    if (!a.params.roi.contains(p.x, p.y)) p = center_point(a.params.roi);
    a.params.prompt_point = p;
  }
  a.params.scale = std::min(a.params.scale, std::max(1, zoom_scale_for(a.params.roi, to) * 2));
  if (!is_allowed_scale(a.params.scale)) a.params.scale = 1;
  a.params.extras.clear();
  return a;
}

SkillAction default_template(const SkillId& skill, const RouterState& state) {
  SkillAction a{skill, {}};
  a.params.roi = Box::full(state.frame);
  a.params.scale = 1;
  a.params.query = state.query;
  if (skill == skill_ids::segment) {
    a.params.prompt_point = center_point(state.focus.value_or(a.params.roi));
  } else if (skill == skill_ids::zoom) {
    const Box around = state.focus.value_or(a.params.roi);
    const int w = std::max(around.width(), state.frame.width / 2);
    const int h = std::max(around.height(), state.frame.height / 2);
    const auto [cx, cy] = around.center();
    const int x0 = std::clamp(static_cast<int>(std::lround(cx - 0.5 * w)), 0, state.frame.width - w);
    const int y0 = std::clamp(static_cast<int>(std::lround(cy - 0.5 * h)), 0, state.frame.height - h);
    a.params.roi = {x0, y0, x0 + w, y0 + h};
    a.params.scale = 2;
  }
  return a;
}

}  // namespace

std::vector<SkillAction> feasible_actions(const RouterState& state, const Registry& registry,
                                          const std::optional<DiagnosticReport>& report, const RouterConfig& cfg) {
  const RetrievedMemory* hit = memory_hit(state.retrieved_priors, cfg);
  std::vector<SkillAction> out;
  for (const SkillId& skill : registry.skills()) {
    std::vector<SkillAction> templates;
    if (report && report->proposal && report->proposal->skill == skill) templates.push_back(*report->proposal);
    if (hit != nullptr) {
      for (const SkillAction& stored : hit->action_sequence) {
        if (stored.skill == skill) {
          templates.push_back(transfer_action(stored, hit->frame, state.frame));
          break;
        }
      }
    }
    templates.push_back(default_template(skill, state));

    for (const SkillAction& a : templates) {
      const double cost = estimate_cost(a, &cfg.cost_weights);
      if (!state.ignore_budget && cost > state.remaining_budget) break;
      if (std::find(state.past_actions.begin(), state.past_actions.end(), a) != state.past_actions.end()) continue;
      try {
        validate_params(a, state.frame);
      } catch (const ParameterError&) {
        continue;
      }
      out.push_back(a);
      break;
    }
  }
  return out;
}

double estimate_gain(const SkillAction& action, const DiagnosticReport& report, const Registry& registry,
                     const RouterConfig& rcfg, const VerifierConfig& vcfg) {
  if (report.commit || report.deficiency == Dimension::none) return 0.0;
  const auto d = deficits(report.omega, report.zeta, vcfg.mu_deficit_squashed ? report.mu_squashed : report.mu, vcfg);
  const auto deficit_of = [&](Dimension dim) {
    switch (dim) {
      case Dimension::omega: return d[0];
      case Dimension::zeta: return d[1];
      case Dimension::mu: return d[2];
      case Dimension::none: return 0.0;
    }
    return 0.0;
  };
  if (report.proposal && action == *report.proposal) {
    return rcfg.lambda(report.deficiency) * deficit_of(report.deficiency);
  }
  const Dimension addressed = registry.dimension_of(action.skill);
  return rcfg.lambda(addressed) * deficit_of(addressed) * rcfg.eta_off;
}

std::vector<GainEstimate> score_candidates(const std::vector<SkillAction>& candidates, const DiagnosticReport& report,
                                           const Registry& registry, const RouterConfig& rcfg,
                                           const VerifierConfig& vcfg) {
  std::vector<GainEstimate> out;
  for (const SkillAction& a : candidates) {
    GainEstimate g;
    g.action = a;
    g.delta_v = estimate_gain(a, report, registry, rcfg, vcfg);
    g.cost = estimate_cost(a, &rcfg.cost_weights);
    g.utility = g.delta_v / g.cost;
    g.is_proposal = report.proposal && a == *report.proposal;
    g.skill_index = registry.index_of(a.skill);
    out.push_back(std::move(g));
  }
  return out;
}

json encode_brain_request(std::uint64_t message_id, const BrainRequest& request) {
  json cands = json::array();
  for (std::size_t i = 0; i < request.candidates.size(); ++i) {
    json c = request.candidates[i];
    c["index"] = i;
    cands.push_back(std::move(c));
  }
  json mems = json::array();
  for (const RetrievedMemory& m : request.memories) {
    mems.push_back(json{{"similarity", m.similarity}, {"tier", to_string(m.tier)}, {"source", m.source}});
  }
  return json{{"id", message_id},
              {"kind", "decide"},
              {"body",
               {{"evidence", request.evidence_summary},
                {"diagnostics", request.report},
                {"candidates", std::move(cands)},
                {"memories", std::move(mems)}}}};
}

BrainResponse decode_brain_response(const json& j) {
  const json& body = j.contains("body") ? j.at("body") : j;
  BrainResponse r;
  r.candidate_index = body.at("candidate").get<int>();
  r.rationale = body.value("rationale", std::string{});
  return r;
}

namespace {

// Heuristic order: utility, then the proposal, then the lowest skill index.
bool ranks_before(const GainEstimate& a, const GainEstimate& b) {
  if (a.utility != b.utility) return a.utility > b.utility;
  if (a.is_proposal != b.is_proposal) return a.is_proposal;
  return a.skill_index < b.skill_index;
}

}  // namespace

BrainResponse StubBrain::decide(const BrainRequest& request) {
  for (std::size_t i = 0; i < request.candidates.size(); ++i) {
    if (request.candidates[i].is_proposal) return {static_cast<int>(i), "verifier proposal"};
  }
  int best = -1;
  for (std::size_t i = 0; i < request.candidates.size(); ++i) {
    if (best < 0 || ranks_before(request.candidates[i], request.candidates[static_cast<std::size_t>(best)])) {
      best = static_cast<int>(i);
    }
  }
  return {best, "highest utility"};
}

Selection select_action(const RouterState& state, const std::vector<GainEstimate>& scored, const DiagnosticReport& report,
                        const RouterConfig& cfg, DecisionBrain* brain, const json& evidence_summary) {
  if (scored.empty()) throw std::invalid_argument("select_action needs at least one candidate");
  std::vector<std::size_t> order(scored.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranks_before(scored[a], scored[b]); });

  Selection sel;
  sel.scored = scored;
  sel.action = scored[order.front()].action;
  const double u1 = scored[order.front()].utility;
  const double u2 = order.size() > 1 ? scored[order[1]].utility : 0.0;
  if (u1 <= 0.0) {
    sel.fallback_reason = "no positive utility";
  } else if (order.size() > 1 && (u1 - u2) / u1 < cfg.tie_gap) {
    sel.fallback_reason = "near tie";
  } else if (state.consecutive_same_deficiency >= cfg.repeat_limit) {
    sel.fallback_reason = "deficiency persists";
  }
  if (sel.fallback_reason.empty() || brain == nullptr) return sel;

  sel.used_fallback = true;
  BrainRequest request{evidence_summary, report, scored, state.retrieved_priors};
  std::optional<BrainResponse> response;
  if (brain->in_process()) {
    response = brain->decide(request);
  } else {
    auto task = std::make_shared<std::packaged_task<BrainResponse()>>([brain, request] { return brain->decide(request); });
    auto future = task->get_future();
    std::thread([task] { (*task)(); }).detach();
    if (future.wait_for(cfg.brain_timeout) == std::future_status::ready) {
      try {
        response = future.get();
      } catch (const std::exception& e) {
        sel.incident = std::string("decision brain failed: ") + e.what();
      }
    } else {
      sel.incident = "decision brain timed out";
    }
  }
  if (response) {
    if (response->candidate_index >= 0 && static_cast<std::size_t>(response->candidate_index) < scored.size()) {
      sel.action = scored[static_cast<std::size_t>(response->candidate_index)].action;
    } else {
      sel.incident = "decision brain returned a non-candidate";
    }
  }
  return sel;
}

SkillAction first_action(const RouterState& state, const RouterConfig& cfg) {
  const RetrievedMemory* hit = memory_hit(state.retrieved_priors, cfg);
  if (hit != nullptr && !hit->action_sequence.empty()) {
    SkillAction a = transfer_action(hit->action_sequence.front(), hit->frame, state.frame);
    a.params.query = hit->action_sequence.front().params.query.empty() ? state.query : hit->action_sequence.front().params.query;
    if (const auto region = memory_region(state.retrieved_priors, cfg, state.frame)) {
      a.params.roi = *region;
      a.params.scale = zoom_scale_for(*region, state.frame);
      if (a.params.prompt_point) a.params.prompt_point = center_point(*region);
    }
    return a;
  }
  SkillAction a{skill_ids::detect, {}};
  a.params.roi = Box::full(state.frame);
  a.params.scale = 1;
  a.params.query = state.query;
  return a;
}

}  // namespace aharness
