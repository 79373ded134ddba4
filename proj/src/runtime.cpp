#include "aharness/runtime.hpp"

#include <algorithm>
#include <stdexcept>

#include "aharness/rng.hpp"

namespace aharness {

void BudgetLedger::charge(int step, const SkillAction& action, double cost) {
  if (cost < 0.0) throw std::invalid_argument("negative charge");
  if (!charges_.empty() && step < charges_.back().step) throw std::invalid_argument("charges must follow step order");
  charges_.push_back({step, action, cost});
  remaining_ -= cost;
}

int EpisodeTrace::detection_calls() const {
  return static_cast<int>(std::count_if(steps.begin(), steps.end(), [](const StepRecord& s) {
    return s.action.skill == skill_ids::detect || s.action.skill == skill_ids::zoom;
  }));
}

int EpisodeTrace::routing_decisions() const {
  return static_cast<int>(std::count_if(steps.begin(), steps.end(), [](const StepRecord& s) { return s.routed; }));
}

int EpisodeTrace::fallback_decisions() const {
  return static_cast<int>(std::count_if(steps.begin(), steps.end(), [](const StepRecord& s) { return s.used_fallback; }));
}

Banks Banks::with_capacities(std::size_t cs_capacity, std::size_t tt_capacity) {
  Banks b;
  b.cs = MemoryBank(Tier::cs, cs_capacity);
  b.tt = MemoryBank(Tier::tt, tt_capacity);
  return b;
}

std::uint64_t episode_seed(std::uint64_t run_seed, const Scene& scene) { return combine_keys(run_seed, scene.seed); }

namespace {

const HashingEmbedder& default_embedder() {
  static const HashingEmbedder e;
  return e;
}

const Embedder& embedder_of(const EpisodeEnv& env) { return env.embedder != nullptr ? *env.embedder : default_embedder(); }

NoiseModel noise_for(const RunConfig& cfg, const Scene& scene, std::uint64_t seed) {
  NoiseModel n = cfg.noise;
  n.seed = seed;
  n.difficulty = scene.difficulty;
  return n;
}

json evidence_digest(const EvidenceStore& store) {
  json counts = json::object();
  for (const auto& [kind, n] : type_counts(store)) counts[to_string(kind)] = n;
  return json{{"records", store.size()}, {"counts", counts}, {"last_step", store.last_step()}};
}

// Calls the skill and appends its evidence; failures become a sentinel.
StepRecord execute(const Scene& scene, const std::string& instruction, const Registry& registry, const SkillAction& action,
                   int step, const NoiseModel& noise, const RouterConfig& rcfg, EvidenceStore& store,
                   BudgetLedger& ledger) {
  StepRecord rec;
  rec.step = step;
  rec.action = action;
  rec.cost = estimate_cost(action, &rcfg.cost_weights);
  SkillOutput raw;
  try {
    raw = registry.invoke(SkillRequest{&scene, instruction, action, step, noise});
  } catch (const SkillFailure& e) {
    rec.failure = e.what();
    raw = SkillOutput{action.skill, {{EvidenceType::empty_result, EmptyResult{e.what()}, 0.0}}};
  } catch (const RoutingError& e) {
    rec.failure = e.what();
    raw = SkillOutput{action.skill, {{EvidenceType::empty_result, EmptyResult{e.what()}, 0.0}}};
  }
  const ParseResult parsed = store.parse_and_append(raw, action, step, rec.cost);
  rec.evidence_ids = parsed.ids;
  rec.rejected = parsed.rejected;
  ledger.charge(step, action, rec.cost);
  return rec;
}

std::optional<Box> current_focus(const EvidenceStore& store) {
  const Localizers loc = latest_boxes_and_masks(store, Box::full(store.grid()));
  std::optional<BoxEvidence> best;
  for (const BoxEvidence& b : loc.boxes) {
    if (!best || b.confidence > best->confidence || (b.confidence == best->confidence && b.id > best->id)) best = b;
  }
  if (best) return best->box;
  if (const auto h = best_hypothesis(store)) return h->mask.bounding_box();
  return std::nullopt;
}

MemoryEntry entry_from_store(const EpisodeTrace& trace, const EvidenceStore& store, const Embedder& embedder) {
  MemoryEntry e;
  e.source = trace.scene.id;
  e.embedding = embedder.embed(trace.scene.descriptor, trace.instruction);
  for (const StepRecord& s : trace.steps) e.action_sequence.push_back(s.action);
  e.param_ranges = ranges_of(e.action_sequence);
  for (const auto& [kind, n] : type_counts(store)) e.summary.counts[to_string(kind)] = n;
  for (auto it = trace.steps.rbegin(); it != trace.steps.rend(); ++it) {
    if (it->report) {
      e.summary.omega = it->report->omega;
      e.summary.zeta = it->report->zeta;
      e.summary.mu = it->report->mu;
      e.summary.v = it->report->v;
      e.outcome_score = it->report->v;
      break;
    }
  }
  if (const auto h = best_hypothesis(store)) e.summary.hypothesis_box = h->mask.bounding_box();
  if (!e.summary.hypothesis_box) e.summary.hypothesis_box = trace.fusion.mask.bounding_box();
  e.summary.frame = store.grid();
  for (const SkillAction& a : e.action_sequence) e.summary.step_params.push_back(a.params);
  return e;
}

EpisodeResult finish(EpisodeTrace trace, const EvidenceStore& store, const BudgetLedger& ledger) {
  trace.evidence = store.records();
  trace.charged_cost = ledger.charged();
  trace.fusion_cost = ledger.fusion_cost();
  EpisodeResult out;
  out.fusion = trace.fusion;
  out.accepted = trace.accepted;
  out.iou = iou(trace.fusion.mask, trace.scene.target_gt);
  out.trace = std::move(trace);
  return out;
}

}  // namespace

EpisodeResult run_episode(const Scene& scene, const std::string& instruction, const EpisodeEnv& env, const RunConfig& cfg,
                          std::uint64_t seed, const std::optional<std::vector<RetrievedMemory>>& priors) {
  if (env.registry == nullptr) throw std::invalid_argument("episode needs a skill registry");
  const Registry& registry = *env.registry;
  VerifierConfig vcfg = cfg.verifier;
  if (cfg.router_only) vcfg.enabled = false;
  const Verifier verifier(vcfg);
  const NoiseModel noise = noise_for(cfg, scene, seed);

  EpisodeTrace trace;
  trace.scene = scene;
  trace.instruction = instruction;
  trace.config = cfg;
  trace.seed = seed;

  if (priors) {
    trace.retrieved = *priors;
  } else if (env.banks != nullptr && (cfg.use_cs || cfg.use_tt)) {
    const Embedding q = embedder_of(env).embed(scene.descriptor, instruction);
    std::vector<const MemoryBank*> banks;
    if (cfg.use_cs) banks.push_back(&env.banks->cs);
    if (cfg.use_tt) banks.push_back(&env.banks->tt);
    if (env.bank_mutex != nullptr) {
      const std::lock_guard lock(*env.bank_mutex);
      trace.retrieved = retrieve(banks, q, cfg.top_n);
    } else {
      trace.retrieved = retrieve(banks, q, cfg.top_n);
    }
  }

  EvidenceStore store(scene.grid);
  BudgetLedger ledger(cfg.budget);
  RouterState state;
  state.remaining_budget = cfg.budget;
  state.ignore_budget = !cfg.budget_truncation;
  state.retrieved_priors = trace.retrieved;
  state.query = instruction_query(instruction);
  state.frame = scene.grid;

  ProposalContext ctx;
  ctx.frame = scene.grid;
  ctx.query = state.query;
  ctx.memory_hit = memory_hit(trace.retrieved, cfg.router) != nullptr;
  ctx.memory_region = memory_region(trace.retrieved, cfg.router, scene.grid);
  ctx.view = {Box::full(scene.grid), 1};

  StubBrain stub;
  DecisionBrain* brain = env.brain != nullptr ? env.brain : &stub;
  std::optional<DiagnosticReport> report;

  for (int t = 1;; ++t) {
    if (!cfg.budget_truncation && t > cfg.max_steps) break;
    SkillAction action;
    StepRecord pending;
    if (t == 1) {
      action = first_action(state, cfg.router);
      if (cfg.budget_truncation && estimate_cost(action, &cfg.router.cost_weights) > state.remaining_budget) break;
    } else {
      const auto candidates = feasible_actions(state, registry, report, cfg.router);
      if (candidates.empty()) break;
      const auto scored = score_candidates(candidates, *report, registry, cfg.router, vcfg);
      const Selection sel = select_action(state, scored, *report, cfg.router, brain, evidence_digest(store));
      action = sel.action;
      pending.routed = true;
      pending.used_fallback = sel.used_fallback;
      pending.fallback_reason = sel.fallback_reason;
      pending.incident = sel.incident;
    }

    StepRecord rec = execute(scene, instruction, registry, action, t, noise, cfg.router, store, ledger);
    rec.routed = pending.routed;
    rec.used_fallback = pending.used_fallback;
    rec.fallback_reason = pending.fallback_reason;
    rec.incident = pending.incident;
    state.remaining_budget = ledger.remaining();
    state.past_actions.push_back(action);
    ctx.past_actions.push_back(action);
    if (action.skill == skill_ids::zoom) ctx.view = {action.params.roi, action.params.scale};
    state.focus = current_focus(store);

    report = verifier.evaluate(store, ctx, t);
    rec.report = report;
    trace.steps.push_back(std::move(rec));
    if (report->commit) break;
    if (cfg.budget_truncation && ledger.remaining() <= 0.0) break;
    state.observe(*report);
  }

  trace.accepted = cfg.router_only ? true : (report && report->commit);

  FusionInputs fin{&scene, instruction, &store, trace.retrieved, &registry, noise, vcfg, cfg.router};
  trace.fusion = fuse(fin);
  ledger.charge_fusion(trace.fusion.fusion_cost);

  if (env.banks != nullptr && cfg.use_tt && trace.accepted) {
    MemoryEntry entry = entry_from_store(trace, store, embedder_of(env));
    if (env.bank_mutex != nullptr) {
      const std::lock_guard lock(*env.bank_mutex);
      write_back(env.banks->tt, std::move(entry), true);
    } else {
      write_back(env.banks->tt, std::move(entry), true);
    }
  }
  return finish(std::move(trace), store, ledger);
}

EpisodeResult run_fixed_chain(const Scene& scene, const std::string& instruction, const EpisodeEnv& env,
                              const RunConfig& cfg, RunMode variant, std::uint64_t seed) {
  if (env.registry == nullptr) throw std::invalid_argument("episode needs a skill registry");
  if (variant == RunMode::adaptive) throw std::invalid_argument("adaptive is not a fixed chain");
  const Registry& registry = *env.registry;
  const Verifier verifier(cfg.verifier);
  const NoiseModel noise = noise_for(cfg, scene, seed);
  const Grid frame = scene.grid;
  const Box full = Box::full(frame);
  const std::string query = instruction_query(instruction);

  EpisodeTrace trace;
  trace.scene = scene;
  trace.instruction = instruction;
  trace.config = cfg;
  trace.config.mode = variant;
  trace.seed = seed;

  EvidenceStore store(frame);
  BudgetLedger ledger(cfg.budget);
  ProposalContext ctx;
  ctx.frame = frame;
  ctx.query = query;
  ctx.view = {full, 1};
  int t = 0;

  const auto run = [&](SkillAction a) {
    ++t;
    StepRecord rec = execute(scene, instruction, registry, a, t, noise, cfg.router, store, ledger);
    ctx.past_actions.push_back(a);
    rec.report = verifier.evaluate(store, ctx, t);
    trace.steps.push_back(std::move(rec));
  };
  const auto make = [&](const SkillId& skill, Box roi, int scale) {
    SkillAction a{skill, {}};
    a.params.roi = roi;
    a.params.scale = scale;
    a.params.query = query;
    return a;
  };
  const auto prompt_at = [](SkillAction a, const Box& around) {
    const auto [x, y] = around.center();
    a.params.prompt_point = KeyPoint{x, y, 1.0};
    return a;
  };

  run(make(skill_ids::detect, full, 1));
  run(prompt_at(make(skill_ids::segment, full, 1), current_focus(store).value_or(full)));
  if (variant == RunMode::full_chain) {
    const Box around = current_focus(store).value_or(full);
    const int w = std::max(around.width(), frame.width / 2);
    const int h = std::max(around.height(), frame.height / 2);
    const auto [cx, cy] = around.center();
    const int x0 = std::clamp(static_cast<int>(std::lround(cx - 0.5 * w)), 0, frame.width - w);
    const int y0 = std::clamp(static_cast<int>(std::lround(cy - 0.5 * h)), 0, frame.height - h);
    run(make(skill_ids::zoom, {x0, y0, x0 + w, y0 + h}, 2));
    run(make(skill_ids::web_search, full, 1));
    run(make(skill_ids::dreamer, full, 1));
    const Box refined = pad(current_focus(store).value_or(full), cfg.verifier.refine_padding, frame);
    run(prompt_at(make(skill_ids::segment, refined, zoom_scale_for(refined, frame)), refined));
  }

  trace.accepted = false;
  FusionInputs fin{&scene, instruction, &store, {}, &registry, noise, cfg.verifier, cfg.router};
  trace.fusion = fuse(fin);
  ledger.charge_fusion(trace.fusion.fusion_cost);
  return finish(std::move(trace), store, ledger);
}

EpisodeResult run_any(const Scene& scene, const EpisodeEnv& env, const RunConfig& cfg,
                      const std::optional<std::vector<RetrievedMemory>>& priors) {
  const std::uint64_t seed = episode_seed(cfg.seed, scene);
  if (cfg.mode == RunMode::adaptive) return run_episode(scene, scene.instruction, env, cfg, seed, priors);
  return run_fixed_chain(scene, scene.instruction, env, cfg, cfg.mode, seed);
}

MemoryEntry entry_from_trace(const EpisodeTrace& trace, const Embedder& embedder) {
  EvidenceStore store(trace.scene.grid);
  for (const EvidenceRecord& r : trace.evidence) store.restore(r);
  return entry_from_store(trace, store, embedder);
}

}  // namespace aharness
