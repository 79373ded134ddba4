// One PASS/FAIL line per acceptance criterion; exits nonzero on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "aharness/batch.hpp"
#include "aharness/router.hpp"
#include "aharness/scenario.hpp"
#include "aharness/trace.hpp"
#include "aharness/verifier.hpp"
#include "support.hpp"

using namespace aharness;
using namespace aharness::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int n, bool pass, const std::string& what, double seconds) {
  std::printf("criterion %2d %s  %s (%.2fs)\n", n, pass ? "PASS" : "FAIL", what.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

VerifierConfig vdefaults() {
  VerifierConfig c;
  c.normalize();
  return c;
}

RunConfig base_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.validate();
  return c;
}

Banks initial_banks(const RunConfig& cfg, const Benchmark& bench) {
  Banks b = Banks::with_capacities(cfg.capacity_cs, cfg.capacity_tt);
  if (cfg.use_cs) seed_cs(b.cs, bench.library_items, HashingEmbedder{});
  return b;
}

BatchResult run_default(const Benchmark& bench, const RunConfig& cfg, const BatchOptions& opt = {}) {
  static const Registry reg = simulated_registry();
  Banks banks = initial_banks(cfg, bench);
  std::vector<std::size_t> order(bench.eval.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  return run_batch(bench.eval, order, {&reg, &banks}, cfg, opt);
}

// The 200-scene mixed benchmark of seed s, cached.
const Benchmark& mixed(std::uint64_t s) {
  static std::map<std::uint64_t, Benchmark> cache;
  auto it = cache.find(s);
  if (it == cache.end()) it = cache.emplace(s, build_benchmark({67, 67, 66, s})).first;
  return it->second;
}

const BatchResult& adaptive_run(std::uint64_t s) {
  static std::map<std::uint64_t, BatchResult> cache;
  auto it = cache.find(s);
  if (it == cache.end()) it = cache.emplace(s, run_default(mixed(s), base_config(s))).first;
  return it->second;
}

void criterion_1() {
  const auto t = Clock::now();
  const VerifierConfig cfg = vdefaults();
  const Grid g = Grid::make(100, 100);
  bool ok = true;

  EvidenceStore omega_store(g);
  add_box(omega_store, skill_ids::detect, {0, 0, 10, 10}, 1.0, 1);
  add_mask(omega_store, skill_ids::segment, {5, 0, 15, 10}, 1.0, 2);
  ok &= near(cross_skill_consistency(omega_store, Box::full(g)), 1.0 / 3.0, 1e-4);

  EvidenceStore zeta_store(g);
  add_mask(zeta_store, skill_ids::segment, {0, 0, 12, 10}, 1.0, 1);
  add_mask(zeta_store, skill_ids::segment, {0, 0, 20, 10}, 1.0, 2, {0, 0, 50, 50}, 2);
  ok &= near(cross_scale_stability(zeta_store), 0.6, 1e-4);

  EvidenceStore w_store(g);
  const auto seg = add_mask(w_store, skill_ids::segment, {0, 0, 10, 10}, 1.0, 1);
  const auto det = add_box(w_store, skill_ids::detect, {0, 0, 10, 10}, 1.0, 2);
  const auto w = effective_weights(w_store, record_stability(w_store), cfg);
  ok &= near(w.at(seg), 0.538, 1e-3) && near(w.at(det), 0.462, 1e-3);
  ok &= near(w.at(seg), 0.35 / 0.65, 1e-12) && near(w.at(det), 0.30 / 0.65, 1e-12);

  const double squashed_one = 1.0 / (1.0 + std::exp(-10.0 * 0.5));
  const double v_one = 0.5 + 0.3 + 0.2 * squashed_one;
  ok &= near(commit_score(1.0, 1.0, 1.0, cfg), v_one, 1e-12);
  ok &= near(commit_score(1.0, 1.0, 1.0, cfg), 0.9987, 1e-4);

  for (double v : {0.0, 0.5, 0.79, 0.7999999, 0.8, 0.81, 1.0}) {
    for (double omega : {0.0, 0.3, 0.4999999, 0.5, 0.51, 1.0}) {
      ok &= commit_decision(v, omega, cfg) == (v >= 0.8 && omega >= 0.5);
    }
  }
  const double secs = since(t);
  report(1, ok && secs < 1.0, "verifier worked examples and commit truth table", secs);
}

void criterion_2() {
  const auto t = Clock::now();
  const Registry reg = simulated_registry();
  const RouterConfig rcfg;
  const VerifierConfig vcfg = vdefaults();
  std::mt19937_64 gen(20240);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coord(0, 150);
  const std::array<SkillId, 3> proposer{skill_ids::segment, skill_ids::zoom, skill_ids::web_search};
  int checked = 0;
  int agreed = 0;
  while (checked < 10000) {
    DiagnosticReport r;
    r.omega = u(gen);
    r.zeta = u(gen);
    r.mu = u(gen);
    r.mu_squashed = squash(r.mu, vcfg);
    r.v = commit_score(r.omega, r.zeta, r.mu, vcfg);
    r.commit = commit_decision(r.v, r.omega, vcfg);
    r.has_hypothesis = true;
    if (r.commit) continue;
    const auto d = deficits(r.omega, r.zeta, r.mu_squashed, vcfg);
    if (std::count_if(d.begin(), d.end(), [](double x) { return x > 0.0; }) != 1) continue;
    r.deficiency = dominant_deficiency(r.omega, r.zeta, r.mu_squashed, vcfg);
    const int dim = static_cast<int>(r.deficiency);
    const int x0 = coord(gen) % 100;
    const int y0 = coord(gen) % 80;
    const Box roi{x0, y0, x0 + 20 + coord(gen) % 40, y0 + 20 + coord(gen) % 20};
    r.proposal = action_for(proposer[static_cast<std::size_t>(dim)], roi, dim == 1 ? 2 << (coord(gen) % 2) : 1);
    RouterState s;
    s.remaining_budget = 1.0 + 2.0 * u(gen);
    s.frame = Grid::make(kSceneWidth, kSceneHeight);
    s.query = "mug handle";
    const auto scored = score_candidates(feasible_actions(s, reg, r, rcfg), r, reg, rcfg, vcfg);
    StubBrain brain;
    const Selection sel = select_action(s, scored, r, rcfg, &brain);
    if (sel.used_fallback) continue;
    ++checked;
    agreed += sel.action == *r.proposal ? 1 : 0;
  }
  const double secs = since(t);
  report(2, agreed == checked && secs < 10.0,
         "proposal selected in " + std::to_string(agreed) + "/" + std::to_string(checked) + " states", secs);
}

void criterion_3() {
  const auto t = Clock::now();
  const Benchmark bench = build_benchmark({500, 500, 500, 1});
  RunConfig cfg = base_config(1);
  const BatchResult truncated = run_default(bench, cfg);
  cfg.budget_truncation = false;
  const BatchResult open = run_default(bench, cfg);

  std::printf("  retry histogram without budget truncation (%zu episodes)\n", bench.eval.size());
  std::printf("  %-10s %6s %11s %7s %7s\n", "Det Calls", "N", "Mean Calls", "gIoU", "cIoU");
  const auto& h = open.metrics.retry_histogram;
  for (const auto& [calls, bin] : h) {
    std::printf("  %-10d %6d %11.2f %7.4f %7.4f\n", calls, bin.count, bin.mean_calls, bin.mean_iou, bin.ciou);
    if (calls == 3) std::printf("  %s\n", std::string(45, '-').c_str());
  }
  bool monotone = h.count(1) && h.count(2) && h.count(3);
  if (monotone) monotone = h.at(1).mean_iou >= h.at(2).mean_iou && h.at(2).mean_iou >= h.at(3).mean_iou;
  report(3, truncated.over_budget == 0 && monotone,
         std::to_string(truncated.over_budget) + " over budget in " + std::to_string(bench.eval.size()) +
             " episodes; bins 1-3 non-increasing: " + (monotone ? "yes" : "no"),
         since(t));
}

void criterion_4() {
  const auto t = Clock::now();
  const Registry reg = simulated_registry();
  const RunConfig cfg = base_config(4);
  RunConfig hostile = cfg;
  hostile.noise.p_det = hostile.noise.p_seg = hostile.noise.p_web = hostile.noise.p_dream = 0.0;
  const Benchmark bench = build_benchmark({40, 40, 40, 4});

  Banks plain = initial_banks(cfg, bench);
  Banks mixed_in = plain;
  int injected = 0;
  std::uint64_t next_hostile = 1000000;
  for (const Scene& scene : bench.eval) {
    run_episode(scene, scene.instruction, {&reg, &plain}, cfg, episode_seed(cfg.seed, scene));
    // Rejected episodes between every real one.
    for (int k = 0; k < 2; ++k) {
      const Scene bad = generate_scene(next_hostile++, 1.0, 0.3);
      Banks probe = mixed_in;
      const EpisodeResult p = run_episode(bad, bad.instruction, {&reg, &probe}, hostile, bad.seed);
      if (p.accepted) continue;
      run_episode(bad, bad.instruction, {&reg, &mixed_in}, hostile, bad.seed);
      ++injected;
    }
    run_episode(scene, scene.instruction, {&reg, &mixed_in}, cfg, episode_seed(cfg.seed, scene));
  }
  const bool identical = serialize_bank(plain.tt) == serialize_bank(mixed_in.tt) && plain.tt.size() > 0;

  MemoryBank tt(Tier::tt, 80);
  bool bounded = true;
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n;
  std::vector<std::string> sources;
  for (int i = 0; i < 500; ++i) {
    MemoryEntry e;
    e.embedding.resize(16);
    for (double& v : e.embedding) v = n(gen);
    e.outcome_score = 1.0;
    e.source = std::to_string(i);
    e.summary.frame = Grid::make(kSceneWidth, kSceneHeight);
    write_back(tt, e, true);
    bounded &= tt.size() <= 80 && tt.capsules().size() <= tt.capsule_capacity();
  }
  bool fifo = tt.size() == 80;
  for (std::size_t i = 0; fifo && i < tt.entries().size(); ++i) fifo = tt.entries()[i].source == std::to_string(420 + i);
  int folded = 0;
  for (const auto& c : tt.capsules()) folded += c.merge_count;
  bounded &= folded == 420;

  report(4, identical && bounded && fifo && injected > 0,
         std::to_string(injected) + " rejected episodes injected, bank identical: " + (identical ? "yes" : "no") +
             "; FIFO and capsule bounds after 500 episodes: " + (bounded && fifo ? "yes" : "no"),
         since(t));
}

void criterion_5() {
  const auto t = Clock::now();
  bool all = true;
  for (std::uint64_t s : {1, 2, 3}) {
    const BatchResult& ad = adaptive_run(s);
    RunConfig cfg = base_config(s);
    cfg.mode = RunMode::full_chain;
    const BatchResult full = run_default(mixed(s), cfg);
    cfg.mode = RunMode::det_seg;
    const BatchResult ds = run_default(mixed(s), cfg);
    const double hard_ad = ad.by_band.at("hard").giou;
    const double hard_ds = ds.by_band.at("hard").giou;
    const bool pass = ad.metrics.giou >= full.metrics.giou - 0.01 &&
                      ad.metrics.mean_skill_calls <= 0.7 * full.metrics.mean_skill_calls &&
                      hard_ad >= hard_ds + 0.03;
    std::printf("  seed %llu: adaptive gIoU %.4f calls %.3f | full %.4f calls %.3f | hard adaptive %.4f det_seg %.4f %s\n",
                static_cast<unsigned long long>(s), ad.metrics.giou, ad.metrics.mean_skill_calls, full.metrics.giou,
                full.metrics.mean_skill_calls, hard_ad, hard_ds, pass ? "ok" : "fail");
    all &= pass;
  }
  const double secs = since(t);
  report(5, all && secs < 300.0, "adaptive vs fixed chains on three seeded 200-scene benchmarks", secs);
}

void criterion_6() {
  const auto t = Clock::now();
  bool all = true;
  std::string detail;
  for (std::uint64_t s : {1, 2, 3}) {
    const BatchResult& r = adaptive_run(s);
    int easy = 0;
    int single = 0;
    for (const EpisodeSummary& e : r.episodes) {
      if (e.band != Band::easy) continue;
      ++easy;
      single += e.detection_calls == 1 ? 1 : 0;
    }
    const double frac = static_cast<double>(single) / easy;
    all &= frac >= 0.70;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%.3f", detail.empty() ? "" : ", ", frac);
    detail += buf;
  }
  report(6, all, "easy episodes with one detection call: " + detail, since(t));
}

void criterion_7() {
  const auto t = Clock::now();
  bool all = true;
  std::string detail;
  for (std::uint64_t s : {1, 2, 3}) {
    const double rate = adaptive_run(s).fallback_rate();
    all &= rate <= 0.20;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%.3f", detail.empty() ? "" : ", ", rate);
    detail += buf;
  }
  report(7, all, "fallback rate: " + detail, since(t));
}

void criterion_8() {
  const auto t = Clock::now();
  const Registry reg = simulated_registry();
  const Benchmark bench = build_benchmark({100, 100, 100, 1});
  RunConfig cfg = base_config(1);
  cfg.use_cs = false;
  cfg.orderings = 3;
  const OrderingsResult o = run_orderings(bench.eval, initial_banks(cfg, bench), {&reg, nullptr}, cfg);
  const double early = o.stats.at("early_third_calls").at("mean").get<double>();
  const double late = o.stats.at("late_third_calls").at("mean").get<double>();
  char buf[128];
  std::snprintf(buf, sizeof buf, "mean calls early third %.3f, late third %.3f over %zu orderings", early, late,
                o.runs.size());
  report(8, late <= early, buf, since(t));
}

void criterion_9() {
  const auto t = Clock::now();
  int verifier_helps = 0;
  int memory_helps = 0;
  for (std::uint64_t s : {1, 2, 3}) {
    const double full = adaptive_run(s).metrics.giou;
    RunConfig ro = base_config(s);
    ro.router_only = true;
    const double router_only = run_default(mixed(s), ro).metrics.giou;
    RunConfig nm = base_config(s);
    nm.use_cs = nm.use_tt = false;
    const double no_memory = run_default(mixed(s), nm).metrics.giou;
    std::printf("  seed %llu: full %.4f router-only %.4f no memory %.4f\n", static_cast<unsigned long long>(s), full,
                router_only, no_memory);
    verifier_helps += router_only < full ? 1 : 0;
    memory_helps += no_memory < full ? 1 : 0;
  }
  report(9, verifier_helps >= 2 && memory_helps >= 2,
         "router-only lower in " + std::to_string(verifier_helps) + "/3, no memory lower in " +
             std::to_string(memory_helps) + "/3",
         since(t));
}

void criterion_10() {
  const auto t = Clock::now();
  const Registry reg = simulated_registry();
  const fs::path dir = fs::temp_directory_path() / "aharness-acceptance-traces";
  fs::remove_all(dir);
  BatchOptions opt;
  opt.trace_dir = dir;
  const RunConfig cfg = base_config(1);
  const BatchResult traced = run_default(mixed(1), cfg, opt);
  int traces = 0;
  int exact = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() < 12 || name.substr(name.size() - 12) != ".trace.jsonl") continue;
    ++traces;
    const ReplayOutcome o = replay_trace(load_trace(entry.path()), reg);
    exact += o.identical && o.mask_identical ? 1 : 0;
  }
  fs::remove_all(dir);

  const auto bench_report = [&] {
    OrderingsResult o;
    o.runs.push_back(run_default(mixed(1), cfg));
    o.stats = orderings_stats(o.runs);
    return orderings_report_json(o, cfg).dump();
  };
  const bool same = bench_report() == bench_report() && bench_report() == [&] {
    OrderingsResult o;
    o.runs.push_back(traced);
    o.stats = orderings_stats(o.runs);
    return orderings_report_json(o, cfg).dump();
  }();
  report(10, traces == static_cast<int>(mixed(1).eval.size()) && exact == traces && same,
         std::to_string(exact) + "/" + std::to_string(traces) + " traces replay bit-exactly; repeated reports identical: " +
             (same ? "yes" : "no"),
         since(t));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria{criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                                                    criterion_6, criterion_7, criterion_8, criterion_9, criterion_10};
  for (const auto& c : criteria) {
    try {
      c();
    } catch (const std::exception& e) {
      std::printf("criterion FAIL  error: %s\n", e.what());
      ++failures;
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
