#include "aharness/batch.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "aharness/rng.hpp"
#include "aharness/trace.hpp"

namespace aharness {

void to_json(json& j, const EpisodeSummary& s) {
  j = json{{"scene", s.scene_id},
           {"band", to_string(s.band)},
           {"iou", s.iou},
           {"accepted", s.accepted},
           {"in_loop_calls", s.in_loop_calls},
           {"detection_calls", s.detection_calls},
           {"routing_decisions", s.routing_decisions},
           {"fallback_decisions", s.fallback_decisions},
           {"charged_cost", s.charged_cost},
           {"fusion_cost", s.fusion_cost},
           {"fusion_source", s.fusion_source}};
}

std::array<std::pair<std::size_t, std::size_t>, 3> thirds_of(std::size_t n) {
  std::array<std::pair<std::size_t, std::size_t>, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) out[i] = {i * n / 3, (i + 1) * n / 3};
  return out;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int k) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed, "ordering", static_cast<std::uint64_t>(k));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

namespace {

EpisodeSummary summarize(const EpisodeResult& r, const Scene& scene) {
  EpisodeSummary s;
  s.scene_id = scene.id;
  s.band = band_of(scene.difficulty);
  s.iou = r.iou;
  s.accepted = r.accepted;
  s.in_loop_calls = r.trace.in_loop_calls();
  s.detection_calls = r.trace.detection_calls();
  s.routing_decisions = r.trace.routing_decisions();
  s.fallback_decisions = r.trace.fallback_decisions();
  s.charged_cost = r.trace.charged_cost;
  s.fusion_cost = r.trace.fusion_cost;
  s.fusion_source = to_string(r.fusion.source);
  return s;
}

}  // namespace

BatchResult run_batch(const std::vector<Scene>& scenes, const std::vector<std::size_t>& order, const EpisodeEnv& env,
                      const RunConfig& cfg, const BatchOptions& options) {
  for (std::size_t i : order) {
    if (i >= scenes.size()) throw std::out_of_range("batch order refers to a missing scene");
  }
  const std::size_t n = order.size();
  BatchResult out;
  out.episodes.resize(n);
  std::vector<Mask> predictions(n);
  std::vector<EpisodeResult> kept(options.keep_results ? n : 0);
  std::vector<std::string> files(n);

  const auto run_one = [&](std::size_t pos, const EpisodeEnv& e) {
    const Scene& scene = scenes[order[pos]];
    EpisodeResult r = run_any(scene, e, cfg);
    out.episodes[pos] = summarize(r, scene);
    predictions[pos] = r.fusion.mask;
    if (options.trace_dir) {
      char prefix[16];
      std::snprintf(prefix, sizeof prefix, "%05zu-", pos);
      files[pos] = std::string(prefix) + scene.id;
      save_trace(r.trace, *options.trace_dir / (files[pos] + ".trace.jsonl"));
      save_mask(r.fusion.mask, *options.trace_dir / (files[pos] + ".mask.json"));
    }
    if (options.keep_results) kept[pos] = std::move(r);
  };

  if (cfg.parallel <= 1) {
    for (std::size_t pos = 0; pos < n; ++pos) run_one(pos, env);
  } else {
    out.order_nondeterministic = true;
    std::mutex bank_mutex;
    EpisodeEnv shared = env;
    shared.bank_mutex = &bank_mutex;
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    std::vector<std::thread> workers;
    for (int w = 0; w < cfg.parallel; ++w) {
      workers.emplace_back([&] {
        for (std::size_t pos = next++; pos < n; pos = next++) {
          try {
            run_one(pos, shared);
          } catch (...) {
            const std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : workers) t.join();
    if (error) std::rethrow_exception(error);
  }

  std::vector<Mask> truths;
  std::vector<int> det_calls;
  std::vector<int> calls;
  std::map<std::string, std::vector<std::size_t>> band_members;
  for (std::size_t pos = 0; pos < n; ++pos) {
    const EpisodeSummary& s = out.episodes[pos];
    truths.push_back(scenes[order[pos]].target_gt);
    det_calls.push_back(s.detection_calls);
    calls.push_back(s.in_loop_calls);
    band_members[to_string(s.band)].push_back(pos);
    out.routing_decisions += s.routing_decisions;
    out.fallback_decisions += s.fallback_decisions;
    if (s.charged_cost > cfg.budget + 1e-9) ++out.over_budget;
  }
  out.metrics = evaluate(predictions, truths, det_calls, calls);
  for (const auto& [band, members] : band_members) {
    std::vector<Mask> p;
    std::vector<Mask> g;
    std::vector<int> d;
    std::vector<int> c;
    for (std::size_t pos : members) {
      p.push_back(predictions[pos]);
      g.push_back(truths[pos]);
      d.push_back(det_calls[pos]);
      c.push_back(calls[pos]);
    }
    out.by_band[band] = evaluate(p, g, d, c);
  }
  const auto parts = thirds_of(n);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto [lo, hi] = parts[i];
    double total = 0.0;
    for (std::size_t pos = lo; pos < hi; ++pos) total += calls[pos];
    out.thirds[i] = hi > lo ? total / static_cast<double>(hi - lo) : 0.0;
  }
  if (options.keep_results) out.results = std::move(kept);

  if (options.trace_dir) {
    json manifest{{"format", "aharness-batch/1"},
                  {"mode", to_string(cfg.mode)},
                  {"seed", cfg.seed},
                  {"config", config_to_json(cfg)},
                  {"order_nondeterministic", out.order_nondeterministic}};
    json eps = json::array();
    for (std::size_t pos = 0; pos < n; ++pos) {
      const Scene& scene = scenes[order[pos]];
      eps.push_back(json{{"position", pos},
                         {"scene", scene.id},
                         {"scene_seed", scene.seed},
                         {"episode_seed", episode_seed(cfg.seed, scene)},
                         {"trace", files[pos] + ".trace.jsonl"},
                         {"mask", files[pos] + ".mask.json"}});
    }
    manifest["episodes"] = std::move(eps);
    std::ofstream mf(*options.trace_dir / "manifest.json");
    if (!mf) throw std::runtime_error("cannot write batch manifest");
    mf << manifest.dump(1) << '\n';
  }
  return out;
}

namespace {

json mean_sd(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  const double sd = xs.size() > 1 ? std::sqrt(v / static_cast<double>(xs.size() - 1)) : 0.0;
  return json{{"mean", m}, {"sd", sd}};
}

}  // namespace

json orderings_stats(const std::vector<BatchResult>& runs) {
  const auto collect = [&](auto get) {
    std::vector<double> xs;
    for (const BatchResult& r : runs) xs.push_back(get(r));
    return mean_sd(xs);
  };
  return json{{"giou", collect([](const BatchResult& r) { return r.metrics.giou; })},
              {"ciou", collect([](const BatchResult& r) { return r.metrics.ciou; })},
              {"p50", collect([](const BatchResult& r) { return r.metrics.p50; })},
              {"p50_95", collect([](const BatchResult& r) { return r.metrics.p50_95; })},
              {"mean_skill_calls", collect([](const BatchResult& r) { return r.metrics.mean_skill_calls; })},
              {"fallback_rate", collect([](const BatchResult& r) { return r.fallback_rate(); })},
              {"early_third_calls", collect([](const BatchResult& r) { return r.thirds[0]; })},
              {"middle_third_calls", collect([](const BatchResult& r) { return r.thirds[1]; })},
              {"late_third_calls", collect([](const BatchResult& r) { return r.thirds[2]; })}};
}

OrderingsResult run_orderings(const std::vector<Scene>& scenes, const Banks& initial, const EpisodeEnv& env,
                              const RunConfig& cfg) {
  OrderingsResult out;
  for (int k = 0; k < cfg.orderings; ++k) {
    std::vector<std::size_t> order;
    if (cfg.orderings == 1) {
      order.resize(scenes.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
    } else {
      order = shuffled_order(scenes.size(), cfg.seed, k);
    }
    Banks banks = initial;
    EpisodeEnv e = env;
    e.banks = &banks;
    out.runs.push_back(run_batch(scenes, order, e, cfg));
  }
  out.stats = orderings_stats(out.runs);
  return out;
}

json batch_report_json(const BatchResult& r) {
  json bands = json::object();
  for (const auto& [band, m] : r.by_band) bands[band] = m;
  return json{{"metrics", r.metrics},
              {"by_band", std::move(bands)},
              {"thirds", r.thirds},
              {"routing_decisions", r.routing_decisions},
              {"fallback_decisions", r.fallback_decisions},
              {"fallback_rate", r.fallback_rate()},
              {"over_budget", r.over_budget},
              {"order_nondeterministic", r.order_nondeterministic}};
}

json orderings_report_json(const OrderingsResult& r, const RunConfig& cfg) {
  json runs = json::array();
  for (const BatchResult& b : r.runs) runs.push_back(batch_report_json(b));
  return json{{"format", "aharness-bench/1"},
              {"mode", to_string(cfg.mode)},
              {"seed", cfg.seed},
              {"orderings", cfg.orderings},
              {"config", config_to_json(cfg)},
              {"summary", r.stats},
              {"runs", std::move(runs)}};
}

}  // namespace aharness
