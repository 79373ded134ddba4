#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aharness/batch.hpp"
#include "aharness/config.hpp"
#include "aharness/memory.hpp"
#include "aharness/runtime.hpp"
#include "aharness/scenario.hpp"
#include "aharness/skillbridge.hpp"
#include "aharness/trace.hpp"

namespace fs = std::filesystem;
using namespace aharness;

namespace {

// Flags shared by every subcommand that runs episodes. Each maps onto a
// config key; unset flags leave the file/environment value alone.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<double> budget;
  std::optional<std::string> mode;
  std::optional<int> orderings;
  std::optional<int> parallel;
  std::optional<int> max_steps;
  std::optional<std::size_t> top_n;
  std::optional<std::size_t> capacity_cs;
  std::optional<std::size_t> capacity_tt;
  std::optional<double> delta;
  std::optional<double> omega_floor;
  bool no_truncation = false;
  bool no_cs = false;
  bool no_tt = false;
  bool router_only = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON config file");
    app->add_option("--set", sets, "Override a config key (key=value, value in JSON syntax)");
    app->add_option("--seed", seed, "Run seed");
    app->add_option("--budget", budget, "Per-episode call budget B");
    app->add_option("--mode", mode, "adaptive, det_seg or full_chain");
    app->add_option("--orderings", orderings, "Number of randomized batch orderings");
    app->add_option("--parallel", parallel, "Concurrent episodes (order-nondeterministic)");
    app->add_option("--max-steps", max_steps, "Step cap without budget truncation");
    app->add_option("--top-n", top_n, "Retrieved memories per episode");
    app->add_option("--capacity-cs", capacity_cs, "Common-sense bank capacity");
    app->add_option("--capacity-tt", capacity_tt, "Episodic bank capacity");
    app->add_option("--delta", delta, "Commit threshold");
    app->add_option("--omega-floor", omega_floor, "Consistency floor");
    app->add_flag("--no-budget-truncation", no_truncation, "Do not stop when the budget is spent");
    app->add_flag("--no-cs", no_cs, "Disable the common-sense bank");
    app->add_flag("--no-tt", no_tt, "Disable the episodic bank");
    app->add_flag("--router-only", router_only, "Disable verifier gating");
  }

  [[nodiscard]] RunConfig resolve() const {
    RunConfig cfg = config_file.empty() ? RunConfig{} : load_config(config_file);
    apply_env_overrides(cfg, current_environment());
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
      json value;
      try {
        value = json::parse(kv.substr(eq + 1));
      } catch (const json::exception&) {
        value = kv.substr(eq + 1);
      }
      apply_config_json(cfg, json{{kv.substr(0, eq), value}});
    }
    if (seed) cfg.seed = *seed;
    if (budget) cfg.budget = *budget;
    if (mode) cfg.mode = run_mode_from_string(*mode);
    if (orderings) cfg.orderings = *orderings;
    if (parallel) cfg.parallel = *parallel;
    if (max_steps) cfg.max_steps = *max_steps;
    if (top_n) cfg.top_n = *top_n;
    if (capacity_cs) cfg.capacity_cs = *capacity_cs;
    if (capacity_tt) cfg.capacity_tt = *capacity_tt;
    if (delta) cfg.verifier.delta = *delta;
    if (omega_floor) cfg.verifier.omega_floor = *omega_floor;
    if (no_truncation) cfg.budget_truncation = false;
    if (no_cs) cfg.use_cs = false;
    if (no_tt) cfg.use_tt = false;
    if (router_only) cfg.router_only = true;
    cfg.validate();
    return cfg;
  }
};

// Optional out-of-process skills.
struct BridgeFlags {
  std::string server_cmd;
  std::string server_tcp;
  int timeout_ms = 5000;
  std::shared_ptr<SkillConnection> connection;

  void attach(CLI::App* app) {
    app->add_option("--skill-server", server_cmd, "Command of a stdio skill server");
    app->add_option("--skill-tcp", server_tcp, "host:port of a TCP skill server");
    app->add_option("--bridge-timeout-ms", timeout_ms, "Per-call timeout for bridged skills");
  }

  Registry registry() {
    if (server_cmd.empty() && server_tcp.empty()) return simulated_registry();
    std::unique_ptr<Transport> t;
    if (!server_cmd.empty()) {
      std::istringstream ss(server_cmd);
      std::vector<std::string> argv;
      for (std::string w; ss >> w;) argv.push_back(w);
      t = spawn_stdio(argv);
    } else {
      const auto colon = server_tcp.rfind(':');
      if (colon == std::string::npos) throw std::invalid_argument("--skill-tcp expects host:port");
      t = connect_tcp(server_tcp.substr(0, colon), std::stoi(server_tcp.substr(colon + 1)));
    }
    connection = std::make_shared<SkillConnection>(std::move(t));
    connection->handshake(std::chrono::milliseconds(timeout_ms));
    return bridged_registry(connection, std::chrono::milliseconds(timeout_ms));
  }

  void report_incidents() const {
    if (!connection) return;
    for (const std::string& i : connection->incidents()) std::cerr << "bridge incident: " << i << "\n";
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Banks initial_banks(const RunConfig& cfg, const Benchmark* bench, const std::string& cs_file, const std::string& tt_file) {
  Banks banks = Banks::with_capacities(cfg.capacity_cs, cfg.capacity_tt);
  if (!cs_file.empty()) {
    MemoryBank cs = load_bank(cs_file);
    if (cs.tier() != Tier::cs) throw std::invalid_argument(cs_file + " is not a common-sense bank");
    banks.cs = std::move(cs);
  } else if (bench != nullptr && cfg.use_cs) {
    seed_cs(banks.cs, bench->library_items, HashingEmbedder{});
  }
  if (!tt_file.empty()) {
    MemoryBank tt = load_bank(tt_file);
    if (tt.tier() != Tier::tt) throw std::invalid_argument(tt_file + " is not an episodic bank");
    banks.tt = std::move(tt);
  }
  return banks;
}

void print_metrics_row(const std::string& label, const MetricsReport& m, double extra) {
  std::printf("%-22s %6.4f %6.4f %6.4f %7.4f %5d %6.3f %8.4f\n", label.c_str(), m.giou, m.ciou, m.p50, m.p50_95,
              m.n_samples, m.mean_skill_calls, extra);
}

void print_metrics_header(const char* extra) {
  std::printf("%-22s %6s %6s %6s %7s %5s %6s %8s\n", "", "gIoU", "cIoU", "P@50", "P@50:95", "n", "calls", extra);
}

void print_histogram(const MetricsReport& m) {
  std::printf("%-10s %8s %11s %7s %7s\n", "Det Calls", "N", "Mean Calls", "gIoU", "cIoU");
  bool ruled = false;
  for (const auto& [calls, bin] : m.retry_histogram) {
    if (calls > 3 && !ruled) {
      std::printf("%s\n", std::string(46, '-').c_str());
      ruled = true;
    }
    std::printf("%-10d %8d %11.3f %7.4f %7.4f\n", calls, bin.count, bin.mean_calls, bin.mean_iou, bin.ciou);
  }
}

void print_batch(const BatchResult& r) {
  print_metrics_header("fallback");
  print_metrics_row("all", r.metrics, r.fallback_rate());
  for (const auto& [band, m] : r.by_band) print_metrics_row(band, m, 0.0);
  std::printf("calls by third: early %.3f  middle %.3f  late %.3f\n", r.thirds[0], r.thirds[1], r.thirds[2]);
  std::printf("episodes over budget: %d\n", r.over_budget);
  print_histogram(r.metrics);
  if (r.order_nondeterministic) std::printf("note: parallel run, episode order nondeterministic\n");
}

// ---------------------------------------------------------------------------

int cmd_scene_gen(const fs::path& out, int easy, int medium, int hard, std::uint64_t seed) {
  const Benchmark b = build_benchmark({easy, medium, hard, seed});
  save_benchmark(b, out);
  std::printf("wrote %zu evaluation and %zu library scenes to %s\n", b.eval.size(), b.library.size(), out.c_str());
  return 0;
}

int cmd_seed_cs(const fs::path& bench_dir, const fs::path& out, const RunConfig& cfg) {
  const Benchmark b = load_benchmark(bench_dir);
  MemoryBank cs(Tier::cs, cfg.capacity_cs);
  const SeedReport rep = seed_cs(cs, b.library_items, HashingEmbedder{});
  save_bank(cs, out);
  std::printf("stored %zu entries, rejected %zu over capacity\n", rep.stored, rep.rejected);
  return 0;
}

struct RunArgs {
  std::string bench_dir;
  std::string scene_id;
  std::string scene_file;
  std::string cs_file;
  std::string tt_file;
  std::string tt_out;
  std::string trace_file;
  std::string mask_file;
};

int cmd_run(const RunArgs& a, const RunConfig& cfg, BridgeFlags& bridge) {
  std::optional<Benchmark> bench;
  Scene scene;
  if (!a.scene_file.empty()) {
    scene = load_scene(a.scene_file);
  } else {
    if (a.bench_dir.empty() || a.scene_id.empty()) throw std::invalid_argument("run needs --scene-file or --bench with --scene");
    bench = load_benchmark(a.bench_dir);
    bool found = false;
    for (const Scene& s : bench->eval) {
      if (s.id == a.scene_id) {
        scene = s;
        found = true;
      }
    }
    if (!found) throw std::invalid_argument("scene not in the evaluation split: " + a.scene_id);
  }
  Banks banks = initial_banks(cfg, bench ? &*bench : nullptr, a.cs_file, a.tt_file);
  const Registry registry = bridge.registry();
  EpisodeEnv env;
  env.registry = &registry;
  env.banks = &banks;
  const EpisodeResult r = run_any(scene, env, cfg);
  bridge.report_incidents();

  if (!a.trace_file.empty()) save_trace(r.trace, a.trace_file);
  if (!a.mask_file.empty()) save_mask(r.fusion.mask, a.mask_file);
  if (!a.tt_out.empty()) save_bank(banks.tt, a.tt_out);

  std::printf("scene %s (%s, difficulty %.3f)\n", scene.id.c_str(), to_string(band_of(scene.difficulty)).c_str(),
              scene.difficulty);
  for (const StepRecord& s : r.trace.steps) {
    std::printf("  step %d %-60s", s.step, describe(s.action).c_str());
    if (s.report) {
      std::printf(" w=%.3f z=%.3f mu=%.3f v=%.3f%s", s.report->omega, s.report->zeta, s.report->mu, s.report->v,
                  s.report->commit ? " commit" : "");
    }
    if (s.used_fallback) std::printf(" [fallback: %s]", s.fallback_reason.c_str());
    if (!s.failure.empty()) std::printf(" [failed: %s]", s.failure.c_str());
    std::printf("\n");
  }
  std::printf("accepted %s, in-loop calls %d, detection calls %d, charged %.2f, fusion cost %.2f\n",
              r.accepted ? "yes" : "no", r.trace.in_loop_calls(), r.trace.detection_calls(), r.trace.charged_cost,
              r.trace.fusion_cost);
  std::printf("fusion %s, IoU %.4f\n", to_string(r.fusion.source).c_str(), r.iou);
  return 0;
}

struct BenchArgs {
  std::string bench_dir;
  std::string cs_file;
  std::string tt_file;
  std::string tt_out;
  std::string out_file;
  std::string trace_dir;
  std::string format = "table";
  bool timing = false;
};

int cmd_bench(const BenchArgs& a, const RunConfig& cfg, BridgeFlags& bridge) {
  const Benchmark bench = load_benchmark(a.bench_dir);
  const Banks banks = initial_banks(cfg, &bench, a.cs_file, a.tt_file);
  const Registry registry = bridge.registry();
  EpisodeEnv env;
  env.registry = &registry;

  const auto start = std::chrono::steady_clock::now();
  json report;
  if (!a.trace_dir.empty() || !a.tt_out.empty()) {
    // Single ordering in the given order, with artifacts kept.
    Banks b = banks;
    env.banks = &b;
    std::vector<std::size_t> order(bench.eval.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    BatchOptions opt;
    if (!a.trace_dir.empty()) opt.trace_dir = fs::path(a.trace_dir);
    const BatchResult r = run_batch(bench.eval, order, env, cfg, opt);
    if (!a.tt_out.empty()) save_bank(b.tt, a.tt_out);
    OrderingsResult o;
    o.runs.push_back(r);
    o.stats = orderings_stats(o.runs);
    RunConfig one = cfg;
    one.orderings = 1;
    report = orderings_report_json(o, one);
    if (a.format == "table") print_batch(r);
  } else {
    const OrderingsResult o = run_orderings(bench.eval, banks, env, cfg);
    report = orderings_report_json(o, cfg);
    if (a.format == "table") {
      for (std::size_t k = 0; k < o.runs.size(); ++k) {
        if (o.runs.size() > 1) std::printf("ordering %zu\n", k);
        print_batch(o.runs[k]);
      }
      if (o.runs.size() > 1) {
        std::printf("across %zu orderings:\n", o.runs.size());
        for (const auto& [key, v] : o.stats.items()) {
          std::printf("  %-20s %.4f ± %.4f\n", key.c_str(), v.at("mean").get<double>(), v.at("sd").get<double>());
        }
      }
    }
  }
  bridge.report_incidents();
  report["benchmark"] = {{"seed", bench.spec.seed}, {"eval", bench.eval.size()}, {"library", bench.library.size()}};
  if (a.timing) {
    report["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  if (a.format == "json") std::printf("%s\n", dump_line(report).c_str());
  if (!a.out_file.empty()) write_text(a.out_file, report.dump(1) + "\n");
  return 0;
}

struct ReportArgs {
  std::string bench_dir;
  bool pareto = false;
  std::vector<std::string> sweeps;
  std::string out_file;
};

json sweep_values(const std::string& name) {
  if (name == "delta") return json{0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  if (name == "omega_floor") return json{0.3, 0.4, 0.5, 0.6, 0.7};
  if (name == "top_n") return json{1, 2, 3, 5, 8, 10};
  if (name == "capacity_tt") return json{10, 20, 40, 80, 160};
  if (name == "weights") {
    return json{json{0.5, 0.3, 0.2}, json{0.6, 0.2, 0.2}, json{0.4, 0.4, 0.2}, json{0.4, 0.3, 0.3}, json{0.34, 0.33, 0.33}};
  }
  throw std::invalid_argument("unknown sweep: " + name + " (delta, omega_floor, top_n, capacity_tt, weights)");
}

int cmd_report(const ReportArgs& a, const RunConfig& base, BridgeFlags& bridge) {
  const Benchmark bench = load_benchmark(a.bench_dir);
  const Registry registry = bridge.registry();
  EpisodeEnv env;
  env.registry = &registry;
  json out{{"format", "aharness-report/1"}, {"seed", base.seed}, {"config", config_to_json(base)}};

  const auto run = [&](const RunConfig& cfg) {
    const Banks banks = initial_banks(cfg, &bench, "", "");
    return run_orderings(bench.eval, banks, env, cfg);
  };
  const auto mean_of = [](const OrderingsResult& o, const char* key) { return o.stats.at(key).at("mean").get<double>(); };

  if (a.pareto || a.sweeps.empty()) {
    std::printf("Pareto summary (accuracy vs mean in-loop calls)\n");
    std::printf("%-12s %7s %7s %7s %8s %7s %s\n", "mode", "gIoU", "cIoU", "P@50", "P@50:95", "calls", "");
    struct Row {
      std::string mode;
      double giou, ciou, p50, p5095, calls;
    };
    std::vector<Row> rows;
    for (RunMode m : {RunMode::adaptive, RunMode::det_seg, RunMode::full_chain}) {
      RunConfig cfg = base;
      cfg.mode = m;
      const OrderingsResult o = run(cfg);
      rows.push_back({to_string(m), mean_of(o, "giou"), mean_of(o, "ciou"), mean_of(o, "p50"), mean_of(o, "p50_95"),
                      mean_of(o, "mean_skill_calls")});
    }
    json pareto = json::array();
    for (const Row& r : rows) {
      bool dominated = false;
      for (const Row& q : rows) {
        if (&q != &r && q.giou >= r.giou && q.calls <= r.calls && (q.giou > r.giou || q.calls < r.calls)) dominated = true;
      }
      std::printf("%-12s %7.4f %7.4f %7.4f %8.4f %7.3f %s\n", r.mode.c_str(), r.giou, r.ciou, r.p50, r.p5095, r.calls,
                  dominated ? "dominated" : "frontier");
      pareto.push_back(json{{"mode", r.mode}, {"giou", r.giou}, {"ciou", r.ciou}, {"p50", r.p50}, {"p50_95", r.p5095},
                            {"mean_skill_calls", r.calls}, {"frontier", !dominated}});
    }
    out["pareto"] = std::move(pareto);
  }

  for (const std::string& name : a.sweeps) {
    std::printf("\nsweep %s\n%-20s %7s %7s %9s\n", name.c_str(), "value", "gIoU", "calls", "fallback");
    json rows = json::array();
    for (const json& v : sweep_values(name)) {
      RunConfig cfg = base;
      cfg.mode = RunMode::adaptive;
      if (name == "weights") {
        cfg.verifier.alpha = v[0].get<double>();
        cfg.verifier.beta = v[1].get<double>();
        cfg.verifier.gamma = v[2].get<double>();
      } else {
        apply_config_json(cfg, json{{name, v}});
      }
      cfg.validate();
      const OrderingsResult o = run(cfg);
      std::printf("%-20s %7.4f %7.3f %9.4f\n", v.dump().c_str(), mean_of(o, "giou"), mean_of(o, "mean_skill_calls"),
                  mean_of(o, "fallback_rate"));
      rows.push_back(json{{"value", v}, {"summary", o.stats}});
    }
    out["sweeps"][name] = std::move(rows);
  }
  bridge.report_incidents();
  std::printf("%s\n", dump_line(out).c_str());
  if (!a.out_file.empty()) write_text(a.out_file, out.dump(1) + "\n");
  return 0;
}

int cmd_replay(const std::vector<std::string>& paths, BridgeFlags& bridge) {
  std::vector<fs::path> traces;
  for (const std::string& p : paths) {
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().string().ends_with(".trace.jsonl")) traces.push_back(e.path());
      }
    } else {
      traces.emplace_back(p);
    }
  }
  std::sort(traces.begin(), traces.end());
  if (traces.empty()) throw std::invalid_argument("no trace files given");
  const Registry registry = bridge.registry();
  int diverged = 0;
  for (const fs::path& t : traces) {
    const EpisodeTrace trace = load_trace(t);
    const ReplayOutcome o = replay_trace(trace, registry);
    if (o.identical) {
      std::printf("%s: identical\n", t.c_str());
    } else {
      ++diverged;
      std::printf("%s: DIVERGED (mask %s) %s\n", t.c_str(), o.mask_identical ? "identical" : "differs", o.divergence.c_str());
    }
  }
  bridge.report_incidents();
  std::printf("%zu traces, %d diverged\n", traces.size(), diverged);
  return diverged == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive skill-orchestration harness"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("scene-gen", "Generate a synthetic benchmark");
  std::string gen_out;
  int easy = 10;
  int medium = 10;
  int hard = 10;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--easy", easy, "Easy-band scenes");
  gen->add_option("--medium", medium, "Medium-band scenes");
  gen->add_option("--hard", hard, "Hard-band scenes");
  gen->add_option("--seed", gen_seed, "Benchmark seed");

  auto* seed = app.add_subcommand("seed-cs", "Build the common-sense bank from a benchmark's library split");
  ConfigFlags seed_flags;
  std::string seed_bench;
  std::string seed_out;
  seed->add_option("--bench", seed_bench, "Benchmark directory")->required();
  seed->add_option("--out", seed_out, "Bank file")->required();
  seed_flags.attach(seed);

  auto* run = app.add_subcommand("run", "Run one episode with a full trace");
  ConfigFlags run_flags;
  BridgeFlags run_bridge;
  RunArgs run_args;
  run->add_option("--bench", run_args.bench_dir, "Benchmark directory");
  run->add_option("--scene", run_args.scene_id, "Scene id in the evaluation split");
  run->add_option("--scene-file", run_args.scene_file, "Scene file");
  run->add_option("--cs", run_args.cs_file, "Common-sense bank file");
  run->add_option("--tt", run_args.tt_file, "Episodic bank file");
  run->add_option("--tt-out", run_args.tt_out, "Write the episodic bank after the episode");
  run->add_option("--trace", run_args.trace_file, "Trace output file");
  run->add_option("--mask", run_args.mask_file, "Fused mask output file");
  run_flags.attach(run);
  run_bridge.attach(run);

  auto* bench = app.add_subcommand("bench", "Run a batch and report metrics");
  ConfigFlags bench_flags;
  BridgeFlags bench_bridge;
  BenchArgs bench_args;
  bench->add_option("--bench", bench_args.bench_dir, "Benchmark directory")->required();
  bench->add_option("--cs", bench_args.cs_file, "Common-sense bank file (default: seeded from the library split)");
  bench->add_option("--tt", bench_args.tt_file, "Initial episodic bank file");
  bench->add_option("--tt-out", bench_args.tt_out, "Write the episodic bank after the batch");
  bench->add_option("--out", bench_args.out_file, "Report file (JSON)");
  bench->add_option("--trace-dir", bench_args.trace_dir, "Write per-episode traces and a manifest here");
  bench->add_option("--format", bench_args.format, "table or json")->check(CLI::IsMember({"table", "json"}));
  bench->add_flag("--timing", bench_args.timing, "Include wall-clock time in the report");
  bench_flags.attach(bench);
  bench_bridge.attach(bench);

  auto* report = app.add_subcommand("report", "Pareto summary and parameter sweeps");
  ConfigFlags report_flags;
  BridgeFlags report_bridge;
  ReportArgs report_args;
  report->add_option("--bench", report_args.bench_dir, "Benchmark directory")->required();
  report->add_flag("--pareto", report_args.pareto, "Compare adaptive and fixed chains");
  report->add_option("--sweep", report_args.sweeps, "delta, omega_floor, top_n, capacity_tt or weights");
  report->add_option("--out", report_args.out_file, "Report file (JSON)");
  report_flags.attach(report);
  report_bridge.attach(report);

  auto* replay = app.add_subcommand("replay", "Re-execute traces and check determinism");
  BridgeFlags replay_bridge;
  std::vector<std::string> replay_paths;
  replay->add_option("traces", replay_paths, "Trace files or trace directories")->required();
  replay_bridge.attach(replay);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_scene_gen(gen_out, easy, medium, hard, gen_seed);
    if (*seed) return cmd_seed_cs(seed_bench, seed_out, seed_flags.resolve());
    if (*run) return cmd_run(run_args, run_flags.resolve(), run_bridge);
    if (*bench) return cmd_bench(bench_args, bench_flags.resolve(), bench_bridge);
    if (*report) return cmd_report(report_args, report_flags.resolve(), report_bridge);
    if (*replay) return cmd_replay(replay_paths, replay_bridge);
  } catch (const std::exception& e) {
    std::cerr << "aharness: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
