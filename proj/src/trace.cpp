#include "aharness/trace.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace aharness {

namespace {

json step_to_json(const StepRecord& s) {
  json j{{"step", s.step},
         {"action", s.action},
         {"cost", s.cost},
         {"evidence_ids", s.evidence_ids},
         {"rejected", s.rejected},
         {"failure", s.failure},
         {"routed", s.routed},
         {"used_fallback", s.used_fallback},
         {"fallback_reason", s.fallback_reason},
         {"incident", s.incident}};
  j["report"] = s.report ? json(*s.report) : json(nullptr);
  return j;
}

StepRecord step_from_json(const json& j) {
  StepRecord s;
  s.step = j.at("step").get<int>();
  s.action = j.at("action").get<SkillAction>();
  s.cost = j.at("cost").get<double>();
  s.evidence_ids = j.at("evidence_ids").get<std::vector<std::uint64_t>>();
  s.rejected = j.at("rejected").get<std::vector<std::string>>();
  s.failure = j.at("failure").get<std::string>();
  s.routed = j.at("routed").get<bool>();
  s.used_fallback = j.at("used_fallback").get<bool>();
  s.fallback_reason = j.at("fallback_reason").get<std::string>();
  s.incident = j.at("incident").get<std::string>();
  if (!j.at("report").is_null()) s.report = j.at("report").get<DiagnosticReport>();
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::string serialize_trace(const EpisodeTrace& trace) {
  std::string out;
  const auto emit = [&](const json& j) {
    out += dump_line(j);
    out += '\n';
  };
  json header{{"format", kTraceFormat},
              {"scene", trace.scene},
              {"instruction", trace.instruction},
              {"seed", trace.seed},
              {"mode", to_string(trace.config.mode)},
              {"config", config_to_json(trace.config)},
              {"retrieved", trace.retrieved}};
  emit(json{{"header", std::move(header)}});

  std::size_t next = 0;
  for (const StepRecord& s : trace.steps) {
    while (next < trace.evidence.size() && trace.evidence[next].step <= s.step) emit(json(trace.evidence[next++]));
    emit(json{{"step", step_to_json(s)}});
  }
  while (next < trace.evidence.size()) emit(json(trace.evidence[next++]));
  emit(json{{"fusion", trace.fusion}});
  emit(json{{"summary",
             {{"accepted", trace.accepted},
              {"in_loop_calls", trace.in_loop_calls()},
              {"detection_calls", trace.detection_calls()},
              {"charged_cost", trace.charged_cost},
              {"fusion_cost", trace.fusion_cost},
              {"iou", iou(trace.fusion.mask, trace.scene.target_gt)}}}});
  return out;
}

EpisodeTrace parse_trace(const std::string& text) {
  EpisodeTrace t;
  bool have_header = false;
  bool have_fusion = false;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      // Wrapped records have exactly one key; evidence records are flat.
      const bool wrapped = j.is_object() && j.size() == 1;
      if (!wrapped) {
        t.evidence.push_back(j.get<EvidenceRecord>());
      } else if (j.contains("header")) {
        const json& h = j.at("header");
        if (h.at("format").get<std::string>() != kTraceFormat) throw std::invalid_argument("unsupported trace format");
        t.scene = h.at("scene").get<Scene>();
        t.instruction = h.at("instruction").get<std::string>();
        t.seed = h.at("seed").get<std::uint64_t>();
        apply_config_json(t.config, h.at("config"));
        t.config.validate();
        t.retrieved = h.at("retrieved").get<std::vector<RetrievedMemory>>();
        have_header = true;
      } else if (j.contains("step")) {
        t.steps.push_back(step_from_json(j.at("step")));
      } else if (j.contains("fusion")) {
        t.fusion = j.at("fusion").get<FusionResult>();
        have_fusion = true;
      } else if (j.contains("summary")) {
        const json& s = j.at("summary");
        t.accepted = s.at("accepted").get<bool>();
        t.charged_cost = s.at("charged_cost").get<double>();
        t.fusion_cost = s.at("fusion_cost").get<double>();
      } else {
        throw std::invalid_argument("unknown trace record");
      }
    } catch (const std::exception& e) {
      throw std::invalid_argument("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header || !have_fusion) throw std::invalid_argument("trace is missing its header or fusion line");
  return t;
}

void save_trace(const EpisodeTrace& trace, const std::filesystem::path& path) { write_file(path, serialize_trace(trace)); }

EpisodeTrace load_trace(const std::filesystem::path& path) { return parse_trace(read_file(path)); }

void save_mask(const Mask& mask, const std::filesystem::path& path) { write_file(path, dump_line(json(mask)) + "\n"); }

Mask load_mask(const std::filesystem::path& path) { return json::parse(read_file(path)).get<Mask>(); }

ReplayOutcome replay_trace(const EpisodeTrace& trace, const Registry& registry) {
  EpisodeEnv env;
  env.registry = &registry;
  ReplayOutcome out;
  if (trace.config.mode == RunMode::adaptive) {
    out.rerun = run_episode(trace.scene, trace.instruction, env, trace.config, trace.seed, trace.retrieved);
  } else {
    out.rerun = run_fixed_chain(trace.scene, trace.instruction, env, trace.config, trace.config.mode, trace.seed);
  }
  out.mask_identical = out.rerun.fusion.mask == trace.fusion.mask;

  const std::string a = serialize_trace(trace);
  const std::string b = serialize_trace(out.rerun.trace);
  out.identical = a == b;
  if (!out.identical) {
    std::istringstream sa(a);
    std::istringstream sb(b);
    std::string la;
    std::string lb;
    int n = 0;
    while (true) {
      const bool ga = static_cast<bool>(std::getline(sa, la));
      const bool gb = static_cast<bool>(std::getline(sb, lb));
      ++n;
      if (!ga && !gb) break;
      if (!ga || !gb || la != lb) {
        out.divergence = "line " + std::to_string(n) + ": recorded " + (ga ? la.substr(0, 200) : "<end>") +
                         " | replayed " + (gb ? lb.substr(0, 200) : "<end>");
        break;
      }
    }
  }
  return out;
}

}  // namespace aharness
