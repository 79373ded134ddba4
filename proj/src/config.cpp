#include "aharness/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <vector>

extern char** environ;

namespace aharness {

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::adaptive: return "adaptive";
    case RunMode::det_seg: return "det_seg";
    case RunMode::full_chain: return "full_chain";
  }
  return "adaptive";
}

RunMode run_mode_from_string(const std::string& text) {
  if (text == "adaptive") return RunMode::adaptive;
  if (text == "det_seg") return RunMode::det_seg;
  if (text == "full_chain") return RunMode::full_chain;
  throw std::invalid_argument("unknown mode: " + text);
}

void RunConfig::validate() {
  verifier.normalize();
  router.validate();
  for (double p : {noise.p_det, noise.p_seg, noise.p_web, noise.p_dream}) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("reliabilities must lie in [0, 1]");
  }
  if (noise.zoom_factor <= 0.0 || noise.zoom_factor > 1.0) throw std::invalid_argument("zoom_factor must lie in (0, 1]");
  if (budget < 0.0) throw std::invalid_argument("budget must be nonnegative");
  if (top_n == 0) throw std::invalid_argument("top_n must be at least 1");
  if (orderings < 1) throw std::invalid_argument("orderings must be at least 1");
  if (max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
  if (parallel < 1) throw std::invalid_argument("parallel must be at least 1");
}

namespace {

struct Field {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
Field field(T RunConfig::*member) {
  return {[member](const RunConfig& c) { return json(c.*member); },
          [member](RunConfig& c, const json& v) { c.*member = v.get<T>(); }};
}

template <typename S, typename T>
Field nested(S RunConfig::*outer, T S::*member) {
  return {[outer, member](const RunConfig& c) { return json((c.*outer).*member); },
          [outer, member](RunConfig& c, const json& v) { (c.*outer).*member = v.get<T>(); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["alpha"] = nested(&RunConfig::verifier, &VerifierConfig::alpha);
    t["beta"] = nested(&RunConfig::verifier, &VerifierConfig::beta);
    t["gamma"] = nested(&RunConfig::verifier, &VerifierConfig::gamma);
    t["delta"] = nested(&RunConfig::verifier, &VerifierConfig::delta);
    t["omega_floor"] = nested(&RunConfig::verifier, &VerifierConfig::omega_floor);
    t["tau_zeta"] = nested(&RunConfig::verifier, &VerifierConfig::tau_zeta);
    t["tau_mu"] = nested(&RunConfig::verifier, &VerifierConfig::tau_mu);
    t["sigmoid_slope"] = nested(&RunConfig::verifier, &VerifierConfig::sigmoid_slope);
    t["sigmoid_center"] = nested(&RunConfig::verifier, &VerifierConfig::sigmoid_center);
    t["w_seg"] = nested(&RunConfig::verifier, &VerifierConfig::w_seg);
    t["w_det"] = nested(&RunConfig::verifier, &VerifierConfig::w_det);
    t["w_dream"] = nested(&RunConfig::verifier, &VerifierConfig::w_dream);
    t["w_web"] = nested(&RunConfig::verifier, &VerifierConfig::w_web);
    t["corroboration_iou"] = nested(&RunConfig::verifier, &VerifierConfig::corroboration_iou);
    t["stability_floor"] = nested(&RunConfig::verifier, &VerifierConfig::stability_floor);
    t["support_confidence"] = nested(&RunConfig::verifier, &VerifierConfig::support_confidence);
    t["mu_deficit_squashed"] = nested(&RunConfig::verifier, &VerifierConfig::mu_deficit_squashed);
    t["refine_padding"] = nested(&RunConfig::verifier, &VerifierConfig::refine_padding);
    t["lambda_omega"] = nested(&RunConfig::router, &RouterConfig::lambda_omega);
    t["lambda_zeta"] = nested(&RunConfig::router, &RouterConfig::lambda_zeta);
    t["lambda_mu"] = nested(&RunConfig::router, &RouterConfig::lambda_mu);
    t["eta_off"] = nested(&RunConfig::router, &RouterConfig::eta_off);
    t["tie_gap"] = nested(&RunConfig::router, &RouterConfig::tie_gap);
    t["repeat_limit"] = nested(&RunConfig::router, &RouterConfig::repeat_limit);
    t["similarity_floor"] = nested(&RunConfig::router, &RouterConfig::similarity_floor);
    t["memory_region_padding"] = nested(&RunConfig::router, &RouterConfig::memory_region_padding);
    t["memory_region_min_fraction"] = nested(&RunConfig::router, &RouterConfig::memory_region_min_fraction);
    t["brain_timeout_ms"] = {[](const RunConfig& c) { return json(c.router.brain_timeout.count()); },
                             [](RunConfig& c, const json& v) { c.router.brain_timeout = std::chrono::milliseconds(v.get<long>()); }};
    t["p_det"] = nested(&RunConfig::noise, &NoiseModel::p_det);
    t["p_seg"] = nested(&RunConfig::noise, &NoiseModel::p_seg);
    t["p_web"] = nested(&RunConfig::noise, &NoiseModel::p_web);
    t["p_dream"] = nested(&RunConfig::noise, &NoiseModel::p_dream);
    t["zoom_factor"] = nested(&RunConfig::noise, &NoiseModel::zoom_factor);
    t["budget"] = field(&RunConfig::budget);
    t["top_n"] = field(&RunConfig::top_n);
    t["capacity_cs"] = field(&RunConfig::capacity_cs);
    t["capacity_tt"] = field(&RunConfig::capacity_tt);
    t["seed"] = field(&RunConfig::seed);
    t["orderings"] = field(&RunConfig::orderings);
    t["mode"] = {[](const RunConfig& c) { return json(to_string(c.mode)); },
                 [](RunConfig& c, const json& v) { c.mode = run_mode_from_string(v.get<std::string>()); }};
    t["budget_truncation"] = field(&RunConfig::budget_truncation);
    t["max_steps"] = field(&RunConfig::max_steps);
    t["use_cs"] = field(&RunConfig::use_cs);
    t["use_tt"] = field(&RunConfig::use_tt);
    t["router_only"] = field(&RunConfig::router_only);
    t["parallel"] = field(&RunConfig::parallel);
    return t;
  }();
  return table;
}

constexpr const char* kCostPrefix = "cost_weight.";

}  // namespace

json config_to_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& [key, f] : fields()) j[key] = f.get(cfg);
  for (const auto& [skill, w] : cfg.router.cost_weights) j[std::string(kCostPrefix) + skill] = w;
  return j;
}

void apply_config_json(RunConfig& cfg, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key.rfind(kCostPrefix, 0) == 0) {
      cfg.router.cost_weights[key.substr(std::string(kCostPrefix).size())] = value.get<double>();
      continue;
    }
    if (key == "cost_weights") {
      for (const auto& [skill, w] : value.items()) cfg.router.cost_weights[skill] = w.get<double>();
      continue;
    }
    const auto it = fields().find(key);
    if (it == fields().end()) throw std::invalid_argument("unknown config key: " + key);
    try {
      it->second.set(cfg, value);
    } catch (const json::exception& e) {
      throw std::invalid_argument("bad value for config key " + key + ": " + e.what());
    }
  }
}

void apply_env_overrides(RunConfig& cfg, const std::map<std::string, std::string>& env) {
  const std::string prefix = "AHARNESS_";
  for (const auto& [name, raw] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string key = name.substr(prefix.size());
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::string target;
    if (key.rfind("cost_weight_", 0) == 0) {
      target = std::string(kCostPrefix) + key.substr(12);
    } else if (fields().count(key)) {
      target = key;
    } else {
      continue;  // unrelated AHARNESS_ variables are ignored
    }
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    apply_config_json(cfg, json{{target, value}});
  }
}

std::map<std::string, std::string> current_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    const std::string kv(*e);
    const auto eq = kv.find('=');
    if (eq != std::string::npos) env[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return env;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

}  // namespace aharness
