#include "aharness/skills.hpp"

#include <algorithm>
#include <cmath>

#include "aharness/rng.hpp"

namespace aharness {

double NoiseModel::effective_difficulty(int scale) const {
  const double doublings = std::log2(static_cast<double>(std::max(1, scale)));
  return std::clamp(difficulty * std::pow(zoom_factor, doublings), 0.0, 1.0);
}

Dimension addressed_dimension(const SkillId& id, const std::vector<EvidenceType>& emits) {
  if (id == skill_ids::segment) return Dimension::omega;
  if (id == skill_ids::detect || id == skill_ids::zoom) return Dimension::zeta;
  if (id == skill_ids::web_search || id == skill_ids::dreamer) return Dimension::mu;
  const auto has = [&](EvidenceType t) { return std::find(emits.begin(), emits.end(), t) != emits.end(); };
  if (has(EvidenceType::mask)) return Dimension::omega;
  if (has(EvidenceType::box)) return Dimension::zeta;
  if (has(EvidenceType::keypoint) || has(EvidenceType::text_cue) || has(EvidenceType::imagined_interaction)) {
    return Dimension::mu;
  }
  return Dimension::none;
}

void Registry::register_skill(SkillDescriptor descriptor) {
  if (descriptor.id.empty()) throw std::invalid_argument("skill id must be non-empty");
  if (contains(descriptor.id)) throw std::invalid_argument("skill already registered: " + descriptor.id.name());
  if (!descriptor.invoker) throw std::invalid_argument("skill " + descriptor.id.name() + " has no invoker");
  entries_.push_back({next_index_++, std::move(descriptor)});
}

void Registry::deregister(const SkillId& id) {
  std::erase_if(entries_, [&](const Entry& e) { return e.descriptor.id == id; });
}

bool Registry::contains(const SkillId& id) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.descriptor.id == id; });
}

const Registry::Entry& Registry::entry(const SkillId& id) const {
  for (const Entry& e : entries_) {
    if (e.descriptor.id == id) return e;
  }
  throw RoutingError("unknown skill: " + id.name());
}

int Registry::index_of(const SkillId& id) const { return entry(id).index; }

Dimension Registry::dimension_of(const SkillId& id) const {
  return addressed_dimension(id, entry(id).descriptor.emits);
}

const SkillDescriptor& Registry::descriptor(const SkillId& id) const { return entry(id).descriptor; }

std::vector<SkillId> Registry::skills() const {
  std::vector<SkillId> out;
  for (const Entry& e : entries_) {
    if (!e.descriptor.available || e.descriptor.available()) out.push_back(e.descriptor.id);
  }
  return out;
}

SkillOutput Registry::invoke(const SkillRequest& request) const {
  const Entry& e = entry(request.action.skill);
  if (e.descriptor.available && !e.descriptor.available()) {
    throw RoutingError("skill withdrawn: " + e.descriptor.id.name());
  }
  if (request.scene == nullptr) throw ParameterError("skill request without a scene");
  validate_params(request.action, request.scene->grid);
  SkillOutput out = e.descriptor.invoker(request);
  out.producer = e.descriptor.id;
  return out;
}

double estimate_cost(const SkillAction& action, const std::map<std::string, double>* weights) {
  if (weights != nullptr) {
    if (auto it = weights->find(action.skill.name()); it != weights->end()) return it->second;
  }
  return 1.0;
}

void validate_params(const SkillAction& action, const Grid& frame) {
  const SkillParams& p = action.params;
  if (!is_allowed_scale(p.scale)) throw ParameterError("scale must be one of 1, 2, 4, 8");
  if (!p.roi.well_formed() || p.roi.empty() || !p.roi.within(frame)) {
    throw ParameterError("roi " + to_string(p.roi) + " is empty or outside the frame");
  }
  if (p.roi.width() * p.scale > 4096 || p.roi.height() * p.scale > 4096) throw ParameterError("crop too large");
  if (p.prompt_point && !p.roi.contains(p.prompt_point->x, p.prompt_point->y)) {
    throw ParameterError("prompt point outside roi");
  }
}

std::uint64_t skill_stream_seed(const NoiseModel& noise, const Scene& scene) { return combine_keys(noise.seed, scene.seed); }

namespace {

CounterRng stream_for(const SkillRequest& r, const SkillId& skill) {
  return CounterRng(skill_stream_seed(r.noise, *r.scene), skill.name(), static_cast<std::uint64_t>(r.step));
}

// Share of noise variance carried by the scene's hardness latent rather than
// drawn per call: an instance that defeats one call tends to defeat retries
// and the other skills too.
constexpr double kInstanceCorrelation = 0.8;

// Per-call draws mixed with the scene's hardness latent. Marginals are
// unchanged (uniforms stay U(0, 1)); only the dependence across calls is.
class CorrelatedNoise {
 public:
  CorrelatedNoise(const SkillRequest& r, const SkillId& skill)
      : call_(stream_for(r, skill)),
        hardness_(instance_hardness(*r.scene)) {}

  /// Uniform whose large values are the unfavourable outcome.
  double adverse_uniform() { return phi(mixed()); }
  /// Uniform whose small values are the unfavourable outcome.
  double favourable_uniform() { return phi(-mixed()); }
  CounterRng& call() { return call_; }

 private:
  double mixed() {
    return kInstanceCorrelation * hardness_ +
           std::sqrt(1.0 - kInstanceCorrelation * kInstanceCorrelation) * call_.normal();
  }
  static double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

  CounterRng call_;
  double hardness_;
};

OutputItem empty_item(std::string reason) { return {EvidenceType::empty_result, EmptyResult{std::move(reason)}, 0.0}; }

// Corners of `b` perturbed by N(0, sigma) per coordinate, kept inside `limit`
// and at least one pixel wide.
Box jitter_box(const Box& b, double eff_d, CounterRng& rng, const Box& limit) {
  const double sx = eff_d * 0.15 * b.width();
  const double sy = eff_d * 0.15 * b.height();
  const auto shift = [&](int v, double sigma) { return v + static_cast<int>(std::lround(sigma * rng.normal())); };
  int x0 = shift(b.x_min, sx);
  int y0 = shift(b.y_min, sy);
  int x1 = shift(b.x_max, sx);
  int y1 = shift(b.y_max, sy);
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  x0 = std::clamp(x0, limit.x_min, limit.x_max - 1);
  y0 = std::clamp(y0, limit.y_min, limit.y_max - 1);
  x1 = std::clamp(std::max(x1, x0 + 1), x0 + 1, limit.x_max);
  y1 = std::clamp(std::max(y1, y0 + 1), y0 + 1, limit.y_max);
  return {x0, y0, x1, y1};
}

SkillOutput detect_in_view(const SkillRequest& r, const SkillId& as) {
  const Scene& scene = *r.scene;
  const Box& roi = r.action.params.roi;
  const double eff_d = r.noise.effective_difficulty(r.action.params.scale);
  CorrelatedNoise noise(r, as);
  CounterRng& rng = noise.call();
  // Draw order is fixed: dropout, then corners, then confidence, then clutter.
  const double dropout = noise.favourable_uniform();
  SkillOutput out{as, {}};

  const Mask visible = clip_to_box(scene.observed_target, roi);
  if (visible.area() * 10 < scene.observed_target.area() * 3) {
    out.items.push_back(empty_item("target not visible in roi"));
    return out;
  }
  if (dropout < (1.0 - r.noise.p_det) * eff_d) {
    out.items.push_back(empty_item("detector dropout"));
    return out;
  }
  const Box target = jitter_box(*visible.bounding_box(), eff_d, rng, roi);
  const double conf = std::clamp(1.0 - eff_d * rng.uniform(0.1, 0.4), 0.0, 1.0);
  out.items.push_back({EvidenceType::box, target, conf});

  const double clutter = rng.uniform();
  if (clutter < 0.5 * eff_d * (1.0 - r.noise.p_det) + 0.25 * eff_d) {
    for (const Mask& d : scene.distractors) {
      const Mask seen = clip_to_box(d, roi);
      if (seen.empty()) continue;
      const Box fp = jitter_box(*seen.bounding_box(), eff_d, rng, roi);
      // Confusable at high difficulty: can outrank the target.
      out.items.push_back({EvidenceType::box, fp, std::clamp(rng.uniform(0.35, 0.65) + 0.35 * eff_d, 0.0, 1.0)});
      break;
    }
  }
  return out;
}

}  // namespace

SkillOutput simulate_detect(const SkillRequest& request) { return detect_in_view(request, skill_ids::detect); }

SkillOutput simulate_zoom(const SkillRequest& request) { return detect_in_view(request, skill_ids::zoom); }

SkillOutput simulate_segment(const SkillRequest& r) {
  const Scene& scene = *r.scene;
  const SkillParams& p = r.action.params;
  const RoiTransform t{scene.grid, p.roi, p.scale};
  const double eff_d = r.noise.effective_difficulty(p.scale);
  CorrelatedNoise noise(r, skill_ids::segment);
  const double misfire = noise.favourable_uniform();
  const double magnitude = 0.5 + noise.adverse_uniform();
  const bool grow = noise.call().bernoulli(0.5);
  const double conf_draw = noise.call().uniform();

  const auto [cx, cy] = p.roi.center();
  const KeyPoint prompt = p.prompt_point.value_or(KeyPoint{cx, cy, 1.0});
  const int px = static_cast<int>(std::floor(prompt.x));
  const int py = static_cast<int>(std::floor(prompt.y));
  const bool on_target = scene.observed_target.contains(px, py);
  SkillOutput out{skill_ids::segment, {}};

  if (on_target && misfire >= (1.0 - r.noise.p_seg) * eff_d) {
    const Mask base = lift_to_local(clip_to_box(scene.observed_target, p.roi), t);
    const Box ext = base.bounding_box().value_or(Box{});
    const int radius =
        static_cast<int>(std::lround(eff_d * 0.15 * std::min(ext.width(), ext.height()) * magnitude));
    Mask m = base;
    if (radius > 0) {
      m = grow ? dilate(base, radius) : erode(base, radius);
      if (m.empty()) m = base;
    }
    out.items.push_back({EvidenceType::mask, m, std::clamp(1.0 - eff_d * (0.1 + 0.3 * conf_draw), 0.0, 1.0)});
    return out;
  }

  // Wrong region: the distractor under the prompt, any distractor in view on
  // a misfire, else a blob around the prompt.
  const Mask* pick = nullptr;
  for (const Mask& d : scene.distractors) {
    if (d.contains(px, py)) pick = &d;
  }
  if (pick == nullptr && on_target) {
    for (const Mask& d : scene.distractors) {
      if (pick == nullptr && !clip_to_box(d, p.roi).empty()) pick = &d;
    }
  }
  Mask global;
  if (pick != nullptr) {
    global = clip_to_box(*pick, p.roi);
  } else {
    const int rad = std::max(2, std::min(p.roi.width(), p.roi.height()) / 8);
    const Box blob = clamp_to({px - rad, py - rad, px + rad + 1, py + rad + 1}, scene.grid);
    global = clip_to_box(ellipse_fill(blob, scene.grid), p.roi);
  }
  if (global.empty()) {
    out.items.push_back(empty_item("segmenter found no region"));
    return out;
  }
  out.items.push_back({EvidenceType::mask, lift_to_local(global, t), std::clamp(0.4 + 0.4 * conf_draw, 0.0, 1.0)});
  return out;
}

SkillOutput simulate_web_search(const SkillRequest& r) {
  const Scene& scene = *r.scene;
  CounterRng rng = stream_for(r, skill_ids::web_search);
  const bool correct = rng.bernoulli(r.noise.p_web);
  const double conf = rng.uniform(0.6, 0.9);
  const std::string& query = r.action.params.query;
  // The query agrees with the scene when it names the scene's category.
  const bool truth = query.empty() || query.find(scene.category) != std::string::npos;
  TextCue cue;
  cue.summary = "guidance for '" + (query.empty() ? r.instruction : query) + "': act on the " +
                (scene.descriptor.size() > 1 ? scene.descriptor[1].substr(5) : scene.category);
  cue.semantic_agreement = correct ? truth : !truth;
  return {skill_ids::web_search, {{EvidenceType::text_cue, cue, conf}}};
}

SkillOutput simulate_dreamer(const SkillRequest& r) {
  const Scene& scene = *r.scene;
  const SkillParams& p = r.action.params;
  const double eff_d = r.noise.effective_difficulty(p.scale);
  CounterRng rng = stream_for(r, skill_ids::dreamer);
  const bool reliable = rng.bernoulli(r.noise.p_dream);
  const double jx = rng.normal();
  const double jy = rng.normal();
  const double ux = rng.uniform();
  const double uy = rng.uniform();
  const double conf = rng.uniform(0.5, 0.9);

  KeyPoint kp{0.0, 0.0, conf};
  if (reliable) {
    const auto [gx, gy] = *scene.target_gt.centroid();
    const auto anchor = nearest_point_inside(scene.target_gt, gx, gy).value_or(KeyPoint{gx, gy, 1.0});
    const Box ext = scene.target_box();
    kp.x = anchor.x + eff_d * 0.15 * ext.width() * jx;
    kp.y = anchor.y + eff_d * 0.15 * ext.height() * jy;
  } else {
    kp.x = p.roi.x_min + ux * p.roi.width();
    kp.y = p.roi.y_min + uy * p.roi.height();
  }
  kp.x = std::clamp(kp.x, static_cast<double>(p.roi.x_min), std::nextafter(static_cast<double>(p.roi.x_max), 0.0));
  kp.y = std::clamp(kp.y, static_cast<double>(p.roi.y_min), std::nextafter(static_cast<double>(p.roi.y_max), 0.0));
  return {skill_ids::dreamer, {{EvidenceType::imagined_interaction, kp, conf}}};
}

void register_simulated_suite(Registry& registry) {
  const auto add = [&](const SkillId& id, EvidenceType emits, SkillInvoker invoker) {
    SkillDescriptor d;
    d.id = id;
    d.emits = {emits};
    d.invoker = std::move(invoker);
    registry.register_skill(std::move(d));
  };
  add(skill_ids::detect, EvidenceType::box, simulate_detect);
  add(skill_ids::segment, EvidenceType::mask, simulate_segment);
  add(skill_ids::zoom, EvidenceType::box, simulate_zoom);
  add(skill_ids::web_search, EvidenceType::text_cue, simulate_web_search);
  add(skill_ids::dreamer, EvidenceType::imagined_interaction, simulate_dreamer);
}

Registry simulated_registry() {
  Registry r;
  register_simulated_suite(r);
  return r;
}

}  // namespace aharness
