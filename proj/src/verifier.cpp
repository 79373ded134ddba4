#include "aharness/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aharness {

SourceClass source_class(EvidenceType kind) {
  switch (kind) {
    case EvidenceType::mask: return SourceClass::seg;
    case EvidenceType::box: return SourceClass::det;
    case EvidenceType::keypoint:
    case EvidenceType::imagined_interaction: return SourceClass::dream;
    case EvidenceType::text_cue: return SourceClass::web;
    case EvidenceType::empty_result: return SourceClass::none;
  }
  return SourceClass::none;
}

std::string to_string(SourceClass c) {
  switch (c) {
    case SourceClass::seg: return "seg";
    case SourceClass::det: return "det";
    case SourceClass::dream: return "dream";
    case SourceClass::web: return "web";
    case SourceClass::none: return "none";
  }
  return "none";
}

void VerifierConfig::normalize() {
  const auto rescale = [](std::initializer_list<double*> group, const char* what) {
    double total = 0.0;
    for (double* v : group) {
      if (*v < 0.0) throw std::invalid_argument(std::string(what) + " must be nonnegative");
      total += *v;
    }
    if (total <= 0.0) throw std::invalid_argument(std::string(what) + " must not all be zero");
    if (std::abs(total - 1.0) <= 1e-12) return;  // keeps normalization idempotent bit for bit
    for (double* v : group) *v /= total;
  };
  rescale({&alpha, &beta, &gamma}, "alpha, beta, gamma");
  rescale({&w_seg, &w_det, &w_dream, &w_web}, "base weights");
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in (0, 1]");
  if (omega_floor < 0.0 || omega_floor > 1.0) throw std::invalid_argument("omega_floor must lie in [0, 1]");
  if (tau_zeta < 0.0 || tau_zeta > 1.0 || tau_mu < 0.0 || tau_mu > 1.0) {
    throw std::invalid_argument("retry thresholds must lie in [0, 1]");
  }
  if (corroboration_iou < 0.0 || corroboration_iou > 1.0) throw std::invalid_argument("corroboration_iou outside [0, 1]");
  if (stability_floor < 0.0 || stability_floor > 1.0) throw std::invalid_argument("stability_floor outside [0, 1]");
}

double VerifierConfig::base_weight(SourceClass c) const {
  switch (c) {
    case SourceClass::seg: return w_seg;
    case SourceClass::det: return w_det;
    case SourceClass::dream: return w_dream;
    case SourceClass::web: return w_web;
    case SourceClass::none: return 0.0;
  }
  return 0.0;
}

void to_json(json& j, const DiagnosticReport& r) {
  j = json{{"step", r.step},
           {"omega", r.omega},
           {"zeta", r.zeta},
           {"mu", r.mu},
           {"mu_squashed", r.mu_squashed},
           {"v", r.v},
           {"commit", r.commit},
           {"deficiency", to_string(r.deficiency)},
           {"has_hypothesis", r.has_hypothesis}};
  j["proposal"] = r.proposal ? json(*r.proposal) : json(nullptr);
}

void from_json(const json& j, DiagnosticReport& r) {
  r.step = j.at("step").get<int>();
  r.omega = j.at("omega").get<double>();
  r.zeta = j.at("zeta").get<double>();
  r.mu = j.at("mu").get<double>();
  r.mu_squashed = j.at("mu_squashed").get<double>();
  r.v = j.at("v").get<double>();
  r.commit = j.at("commit").get<bool>();
  r.deficiency = dimension_from_string(j.at("deficiency").get<std::string>());
  r.has_hypothesis = j.value("has_hypothesis", false);
  r.proposal.reset();
  if (j.contains("proposal") && !j.at("proposal").is_null()) r.proposal = j.at("proposal").get<SkillAction>();
}

namespace {

bool is_point(EvidenceType t) { return t == EvidenceType::keypoint || t == EvidenceType::imagined_interaction; }
bool is_region(EvidenceType t) { return t == EvidenceType::box || t == EvidenceType::mask; }

// Points closer than this (as a fraction of the diagonal) agree.
constexpr double kPointAgreement = 0.05;

struct Spatial {
  const EvidenceRecord* record;
  Mask region;  // empty for points
  KeyPoint point;
};

std::vector<Spatial> spatial_records(const EvidenceStore& store) {
  std::vector<Spatial> out;
  for (const EvidenceRecord& r : store.records()) {
    if (is_region(r.kind)) {
      out.push_back({&r, store.global_mask(r), {}});
    } else if (is_point(r.kind)) {
      out.push_back({&r, Mask(store.grid()), std::get<KeyPoint>(r.payload)});
    }
  }
  return out;
}

bool contains_point(const Mask& m, const KeyPoint& p) {
  return m.contains(static_cast<int>(std::floor(p.x)), static_cast<int>(std::floor(p.y)));
}

// Agreement between two spatial records under the corroboration threshold.
bool agree(const Spatial& a, const Spatial& b, const Grid& grid, double thr) {
  const bool pa = is_point(a.record->kind);
  const bool pb = is_point(b.record->kind);
  if (!pa && !pb) return iou(a.region, b.region) >= thr;
  if (pa && pb) return point_distance_norm(a.point, b.point, grid) <= kPointAgreement;
  return pa ? contains_point(b.region, a.point) : contains_point(a.region, b.point);
}

std::vector<KeyPoint> latest_points(const EvidenceStore& store, const Box& roi) {
  std::map<SkillId, int> latest;
  for (const EvidenceRecord& r : store.records()) {
    if (is_point(r.kind) && overlaps(r.roi, roi)) latest[r.producer] = std::max(latest[r.producer], r.step);
  }
  std::vector<KeyPoint> out;
  for (const EvidenceRecord& r : store.records()) {
    if (is_point(r.kind) && overlaps(r.roi, roi) && latest[r.producer] == r.step) {
      out.push_back(std::get<KeyPoint>(r.payload));
    }
  }
  return out;
}

double pair_agreement(const EvidenceStore& store, std::uint64_t a, std::uint64_t b) {
  const EvidenceRecord* ra = store.find(a);
  const EvidenceRecord* rb = store.find(b);
  if (is_point(ra->kind)) {
    return 1.0 - point_distance_norm(std::get<KeyPoint>(ra->payload), std::get<KeyPoint>(rb->payload), store.grid());
  }
  return iou(store.global_mask(*ra), store.global_mask(*rb));
}

}  // namespace

double cross_skill_consistency(const EvidenceStore& store, const Box& roi) {
  const Localizers loc = latest_boxes_and_masks(store, roi);
  if (loc.masks.empty()) return 0.0;
  double best = 0.0;
  if (!loc.boxes.empty()) {
    for (const BoxEvidence& b : loc.boxes) {
      const Mask filled = chi_fill(b.box, store.grid());
      for (const MaskEvidence& m : loc.masks) best = std::max(best, iou(filled, m.mask));
    }
    return best;
  }
  for (const KeyPoint& p : latest_points(store, roi)) {
    for (const MaskEvidence& m : loc.masks) {
      const auto c = m.mask.centroid();
      if (!c) continue;
      best = std::max(best, 1.0 - point_distance_norm(p, KeyPoint{c->first, c->second, 1.0}, store.grid()));
    }
  }
  return best;
}

std::map<std::uint64_t, double> record_stability(const EvidenceStore& store) {
  std::map<std::uint64_t, std::pair<double, int>> acc;
  for (const auto& [a, b] : stability_pairs(store)) {
    const double agreement = pair_agreement(store, a, b);
    for (std::uint64_t id : {a, b}) {
      acc[id].first += agreement;
      acc[id].second += 1;
    }
  }
  std::map<std::uint64_t, double> out;
  for (const auto& [id, sum] : acc) out[id] = sum.first / sum.second;
  return out;
}

double cross_scale_stability(const EvidenceStore& store) {
  const auto pairs = stability_pairs(store);
  if (pairs.empty()) return 1.0;
  double drift = 0.0;
  for (const auto& [a, b] : pairs) drift += 1.0 - pair_agreement(store, a, b);
  return std::clamp(1.0 - drift / static_cast<double>(pairs.size()), 0.0, 1.0);
}

std::map<std::uint64_t, double> effective_weights(const EvidenceStore& store,
                                                   const std::map<std::uint64_t, double>& stability,
                                                   const VerifierConfig& cfg) {
  const std::vector<Spatial> spatial = spatial_records(store);
  std::map<std::uint64_t, double> raw;
  for (const EvidenceRecord& r : store.records()) {
    if (r.is_sentinel()) continue;
    double corr = 0.0;
    if (r.kind == EvidenceType::text_cue) {
      corr = std::get<TextCue>(r.payload).semantic_agreement ? 1.0 : 0.0;
    } else {
      const Spatial* self = nullptr;
      for (const Spatial& s : spatial) {
        if (s.record->id == r.id) self = &s;
      }
      for (const Spatial& other : spatial) {
        if (other.record->id != r.id && agree(*self, other, store.grid(), cfg.corroboration_iou)) {
          corr = 1.0;
          break;
        }
      }
    }
    const auto it = stability.find(r.id);
    const double stab = (it == stability.end() || it->second >= cfg.stability_floor) ? 1.0 : 0.0;
    raw[r.id] = cfg.base_weight(source_class(r.kind)) * r.confidence * corr * stab;
  }
  double total = 0.0;
  for (const auto& [id, w] : raw) total += w;
  if (total > 0.0) {
    for (auto& [id, w] : raw) w /= total;
  }
  return raw;
}

std::map<std::uint64_t, bool> support_indicators(const EvidenceStore& store, const Hypothesis& h,
                                                 const VerifierConfig& cfg) {
  const std::vector<Spatial> spatial = spatial_records(store);
  bool backed = false;
  for (const Spatial& s : spatial) {
    if (!is_region(s.record->kind) || s.record->id == h.record_id) continue;
    if (s.record->confidence >= cfg.support_confidence && iou(s.region, h.mask) >= cfg.corroboration_iou) {
      backed = true;
      break;
    }
  }
  std::map<std::uint64_t, bool> kappa;
  for (const EvidenceRecord& r : store.records()) {
    if (r.is_sentinel()) continue;
    if (r.kind == EvidenceType::text_cue) kappa[r.id] = std::get<TextCue>(r.payload).semantic_agreement;
  }
  for (const Spatial& s : spatial) {
    const EvidenceRecord& r = *s.record;
    const bool touches = is_point(r.kind) ? contains_point(h.mask, s.point) : intersection_area(s.region, h.mask) > 0;
    bool conflicted = false;
    for (const Spatial& later : spatial) {
      const EvidenceRecord& q = *later.record;
      if (q.step <= r.step || q.kind != r.kind || !(q.roi == r.roi)) continue;
      if (!agree(s, later, store.grid(), cfg.corroboration_iou)) {
        conflicted = true;
        break;
      }
    }
    kappa[r.id] = touches && backed && !conflicted;
  }
  return kappa;
}

double evidence_sufficiency(const EvidenceStore& store, const std::optional<Hypothesis>& hypothesis,
                            const std::map<std::uint64_t, double>& weights, const VerifierConfig& cfg) {
  if (!hypothesis) return 0.0;
  const auto kappa = support_indicators(store, *hypothesis, cfg);
  double mu = 0.0;
  for (const auto& [id, w] : weights) {
    const auto it = kappa.find(id);
    if (it != kappa.end() && it->second) mu += w;
  }
  return std::clamp(mu, 0.0, 1.0);
}

double squash(double mu, const VerifierConfig& cfg) {
  return 1.0 / (1.0 + std::exp(-cfg.sigmoid_slope * (mu - cfg.sigmoid_center)));
}

double commit_score(double omega, double zeta, double mu, const VerifierConfig& cfg) {
  return cfg.alpha * omega + cfg.beta * zeta + cfg.gamma * squash(mu, cfg);
}

bool commit_decision(double v, double omega, const VerifierConfig& cfg) { return v >= cfg.delta && omega >= cfg.omega_floor; }

std::array<double, 3> deficits(double omega, double zeta, double mu_compared, const VerifierConfig& cfg) {
  return {std::max(0.0, cfg.omega_floor - omega), std::max(0.0, cfg.tau_zeta - zeta),
          std::max(0.0, cfg.tau_mu - mu_compared)};
}

Dimension dominant_deficiency(double omega, double zeta, double mu_compared, const VerifierConfig& cfg,
                              bool has_hypothesis) {
  const auto d = deficits(omega, zeta, mu_compared, cfg);
  Dimension best = Dimension::omega;
  double top = d[0];
  if (d[1] > top) {
    best = Dimension::zeta;
    top = d[1];
  }
  if (has_hypothesis && d[2] > top) best = Dimension::mu;
  return best;
}

namespace {

bool already_taken(const SkillAction& a, const ProposalContext& ctx) {
  return std::find(ctx.past_actions.begin(), ctx.past_actions.end(), a) != ctx.past_actions.end();
}

std::optional<BoxEvidence> best_box(const EvidenceStore& store) {
  const Localizers loc = latest_boxes_and_masks(store, Box::full(store.grid()));
  std::optional<BoxEvidence> best;
  for (const BoxEvidence& b : loc.boxes) {
    if (!best || b.confidence > best->confidence || (b.confidence == best->confidence && b.id > best->id)) best = b;
  }
  return best;
}

std::optional<KeyPoint> latest_dream_point(const EvidenceStore& store) {
  std::optional<KeyPoint> out;
  for (const EvidenceRecord& r : store.records()) {
    if (is_point(r.kind)) out = std::get<KeyPoint>(r.payload);
  }
  return out;
}

KeyPoint center_of(const Box& b) {
  const auto [x, y] = b.center();
  return {x, y, 1.0};
}

SkillAction segment_proposal(const EvidenceStore& store, const std::optional<Hypothesis>& h, const ProposalContext& ctx,
                             const VerifierConfig& cfg) {
  const Grid& frame = ctx.frame;
  const auto box = best_box(store);
  const std::optional<Box> hbox = h ? h->mask.bounding_box() : std::nullopt;
  Box core = Box::full(frame);
  if (box && hbox) {
    core = intersect(box->box, *hbox);
    if (core.empty()) core = box->box;
  } else if (box) {
    core = box->box;
  } else if (hbox) {
    core = *hbox;
  } else if (ctx.memory_region) {
    core = *ctx.memory_region;
  } else if (const auto p = latest_dream_point(store)) {
    const int rx = std::max(4, frame.width / 10);
    const int ry = std::max(4, frame.height / 10);
    const int x = static_cast<int>(std::floor(p->x));
    const int y = static_cast<int>(std::floor(p->y));
    core = clamp_to({x - rx, y - ry, x + rx + 1, y + ry + 1}, frame);
  }
  SkillAction a{skill_ids::segment, {}};
  a.params.query = ctx.query;
  for (double padding : {cfg.refine_padding, 2 * cfg.refine_padding, 3 * cfg.refine_padding, 5 * cfg.refine_padding}) {
    a.params.roi = pad(core, padding, frame);
    a.params.scale = zoom_scale_for(a.params.roi, frame);
    a.params.prompt_point = center_of(core);
    if (!already_taken(a, ctx)) break;
  }
  return a;
}

// No box to check a mask against: re-run detection over the hypothesis,
// remembered region or current view, widening on repeats.
SkillAction redetect_proposal(const std::optional<Hypothesis>& h, const ProposalContext& ctx, const VerifierConfig& cfg) {
  const Grid& frame = ctx.frame;
  std::optional<Box> region = h ? h->mask.bounding_box() : std::nullopt;
  if (!region && ctx.memory_region) region = ctx.memory_region;
  if (!region) region = ctx.view.roi.empty() ? Box::full(frame) : ctx.view.roi;
  SkillAction a{skill_ids::detect, {}};
  a.params.query = ctx.query;
  for (double padding : {0.0, cfg.refine_padding, 2 * cfg.refine_padding, 3 * cfg.refine_padding, 5 * cfg.refine_padding}) {
    a.params.roi = pad(*region, padding, frame);
    a.params.scale = zoom_scale_for(a.params.roi, frame);
    if (!already_taken(a, ctx)) return a;
  }
  while (already_taken(a, ctx) && a.params.scale < 8) a.params.scale *= 2;
  return a;
}

SkillAction zoom_proposal(const EvidenceStore& store, const std::optional<Hypothesis>& h, const ProposalContext& ctx) {
  const Grid& frame = ctx.frame;
  // Disputed region: the cross-scale pair that drifts most, else the current
  // best localizer.
  std::optional<Box> region;
  double worst = 2.0;
  for (const auto& [a, b] : stability_pairs(store)) {
    const double agreement = pair_agreement(store, a, b);
    if (agreement >= worst) continue;
    const auto ba = store.global_mask(*store.find(a)).bounding_box();
    const auto bb = store.global_mask(*store.find(b)).bounding_box();
    if (ba && bb) {
      worst = agreement;
      region = bounding_union(*ba, *bb);
    }
  }
  if (!region && h) region = h->mask.bounding_box();
  if (!region) {
    if (const auto b = best_box(store)) region = b->box;
  }
  if (!region && ctx.memory_region) region = ctx.memory_region;
  const Box view = ctx.view.roi.empty() ? Box::full(frame) : ctx.view.roi;
  if (!region) region = view;

  const Box need = pad(*region, 0.1, frame);
  const int w = std::min(frame.width, std::max(need.width(), std::max(1, view.width() / 2)));
  const int hgt = std::min(frame.height, std::max(need.height(), std::max(1, view.height() / 2)));
  const auto [cx, cy] = need.center();
  const int x0 = std::clamp(static_cast<int>(std::lround(cx - 0.5 * w)), 0, frame.width - w);
  const int y0 = std::clamp(static_cast<int>(std::lround(cy - 0.5 * hgt)), 0, frame.height - hgt);

  SkillAction a{skill_ids::zoom, {}};
  a.params.roi = {x0, y0, x0 + w, y0 + hgt};
  a.params.query = ctx.query;
  const int fit = zoom_scale_for(a.params.roi, frame);
  a.params.scale = std::max(2, std::min(std::min(8, ctx.view.scale * 2), std::max(fit, 2)));
  while (already_taken(a, ctx) && a.params.scale < 8) a.params.scale *= 2;
  return a;
}

SkillAction semantic_proposal(const std::optional<Hypothesis>& h, const ProposalContext& ctx) {
  const auto used = [&](const SkillId& id) {
    return std::any_of(ctx.past_actions.begin(), ctx.past_actions.end(), [&](const SkillAction& a) { return a.skill == id; });
  };
  SkillId pick = ctx.memory_hit ? skill_ids::dreamer : skill_ids::web_search;
  const SkillId other = ctx.memory_hit ? skill_ids::web_search : skill_ids::dreamer;
  if (used(pick) && !used(other)) pick = other;

  SkillAction a{pick, {}};
  a.params.query = ctx.query;
  a.params.roi = Box::full(ctx.frame);
  if (pick == skill_ids::dreamer && h) {
    if (const auto hb = h->mask.bounding_box()) a.params.roi = pad(*hb, 0.5, ctx.frame);
  }
  return a;
}

}  // namespace

SkillAction propose(Dimension deficiency, const EvidenceStore& store, const std::optional<Hypothesis>& hypothesis,
                    const ProposalContext& ctx, const VerifierConfig& cfg) {
  switch (deficiency) {
    case Dimension::zeta: return zoom_proposal(store, hypothesis, ctx);
    case Dimension::mu: return semantic_proposal(hypothesis, ctx);
    case Dimension::omega:
    case Dimension::none:
      if (!best_box(store)) return redetect_proposal(hypothesis, ctx, cfg);
      return segment_proposal(store, hypothesis, ctx, cfg);
  }
  return segment_proposal(store, hypothesis, ctx, cfg);
}

Verifier::Verifier(VerifierConfig cfg) : cfg_(cfg) { cfg_.normalize(); }

DiagnosticReport Verifier::evaluate(const EvidenceStore& store, const ProposalContext& ctx, int step) const {
  DiagnosticReport rep;
  rep.step = step;
  if (!cfg_.enabled) {
    rep.zeta = 0.0;
    return rep;
  }
  const auto h = best_hypothesis(store);
  rep.has_hypothesis = h.has_value();
  rep.omega = cross_skill_consistency(store, Box::full(store.grid()));
  rep.zeta = cross_scale_stability(store);
  const auto weights = effective_weights(store, record_stability(store), cfg_);
  rep.mu = evidence_sufficiency(store, h, weights, cfg_);
  rep.mu_squashed = squash(rep.mu, cfg_);
  rep.v = commit_score(rep.omega, rep.zeta, rep.mu, cfg_);
  rep.commit = commit_decision(rep.v, rep.omega, cfg_);
  if (!rep.commit) {
    const double mu_cmp = cfg_.mu_deficit_squashed ? rep.mu_squashed : rep.mu;
    rep.deficiency = dominant_deficiency(rep.omega, rep.zeta, mu_cmp, cfg_, rep.has_hypothesis);
    rep.proposal = propose(rep.deficiency, store, h, ctx, cfg_);
  }
  return rep;
}

}  // namespace aharness
