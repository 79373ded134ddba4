#include "aharness/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "aharness/rng.hpp"

namespace aharness {

const std::vector<Category>& category_catalog() {
  static const std::vector<Category> catalog = {
      {"mug", "handle", "grasp", ShapeKind::ellipse, 0.70, 0.45, 0.6},
      {"knife", "handle", "hold", ShapeKind::rectangle, 0.30, 0.60, 2.5},
      {"scissors", "finger-loop", "grip", ShapeKind::ellipse, 0.40, 0.72, 1.3},
      {"kettle", "handle", "lift", ShapeKind::rectangle, 0.62, 0.30, 1.5},
      {"door", "knob", "turn", ShapeKind::ellipse, 0.80, 0.55, 1.0},
      {"drawer", "pull", "open", ShapeKind::rectangle, 0.50, 0.75, 2.0},
      {"bottle", "cap", "twist", ShapeKind::ellipse, 0.45, 0.22, 1.0},
      {"spoon", "bowl", "scoop", ShapeKind::ellipse, 0.25, 0.35, 1.4},
      {"hammer", "grip", "swing", ShapeKind::rectangle, 0.35, 0.50, 0.5},
      {"cup", "rim", "drink", ShapeKind::ellipse, 0.55, 0.40, 2.2},
      {"pan", "handle", "hold", ShapeKind::rectangle, 0.75, 0.70, 2.8},
      {"faucet", "lever", "press", ShapeKind::rectangle, 0.22, 0.25, 1.8},
      {"microwave", "button", "push", ShapeKind::rectangle, 0.85, 0.30, 1.0},
      {"laptop", "keyboard", "type", ShapeKind::rectangle, 0.50, 0.58, 2.4},
      {"bag", "strap", "carry", ShapeKind::rectangle, 0.30, 0.20, 3.0},
      {"toothbrush", "bristles", "brush", ShapeKind::ellipse, 0.65, 0.80, 1.6},
  };
  return catalog;
}

std::string to_string(ShapeKind kind) { return kind == ShapeKind::ellipse ? "ellipse" : "rectangle"; }

ShapeKind shape_from_string(const std::string& text) {
  if (text == "ellipse") return ShapeKind::ellipse;
  if (text == "rectangle") return ShapeKind::rectangle;
  throw std::invalid_argument("unknown shape: " + text);
}

Box Scene::target_box() const { return target_gt.bounding_box().value_or(Box{}); }

void Scene::validate() const {
  if (target_gt.empty()) throw std::invalid_argument("scene " + id + ": ground-truth target is empty");
  if (descriptor.empty()) throw std::invalid_argument("scene " + id + ": descriptor is empty");
  if (!(target_gt.grid() == grid) || !(observed_target.grid() == grid)) {
    throw std::invalid_argument("scene " + id + ": mask grid mismatch");
  }
  if (difficulty < 0.0 || difficulty > 1.0 || occlusion < 0.0 || occlusion > 1.0) {
    throw std::invalid_argument("scene " + id + ": knobs outside [0, 1]");
  }
}

namespace {

Mask render_shape(ShapeKind kind, const Box& bounds, const Grid& grid) {
  return kind == ShapeKind::ellipse ? ellipse_fill(bounds, grid) : chi_fill(bounds, grid);
}

std::string size_token(double area_fraction) {
  if (area_fraction >= 0.06) return "size:large";
  if (area_fraction >= 0.02) return "size:medium";
  if (area_fraction >= 0.008) return "size:small";
  return "size:tiny";
}

}  // namespace

double instance_hardness(std::uint64_t scene_seed) { return CounterRng(scene_seed, "instance", 0).normal(); }

double instance_hardness(const Scene& scene) { return instance_hardness(scene.seed); }

Scene generate_scene(std::uint64_t seed, double difficulty, double occlusion) {
  difficulty = std::clamp(difficulty, 0.0, 1.0);
  occlusion = std::clamp(occlusion, 0.0, 1.0);
  CounterRng rng(seed, "scene", 0);
  const auto& catalog = category_catalog();
  const Category& cat = catalog[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(catalog.size()) - 1))];

  Scene s;
  s.seed = seed;
  s.id = "scene-" + std::to_string(seed);
  s.grid = Grid::make(kSceneWidth, kSceneHeight);
  s.category = cat.name;
  s.shape = cat.shape;
  s.difficulty = difficulty;
  s.occlusion = occlusion;
  s.instruction = cat.verb + " the " + cat.name + " by its " + cat.part;

  // Area fraction decays geometrically from ~12% at difficulty 0 to ~0.5% at 1.
  const double fraction = 0.12 * std::pow(0.005 / 0.12, difficulty) * rng.uniform(0.9, 1.1);
  double area = fraction * static_cast<double>(s.grid.area());
  if (cat.shape == ShapeKind::ellipse) area *= 4.0 / 3.14159265358979323846;
  const double aspect = cat.aspect * rng.uniform(0.85, 1.15);
  int w = std::max(3, static_cast<int>(std::lround(std::sqrt(area * aspect))));
  int h = std::max(3, static_cast<int>(std::lround(area / std::max(1.0, std::sqrt(area * aspect)))));
  w = std::min(w, s.grid.width - 2);
  h = std::min(h, s.grid.height - 2);

  const double cx = cat.center_x * s.grid.width + 0.03 * s.grid.width * rng.normal();
  const double cy = cat.center_y * s.grid.height + 0.03 * s.grid.height * rng.normal();
  int x0 = static_cast<int>(std::lround(cx - 0.5 * w));
  int y0 = static_cast<int>(std::lround(cy - 0.5 * h));
  x0 = std::clamp(x0, 1, s.grid.width - w - 1);
  y0 = std::clamp(y0, 1, s.grid.height - h - 1);
  const Box tbox{x0, y0, x0 + w, y0 + h};
  s.target_gt = render_shape(cat.shape, tbox, s.grid);

  // Occluder: a vertical strip covering `occlusion` of the target width.
  const int strip = std::min(w - 1, static_cast<int>(std::floor(occlusion * w)));
  if (strip > 0) {
    const bool from_left = rng.bernoulli(0.5);
    const Box occluder = from_left ? Box{x0, 0, x0 + strip, s.grid.height}
                                   : Box{x0 + w - strip, 0, x0 + w, s.grid.height};
    const Mask keep = chi_fill(occluder, s.grid);
    const auto gt = s.target_gt.to_bitmap();
    const auto occ = keep.to_bitmap();
    std::vector<std::uint8_t> obs(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) obs[i] = gt[i] && !occ[i];
    s.observed_target = Mask::from_bitmap(s.grid, obs);
    if (s.observed_target.empty()) s.observed_target = s.target_gt;
  } else {
    s.observed_target = s.target_gt;
  }

  const int n_distractors = std::min(3, static_cast<int>(std::floor(difficulty * 3.0 + rng.uniform())));
  std::vector<Box> taken{pad(tbox, 0.3, s.grid)};
  for (int k = 0; k < n_distractors; ++k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double scale = rng.uniform(0.8, 1.5);
      const int dw = std::clamp(static_cast<int>(std::lround(w * scale)), 3, s.grid.width / 2);
      const int dh = std::clamp(static_cast<int>(std::lround(h * scale)), 3, s.grid.height / 2);
      const int dx = rng.uniform_int(0, s.grid.width - dw);
      const int dy = rng.uniform_int(0, s.grid.height - dh);
      const Box db{dx, dy, dx + dw, dy + dh};
      const bool clash = std::any_of(taken.begin(), taken.end(), [&](const Box& b) { return overlaps(b, db); });
      if (clash) continue;
      const ShapeKind kind = rng.bernoulli(0.5) ? ShapeKind::ellipse : ShapeKind::rectangle;
      s.distractors.push_back(render_shape(kind, db, s.grid));
      taken.push_back(pad(db, 0.2, s.grid));
      break;
    }
  }

  s.descriptor = {"category:" + cat.name, "part:" + cat.part, "shape:" + to_string(cat.shape),
                  size_token(static_cast<double>(s.target_gt.area()) / static_cast<double>(s.grid.area()))};
  return s;
}

void to_json(json& j, const Scene& s) {
  json distractors = json::array();
  for (const Mask& m : s.distractors) distractors.push_back(m);
  j = json{{"id", s.id},
           {"seed", s.seed},
           {"grid", s.grid},
           {"category", s.category},
           {"instruction", s.instruction},
           {"descriptor", s.descriptor},
           {"difficulty", s.difficulty},
           {"occlusion", s.occlusion},
           {"shape", to_string(s.shape)},
           {"target_gt", s.target_gt},
           {"observed_target", s.observed_target},
           {"distractors", std::move(distractors)}};
}

void from_json(const json& j, Scene& s) {
  s.id = j.at("id").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.grid = j.at("grid").get<Grid>();
  s.category = j.at("category").get<std::string>();
  s.instruction = j.at("instruction").get<std::string>();
  s.descriptor = j.at("descriptor").get<std::vector<std::string>>();
  s.difficulty = j.at("difficulty").get<double>();
  s.occlusion = j.at("occlusion").get<double>();
  s.shape = shape_from_string(j.at("shape").get<std::string>());
  s.target_gt = j.at("target_gt").get<Mask>();
  s.observed_target = j.at("observed_target").get<Mask>();
  s.distractors.clear();
  for (const auto& m : j.at("distractors")) s.distractors.push_back(m.get<Mask>());
  s.validate();
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file " + path.string());
  out << dump_line(json(scene)) << '\n';
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scene file " + path.string());
  return json::parse(in).get<Scene>();
}

}  // namespace aharness
