#include "aharness/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "aharness/rng.hpp"
#include "aharness/skills.hpp"

namespace aharness {

void to_json(json& j, const MetricsReport& r) {
  json hist = json::object();
  for (const auto& [calls, bin] : r.retry_histogram) {
    hist[std::to_string(calls)] =
        json{{"count", bin.count}, {"mean_calls", bin.mean_calls}, {"mean_iou", bin.mean_iou}, {"ciou", bin.ciou}};
  }
  j = json{{"giou", r.giou},
           {"ciou", r.ciou},
           {"p50", r.p50},
           {"p50_95", r.p50_95},
           {"n_samples", r.n_samples},
           {"mean_skill_calls", r.mean_skill_calls},
           {"retry_histogram", std::move(hist)}};
}

void from_json(const json& j, MetricsReport& r) {
  r.giou = j.at("giou").get<double>();
  r.ciou = j.at("ciou").get<double>();
  r.p50 = j.at("p50").get<double>();
  r.p50_95 = j.at("p50_95").get<double>();
  r.n_samples = j.at("n_samples").get<int>();
  r.mean_skill_calls = j.at("mean_skill_calls").get<double>();
  r.retry_histogram.clear();
  for (const auto& [calls, bin] : j.at("retry_histogram").items()) {
    r.retry_histogram[std::stoi(calls)] = {bin.at("count").get<int>(), bin.at("mean_calls").get<double>(),
                                           bin.at("mean_iou").get<double>(), bin.at("ciou").get<double>()};
  }
}

MetricsReport evaluate(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truths,
                       const std::vector<int>& detection_calls, const std::vector<int>& skill_calls) {
  if (predictions.size() != ground_truths.size()) throw std::invalid_argument("predictions and ground truths differ in length");
  if (!detection_calls.empty() && detection_calls.size() != predictions.size()) {
    throw std::invalid_argument("detection call counts differ in length");
  }
  if (!skill_calls.empty() && skill_calls.size() != predictions.size()) {
    throw std::invalid_argument("skill call counts differ in length");
  }
  MetricsReport r;
  r.n_samples = static_cast<int>(predictions.size());
  if (predictions.empty()) return r;

  std::int64_t inter = 0;
  std::int64_t uni = 0;
  double sum_iou = 0.0;
  int over50 = 0;
  int over_thresholds = 0;
  std::map<int, double> iou_sums;
  std::map<int, double> call_sums;
  std::map<int, std::pair<std::int64_t, std::int64_t>> bin_areas;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Mask& p = predictions[i];
    const Mask& g = ground_truths[i];
    if (!(p.grid() == g.grid())) throw std::invalid_argument("prediction and ground truth grids differ");
    const std::int64_t in = intersection_area(p, g);
    const std::int64_t un = union_area(p, g);
    inter += in;
    uni += un;
    const double v = un == 0 ? 1.0 : static_cast<double>(in) / static_cast<double>(un);
    sum_iou += v;
    if (v >= 0.5) ++over50;
    for (int k = 0; k < 10; ++k) {
      if (v >= 0.50 + 0.05 * k - 1e-12) ++over_thresholds;
    }
    const int calls = detection_calls.empty() ? 0 : detection_calls[i];
    ++r.retry_histogram[calls].count;
    iou_sums[calls] += v;
    if (!skill_calls.empty()) call_sums[calls] += skill_calls[i];
    bin_areas[calls].first += in;
    bin_areas[calls].second += un;
  }
  const double n = static_cast<double>(predictions.size());
  r.giou = sum_iou / n;
  r.ciou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  r.p50 = over50 / n;
  r.p50_95 = over_thresholds / (10.0 * n);
  for (auto& [calls, bin] : r.retry_histogram) {
    bin.mean_iou = iou_sums[calls] / bin.count;
    bin.mean_calls = call_sums[calls] / bin.count;
    const auto [bi, bu] = bin_areas[calls];
    bin.ciou = bu == 0 ? 1.0 : static_cast<double>(bi) / static_cast<double>(bu);
  }
  if (!skill_calls.empty()) {
    double total = 0.0;
    for (int c : skill_calls) total += c;
    r.mean_skill_calls = total / n;
  }
  return r;
}

std::string to_string(Band b) {
  switch (b) {
    case Band::easy: return "easy";
    case Band::medium: return "medium";
    case Band::hard: return "hard";
  }
  return "easy";
}

Band band_from_string(const std::string& text) {
  if (text == "easy") return Band::easy;
  if (text == "medium") return Band::medium;
  if (text == "hard") return Band::hard;
  throw std::invalid_argument("unknown band: " + text);
}

Band band_of(double difficulty) {
  if (difficulty < 0.33) return Band::easy;
  if (difficulty < 0.66) return Band::medium;
  return Band::hard;
}

LibraryItem solve_scene(const Scene& scene) {
  NoiseModel exact;
  exact.seed = 0;
  exact.difficulty = 0.0;
  const Grid& frame = scene.grid;
  const std::string query = instruction_query(scene.instruction);

  SkillAction det{skill_ids::detect, {}};
  det.params.roi = Box::full(frame);
  det.params.scale = 1;
  det.params.query = query;
  const SkillOutput found = simulate_detect({&scene, scene.instruction, det, 1, exact});
  Box box = scene.target_box();
  for (const OutputItem& item : found.items) {
    if (item.kind == EvidenceType::box) {
      box = std::get<Box>(item.payload);
      break;
    }
  }
  SkillAction seg{skill_ids::segment, {}};
  seg.params.roi = pad(box, 0.1, frame);
  seg.params.scale = zoom_scale_for(seg.params.roi, frame);
  seg.params.query = query;
  const auto [cx, cy] = box.center();
  seg.params.prompt_point = KeyPoint{cx, cy, 1.0};
  // Prompt must land on the target (a concave or clipped shape may miss its box center).
  if (!scene.observed_target.contains(static_cast<int>(std::floor(cx)), static_cast<int>(std::floor(cy)))) {
    if (const auto p = nearest_point_inside(scene.observed_target, cx, cy)) seg.params.prompt_point = KeyPoint{p->x, p->y, 1.0};
  }

  LibraryItem item;
  item.source = scene.id;
  item.descriptor = scene.descriptor;
  item.instruction = scene.instruction;
  item.reference_mask = scene.target_gt;
  item.solved_actions = {det, seg};
  return item;
}

namespace {

constexpr double kBandEdges[4] = {0.0, 0.33, 0.66, 1.0};

std::vector<Scene> make_split(const BenchmarkSpec& spec, std::string_view split, std::set<std::uint64_t>& used) {
  std::vector<Scene> out;
  const std::uint64_t base = combine_keys(spec.seed, fnv1a(split));
  const int counts[3] = {spec.easy, spec.medium, spec.hard};
  std::uint64_t k = 0;
  for (int band = 0; band < 3; ++band) {
    for (int i = 0; i < counts[band]; ++i, ++k) {
      CounterRng rng(base, "scene", k);
      std::uint64_t seed = rng.next_u64();
      while (!used.insert(seed).second) seed = mix64(seed);
      const double lo = kBandEdges[band];
      const double hi = kBandEdges[band + 1];
      double difficulty = lo + (hi - lo) * rng.uniform();
      if (band < 2) difficulty = std::min(difficulty, std::nextafter(hi, lo));
      const double occluded_share = 0.5 * std::erfc(-instance_hardness(seed) / std::sqrt(2.0));
      const double occlusion = 0.3 * occluded_share * difficulty;
      out.push_back(generate_scene(seed, difficulty, occlusion));
    }
  }
  return out;
}

}  // namespace

Benchmark build_benchmark(const BenchmarkSpec& spec) {
  if (spec.easy < 0 || spec.medium < 0 || spec.hard < 0 || spec.total() <= 0) {
    throw std::invalid_argument("band counts must be nonnegative with a positive total");
  }
  Benchmark b;
  b.spec = spec;
  std::set<std::uint64_t> used;
  b.eval = make_split(spec, "eval", used);
  b.library = make_split(spec, "library", used);
  for (const Scene& s : b.library) b.library_items.push_back(solve_scene(s));
  return b;
}

namespace {

void write_json(const std::filesystem::path& path, const json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

}  // namespace

void save_benchmark(const Benchmark& bench, const std::filesystem::path& dir) {
  json manifest{{"format", "aharness-benchmark/1"},
                {"seed", bench.spec.seed},
                {"bands", {{"easy", bench.spec.easy}, {"medium", bench.spec.medium}, {"hard", bench.spec.hard}}}};
  const auto list = [](const std::vector<Scene>& scenes) {
    json arr = json::array();
    for (const Scene& s : scenes) {
      arr.push_back(json{{"id", s.id}, {"seed", s.seed}, {"band", to_string(band_of(s.difficulty))}});
    }
    return arr;
  };
  manifest["eval"] = list(bench.eval);
  manifest["library"] = list(bench.library);
  json solved = json::array();
  for (const LibraryItem& item : bench.library_items) {
    json actions = json::array();
    for (const SkillAction& a : item.solved_actions) actions.push_back(a);
    solved.push_back(json{{"source", item.source}, {"actions", std::move(actions)}});
  }
  manifest["library_solutions"] = std::move(solved);
  write_json(dir / "manifest.json", manifest);
  for (const Scene& s : bench.eval) write_json(dir / "eval" / (s.id + ".json"), json(s));
  for (const Scene& s : bench.library) write_json(dir / "library" / (s.id + ".json"), json(s));
}

Benchmark load_benchmark(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", std::string{}) != "aharness-benchmark/1") {
    throw std::invalid_argument("not a benchmark manifest: " + (dir / "manifest.json").string());
  }
  Benchmark b;
  b.spec.seed = manifest.at("seed").get<std::uint64_t>();
  b.spec.easy = manifest.at("bands").at("easy").get<int>();
  b.spec.medium = manifest.at("bands").at("medium").get<int>();
  b.spec.hard = manifest.at("bands").at("hard").get<int>();
  for (const json& e : manifest.at("eval")) {
    b.eval.push_back(read_json(dir / "eval" / (e.at("id").get<std::string>() + ".json")).get<Scene>());
  }
  for (const json& e : manifest.at("library")) {
    b.library.push_back(read_json(dir / "library" / (e.at("id").get<std::string>() + ".json")).get<Scene>());
  }
  std::map<std::string, std::vector<SkillAction>> solutions;
  for (const json& s : manifest.at("library_solutions")) {
    solutions[s.at("source").get<std::string>()] = s.at("actions").get<std::vector<SkillAction>>();
  }
  for (const Scene& s : b.library) {
    LibraryItem item;
    item.source = s.id;
    item.descriptor = s.descriptor;
    item.instruction = s.instruction;
    item.reference_mask = s.target_gt;
    const auto it = solutions.find(s.id);
    item.solved_actions = it != solutions.end() ? it->second : solve_scene(s).solved_actions;
    b.library_items.push_back(std::move(item));
  }
  return b;
}

}  // namespace aharness
