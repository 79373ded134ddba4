#include "aharness/json_io.hpp"

namespace aharness {

void to_json(json& j, const Grid& g) { j = json::array({g.width, g.height}); }

void from_json(const json& j, Grid& g) { g = Grid::make(j.at(0).get<int>(), j.at(1).get<int>()); }

void to_json(json& j, const Box& b) { j = json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

void from_json(const json& j, Box& b) {
  if (!j.is_array() || j.size() != 4) throw GeometryError("box must be a 4-element array");
  b = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (!b.well_formed()) throw GeometryError("box corners out of order: " + to_string(b));
}

void to_json(json& j, const KeyPoint& p) { j = json::array({p.x, p.y, p.confidence}); }

void from_json(const json& j, KeyPoint& p) {
  if (!j.is_array() || j.size() < 2) throw GeometryError("key point must be [x, y] or [x, y, confidence]");
  p.x = j[0].get<double>();
  p.y = j[1].get<double>();
  p.confidence = j.size() > 2 ? j[2].get<double>() : 1.0;
}

void to_json(json& j, const Mask& m) {
  json runs = json::array();
  for (const Run& r : m.runs()) runs.push_back(json::array({r.start, r.length}));
  j = json{{"grid", m.grid()}, {"runs", std::move(runs)}};
}

void from_json(const json& j, Mask& m) {
  const Grid g = j.at("grid").get<Grid>();
  std::vector<Run> runs;
  for (const auto& r : j.at("runs")) {
    if (!r.is_array() || r.size() != 2) throw GeometryError("run must be [start, length]");
    runs.push_back({r[0].get<std::uint32_t>(), r[1].get<std::uint32_t>()});
  }
  m = Mask::from_runs(g, std::move(runs));
}

std::string dump_line(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

}  // namespace aharness
