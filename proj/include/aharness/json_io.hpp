#pragma once

#include <json.hpp>

#include "aharness/geometry.hpp"

namespace aharness {

using nlohmann::json;

// Boxes travel as [x_min, y_min, x_max, y_max]; key points as [x, y, confidence];
// masks as {"grid": [w, h], "runs": [[start, length], ...]}.
void to_json(json& j, const Grid& g);
void from_json(const json& j, Grid& g);
void to_json(json& j, const Box& b);
void from_json(const json& j, Box& b);
void to_json(json& j, const KeyPoint& p);
void from_json(const json& j, KeyPoint& p);
void to_json(json& j, const Mask& m);
void from_json(const json& j, Mask& m);

/// Compact single-line dump with a stable key order.
std::string dump_line(const json& j);

}  // namespace aharness
