#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aharness/geometry.hpp"
#include "aharness/json_io.hpp"

namespace aharness {

enum class ShapeKind { rectangle, ellipse };

/// Object category of the synthetic world. Each category places its
/// actionable part at a canonical relative position, which is what gives
/// memory retrieval something to transfer between scenes.
struct Category {
  std::string name;
  std::string part;
  std::string verb;
  ShapeKind shape;
  double center_x;  // relative to grid width
  double center_y;  // relative to grid height
  double aspect;    // width / height
};

const std::vector<Category>& category_catalog();

struct Scene {
  std::string id;
  std::uint64_t seed = 0;
  Grid grid{};
  std::string category;
  std::string instruction;
  std::vector<std::string> descriptor;
  double difficulty = 0.0;
  double occlusion = 0.0;
  ShapeKind shape = ShapeKind::rectangle;
  Mask target_gt;
  /// Target as the skills observe it (ground truth minus the occluded strip).
  Mask observed_target;
  std::vector<Mask> distractors;

  [[nodiscard]] Box target_box() const;
  void validate() const;
};

inline constexpr int kSceneWidth = 160;
inline constexpr int kSceneHeight = 120;

Scene generate_scene(std::uint64_t seed, double difficulty, double occlusion);

/// Standard-normal latent fixed by the scene seed; larger is harder. Drives
/// benchmark occlusion and the simulated skills' shared noise.
double instance_hardness(const Scene& scene);
double instance_hardness(std::uint64_t scene_seed);

void to_json(json& j, const Scene& s);
void from_json(const json& j, Scene& s);
void save_scene(const Scene& scene, const std::filesystem::path& path);
Scene load_scene(const std::filesystem::path& path);

std::string to_string(ShapeKind kind);
ShapeKind shape_from_string(const std::string& text);

}  // namespace aharness
