#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aharness {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pixel frame of a scene or crop. Both extents lie in [1, 4096].
struct Grid {
  int width = 1;
  int height = 1;

  static Grid make(int width, int height);

  [[nodiscard]] std::int64_t area() const { return std::int64_t{width} * height; }
  [[nodiscard]] double diagonal() const;

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Half-open pixel rectangle [x_min, x_max) x [y_min, y_max).
struct Box {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  static Box full(const Grid& grid) { return {0, 0, grid.width, grid.height}; }

  [[nodiscard]] int width() const { return x_max - x_min; }
  [[nodiscard]] int height() const { return y_max - y_min; }
  [[nodiscard]] std::int64_t area() const { return std::int64_t{width()} * height(); }
  [[nodiscard]] bool empty() const { return width() <= 0 || height() <= 0; }
  [[nodiscard]] bool well_formed() const { return x_min <= x_max && y_min <= y_max; }
  [[nodiscard]] bool within(const Grid& grid) const;
  [[nodiscard]] std::pair<double, double> center() const;
  [[nodiscard]] bool contains(double x, double y) const;

  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection of two boxes; empty (zero-extent) box when disjoint.
Box intersect(const Box& a, const Box& b);
bool overlaps(const Box& a, const Box& b);
Box bounding_union(const Box& a, const Box& b);
/// Grows the box by `fraction` of its extent on every side (at least one
/// pixel when fraction > 0) and clamps it to the grid.
Box pad(const Box& box, double fraction, const Grid& grid);
Box clamp_to(const Box& box, const Grid& grid);
/// Rescales a box from one frame into another by normalized coordinates.
Box rescale(const Box& box, const Grid& from, const Grid& to);

struct KeyPoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 1.0;

  [[nodiscard]] bool within(const Grid& grid) const;

  friend bool operator==(const KeyPoint&, const KeyPoint&) = default;
};

/// One foreground run in row-major pixel order.
struct Run {
  std::uint32_t start = 0;
  std::uint32_t length = 0;

  friend bool operator==(const Run&, const Run&) = default;
};

/// Binary mask stored as canonical run-length pairs: sorted, non-overlapping,
/// non-adjacent, non-empty runs. Runs may wrap across row ends.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Grid grid) : grid_(grid) {}

  /// Validates and canonicalizes runs (adjacent runs merge, zero-length runs
  /// are dropped). Throws on unsorted, overlapping, or out-of-bounds runs.
  static Mask from_runs(Grid grid, std::vector<Run> runs);
  static Mask from_bitmap(Grid grid, std::span<const std::uint8_t> bits);

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] const std::vector<Run>& runs() const { return runs_; }
  [[nodiscard]] std::int64_t area() const;
  [[nodiscard]] bool empty() const { return runs_.empty(); }
  [[nodiscard]] bool contains(int x, int y) const;
  [[nodiscard]] std::vector<std::uint8_t> to_bitmap() const;
  [[nodiscard]] std::optional<Box> bounding_box() const;
  [[nodiscard]] std::optional<std::pair<double, double>> centroid() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  Grid grid_{};
  std::vector<Run> runs_;
};

/// Zoom level plus crop window. The local crop grid is roi extent x scale.
struct RoiTransform {
  Grid frame;
  Box roi;
  int scale = 1;

  static RoiTransform identity(const Grid& frame) { return {frame, Box::full(frame), 1}; }

  [[nodiscard]] Grid local_grid() const;
  void validate() const;

  friend bool operator==(const RoiTransform&, const RoiTransform&) = default;
};

bool is_allowed_scale(int scale);
/// Largest allowed scale whose upsampled crop still fits inside the frame.
int zoom_scale_for(const Box& roi, const Grid& frame);

std::int64_t intersection_area(const Mask& a, const Mask& b);
std::int64_t union_area(const Mask& a, const Mask& b);
/// |a ∩ b| / |a ∪ b|; 1.0 when both are empty.
double iou(const Mask& a, const Mask& b);

Mask mask_intersection(const Mask& a, const Mask& b);
Mask mask_union(const Mask& a, const Mask& b);
Mask clip_to_box(const Mask& mask, const Box& box);

/// Filled mask for a box (the χ operator).
Mask chi_fill(const Box& box, const Grid& grid);
Mask ellipse_fill(const Box& bounds, const Grid& grid);

/// Maps a crop-frame mask back to the global frame (nearest-pixel downscale,
/// offset by the roi origin).
Mask project_to_global(const Mask& local, const RoiTransform& transform);
/// Renders a global mask into the crop frame (each roi pixel becomes a
/// scale x scale block). Pixels outside the roi are dropped.
Mask lift_to_local(const Mask& global, const RoiTransform& transform);
/// Nearest-neighbour resample into another grid.
Mask resample(const Mask& mask, const Grid& to);

/// Square structuring element of the given radius (Chebyshev metric).
Mask dilate(const Mask& mask, int radius);
Mask erode(const Mask& mask, int radius);

double point_distance_norm(const KeyPoint& p, const KeyPoint& q, const Grid& grid);
/// Nearest foreground pixel center to (x, y); nullopt for empty masks.
std::optional<KeyPoint> nearest_point_inside(const Mask& mask, double x, double y);

std::string to_string(const Box& box);

}  // namespace aharness
