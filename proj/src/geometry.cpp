#include "aharness/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace aharness {

namespace {

constexpr int kMaxExtent = 4096;

std::vector<Run> runs_from_bits(std::span<const std::uint8_t> bits) {
  std::vector<Run> runs;
  const auto n = static_cast<std::uint32_t>(bits.size());
  std::uint32_t i = 0;
  while (i < n) {
    if (!bits[i]) {
      ++i;
      continue;
    }
    std::uint32_t j = i;
    while (j < n && bits[j]) ++j;
    runs.push_back({i, j - i});
    i = j;
  }
  return runs;
}

void require_same_grid(const Mask& a, const Mask& b) {
  if (!(a.grid() == b.grid())) {
    throw GeometryError("incompatible frames: mask grids differ");
  }
}

// Calls fn(start, end) for every maximal overlap of the two run lists.
template <typename Fn>
void for_each_overlap(const std::vector<Run>& a, const std::vector<Run>& b, Fn fn) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const std::uint64_t a0 = a[i].start, a1 = a0 + a[i].length;
    const std::uint64_t b0 = b[j].start, b1 = b0 + b[j].length;
    const std::uint64_t lo = std::max(a0, b0), hi = std::min(a1, b1);
    if (lo < hi) fn(lo, hi);
    if (a1 < b1) {
      ++i;
    } else {
      ++j;
    }
  }
}

}  // namespace

Grid Grid::make(int width, int height) {
  if (width < 1 || height < 1 || width > kMaxExtent || height > kMaxExtent) {
    throw GeometryError("grid extent out of range [1, 4096]: " + std::to_string(width) + "x" +
                        std::to_string(height));
  }
  return {width, height};
}

double Grid::diagonal() const { return std::hypot(static_cast<double>(width), static_cast<double>(height)); }

bool Box::within(const Grid& grid) const {
  return well_formed() && x_min >= 0 && y_min >= 0 && x_max <= grid.width && y_max <= grid.height;
}

std::pair<double, double> Box::center() const {
  return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)};
}

bool Box::contains(double x, double y) const {
  return x >= x_min && x < x_max && y >= y_min && y < y_max;
}

Box intersect(const Box& a, const Box& b) {
  Box r{std::max(a.x_min, b.x_min), std::max(a.y_min, b.y_min), std::min(a.x_max, b.x_max),
        std::min(a.y_max, b.y_max)};
  if (r.x_max < r.x_min) r.x_max = r.x_min;
  if (r.y_max < r.y_min) r.y_max = r.y_min;
  return r;
}

bool overlaps(const Box& a, const Box& b) { return !intersect(a, b).empty(); }

Box bounding_union(const Box& a, const Box& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return {std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min), std::max(a.x_max, b.x_max),
          std::max(a.y_max, b.y_max)};
}

Box clamp_to(const Box& box, const Grid& grid) {
  Box r{std::clamp(box.x_min, 0, grid.width), std::clamp(box.y_min, 0, grid.height),
        std::clamp(box.x_max, 0, grid.width), std::clamp(box.y_max, 0, grid.height)};
  if (r.x_max < r.x_min) r.x_max = r.x_min;
  if (r.y_max < r.y_min) r.y_max = r.y_min;
  return r;
}

Box pad(const Box& box, double fraction, const Grid& grid) {
  if (fraction <= 0.0) return clamp_to(box, grid);
  const int dx = std::max(1, static_cast<int>(std::ceil(fraction * box.width())));
  const int dy = std::max(1, static_cast<int>(std::ceil(fraction * box.height())));
  return clamp_to({box.x_min - dx, box.y_min - dy, box.x_max + dx, box.y_max + dy}, grid);
}

Box rescale(const Box& box, const Grid& from, const Grid& to) {
  if (from == to) return box;
  const double sx = static_cast<double>(to.width) / from.width;
  const double sy = static_cast<double>(to.height) / from.height;
  return clamp_to({static_cast<int>(std::floor(box.x_min * sx)), static_cast<int>(std::floor(box.y_min * sy)),
                   static_cast<int>(std::ceil(box.x_max * sx)), static_cast<int>(std::ceil(box.y_max * sy))},
                  to);
}

bool KeyPoint::within(const Grid& grid) const {
  return std::isfinite(x) && std::isfinite(y) && x >= 0.0 && y >= 0.0 && x <= grid.width &&
         y <= grid.height && confidence >= 0.0 && confidence <= 1.0;
}

Mask Mask::from_runs(Grid grid, std::vector<Run> runs) {
  const auto total = static_cast<std::uint64_t>(grid.area());
  Mask m(grid);
  m.runs_.reserve(runs.size());
  std::uint64_t prev_end = 0;
  bool first = true;
  for (const Run& r : runs) {
    if (r.length == 0) continue;
    const std::uint64_t end = std::uint64_t{r.start} + r.length;
    if (end > total) throw GeometryError("run exceeds grid bounds");
    if (!first && r.start < prev_end) throw GeometryError("runs unsorted or overlapping");
    if (!first && r.start == prev_end) {
      m.runs_.back().length += r.length;
    } else {
      m.runs_.push_back(r);
    }
    prev_end = end;
    first = false;
  }
  return m;
}

Mask Mask::from_bitmap(Grid grid, std::span<const std::uint8_t> bits) {
  if (static_cast<std::int64_t>(bits.size()) != grid.area()) {
    throw GeometryError("bitmap size does not match grid");
  }
  Mask m(grid);
  m.runs_ = runs_from_bits(bits);
  return m;
}

std::int64_t Mask::area() const {
  std::int64_t a = 0;
  for (const Run& r : runs_) a += r.length;
  return a;
}

bool Mask::contains(int x, int y) const {
  if (x < 0 || y < 0 || x >= grid_.width || y >= grid_.height) return false;
  const std::uint32_t off = static_cast<std::uint32_t>(y) * grid_.width + static_cast<std::uint32_t>(x);
  auto it = std::upper_bound(runs_.begin(), runs_.end(), off,
                             [](std::uint32_t v, const Run& r) { return v < r.start; });
  if (it == runs_.begin()) return false;
  --it;
  return off < it->start + it->length;
}

std::vector<std::uint8_t> Mask::to_bitmap() const {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(grid_.area()), 0);
  for (const Run& r : runs_) std::fill_n(bits.begin() + r.start, r.length, std::uint8_t{1});
  return bits;
}

std::optional<Box> Mask::bounding_box() const {
  if (runs_.empty()) return std::nullopt;
  const int w = grid_.width;
  Box b{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), 0, 0};
  for (const Run& r : runs_) {
    const std::uint32_t last = r.start + r.length - 1;
    const int y0 = static_cast<int>(r.start / w), y1 = static_cast<int>(last / w);
    b.y_min = std::min(b.y_min, y0);
    b.y_max = std::max(b.y_max, y1 + 1);
    if (y0 != y1) {
      b.x_min = 0;
      b.x_max = w;
    } else {
      b.x_min = std::min(b.x_min, static_cast<int>(r.start % w));
      b.x_max = std::max(b.x_max, static_cast<int>(last % w) + 1);
    }
  }
  return b;
}

std::optional<std::pair<double, double>> Mask::centroid() const {
  if (runs_.empty()) return std::nullopt;
  const int w = grid_.width;
  double sx = 0.0, sy = 0.0;
  std::int64_t n = 0;
  for (const Run& r : runs_) {
    std::uint32_t off = r.start;
    std::uint32_t left = r.length;
    while (left > 0) {
      const int y = static_cast<int>(off / w);
      const int x0 = static_cast<int>(off % w);
      const int span = std::min<int>(static_cast<int>(left), w - x0);
      // pixel centers x0+0.5 .. x0+span-0.5
      sx += span * (x0 + 0.5 * span);
      sy += static_cast<double>(span) * (y + 0.5);
      n += span;
      off += span;
      left -= span;
    }
  }
  return std::make_pair(sx / n, sy / n);
}

Grid RoiTransform::local_grid() const {
  return Grid::make(roi.width() * scale, roi.height() * scale);
}

void RoiTransform::validate() const {
  if (!is_allowed_scale(scale)) throw GeometryError("zoom scale must be one of {1, 2, 4, 8}");
  if (!roi.within(frame) || roi.empty()) throw GeometryError("roi " + to_string(roi) + " not inside frame");
}

bool is_allowed_scale(int scale) { return scale == 1 || scale == 2 || scale == 4 || scale == 8; }

int zoom_scale_for(const Box& roi, const Grid& frame) {
  if (roi.empty()) return 1;
  int best = 1;
  for (int s : {2, 4, 8}) {
    if (roi.width() * s <= frame.width && roi.height() * s <= frame.height) best = s;
  }
  return best;
}

std::int64_t intersection_area(const Mask& a, const Mask& b) {
  require_same_grid(a, b);
  std::int64_t total = 0;
  for_each_overlap(a.runs(), b.runs(), [&](std::uint64_t lo, std::uint64_t hi) { total += static_cast<std::int64_t>(hi - lo); });
  return total;
}

std::int64_t union_area(const Mask& a, const Mask& b) {
  return a.area() + b.area() - intersection_area(a, b);
}

double iou(const Mask& a, const Mask& b) {
  const std::int64_t inter = intersection_area(a, b);
  const std::int64_t uni = a.area() + b.area() - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Mask mask_intersection(const Mask& a, const Mask& b) {
  require_same_grid(a, b);
  std::vector<Run> runs;
  for_each_overlap(a.runs(), b.runs(), [&](std::uint64_t lo, std::uint64_t hi) {
    runs.push_back({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(hi - lo)});
  });
  return Mask::from_runs(a.grid(), std::move(runs));
}

Mask mask_union(const Mask& a, const Mask& b) {
  require_same_grid(a, b);
  std::vector<Run> merged;
  merged.reserve(a.runs().size() + b.runs().size());
  std::merge(a.runs().begin(), a.runs().end(), b.runs().begin(), b.runs().end(), std::back_inserter(merged),
             [](const Run& x, const Run& y) { return x.start < y.start; });
  std::vector<Run> out;
  for (const Run& r : merged) {
    if (!out.empty() && r.start <= out.back().start + out.back().length) {
      const std::uint32_t end = std::max(out.back().start + out.back().length, r.start + r.length);
      out.back().length = end - out.back().start;
    } else {
      out.push_back(r);
    }
  }
  return Mask::from_runs(a.grid(), std::move(out));
}

Mask clip_to_box(const Mask& mask, const Box& box) {
  return mask_intersection(mask, chi_fill(clamp_to(box, mask.grid()), mask.grid()));
}

Mask chi_fill(const Box& box, const Grid& grid) {
  if (!box.within(grid)) throw GeometryError("box " + to_string(box) + " outside grid");
  std::vector<Run> runs;
  if (!box.empty()) {
    runs.reserve(static_cast<std::size_t>(box.height()));
    for (int y = box.y_min; y < box.y_max; ++y) {
      runs.push_back({static_cast<std::uint32_t>(y * grid.width + box.x_min), static_cast<std::uint32_t>(box.width())});
    }
  }
  return Mask::from_runs(grid, std::move(runs));
}

Mask ellipse_fill(const Box& bounds, const Grid& grid) {
  if (!bounds.within(grid)) throw GeometryError("ellipse bounds outside grid");
  std::vector<Run> runs;
  if (!bounds.empty()) {
    const auto [cx, cy] = bounds.center();
    const double rx = 0.5 * bounds.width(), ry = 0.5 * bounds.height();
    for (int y = bounds.y_min; y < bounds.y_max; ++y) {
      const double dy = (y + 0.5 - cy) / ry;
      const double h = 1.0 - dy * dy;
      if (h <= 0.0) continue;
      const double half = rx * std::sqrt(h);
      // pixel x is inside when |x + 0.5 - cx| <= half
      int x0 = static_cast<int>(std::ceil(cx - half - 0.5));
      int x1 = static_cast<int>(std::floor(cx + half - 0.5));
      x0 = std::max(x0, bounds.x_min);
      x1 = std::min(x1, bounds.x_max - 1);
      if (x1 < x0) continue;
      runs.push_back({static_cast<std::uint32_t>(y * grid.width + x0), static_cast<std::uint32_t>(x1 - x0 + 1)});
    }
  }
  return Mask::from_runs(grid, std::move(runs));
}

Mask project_to_global(const Mask& local, const RoiTransform& t) {
  t.validate();
  if (!(local.grid() == t.local_grid())) {
    throw GeometryError("local mask grid does not match the crop implied by the transform");
  }
  const int lw = local.grid().width;
  const int s = t.scale;
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(t.frame.area()), 0);
  for (const Run& r : local.runs()) {
    std::uint32_t off = r.start;
    std::uint32_t left = r.length;
    while (left > 0) {
      const int ly = static_cast<int>(off / lw);
      const int lx0 = static_cast<int>(off % lw);
      const int span = std::min<int>(static_cast<int>(left), lw - lx0);
      const int gy = t.roi.y_min + ly / s;
      const int gx0 = t.roi.x_min + lx0 / s;
      const int gx1 = t.roi.x_min + (lx0 + span - 1) / s;
      std::fill(bits.begin() + static_cast<std::ptrdiff_t>(gy) * t.frame.width + gx0,
                bits.begin() + static_cast<std::ptrdiff_t>(gy) * t.frame.width + gx1 + 1, std::uint8_t{1});
      off += span;
      left -= span;
    }
  }
  return Mask::from_bitmap(t.frame, bits);
}

Mask lift_to_local(const Mask& global, const RoiTransform& t) {
  t.validate();
  if (!(global.grid() == t.frame)) throw GeometryError("global mask grid does not match transform frame");
  const Grid lg = t.local_grid();
  const int s = t.scale;
  std::vector<Run> runs;
  const Mask clipped = clip_to_box(global, t.roi);
  const int gw = t.frame.width;
  // Collect per-row spans of the clipped mask, then replicate into s local rows.
  std::vector<std::vector<std::pair<int, int>>> rows(static_cast<std::size_t>(t.roi.height()));
  for (const Run& r : clipped.runs()) {
    std::uint32_t off = r.start;
    std::uint32_t left = r.length;
    while (left > 0) {
      const int gy = static_cast<int>(off / gw);
      const int gx0 = static_cast<int>(off % gw);
      const int span = std::min<int>(static_cast<int>(left), gw - gx0);
      rows[static_cast<std::size_t>(gy - t.roi.y_min)].emplace_back(gx0, gx0 + span);
      off += span;
      left -= span;
    }
  }
  for (int ry = 0; ry < t.roi.height(); ++ry) {
    for (int k = 0; k < s; ++k) {
      const int ly = ry * s + k;
      for (const auto& [gx0, gx1] : rows[static_cast<std::size_t>(ry)]) {
        const int lx0 = (gx0 - t.roi.x_min) * s;
        const int lx1 = (gx1 - t.roi.x_min) * s;
        runs.push_back({static_cast<std::uint32_t>(ly * lg.width + lx0), static_cast<std::uint32_t>(lx1 - lx0)});
      }
    }
  }
  return Mask::from_runs(lg, std::move(runs));
}

Mask resample(const Mask& mask, const Grid& to) {
  if (mask.grid() == to) return mask;
  const Grid& from = mask.grid();
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(to.area()), 0);
  for (int y = 0; y < to.height; ++y) {
    const int sy = std::min(from.height - 1, static_cast<int>((y + 0.5) * from.height / to.height));
    for (int x = 0; x < to.width; ++x) {
      const int sx = std::min(from.width - 1, static_cast<int>((x + 0.5) * from.width / to.width));
      bits[static_cast<std::size_t>(y) * to.width + x] = mask.contains(sx, sy) ? 1 : 0;
    }
  }
  return Mask::from_bitmap(to, bits);
}

namespace {

// Separable square morphology: max (dilate) or min (erode) filter.
Mask morph(const Mask& mask, int radius, bool dilation) {
  if (radius <= 0) return mask;
  const Grid g = mask.grid();
  const auto src = mask.to_bitmap();
  std::vector<std::uint8_t> tmp(src.size()), out(src.size());
  auto pass = [&](const std::vector<std::uint8_t>& in, std::vector<std::uint8_t>& dst, bool horizontal) {
    const int outer = horizontal ? g.height : g.width;
    const int inner = horizontal ? g.width : g.height;
    std::vector<int> prefix(static_cast<std::size_t>(inner) + 1);
    for (int o = 0; o < outer; ++o) {
      auto at = [&](int i) -> std::size_t {
        return horizontal ? static_cast<std::size_t>(o) * g.width + i : static_cast<std::size_t>(i) * g.width + o;
      };
      prefix[0] = 0;
      for (int i = 0; i < inner; ++i) prefix[i + 1] = prefix[i] + in[at(i)];
      for (int i = 0; i < inner; ++i) {
        const int lo = std::max(0, i - radius), hi = std::min(inner, i + radius + 1);
        const int count = prefix[hi] - prefix[lo];
        if (dilation) {
          dst[at(i)] = count > 0 ? 1 : 0;
        } else {
          // Out-of-frame pixels count as background for erosion.
          dst[at(i)] = (count == 2 * radius + 1) ? 1 : 0;
        }
      }
    }
  };
  pass(src, tmp, true);
  pass(tmp, out, false);
  return Mask::from_bitmap(g, out);
}

}  // namespace

Mask dilate(const Mask& mask, int radius) { return morph(mask, radius, true); }
Mask erode(const Mask& mask, int radius) { return morph(mask, radius, false); }

double point_distance_norm(const KeyPoint& p, const KeyPoint& q, const Grid& grid) {
  const double d = std::hypot(p.x - q.x, p.y - q.y) / grid.diagonal();
  return std::clamp(d, 0.0, 1.0);
}

std::optional<KeyPoint> nearest_point_inside(const Mask& mask, double x, double y) {
  if (mask.empty()) return std::nullopt;
  const int w = mask.grid().width;
  double best = std::numeric_limits<double>::infinity();
  KeyPoint out{};
  for (const Run& r : mask.runs()) {
    std::uint32_t off = r.start;
    std::uint32_t left = r.length;
    while (left > 0) {
      const int py = static_cast<int>(off / w);
      const int px0 = static_cast<int>(off % w);
      const int span = std::min<int>(static_cast<int>(left), w - px0);
      // closest pixel center along this row segment
      const double cx = std::clamp(x - 0.5, static_cast<double>(px0), static_cast<double>(px0 + span - 1));
      const double pxc = std::round(cx) + 0.5;
      const double pyc = py + 0.5;
      const double d = (pxc - x) * (pxc - x) + (pyc - y) * (pyc - y);
      if (d < best) {
        best = d;
        out = {pxc, pyc, 1.0};
      }
      off += span;
      left -= span;
    }
  }
  return out;
}

std::string to_string(const Box& box) {
  std::ostringstream os;
  os << '[' << box.x_min << ',' << box.y_min << ',' << box.x_max << ',' << box.y_max << ']';
  return os.str();
}

}  // namespace aharness
