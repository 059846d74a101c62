#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "playclass/dataset_io.hpp"
#include "playclass/mask.hpp"
#include "playclass/numeric.hpp"

namespace playclass {

// Per-frame feature layout (f01..f19). NaN marks a missing value.
enum FrameFeature : int {
  kArea = 0,
  kPerimeter,
  kCircularity,
  kSolidity,
  kEccentricity,
  kMajorAxis,
  kMinorAxis,
  kExtent,
  kOrientation,
  kSpeed,
  kAccel,
  kTurningAngle,
  kOrientationRate,
  kAreaRate,
  kMinPairDist,
  kMeanPairDist,
  kApproachSpeed,
  kNeighborsWithinR,
  kNnBboxIou,
};

inline constexpr std::array<std::string_view, kNumFrameFeatures> kFrameFeatureNames{
    "area",          "perimeter",     "circularity",    "solidity",         "eccentricity",
    "major_axis",    "minor_axis",    "extent",         "orientation",      "speed",
    "accel",         "turning_angle", "orientation_rate", "area_rate",      "min_pair_dist",
    "mean_pair_dist", "approach_speed", "neighbors_within_r", "nn_bbox_iou"};

using FrameFeatureRow = std::array<double, kNumFrameFeatures>;
using SpatialFeatures = std::array<double, 9>;
using TemporalFeatures = std::array<double, 5>;
using SocialFeatures = std::array<double, 5>;

struct FeatureConfig {
  double fps = 25.0;
  double neighbour_radius = 150.0;  // px, about one body length at 704x576
  int window_frames = kWindowFrames;
  int min_valid_frames = 13;  // 10% of a 125-frame window
  double contour_epsilon = 1.0;  // polygon simplification tolerance, px
};

// ---------------------------------------------------------------------------
// Geometry on the mask crop. Pixel (c, r) covers [c, c+1] x [r, r+1]; contour
// points are pixel centres.

struct GridPoint {
  int x = 0, y = 0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

namespace geometry {

// Clockwise on screen (y grows downwards), starting west.
inline constexpr std::array<GridPoint, 8> kRing{{{-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}}};

inline int ring_index(int dx, int dy) {
  for (int i = 0; i < 8; ++i)
    if (kRing[static_cast<std::size_t>(i)].x == dx && kRing[static_cast<std::size_t>(i)].y == dy) return i;
  return -1;
}

/// Outer boundary of the 8-connected component containing `start`, which must
/// be the top-most, left-most cell of that component. Moore-neighbour tracing
/// with Jacob's stopping rule.
inline std::vector<GridPoint> trace_outer_contour(const BinaryMask& m, GridPoint start) {
  auto fg = [&](int x, int y) { return m.at_local(y, x); };
  std::vector<GridPoint> contour{start};
  GridPoint cur = start;
  int back = 0;  // direction from cur to the last background cell examined
  const std::size_t limit = 4 * static_cast<std::size_t>(m.area()) + 16;
  for (std::size_t iter = 0; iter < limit; ++iter) {
    int found = -1;
    for (int i = 1; i <= 8; ++i) {
      const int d = (back + i) % 8;
      const auto o = kRing[static_cast<std::size_t>(d)];
      if (fg(cur.x + o.x, cur.y + o.y)) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated cell
    const auto o = kRing[static_cast<std::size_t>(found)];
    const GridPoint next{cur.x + o.x, cur.y + o.y};
    const auto bo = kRing[static_cast<std::size_t>((found + 7) % 8)];
    const GridPoint bg{cur.x + bo.x, cur.y + bo.y};
    if (cur == start && contour.size() > 1 && next == contour[1]) break;
    back = ring_index(bg.x - next.x, bg.y - next.y);
    cur = next;
    contour.push_back(cur);
  }
  if (contour.size() > 1 && contour.back() == start) contour.pop_back();
  return contour;
}

/// Outer contours of every 8-connected component, in raster order of their
/// first cell.
inline std::vector<std::vector<GridPoint>> outer_contours(const BinaryMask& m) {
  const int w = m.crop_width(), h = m.crop_height();
  std::vector<int> label(static_cast<std::size_t>(w) * h, 0);
  std::vector<std::vector<GridPoint>> out;
  std::vector<GridPoint> stack;
  int next_label = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m.at_local(y, x) || label[static_cast<std::size_t>(y) * w + x]) continue;
      ++next_label;
      stack.push_back({x, y});
      label[static_cast<std::size_t>(y) * w + x] = next_label;
      while (!stack.empty()) {
        const auto p = stack.back();
        stack.pop_back();
        for (const auto& o : kRing) {
          const int nx = p.x + o.x, ny = p.y + o.y;
          if (!m.at_local(ny, nx)) continue;
          auto& l = label[static_cast<std::size_t>(ny) * w + nx];
          if (!l) {
            l = next_label;
            stack.push_back({nx, ny});
          }
        }
      }
      out.push_back(trace_outer_contour(m, {x, y}));
    }
  return out;
}

inline double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0) return std::hypot(px - ax, py - ay);
  return std::abs(dy * (px - ax) - dx * (py - ay)) / std::sqrt(len2);
}

/// Length of the closed polygon after Douglas-Peucker simplification.
inline double simplified_closed_length(const std::vector<GridPoint>& c, double epsilon) {
  const std::size_t n = c.size();
  if (n < 2) return 0.0;
  auto dist = [&](std::size_t i, std::size_t j) {
    return std::hypot(static_cast<double>(c[i % n].x - c[j % n].x), static_cast<double>(c[i % n].y - c[j % n].y));
  };
  std::size_t far = 0;
  double best = -1;
  for (std::size_t i = 1; i < n; ++i)
    if (dist(0, i) > best) {
      best = dist(0, i);
      far = i;
    }
  std::vector<char> keep(n + 1, 0);
  keep[0] = keep[far] = keep[n] = 1;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, far}, {far, n}};
  while (!stack.empty()) {
    auto [a, b] = stack.back();
    stack.pop_back();
    if (b <= a + 1) continue;
    double dmax = -1;
    std::size_t idx = a;
    const auto& pa = c[a % n];
    const auto& pb = c[b % n];
    for (std::size_t i = a + 1; i < b; ++i) {
      const auto& p = c[i % n];
      const double d = point_segment_distance(p.x, p.y, pa.x, pa.y, pb.x, pb.y);
      if (d > dmax) {
        dmax = d;
        idx = i;
      }
    }
    if (dmax > epsilon) {
      keep[idx] = 1;
      stack.push_back({a, idx});
      stack.push_back({idx, b});
    }
  }
  double len = 0;
  std::size_t prev = 0;
  for (std::size_t i = 1; i <= n; ++i)
    if (keep[i]) {
      len += dist(prev, i);
      prev = i;
    }
  return len;
}

/// Twice the area of the convex hull (monotone chain, exact integers).
inline std::int64_t hull_area2(std::vector<GridPoint> pts) {
  std::sort(pts.begin(), pts.end(), [](auto a, auto b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return 0;
  auto cross = [](GridPoint o, GridPoint a, GridPoint b) {
    return static_cast<std::int64_t>(a.x - o.x) * (b.y - o.y) - static_cast<std::int64_t>(a.y - o.y) * (b.x - o.x);
  };
  std::vector<GridPoint> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  std::int64_t a2 = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& p = hull[i];
    const auto& q = hull[(i + 1) % hull.size()];
    a2 += static_cast<std::int64_t>(p.x) * q.y - static_cast<std::int64_t>(q.x) * p.y;
  }
  return a2 < 0 ? -a2 : a2;
}

/// Corner points of every contour cell, in corner-grid coordinates.
inline std::vector<GridPoint> contour_cell_corners(const std::vector<std::vector<GridPoint>>& contours) {
  std::vector<GridPoint> pts;
  for (const auto& c : contours)
    for (const auto& p : c) {
      pts.push_back({p.x, p.y});
      pts.push_back({p.x + 1, p.y});
      pts.push_back({p.x, p.y + 1});
      pts.push_back({p.x + 1, p.y + 1});
    }
  return pts;
}

}  // namespace geometry

/// area, perimeter, circularity, solidity, eccentricity, major_axis,
/// minor_axis, extent, orientation. All missing for an empty mask.
inline SpatialFeatures frame_spatial_features(const BinaryMask& m, const FeatureConfig& cfg = {}) {
  SpatialFeatures f;
  f.fill(kMissing);
  if (m.empty()) return f;
  const double area = static_cast<double>(m.area());

  const auto contours = geometry::outer_contours(m);
  // Contour polygons run through cell centres; offsetting a closed convex-ish
  // outline outward by half a cell adds pi to its length.
  double perimeter = 0;
  for (const auto& c : contours) perimeter += geometry::simplified_closed_length(c, cfg.contour_epsilon) + kPi;
  const std::int64_t hull2 = geometry::hull_area2(geometry::contour_cell_corners(contours));

  // Second moments of the union of unit cells (each cell adds 1/12 per axis).
  std::int64_t sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int r = 0; r < m.crop_height(); ++r)
    for (int c = 0; c < m.crop_width(); ++c)
      if (m.at_local(r, c)) {
        sx += c;
        sy += r;
        sxx += static_cast<std::int64_t>(c) * c;
        syy += static_cast<std::int64_t>(r) * r;
        sxy += static_cast<std::int64_t>(c) * r;
      }
  const auto a = static_cast<__int128>(m.area());
  const double a2 = area * area;
  const double cxx = static_cast<double>(a * sxx - static_cast<__int128>(sx) * sx) / a2 + 1.0 / 12.0;
  const double cyy = static_cast<double>(a * syy - static_cast<__int128>(sy) * sy) / a2 + 1.0 / 12.0;
  const double cxy = static_cast<double>(a * sxy - static_cast<__int128>(sx) * sy) / a2;
  const double half_tr = (cxx + cyy) / 2;
  const double disc = std::sqrt((cxx - cyy) * (cxx - cyy) / 4 + cxy * cxy);
  const double l1 = half_tr + disc;
  const double l2 = std::max(half_tr - disc, 0.0);

  f[kArea] = area;
  f[kPerimeter] = perimeter;
  f[kCircularity] = 4 * kPi * area / (perimeter * perimeter);
  f[kSolidity] = hull2 > 0 ? std::min(1.0, 2.0 * area / static_cast<double>(hull2)) : 1.0;
  f[kEccentricity] = l1 > 0 ? std::sqrt(std::max(0.0, 1.0 - l2 / l1)) : 0.0;
  f[kMajorAxis] = 4 * std::sqrt(l1);
  f[kMinorAxis] = 4 * std::sqrt(l2);
  f[kExtent] = area / (static_cast<double>(m.crop_width()) * m.crop_height());
  f[kOrientation] = 0.5 * std::atan2(2 * cxy, cxx - cyy);
  return f;
}

// ---------------------------------------------------------------------------
// Temporal and social features

/// Exact rational position (sx / den, sy / den) in frame pixels. Differences
/// are formed in integers and rounded once, so uniform translations leave
/// every derived quantity bitwise unchanged.
struct Position {
  std::int64_t sx = 0, sy = 0, den = 0;  // den == 0: absent

  bool valid() const { return den > 0; }

  static Position of_mask(const BinaryMask& m) {
    Position p;
    if (m.empty()) return p;
    for (int r = 0; r < m.crop_height(); ++r)
      for (int c = 0; c < m.crop_width(); ++c)
        if (m.at_local(r, c)) {
          p.sx += m.crop_x() + c;
          p.sy += m.crop_y() + r;
        }
    p.den = m.area();
    return p;
  }

  /// Box centre, rounded to half pixels.
  static Position of_box(const Box& b) {
    if (!(b.w > 0 && b.h > 0)) return {};
    return {std::llround(2 * b.x + b.w), std::llround(2 * b.y + b.h), 2};
  }

  static Position of_point(std::int64_t x, std::int64_t y) { return {x, y, 1}; }

  double x() const { return static_cast<double>(sx) / static_cast<double>(den); }
  double y() const { return static_cast<double>(sy) / static_cast<double>(den); }
};

struct Vec2 {
  double x = 0, y = 0;
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 displacement(const Position& from, const Position& to) {
  const __int128 nx = static_cast<__int128>(to.sx) * from.den - static_cast<__int128>(from.sx) * to.den;
  const __int128 ny = static_cast<__int128>(to.sy) * from.den - static_cast<__int128>(from.sy) * to.den;
  const double d = static_cast<double>(static_cast<__int128>(from.den) * to.den);
  return {static_cast<double>(nx) / d, static_cast<double>(ny) / d};
}

inline double distance(const Position& a, const Position& b) { return displacement(a, b).norm(); }

/// One tracked bird at one frame, as seen by the temporal features.
struct MotionSample {
  Position pos;
  double orientation = kMissing;
  double area = kMissing;
  bool valid() const { return pos.valid(); }
};

inline double angle_between(Vec2 a, Vec2 b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0.0;  // stationary convention
  const double cross = a.x * b.y - a.y * b.x;
  const double dot = a.x * b.x + a.y * b.y;
  return std::abs(std::atan2(cross, dot));
}

/// Minimal difference between two axis orientations (period pi), in [0, pi/2].
inline double axis_angle_difference(double a, double b) {
  double d = std::fmod(std::abs(a - b), kPi);
  return d > kPi / 2 ? kPi - d : d;
}

/// speed, accel, turning_angle, orientation_rate, area_rate at index t of a
/// per-frame series (index = frame offset). Missing where history is absent.
inline TemporalFeatures frame_temporal_features(std::span<const MotionSample> track, std::size_t t, double fps) {
  TemporalFeatures f;
  f.fill(kMissing);
  if (t >= track.size() || !track[t].valid()) return f;
  if (t < 1 || !track[t - 1].valid()) return f;
  const auto& c0 = track[t];
  const auto& c1 = track[t - 1];
  const Vec2 v = displacement(c1.pos, c0.pos);
  f[0] = v.norm() * fps;
  if (!is_missing(c0.orientation) && !is_missing(c1.orientation))
    f[3] = axis_angle_difference(c0.orientation, c1.orientation) * fps;
  if (!is_missing(c0.area) && !is_missing(c1.area)) f[4] = (c0.area - c1.area) * fps;
  if (t >= 2 && track[t - 2].valid()) {
    const Vec2 u = displacement(track[t - 2].pos, c1.pos);
    f[1] = std::hypot(v.x - u.x, v.y - u.y) * fps;
    f[2] = angle_between(u, v);
  }
  return f;
}

/// One bird at one frame, as seen by the social features.
struct BirdAtFrame {
  int track_id = 0;
  Position pos;
  Box bbox;
};

namespace detail {
struct Nearest {
  double min = kMissing, mean = kMissing;
  int count_within = 0;
  const BirdAtFrame* nearest = nullptr;
};

inline Nearest nearest_others(std::span<const BirdAtFrame> birds, const BirdAtFrame& focal, double radius) {
  Nearest n;
  double sum = 0;
  int others = 0;
  for (const auto& b : birds) {
    if (b.track_id == focal.track_id || !b.pos.valid()) continue;
    const double d = distance(focal.pos, b.pos);
    sum += d;
    ++others;
    if (d <= radius) ++n.count_within;
    if (!n.nearest || d < n.min || (d == n.min && b.track_id < n.nearest->track_id)) {
      n.min = d;
      n.nearest = &b;
    }
  }
  if (others) n.mean = sum / others;
  return n;
}

inline const BirdAtFrame* find_bird(std::span<const BirdAtFrame> birds, int id) {
  for (const auto& b : birds)
    if (b.track_id == id && b.pos.valid()) return &b;
  return nullptr;
}
}  // namespace detail

/// min_pair_dist, mean_pair_dist, approach_speed, neighbors_within_r,
/// nn_bbox_iou for the focal bird. `previous` holds the birds at frame t-1
/// (may be empty).
inline SocialFeatures frame_social_features(std::span<const BirdAtFrame> current, std::span<const BirdAtFrame> previous,
                                            int focal_id, double fps, double radius) {
  SocialFeatures f;
  f.fill(kMissing);
  const auto* focal = detail::find_bird(current, focal_id);
  if (!focal) return f;
  const auto now = detail::nearest_others(current, *focal, radius);
  if (!now.nearest) return f;
  f[0] = now.min;
  f[1] = now.mean;
  if (const auto* prev_focal = detail::find_bird(previous, focal_id)) {
    const auto before = detail::nearest_others(previous, *prev_focal, radius);
    if (before.nearest) f[2] = -(now.min - before.min) * fps;
  }
  f[3] = static_cast<double>(now.count_within);
  f[4] = box_iou(focal->bbox, now.nearest->bbox);
  return f;
}

// ---------------------------------------------------------------------------
// Window summary

namespace detail {
inline void summarize_series(std::vector<double>& v, double* out) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  const double lo = v.front(), hi = v.back();
  if (lo == hi) {
    out[0] = lo;
    out[1] = out[2] = out[3] = 0.0;
  } else {
    double s = 0;
    for (double x : v) s += x;
    const double m = s / n;
    double m2 = 0, m3 = 0, m4 = 0;
    for (double x : v) {
      const double d = x - m, d2 = d * d;
      m2 += d2;
      m3 += d2 * d;
      m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    out[0] = m;
    out[1] = std::sqrt(m2);
    out[2] = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
    out[3] = m2 > 0 ? m4 / (m2 * m2) - 3.0 : 0.0;
  }
  out[4] = lo;
  out[5] = quantile_sorted(v, 0.25);
  out[6] = quantile_sorted(v, 0.50);
  out[7] = quantile_sorted(v, 0.75);
  out[8] = hi;
}
}  // namespace detail

/// Summarizes a window of per-frame rows into 19 x 9 statistics (mean, sd,
/// skewness, excess kurtosis, min, p25, median, p75, max) over valid frames.
/// Features with fewer than `min_valid_frames` valid frames are left missing
/// and the window is flagged; FeatureImputer fills them later.
inline WindowFeatureVector summarize_window(const WindowKey& key, std::span<const FrameFeatureRow> rows,
                                            int min_valid_frames = 13) {
  WindowFeatureVector out;
  out.key = key;
  std::vector<double> valid;
  valid.reserve(rows.size());
  for (int f = 0; f < kNumFrameFeatures; ++f) {
    valid.clear();
    for (const auto& r : rows)
      if (!is_missing(r[static_cast<std::size_t>(f)])) valid.push_back(r[static_cast<std::size_t>(f)]);
    double* dst = out.values.data() + f * kNumStatistics;
    if (static_cast<int>(valid.size()) < min_valid_frames || valid.empty()) {
      std::fill(dst, dst + kNumStatistics, kMissing);
      out.low_coverage = true;
      continue;
    }
    detail::summarize_series(valid, dst);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-video extraction

/// Per-frame feature table for every track of one video.
class VideoFeatureTable {
 public:
  /// `tracks` must all belong to the same video.
  VideoFeatureTable(const std::vector<TrackedMask>& tracks, const FeatureConfig& cfg) : cfg_(cfg) {
    int max_frame = -1;
    for (const auto& t : tracks) max_frame = std::max(max_frame, t.frame);
    frames_ = static_cast<std::size_t>(max_frame + 1);
    by_frame_.resize(frames_);
    std::map<int, std::vector<const TrackedMask*>> per_track;
    for (const auto& t : tracks) per_track[t.track_id].push_back(&t);

    for (auto& [id, recs] : per_track) {
      auto& st = tracks_[id];
      st.motion.assign(frames_, {});
      st.spatial.assign(frames_, missing_spatial());
      for (const auto* r : recs) {
        const auto f = static_cast<std::size_t>(r->frame);
        MotionSample ms;
        BirdAtFrame bird{id, {}, r->bbox};
        if (r->mask) {
          if (!r->mask->empty()) {
            st.spatial[f] = frame_spatial_features(*r->mask, cfg_);
            ms.pos = Position::of_mask(*r->mask);
            ms.area = st.spatial[f][kArea];
            ms.orientation = st.spatial[f][kOrientation];
          }
        } else {
          ms.pos = Position::of_box(r->bbox);
        }
        bird.pos = ms.pos;
        st.motion[f] = ms;
        if (ms.valid()) by_frame_[f].push_back(bird);
      }
    }
  }

  std::size_t frame_count() const { return frames_; }
  bool has_track(int id) const { return tracks_.count(id) > 0; }

  FrameFeatureRow row(int track_id, int frame) const {
    FrameFeatureRow row;
    row.fill(kMissing);
    auto it = tracks_.find(track_id);
    if (it == tracks_.end() || frame < 0 || static_cast<std::size_t>(frame) >= frames_) return row;
    const auto f = static_cast<std::size_t>(frame);
    const auto& st = it->second;
    std::copy(st.spatial[f].begin(), st.spatial[f].end(), row.begin());
    const auto tmp = frame_temporal_features(st.motion, f, cfg_.fps);
    std::copy(tmp.begin(), tmp.end(), row.begin() + kSpeed);
    std::span<const BirdAtFrame> prev;
    if (f > 0) prev = by_frame_[f - 1];
    const auto soc = frame_social_features(by_frame_[f], prev, track_id, cfg_.fps, cfg_.neighbour_radius);
    std::copy(soc.begin(), soc.end(), row.begin() + kMinPairDist);
    return row;
  }

  std::vector<FrameFeatureRow> series(int track_id, int start_frame, int length) const {
    std::vector<FrameFeatureRow> rows;
    rows.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) rows.push_back(row(track_id, start_frame + i));
    return rows;
  }

 private:
  static SpatialFeatures missing_spatial() {
    SpatialFeatures s;
    s.fill(kMissing);
    return s;
  }

  struct TrackState {
    std::vector<MotionSample> motion;
    std::vector<SpatialFeatures> spatial;
  };

  FeatureConfig cfg_;
  std::size_t frames_ = 0;
  std::map<int, TrackState> tracks_;
  std::vector<std::vector<BirdAtFrame>> by_frame_;
};

/// One feature vector per label window (track_id == bird_id), in label order.
/// `fps_of` supplies per-video frame rates (falls back to cfg.fps).
inline std::vector<WindowFeatureVector> extract_window_features(const std::vector<TrackedMask>& tracks,
                                                                const std::vector<LabelWindow>& labels,
                                                                const FeatureConfig& cfg = {},
                                                                const DatasetManifest* manifest = nullptr) {
  std::map<std::string, std::vector<TrackedMask>> by_video;
  for (const auto& t : tracks) by_video[t.video_id].push_back(t);
  std::map<std::string, VideoFeatureTable> tables;
  std::vector<WindowFeatureVector> out;
  out.reserve(labels.size());
  for (const auto& w : labels) {
    auto it = tables.find(w.video_id);
    if (it == tables.end()) {
      FeatureConfig vc = cfg;
      if (manifest)
        if (const auto* v = manifest->video(w.video_id)) vc.fps = v->fps;
      it = tables.emplace(w.video_id, VideoFeatureTable(by_video[w.video_id], vc)).first;
    }
    const auto rows = it->second.series(w.bird_id, w.start_frame, w.end_frame - w.start_frame);
    out.push_back(summarize_window(w.key(), rows, cfg.min_valid_frames));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Imputation and standardization (fitted on training windows only)

class FeatureImputer {
 public:
  void fit(std::span<const WindowFeatureVector> train) {
    medians_.assign(kFeatureDim, 0.0);
    std::vector<double> col;
    for (int j = 0; j < kFeatureDim; ++j) {
      col.clear();
      for (const auto& r : train)
        if (!is_missing(r.values[static_cast<std::size_t>(j)])) col.push_back(r.values[static_cast<std::size_t>(j)]);
      if (col.empty()) continue;  // no evidence in training: impute 0
      std::sort(col.begin(), col.end());
      medians_[static_cast<std::size_t>(j)] = quantile_sorted(col, 0.5);
    }
    fitted_ = true;
  }

  bool fitted() const { return fitted_; }
  const std::vector<double>& medians() const { return medians_; }

  WindowFeatureVector apply(WindowFeatureVector v) const {
    if (!fitted_) throw UsageError("FeatureImputer applied before fit");
    for (int j = 0; j < kFeatureDim; ++j)
      if (is_missing(v.values[static_cast<std::size_t>(j)])) v.values[static_cast<std::size_t>(j)] = medians_[static_cast<std::size_t>(j)];
    return v;
  }

 private:
  std::vector<double> medians_;
  bool fitted_ = false;
};

/// Per-dimension z-scoring with population statistics. Zero-variance
/// dimensions pass through unchanged.
class Standardizer {
 public:
  void fit(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw UsageError("Standardizer::fit needs at least one row");
    const std::size_t d = rows.front().size();
    mean_.assign(d, 0.0);
    sd_.assign(d, 0.0);
    for (const auto& r : rows) {
      if (r.size() != d) throw UsageError("Standardizer::fit: ragged rows");
      for (std::size_t j = 0; j < d; ++j) mean_[j] += r[j];
    }
    const double n = static_cast<double>(rows.size());
    for (auto& m : mean_) m /= n;
    for (const auto& r : rows)
      for (std::size_t j = 0; j < d; ++j) sd_[j] += (r[j] - mean_[j]) * (r[j] - mean_[j]);
    for (auto& s : sd_) s = std::sqrt(s / n);
    fitted_ = true;
  }

  bool fitted() const { return fitted_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& sd() const { return sd_; }

  std::vector<double> apply(std::vector<double> x) const {
    if (!fitted_) throw UsageError("Standardizer applied before fit");
    if (x.size() != mean_.size()) throw UsageError("Standardizer: dimension mismatch");
    for (std::size_t j = 0; j < x.size(); ++j)
      if (sd_[j] > 0) x[j] = (x[j] - mean_[j]) / sd_[j];
    return x;
  }

  std::vector<std::vector<double>> apply_all(const std::vector<std::vector<double>>& rows) const {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(apply(r));
    return out;
  }

 private:
  std::vector<double> mean_, sd_;
  bool fitted_ = false;
};

}  // namespace playclass
