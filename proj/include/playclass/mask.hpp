#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "playclass/error.hpp"

namespace playclass {

/// Axis-aligned box in pixels. For mask-derived boxes all fields are integral
/// and (x, y) is the top-left foreground cell.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return std::max(0.0, w) * std::max(0.0, h); }
  double center_x() const { return x + w / 2; }
  double center_y() const { return y + h / 2; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Binary raster of a full frame (H rows, W columns), stored as a crop that is
/// always the tight bounding box of the foreground. An empty mask has a 0x0 crop.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int frame_height, int frame_width) : height_(frame_height), width_(frame_width) {
    if (frame_height < 0 || frame_width < 0) throw ValidationError("negative mask size");
  }

  /// Full-frame row-major raster (non-zero = foreground).
  static BinaryMask from_dense(int height, int width, std::span<const std::uint8_t> cells) {
    if (cells.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
      throw ValidationError("dense raster size does not match H*W");
    return from_crop(height, width, 0, 0, width, height, cells);
  }

  /// Row-major crop of size crop_h x crop_w placed at (x0, y0) in the frame.
  static BinaryMask from_crop(int height, int width, int x0, int y0, int crop_w, int crop_h,
                              std::span<const std::uint8_t> cells) {
    BinaryMask m(height, width);
    if (cells.size() != static_cast<std::size_t>(crop_w) * static_cast<std::size_t>(crop_h))
      throw ValidationError("crop raster size does not match crop_w*crop_h");
    int min_x = crop_w, max_x = -1, min_y = crop_h, max_y = -1;
    for (int r = 0; r < crop_h; ++r)
      for (int c = 0; c < crop_w; ++c)
        if (cells[static_cast<std::size_t>(r) * crop_w + c]) {
          const int fx = x0 + c, fy = y0 + r;
          if (fx < 0 || fy < 0 || fx >= width || fy >= height)
            throw ValidationError("foreground cell outside the frame");
          min_x = std::min(min_x, c);
          max_x = std::max(max_x, c);
          min_y = std::min(min_y, r);
          max_y = std::max(max_y, r);
        }
    if (max_x < 0) return m;
    m.x0_ = x0 + min_x;
    m.y0_ = y0 + min_y;
    m.cw_ = max_x - min_x + 1;
    m.ch_ = max_y - min_y + 1;
    m.cells_.assign(static_cast<std::size_t>(m.cw_) * m.ch_, 0);
    for (int r = 0; r < m.ch_; ++r)
      for (int c = 0; c < m.cw_; ++c)
        if (cells[static_cast<std::size_t>(r + min_y) * crop_w + (c + min_x)]) {
          m.cells_[static_cast<std::size_t>(r) * m.cw_ + c] = 1;
          ++m.area_;
        }
    return m;
  }

  /// Decodes COCO-style uncompressed counts: column-major, alternating runs
  /// starting with a background run.
  static BinaryMask from_rle(int height, int width, std::span<const std::uint64_t> counts) {
    BinaryMask m(height, width);
    const std::uint64_t total = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
    std::uint64_t sum = 0;
    for (auto c : counts) sum += c;
    if (sum != total)
      throw ValidationError("RLE covers " + std::to_string(sum) + " cells, expected H*W = " +
                            std::to_string(total));
    if (total == 0) return m;
    const auto h = static_cast<std::uint64_t>(height);
    // Pass 1: bounds.
    std::uint64_t min_x = width, max_x = 0, min_y = height, max_y = 0;
    bool any = false;
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const std::uint64_t len = counts[i];
      if (i % 2 == 1 && len > 0) {
        any = true;
        const std::uint64_t first = pos, last = pos + len - 1;
        const std::uint64_t cx0 = first / h, cx1 = last / h;
        min_x = std::min(min_x, cx0);
        max_x = std::max(max_x, cx1);
        if (cx0 == cx1) {
          min_y = std::min(min_y, first % h);
          max_y = std::max(max_y, last % h);
        } else {
          // Spans a column break: touches row H-1 of the first column and row 0 of the last.
          min_y = 0;
          max_y = h - 1;
        }
      }
      pos += len;
    }
    if (!any) return m;
    m.x0_ = static_cast<int>(min_x);
    m.y0_ = static_cast<int>(min_y);
    m.cw_ = static_cast<int>(max_x - min_x + 1);
    m.ch_ = static_cast<int>(max_y - min_y + 1);
    m.cells_.assign(static_cast<std::size_t>(m.cw_) * m.ch_, 0);
    // Pass 2: fill, one column segment at a time.
    pos = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      std::uint64_t len = counts[i];
      if (i % 2 == 1) {
        std::uint64_t p = pos;
        while (len > 0) {
          const std::uint64_t cx = p / h, cy = p % h;
          const std::uint64_t seg = std::min(len, h - cy);
          const int c = static_cast<int>(cx - min_x);
          for (std::uint64_t y = cy; y < cy + seg; ++y)
            m.cells_[static_cast<std::size_t>(y - min_y) * m.cw_ + c] = 1;
          m.area_ += static_cast<std::int64_t>(seg);
          p += seg;
          len -= seg;
        }
      }
      pos += counts[i];
    }
    return m;
  }

  std::vector<std::uint64_t> rle_counts() const {
    const auto h = static_cast<std::uint64_t>(height_);
    const std::uint64_t total = h * static_cast<std::uint64_t>(width_);
    // Foreground intervals [start, end) in column-major order, merged across column breaks.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> runs;
    for (int c = 0; c < cw_; ++c) {
      const std::uint64_t base = static_cast<std::uint64_t>(x0_ + c) * h;
      int r = 0;
      while (r < ch_) {
        if (!at_local(r, c)) {
          ++r;
          continue;
        }
        int e = r;
        while (e < ch_ && at_local(e, c)) ++e;
        const std::uint64_t s = base + static_cast<std::uint64_t>(y0_ + r);
        const std::uint64_t t = base + static_cast<std::uint64_t>(y0_ + e);
        if (!runs.empty() && runs.back().second == s)
          runs.back().second = t;
        else
          runs.emplace_back(s, t);
        r = e;
      }
    }
    std::vector<std::uint64_t> counts;
    counts.reserve(2 * runs.size() + 1);
    std::uint64_t cursor = 0;
    for (auto [s, t] : runs) {
      counts.push_back(s - cursor);
      counts.push_back(t - s);
      cursor = t;
    }
    counts.push_back(total - cursor);
    return counts;
  }

  int frame_height() const { return height_; }
  int frame_width() const { return width_; }
  bool empty() const { return area_ == 0; }
  std::int64_t area() const { return area_; }

  int crop_x() const { return x0_; }
  int crop_y() const { return y0_; }
  int crop_width() const { return cw_; }
  int crop_height() const { return ch_; }

  bool at_local(int r, int c) const {
    if (r < 0 || c < 0 || r >= ch_ || c >= cw_) return false;
    return cells_[static_cast<std::size_t>(r) * cw_ + c] != 0;
  }
  bool at(int y, int x) const { return at_local(y - y0_, x - x0_); }

  /// Tight bounding box; all zeros for an empty mask.
  Box bounds() const {
    if (empty()) return {};
    return {static_cast<double>(x0_), static_cast<double>(y0_), static_cast<double>(cw_),
            static_cast<double>(ch_)};
  }

  const std::vector<std::uint8_t>& crop_cells() const { return cells_; }

  BinaryMask translated(int dx, int dy) const {
    BinaryMask m = *this;
    if (!empty()) {
      m.x0_ += dx;
      m.y0_ += dy;
      if (m.x0_ < 0 || m.y0_ < 0 || m.x0_ + m.cw_ > width_ || m.y0_ + m.ch_ > height_)
        throw ValidationError("translation moves the mask outside the frame");
    }
    return m;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0, width_ = 0;
  int x0_ = 0, y0_ = 0, cw_ = 0, ch_ = 0;
  std::int64_t area_ = 0;
  std::vector<std::uint8_t> cells_;
};

inline std::int64_t mask_intersection(const BinaryMask& a, const BinaryMask& b) {
  if (a.empty() || b.empty()) return 0;
  const int x_lo = std::max(a.crop_x(), b.crop_x());
  const int x_hi = std::min(a.crop_x() + a.crop_width(), b.crop_x() + b.crop_width());
  const int y_lo = std::max(a.crop_y(), b.crop_y());
  const int y_hi = std::min(a.crop_y() + a.crop_height(), b.crop_y() + b.crop_height());
  std::int64_t inter = 0;
  for (int y = y_lo; y < y_hi; ++y)
    for (int x = x_lo; x < x_hi; ++x)
      if (a.at(y, x) && b.at(y, x)) ++inter;
  return inter;
}

inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  const std::int64_t inter = mask_intersection(a, b);
  const std::int64_t uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace playclass
