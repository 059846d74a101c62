#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "playclass/mask.hpp"
#include "playclass/numeric.hpp"

namespace playclass::testing {

/// Fresh scratch directory under the system temp dir, private to this
/// process so tests can run in parallel.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("playclass_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Random 4-connected blob grown from a seed cell inside a crop of the frame.
inline BinaryMask random_blob(Rng& rng, int height, int width, int max_cells) {
  const int cx = rng.uniform_int(width / 4, 3 * width / 4);
  const int cy = rng.uniform_int(height / 4, 3 * height / 4);
  std::vector<std::uint8_t> dense(static_cast<std::size_t>(height) * width, 0);
  std::vector<std::pair<int, int>> cells{{cx, cy}};
  dense[static_cast<std::size_t>(cy) * width + cx] = 1;
  const int target = rng.uniform_int(1, max_cells);
  while (static_cast<int>(cells.size()) < target) {
    const auto [x, y] = cells[rng.below(cells.size())];
    static constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    const int k = static_cast<int>(rng.below(4));
    const int nx = x + dx[k], ny = y + dy[k];
    if (nx < 1 || ny < 1 || nx >= width - 1 || ny >= height - 1) continue;
    auto& c = dense[static_cast<std::size_t>(ny) * width + nx];
    if (!c) {
      c = 1;
      cells.emplace_back(nx, ny);
    }
  }
  return BinaryMask::from_dense(height, width, dense);
}

/// Rotates a mask by 90 degrees (x, y) -> (H - 1 - y, x) into a W x H frame.
inline BinaryMask rotate90(const BinaryMask& m) {
  const int h = m.frame_height(), w = m.frame_width();
  std::vector<std::uint8_t> dense(static_cast<std::size_t>(w) * h, 0);  // new frame: height w, width h
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (m.at(y, x)) dense[static_cast<std::size_t>(x) * h + (h - 1 - y)] = 1;
  return BinaryMask::from_dense(w, h, dense);
}

}  // namespace playclass::testing
