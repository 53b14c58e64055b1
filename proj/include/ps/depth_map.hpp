#pragma once

#include <cstdint>
#include <vector>

namespace ps {

/// Per-pixel metric depth with a validity mask, row-major.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> depth;
  std::vector<uint8_t> valid;

  static DepthMap constant(int width, int height, double value) {
    DepthMap m;
    m.width = width;
    m.height = height;
    m.depth.assign(static_cast<size_t>(width) * height, value);
    m.valid.assign(static_cast<size_t>(width) * height, 1);
    return m;
  }

  int64_t pixels() const { return static_cast<int64_t>(width) * height; }
  double at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
  bool valid_at(int x, int y) const {
    return valid[static_cast<size_t>(y) * width + x] != 0;
  }
};

}  // namespace ps
