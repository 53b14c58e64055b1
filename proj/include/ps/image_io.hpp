#pragma once

#include <string>
#include <vector>

#include "ps/depth_map.hpp"

namespace ps {

/// Grayscale image with intensities in [0,1], row-major, row 0 at the top.
struct Image {
  int width = 0, height = 0;
  std::vector<double> pixels;

  double at(int x, int y) const {
    return pixels[static_cast<size_t>(y) * width + x];
  }
};

// 8-bit binary PGM (P5).
void save_pgm(const std::string& path, const Image& img);
Image load_pgm(const std::string& path);

// Grayscale PFM, little-endian (scale -1.0), invalid pixels stored as 0.
// Big-endian files are out of scope and rejected.
void save_pfm(const std::string& path, const DepthMap& map);
DepthMap load_pfm(const std::string& path);

}  // namespace ps
