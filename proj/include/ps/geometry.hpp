#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ps {

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
};

/// Rigid transform taking reference-camera coordinates to the paired
/// camera's coordinates: X_paired = R * X_ref + t.
struct CameraPose {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  std::array<double, 3> translation{0, 0, 0};

  static CameraPose identity() { return {}; }
  void validate() const;  // R orthonormal, det +1, both within 1e-9
};

CameraPose inverse(const CameraPose& p);
/// Composition: (b after a), mapping x -> b(a(x)).
CameraPose compose(const CameraPose& b, const CameraPose& a);
std::array<double, 3> transform_point(const CameraPose& p,
                                      const std::array<double, 3>& x);

enum class SamplingMode { InverseDepth, UniformDepth };

struct PlaneHypothesisSet {
  std::vector<double> depths;  // meter depths, one per label
  double d_min = 0;
  SamplingMode mode = SamplingMode::InverseDepth;

  int count() const { return static_cast<int>(depths.size()); }
};

/// Inverse-depth mode places label l (1-based) at L*d_min/l, so hypotheses
/// are uniform in 1/d. Uniform mode spaces them evenly on [d_min, d_max].
PlaneHypothesisSet sample_planes(int labels, double d_min, SamplingMode mode,
                                 double d_max = 10.0);

struct PixelProjection {
  double x = 0, y = 0;   // continuous pixel coords in the paired view
  double depth = 0;      // z in the paired camera, pre-dehomogenization
  bool positive_depth = false;
};

/// Back-projects pixel (u,v) to depth d, applies the pose, reprojects.
/// depth <= 1e-9 in the paired camera flags the sample invalid instead of
/// throwing; degenerate poses are data.
PixelProjection project_pixel(double u, double v, double d,
                              const CameraIntrinsics& K, const CameraPose& pose);

struct WarpGrid {
  int planes = 0, height = 0, width = 0;
  std::vector<double> coords;      // planes*height*width*2, (x,y) pairs
  std::vector<uint8_t> in_bounds;  // planes*height*width

  int64_t cells() const {
    return static_cast<int64_t>(planes) * height * width;
  }
};

/// Dense per-plane source coordinates of every reference pixel in the paired
/// view. Intrinsics must already be at the working resolution.
WarpGrid compute_warp_grid(const CameraIntrinsics& K, const CameraPose& pose,
                           const PlaneHypothesisSet& planes, int width,
                           int height);

/// Rescale intrinsics for a resized image; the +0.5 shift keeps pixel
/// centers aligned across scales.
CameraIntrinsics scale_intrinsics(const CameraIntrinsics& K, double sx,
                                  double sy);

struct Camera {
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

// Plain-text camera blocks: `K fx fy cx cy width height`, then row-major
// `R r11 .. r33`, then `t tx ty tz`.
std::vector<Camera> load_cameras(const std::string& path);
std::vector<Camera> parse_cameras(std::istream& is);
void save_cameras(const std::string& path, const std::vector<Camera>& cams);

}  // namespace ps
