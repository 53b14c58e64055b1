#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ps/depth_map.hpp"
#include "ps/geometry.hpp"
#include "ps/image_io.hpp"

namespace ps {

enum class SceneLayout { TexturedPlanes, BoxRoom, SphereField, SinglePlane };

SceneLayout layout_from_name(const std::string& name);
std::string layout_name(SceneLayout layout);

struct SceneSpec {
  SceneLayout layout = SceneLayout::TexturedPlanes;
  int width = 32, height = 32;
  int paired_views = 2;  // N views besides the reference
  int texture_octaves = 2;
  double baseline_min = 0.05, baseline_max = 0.15;  // meters
  double rotation_jitter = 0.02;                    // radians
  // Depth budget: every reference depth lands in [d_min, labels*d_min].
  double d_min = 0.5;
  int labels = 8;
  // World-space radius of a textureless patch centered on a visible surface
  // point; 0 disables it.
  double textureless_radius = 0.0;
  double noise_sigma = 0.0;  // additive image noise, per view
  // SinglePlane controls: one unbounded plane, tilted about the vertical
  // axis. Not randomized.
  double plane_depth = 2.0;
  double plane_tilt = 0.0;  // radians
};

struct SyntheticScene {
  int width = 0, height = 0;
  std::vector<Image> images;      // [0] is the reference view
  DepthMap depth_gt;              // reference view, exact
  CameraIntrinsics intrinsics;    // shared by all views
  std::vector<CameraPose> poses;  // reference -> view k; poses[0] identity
  uint64_t seed = 0;

  int paired_count() const { return static_cast<int>(images.size()) - 1; }
};

/// Ray-casts the procedural layout for every view. Deterministic per
/// (spec, seed). A camera placed inside geometry or a depth falling outside
/// the budget triggers regeneration with the next sub-seed, bounded retries.
SyntheticScene generate_scene(const SceneSpec& spec, uint64_t seed);

// Scene directory layout: view_<k>.pgm, depth.pfm, cameras.txt.
void save_scene(const std::string& dir, const SyntheticScene& scene);
SyntheticScene load_scene(const std::string& dir);

}  // namespace ps
