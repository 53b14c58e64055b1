#include "ps/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

namespace ps {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalize(const Vec3& a) {
  double n = std::sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

uint64_t splitmix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double rand_uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// ---- procedural 3D value noise --------------------------------------------

double lattice_value(uint64_t seed, int octave, int64_t ix, int64_t iy,
                     int64_t iz) {
  uint64_t h = splitmix(seed ^ splitmix(static_cast<uint64_t>(octave) + 1));
  h = splitmix(h ^ static_cast<uint64_t>(ix) * 0x8DA6B343ull);
  h = splitmix(h ^ static_cast<uint64_t>(iy) * 0xD8163841ull);
  h = splitmix(h ^ static_cast<uint64_t>(iz) * 0xCB1AB31Full);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smootherstep(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

double value_noise(uint64_t seed, int octave, const Vec3& p) {
  int64_t ix = static_cast<int64_t>(std::floor(p[0]));
  int64_t iy = static_cast<int64_t>(std::floor(p[1]));
  int64_t iz = static_cast<int64_t>(std::floor(p[2]));
  double fx = smootherstep(p[0] - ix);
  double fy = smootherstep(p[1] - iy);
  double fz = smootherstep(p[2] - iz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    double wz = dz ? fz : 1 - fz;
    for (int dy = 0; dy < 2; ++dy) {
      double wy = dy ? fy : 1 - fy;
      for (int dx = 0; dx < 2; ++dx) {
        double wx = dx ? fx : 1 - fx;
        acc += wx * wy * wz *
               lattice_value(seed, octave, ix + dx, iy + dy, iz + dz);
      }
    }
  }
  return acc;
}

struct TexturelessPatch {
  bool enabled = false;
  Vec3 center{0, 0, 0};
  double radius = 0;
};

// View-independent Lambertian shade at a world point. A smooth multi-octave
// value noise keeps bilinear resampling error well under the photometric
// tolerances; the optional patch blends to a constant over a thin shell.
double shade(uint64_t seed, int octaves, const TexturelessPatch& patch,
             const Vec3& p) {
  double base_freq = 1.5;
  double amp = 1.0, total = 0.0, norm = 0.0;
  for (int o = 0; o < octaves; ++o) {
    double f = base_freq * std::pow(2.0, o);
    total += amp * value_noise(seed, o, f * p);
    norm += amp;
    amp *= 0.5;
  }
  double v = 0.15 + 0.7 * (total / norm);
  if (patch.enabled) {
    double d = std::sqrt(dot(p - patch.center, p - patch.center));
    double t = (d - patch.radius) / 0.1;  // blend shell 0.1 m thick
    t = std::clamp(t, 0.0, 1.0);
    v = 0.5 + smootherstep(t) * (v - 0.5);
  }
  return v;
}

// ---- primitives ------------------------------------------------------------

// Finite rectangle: center, orthonormal in-plane axes, half extents.
struct Card {
  Vec3 center, e1, e2;
  double half1 = 0, half2 = 0;
  Vec3 normal() const { return cross(e1, e2); }
};

struct Sphere {
  Vec3 center;
  double radius = 0;
};

struct Box {  // axis-aligned, viewed from inside
  Vec3 lo, hi;
};

struct World {
  std::vector<Card> cards;
  std::vector<Sphere> spheres;
  bool has_box = false;
  Box box;
};

constexpr double kRayEps = 1e-6;
constexpr double kNoHit = -1.0;

double intersect_card(const Card& c, const Vec3& o, const Vec3& w) {
  Vec3 n = c.normal();
  double denom = dot(n, w);
  if (std::fabs(denom) < 1e-12) return kNoHit;
  double s = dot(n, c.center - o) / denom;
  if (s <= kRayEps) return kNoHit;
  Vec3 hit = o + s * w - c.center;
  if (std::fabs(dot(hit, c.e1)) > c.half1) return kNoHit;
  if (std::fabs(dot(hit, c.e2)) > c.half2) return kNoHit;
  return s;
}

double intersect_sphere(const Sphere& sp, const Vec3& o, const Vec3& w) {
  Vec3 oc = o - sp.center;
  double a = dot(w, w);
  double b = 2.0 * dot(oc, w);
  double cterm = dot(oc, oc) - sp.radius * sp.radius;
  double disc = b * b - 4 * a * cterm;
  if (disc < 0) return kNoHit;
  double sq = std::sqrt(disc);
  double s0 = (-b - sq) / (2 * a);
  if (s0 > kRayEps) return s0;
  double s1 = (-b + sq) / (2 * a);
  if (s1 > kRayEps) return s1;
  return kNoHit;
}

// Exit point of a ray starting inside the box.
double intersect_box_inside(const Box& b, const Vec3& o, const Vec3& w) {
  double best = 1e30;
  for (int axis = 0; axis < 3; ++axis) {
    if (std::fabs(w[axis]) < 1e-12) continue;
    double bound = w[axis] > 0 ? b.hi[axis] : b.lo[axis];
    double s = (bound - o[axis]) / w[axis];
    if (s > kRayEps && s < best) best = s;
  }
  return best < 1e29 ? best : kNoHit;
}

double intersect_world(const World& world, const Vec3& o, const Vec3& w) {
  double best = 1e30;
  for (const auto& c : world.cards) {
    double s = intersect_card(c, o, w);
    if (s > 0 && s < best) best = s;
  }
  for (const auto& sp : world.spheres) {
    double s = intersect_sphere(sp, o, w);
    if (s > 0 && s < best) best = s;
  }
  if (world.has_box) {
    double s = intersect_box_inside(world.box, o, w);
    if (s > 0 && s < best) best = s;
  }
  return best < 1e29 ? best : kNoHit;
}

// ---- layout construction ---------------------------------------------------

Card fronto_card(const Vec3& center, double tilt_x, double tilt_y, double half1,
                 double half2) {
  // Start fronto-parallel (facing -z), tilt about the vertical then the
  // horizontal axis.
  Card c;
  c.center = center;
  double cy = std::cos(tilt_y), sy = std::sin(tilt_y);
  double cx = std::cos(tilt_x), sx = std::sin(tilt_x);
  Vec3 ex{cy, 0, -sy};
  Vec3 eyv{sy * sx, cx, cy * sx};
  c.e1 = ex;
  c.e2 = eyv;
  c.half1 = half1;
  c.half2 = half2;
  return c;
}

World build_world(const SceneSpec& spec, std::mt19937_64& rng) {
  World world;
  double near = spec.d_min;
  double far = spec.labels * spec.d_min;
  double span = far - near;
  switch (spec.layout) {
    case SceneLayout::SinglePlane: {
      Card c = fronto_card({0, 0, spec.plane_depth}, 0.0, spec.plane_tilt, 1e6,
                           1e6);
      world.cards.push_back(c);
      break;
    }
    case SceneLayout::TexturedPlanes: {
      // Far background keeps every ray occupied.
      double bg_depth = near + 0.85 * span;
      world.cards.push_back(fronto_card({0, 0, bg_depth},
                                        rand_uniform(rng, -0.06, 0.06),
                                        rand_uniform(rng, -0.06, 0.06), 1e6, 1e6));
      int count = 2 + static_cast<int>(rng() % 3);  // 2..4 foreground cards
      for (int i = 0; i < count; ++i) {
        double d = near + span * rand_uniform(rng, 0.3, 0.65);
        double ext = d * rand_uniform(rng, 0.15, 0.35);
        Vec3 center{rand_uniform(rng, -0.3, 0.3) * d,
                    rand_uniform(rng, -0.3, 0.3) * d, d};
        world.cards.push_back(fronto_card(center,
                                          rand_uniform(rng, -0.45, 0.45),
                                          rand_uniform(rng, -0.45, 0.45), ext,
                                          ext));
      }
      break;
    }
    case SceneLayout::BoxRoom: {
      world.has_box = true;
      double hw = 0.55 * far;
      world.box.lo = {-hw, -hw, -0.5};
      world.box.hi = {hw, hw, near + 0.85 * span};
      break;
    }
    case SceneLayout::SphereField: {
      double bg_depth = near + 0.8 * span;
      world.cards.push_back(fronto_card({0, 0, bg_depth},
                                        rand_uniform(rng, -0.05, 0.05),
                                        rand_uniform(rng, -0.05, 0.05), 1e6, 1e6));
      int count = 3 + static_cast<int>(rng() % 3);
      for (int i = 0; i < count; ++i) {
        double d = near + span * rand_uniform(rng, 0.35, 0.6);
        double r = d * rand_uniform(rng, 0.1, 0.18);
        world.spheres.push_back(
            {{rand_uniform(rng, -0.35, 0.35) * d,
              rand_uniform(rng, -0.35, 0.35) * d, d},
             r});
      }
      break;
    }
  }
  return world;
}

struct ViewRig {
  CameraPose pose;             // reference -> view
  Vec3 center;                 // camera center in reference coords
  std::array<double, 9> cam_to_world;  // orientation
};

std::array<double, 9> euler_rotation(double ax, double ay, double az) {
  double cx = std::cos(ax), sx = std::sin(ax);
  double cy = std::cos(ay), sy = std::sin(ay);
  double cz = std::cos(az), sz = std::sin(az);
  // Rz * Ry * Rx
  return {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
          sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
          -sy,     cy * sx,                cy * cx};
}

ViewRig make_view(const SceneSpec& spec, std::mt19937_64& rng, bool reference) {
  ViewRig rig;
  if (reference) {
    rig.pose = CameraPose::identity();
    rig.center = {0, 0, 0};
    rig.cam_to_world = rig.pose.rotation;
    return rig;
  }
  double b = rand_uniform(rng, spec.baseline_min, spec.baseline_max);
  double phi = rand_uniform(rng, 0, 2 * M_PI);
  Vec3 dir = normalize({std::cos(phi), std::sin(phi),
                        0.25 * rand_uniform(rng, -1.0, 1.0)});
  rig.center = b * dir;
  double j = spec.rotation_jitter;
  rig.cam_to_world = euler_rotation(rand_uniform(rng, -j, j),
                                    rand_uniform(rng, -j, j),
                                    rand_uniform(rng, -j, j));
  // world -> camera: R = C^T, t = -C^T c
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      rig.pose.rotation[i * 3 + k] = rig.cam_to_world[k * 3 + i];
  for (int i = 0; i < 3; ++i)
    rig.pose.translation[i] = -(rig.pose.rotation[i * 3] * rig.center[0] +
                                rig.pose.rotation[i * 3 + 1] * rig.center[1] +
                                rig.pose.rotation[i * 3 + 2] * rig.center[2]);
  return rig;
}

bool render_view(const World& world, const SceneSpec& spec,
                 const CameraIntrinsics& K, const ViewRig& rig, uint64_t seed,
                 const TexturelessPatch& patch, int view_index, Image& img,
                 DepthMap* depth_out) {
  img.width = K.width;
  img.height = K.height;
  img.pixels.assign(static_cast<size_t>(K.width) * K.height, 0.0);
  if (depth_out) *depth_out = DepthMap::constant(K.width, K.height, 0.0);

  double near = spec.d_min;
  double far = spec.labels * spec.d_min;
  std::mt19937_64 noise_rng(splitmix(seed ^ (0xA5A5ull + view_index)));
  std::normal_distribution<double> gauss(0.0, 1.0);

  const auto& C = rig.cam_to_world;
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      Vec3 v{(x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0};
      Vec3 w{C[0] * v[0] + C[1] * v[1] + C[2] * v[2],
             C[3] * v[0] + C[4] * v[1] + C[5] * v[2],
             C[6] * v[0] + C[7] * v[1] + C[8] * v[2]};
      double s = intersect_world(world, rig.center, w);
      if (s <= 0) return false;  // ray escaped: degenerate layout
      if (depth_out) {
        // Reference depths must respect the generation budget.
        if (s < near || s > far) return false;
        depth_out->depth[static_cast<size_t>(y) * K.width + x] = s;
      } else if (s < 0.2 * near) {
        return false;  // paired camera jammed against geometry
      }
      Vec3 p = rig.center + s * w;
      double shade_v = shade(seed, spec.texture_octaves, patch, p);
      if (spec.noise_sigma > 0) {
        shade_v += spec.noise_sigma * gauss(noise_rng);
        shade_v = std::clamp(shade_v, 0.0, 1.0);
      }
      img.pixels[static_cast<size_t>(y) * K.width + x] = shade_v;
    }
  }
  return true;
}

}  // namespace

SceneLayout layout_from_name(const std::string& name) {
  if (name == "planes") return SceneLayout::TexturedPlanes;
  if (name == "box") return SceneLayout::BoxRoom;
  if (name == "spheres") return SceneLayout::SphereField;
  if (name == "plane") return SceneLayout::SinglePlane;
  throw std::invalid_argument("unknown scene layout: " + name);
}

std::string layout_name(SceneLayout layout) {
  switch (layout) {
    case SceneLayout::TexturedPlanes: return "planes";
    case SceneLayout::BoxRoom: return "box";
    case SceneLayout::SphereField: return "spheres";
    case SceneLayout::SinglePlane: return "plane";
  }
  return "?";
}

SyntheticScene generate_scene(const SceneSpec& spec, uint64_t seed) {
  if (spec.paired_views < 1)
    throw std::invalid_argument("generate_scene: need at least one paired view");
  if (spec.width < 4 || spec.height < 4)
    throw std::invalid_argument("generate_scene: image too small");
  if (spec.baseline_min <= 0 || spec.baseline_max < spec.baseline_min)
    throw std::invalid_argument("generate_scene: bad baseline range");

  CameraIntrinsics K;
  K.width = spec.width;
  K.height = spec.height;
  K.fx = K.fy = static_cast<double>(spec.width);
  K.cx = (spec.width - 1) / 2.0;
  K.cy = (spec.height - 1) / 2.0;

  const int kMaxAttempts = 8;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    uint64_t sub_seed = splitmix(seed ^ static_cast<uint64_t>(attempt) * 0x51ull);
    std::mt19937_64 rng(sub_seed);
    World world = build_world(spec, rng);

    TexturelessPatch patch;
    if (spec.textureless_radius > 0) {
      // Anchor the patch on the surface point seen at a mildly random image
      // location, so it is view-consistent.
      double px = rand_uniform(rng, 0.3, 0.7) * (spec.width - 1);
      double py = rand_uniform(rng, 0.3, 0.7) * (spec.height - 1);
      Vec3 v{(px - K.cx) / K.fx, (py - K.cy) / K.fy, 1.0};
      double s = intersect_world(world, {0, 0, 0}, v);
      if (s > 0) {
        patch.enabled = true;
        patch.center = s * v;
        patch.radius = spec.textureless_radius;
      }
    }

    SyntheticScene scene;
    scene.width = spec.width;
    scene.height = spec.height;
    scene.intrinsics = K;
    scene.seed = seed;
    scene.images.resize(spec.paired_views + 1);
    scene.poses.resize(spec.paired_views + 1);

    bool ok = true;
    for (int k = 0; k <= spec.paired_views && ok; ++k) {
      ViewRig rig = make_view(spec, rng, k == 0);
      scene.poses[k] = rig.pose;
      ok = render_view(world, spec, K, rig, sub_seed, patch, k,
                       scene.images[k], k == 0 ? &scene.depth_gt : nullptr);
    }
    if (ok) return scene;
  }
  throw std::runtime_error("generate_scene: degenerate layout after retries");
}

void save_scene(const std::string& dir, const SyntheticScene& scene) {
  std::filesystem::create_directories(dir);
  for (size_t k = 0; k < scene.images.size(); ++k)
    save_pgm(dir + "/view_" + std::to_string(k) + ".pgm", scene.images[k]);
  save_pfm(dir + "/depth.pfm", scene.depth_gt);
  std::vector<Camera> cams;
  for (const auto& pose : scene.poses)
    cams.push_back({scene.intrinsics, pose});
  save_cameras(dir + "/cameras.txt", cams);
}

SyntheticScene load_scene(const std::string& dir) {
  SyntheticScene scene;
  auto cams = load_cameras(dir + "/cameras.txt");
  if (cams.empty()) throw std::runtime_error("load_scene: no cameras in " + dir);
  scene.intrinsics = cams[0].intrinsics;
  for (const auto& c : cams) scene.poses.push_back(c.pose);
  for (size_t k = 0; k < cams.size(); ++k) {
    std::string p = dir + "/view_" + std::to_string(k) + ".pgm";
    scene.images.push_back(load_pgm(p));
  }
  scene.depth_gt = load_pfm(dir + "/depth.pfm");
  scene.width = scene.intrinsics.width;
  scene.height = scene.intrinsics.height;
  return scene;
}

}  // namespace ps
