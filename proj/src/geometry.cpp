#include "ps/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ps {

namespace {
constexpr double kMinDepth = 1e-9;
}

void CameraIntrinsics::validate() const {
  if (fx <= 0 || fy <= 0)
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width < 1 || height < 1)
    throw std::invalid_argument("intrinsics: image size must be positive");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw std::invalid_argument("intrinsics: principal point outside image");
}

void CameraPose::validate() const {
  const auto& r = rotation;
  // R^T R = I
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
      double expect = i == j ? 1.0 : 0.0;
      if (std::fabs(dot - expect) > 1e-9)
        throw std::invalid_argument("pose: rotation is not orthonormal");
    }
  }
  double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
               r[1] * (r[3] * r[8] - r[5] * r[6]) +
               r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::fabs(det - 1.0) > 1e-9)
    throw std::invalid_argument("pose: rotation determinant is not +1");
}

std::array<double, 3> transform_point(const CameraPose& p,
                                      const std::array<double, 3>& x) {
  const auto& r = p.rotation;
  const auto& t = p.translation;
  return {r[0] * x[0] + r[1] * x[1] + r[2] * x[2] + t[0],
          r[3] * x[0] + r[4] * x[1] + r[5] * x[2] + t[1],
          r[6] * x[0] + r[7] * x[1] + r[8] * x[2] + t[2]};
}

CameraPose inverse(const CameraPose& p) {
  CameraPose inv;
  const auto& r = p.rotation;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv.rotation[i * 3 + j] = r[j * 3 + i];
  const auto& t = p.translation;
  for (int i = 0; i < 3; ++i)
    inv.translation[i] = -(inv.rotation[i * 3] * t[0] +
                           inv.rotation[i * 3 + 1] * t[1] +
                           inv.rotation[i * 3 + 2] * t[2]);
  return inv;
}

CameraPose compose(const CameraPose& b, const CameraPose& a) {
  CameraPose out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k)
        acc += b.rotation[i * 3 + k] * a.rotation[k * 3 + j];
      out.rotation[i * 3 + j] = acc;
    }
    out.translation[i] = b.rotation[i * 3] * a.translation[0] +
                         b.rotation[i * 3 + 1] * a.translation[1] +
                         b.rotation[i * 3 + 2] * a.translation[2] +
                         b.translation[i];
  }
  return out;
}

PlaneHypothesisSet sample_planes(int labels, double d_min, SamplingMode mode,
                                 double d_max) {
  if (labels < 1) throw std::invalid_argument("sample_planes: labels < 1");
  if (d_min <= 0) throw std::invalid_argument("sample_planes: d_min <= 0");
  PlaneHypothesisSet set;
  set.d_min = d_min;
  set.mode = mode;
  set.depths.resize(labels);
  if (mode == SamplingMode::InverseDepth) {
    for (int l = 1; l <= labels; ++l)
      set.depths[l - 1] = (labels * d_min) / static_cast<double>(l);
  } else {
    if (d_max <= d_min)
      throw std::invalid_argument("sample_planes: d_max must exceed d_min");
    if (labels == 1) {
      set.depths[0] = d_min;
    } else {
      double step = (d_max - d_min) / (labels - 1);
      for (int l = 0; l < labels; ++l) set.depths[l] = d_min + step * l;
    }
  }
  return set;
}

namespace {

bool is_identity(const CameraPose& p) {
  static constexpr std::array<double, 9> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  return p.rotation == eye &&
         p.translation == std::array<double, 3>{0, 0, 0};
}

}  // namespace

PixelProjection project_pixel(double u, double v, double d,
                              const CameraIntrinsics& K,
                              const CameraPose& pose) {
  if (is_identity(pose)) {
    // Exact round trip; keeps identity warps free of rounding.
    PixelProjection out;
    out.x = u;
    out.y = v;
    out.depth = d;
    out.positive_depth = d > kMinDepth;
    return out;
  }
  // Back-project to depth d in the reference camera.
  std::array<double, 3> x{(u - K.cx) / K.fx * d, (v - K.cy) / K.fy * d, d};
  std::array<double, 3> y = transform_point(pose, x);
  PixelProjection out;
  out.depth = y[2];
  if (y[2] <= kMinDepth) return out;  // behind the paired camera
  out.positive_depth = true;
  out.x = K.fx * y[0] / y[2] + K.cx;
  out.y = K.fy * y[1] / y[2] + K.cy;
  return out;
}

WarpGrid compute_warp_grid(const CameraIntrinsics& K, const CameraPose& pose,
                           const PlaneHypothesisSet& planes, int width,
                           int height) {
  if (width < 1 || height < 1)
    throw std::invalid_argument("compute_warp_grid: bad size");
  WarpGrid grid;
  grid.planes = planes.count();
  grid.height = height;
  grid.width = width;
  grid.coords.assign(grid.cells() * 2, 0.0);
  grid.in_bounds.assign(grid.cells(), 0);
  int64_t g = 0;
  for (int l = 0; l < grid.planes; ++l) {
    double d = planes.depths[l];
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x, ++g) {
        PixelProjection p = project_pixel(x, y, d, K, pose);
        if (!p.positive_depth) continue;
        grid.coords[2 * g] = p.x;
        grid.coords[2 * g + 1] = p.y;
        grid.in_bounds[g] = (p.x >= 0.0 && p.x <= width - 1.0 && p.y >= 0.0 &&
                             p.y <= height - 1.0)
                                ? 1
                                : 0;
      }
    }
  }
  return grid;
}

CameraIntrinsics scale_intrinsics(const CameraIntrinsics& K, double sx,
                                  double sy) {
  if (sx <= 0 || sy <= 0)
    throw std::invalid_argument("scale_intrinsics: scale must be positive");
  CameraIntrinsics out;
  out.fx = K.fx * sx;
  out.fy = K.fy * sy;
  out.cx = (K.cx + 0.5) * sx - 0.5;
  out.cy = (K.cy + 0.5) * sy - 0.5;
  out.width = static_cast<int>(std::lround(K.width * sx));
  out.height = static_cast<int>(std::lround(K.height * sy));
  return out;
}

std::vector<Camera> parse_cameras(std::istream& is) {
  std::vector<Camera> cams;
  std::string tag;
  while (is >> tag) {
    if (tag != "K")
      throw std::runtime_error("cameras: expected 'K', got '" + tag + "'");
    Camera cam;
    double w, h;
    if (!(is >> cam.intrinsics.fx >> cam.intrinsics.fy >> cam.intrinsics.cx >>
          cam.intrinsics.cy >> w >> h))
      throw std::runtime_error("cameras: malformed K line");
    cam.intrinsics.width = static_cast<int>(w);
    cam.intrinsics.height = static_cast<int>(h);
    if (!(is >> tag) || tag != "R")
      throw std::runtime_error("cameras: expected 'R' line");
    for (auto& r : cam.pose.rotation)
      if (!(is >> r)) throw std::runtime_error("cameras: malformed R line");
    if (!(is >> tag) || tag != "t")
      throw std::runtime_error("cameras: expected 't' line");
    for (auto& t : cam.pose.translation)
      if (!(is >> t)) throw std::runtime_error("cameras: malformed t line");
    cam.intrinsics.validate();
    cam.pose.validate();
    cams.push_back(cam);
  }
  return cams;
}

std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cameras: cannot open " + path);
  return parse_cameras(f);
}

void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cameras: cannot write " + path);
  f.precision(17);
  for (const auto& cam : cams) {
    f << "K " << cam.intrinsics.fx << ' ' << cam.intrinsics.fy << ' '
      << cam.intrinsics.cx << ' ' << cam.intrinsics.cy << ' '
      << cam.intrinsics.width << ' ' << cam.intrinsics.height << '\n';
    f << "R";
    for (double r : cam.pose.rotation) f << ' ' << r;
    f << "\nt";
    for (double t : cam.pose.translation) f << ' ' << t;
    f << "\n";
  }
}

}  // namespace ps
