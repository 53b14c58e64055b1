#include "ps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ps {

const char* DepthMetrics::csv_header() {
  return "abs_rel,abs_diff,sq_rel,rmse,rmse_log,a1,a2,a3,completeness";
}

std::string DepthMetrics::csv_row() const {
  std::ostringstream os;
  os.precision(17);
  os << abs_rel << ',' << abs_diff << ',' << sq_rel << ',' << rmse << ','
     << rmse_log << ',' << a1 << ',' << a2 << ',' << a3 << ',' << completeness;
  return os.str();
}

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt,
                           double completeness_threshold) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("depth_metrics: size mismatch");
  int64_t n = pred.pixels();
  double abs_rel = 0, abs_diff = 0, sq_rel = 0, sq = 0, sq_log = 0;
  int64_t in1 = 0, in2 = 0, in3 = 0, complete = 0, count = 0;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (int64_t i = 0; i < n; ++i) {
    if (!pred.valid[static_cast<size_t>(i)] || !gt.valid[static_cast<size_t>(i)])
      continue;
    double p = pred.depth[static_cast<size_t>(i)];
    double g = gt.depth[static_cast<size_t>(i)];
    if (p <= 0 || g <= 0) continue;
    ++count;
    double e = p - g;
    double ae = std::fabs(e);
    abs_rel += ae / g;
    abs_diff += ae;
    sq_rel += e * e / g;
    sq += e * e;
    double le = std::log(p) - std::log(g);
    sq_log += le * le;
    double delta = std::max(p / g, g / p);
    if (delta < t1) ++in1;
    if (delta < t2) ++in2;
    if (delta < t3) ++in3;
    if (ae / g < completeness_threshold) ++complete;
  }
  if (count == 0) throw std::invalid_argument("depth_metrics: empty valid mask");
  DepthMetrics m;
  double c = static_cast<double>(count);
  m.abs_rel = abs_rel / c;
  m.abs_diff = abs_diff / c;
  m.sq_rel = sq_rel / c;
  m.rmse = std::sqrt(sq / c);
  m.rmse_log = std::sqrt(sq_log / c);
  m.a1 = in1 / c;
  m.a2 = in2 / c;
  m.a3 = in3 / c;
  m.completeness = complete / c;
  return m;
}

namespace {

double bilinear_sample(const Image& img, double x, double y) {
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  double fx = x - x0, fy = y - y0;
  double acc = 0;
  for (int dy = 0; dy < 2; ++dy) {
    int yy = y0 + dy;
    if (yy < 0 || yy >= img.height) continue;
    double wy = dy ? fy : 1 - fy;
    for (int dx = 0; dx < 2; ++dx) {
      int xx = x0 + dx;
      if (xx < 0 || xx >= img.width) continue;
      acc += wy * (dx ? fx : 1 - fx) * img.at(xx, yy);
    }
  }
  return acc;
}

}  // namespace

double photometric_error(const Image& ref, const Image& paired,
                         const DepthMap& pred, const CameraIntrinsics& K,
                         const CameraPose& pose) {
  if (ref.width != pred.width || ref.height != pred.height)
    throw std::invalid_argument("photometric_error: size mismatch");
  double acc = 0;
  int64_t count = 0;
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      if (!pred.valid_at(x, y)) continue;
      double d = pred.at(x, y);
      if (d <= 0) continue;
      PixelProjection proj = project_pixel(x, y, d, K, pose);
      if (!proj.positive_depth) continue;
      if (proj.x < 0 || proj.x > paired.width - 1.0 || proj.y < 0 ||
          proj.y > paired.height - 1.0)
        continue;
      acc += std::fabs(ref.at(x, y) - bilinear_sample(paired, proj.x, proj.y));
      ++count;
    }
  }
  if (count == 0)
    throw std::invalid_argument("photometric_error: no in-bounds pixels");
  return acc / static_cast<double>(count);
}

double geometric_error(const DepthMap& pred, const DepthMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("geometric_error: size mismatch");
  double acc = 0;
  int64_t count = 0;
  int64_t n = pred.pixels();
  for (int64_t i = 0; i < n; ++i) {
    if (!pred.valid[static_cast<size_t>(i)] || !gt.valid[static_cast<size_t>(i)])
      continue;
    double p = pred.depth[static_cast<size_t>(i)];
    double g = gt.depth[static_cast<size_t>(i)];
    if (p <= 0 || g <= 0) continue;
    acc += std::fabs(1.0 / p - 1.0 / g);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("geometric_error: empty valid mask");
  return acc / static_cast<double>(count);
}

ConfidenceReport confidence(const Tensor& prob) {
  if (prob.rank() != 3) throw std::invalid_argument("confidence: need [L,H,W]");
  int L = prob.dim(0);
  if (L < 3)
    throw std::invalid_argument("confidence: curvature needs at least 3 labels");
  int64_t plane = static_cast<int64_t>(prob.dim(1)) * prob.dim(2);
  const double* p = prob.data();
  double margin_acc = 0, curv_acc = 0;
  for (int64_t i = 0; i < plane; ++i) {
    double best = -1, second = -1;
    int best_l = 0;
    for (int l = 0; l < L; ++l) {
      double v = p[l * plane + i];
      if (v > best) {
        second = best;
        best = v;
        best_l = l;
      } else if (v > second) {
        second = v;
      }
    }
    margin_acc += best - second;
    int lm = std::max(0, best_l - 1);
    int lp = std::min(L - 1, best_l + 1);
    curv_acc += best - 0.5 * (p[lm * plane + i] + p[lp * plane + i]);
  }
  ConfidenceReport report;
  report.winner_margin = margin_acc / static_cast<double>(plane);
  report.curvature = curv_acc / static_cast<double>(plane);
  return report;
}

}  // namespace ps
