#pragma once

#include <string>

#include "ps/depth_map.hpp"
#include "ps/geometry.hpp"
#include "ps/image_io.hpp"
#include "ps/tensor.hpp"

namespace ps {

struct DepthMetrics {
  double abs_rel = 0, abs_diff = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double a1 = 0, a2 = 0, a3 = 0;  // inlier ratios at 1.25, 1.25^2, 1.25^3
  double completeness = 0;

  static const char* csv_header();
  std::string csv_row() const;
};

constexpr double kDefaultCompletenessThreshold = 0.1;  // per-pixel abs_rel

/// Standard depth errors over the shared valid mask. Pixels where either
/// value is non-positive are excluded (ratios and logs need positive depth).
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt,
                           double completeness_threshold =
                               kDefaultCompletenessThreshold);

/// Mean L1 intensity difference between the reference image and the paired
/// image warped to it through the predicted depth. Averages over pixels that
/// land in bounds with positive projected depth.
double photometric_error(const Image& ref, const Image& paired,
                         const DepthMap& pred, const CameraIntrinsics& K,
                         const CameraPose& pose);

/// Mean |1/pred - 1/gt| (inverse depth = disparity at unit scale).
double geometric_error(const DepthMap& pred, const DepthMap& gt);

struct ConfidenceReport {
  double winner_margin = 0;  // mean over pixels, in [0,1]
  double curvature = 0;      // mean peakedness at the argmax label
};

/// Confidence of a normalized probability volume [L,H,W]. Needs L >= 3 for
/// the curvature's neighbor stencil (edge labels clamp to the volume).
ConfidenceReport confidence(const Tensor& prob);

}  // namespace ps
