#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "ps/metrics.hpp"
#include "ps/synth.hpp"

using namespace ps;

namespace {

DepthMap single(double value) {
  DepthMap m;
  m.width = m.height = 1;
  m.depth = {value};
  m.valid = {1};
  return m;
}

}  // namespace

TEST_CASE("perfect prediction zeroes every error") {
  DepthMap gt;
  gt.width = 4;
  gt.height = 3;
  gt.depth.resize(12);
  gt.valid.assign(12, 1);
  for (int i = 0; i < 12; ++i) gt.depth[i] = 0.5 + 0.2 * i;
  DepthMetrics m = depth_metrics(gt, gt);
  CHECK(m.abs_rel == 0.0);
  CHECK(m.abs_diff == 0.0);
  CHECK(m.sq_rel == 0.0);
  CHECK(m.rmse == 0.0);
  CHECK(m.rmse_log == 0.0);
  CHECK(m.a1 == 1.0);
  CHECK(m.a2 == 1.0);
  CHECK(m.a3 == 1.0);
  CHECK(m.completeness == 1.0);
}

TEST_CASE("pred 2 against gt 1, single pixel") {
  DepthMetrics m = depth_metrics(single(2.0), single(1.0));
  CHECK(m.abs_rel == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.abs_diff == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.sq_rel == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.rmse == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.rmse_log == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // delta = 2 fails all three 1.25^i gates (1.25^3 ~ 1.953).
  CHECK(m.a1 == 0.0);
  CHECK(m.a2 == 0.0);
  CHECK(m.a3 == 0.0);
  CHECK(m.completeness == 0.0);
}

TEST_CASE("pred 1.2 against gt 1 clears the first inlier gate") {
  DepthMetrics m = depth_metrics(single(1.2), single(1.0));
  CHECK(m.a1 == 1.0);
  CHECK(m.a2 == 1.0);
  CHECK(m.a3 == 1.0);
}

TEST_CASE("metrics ignore pixel order") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(0.5, 5.0);
  int n = 64;
  DepthMap pred, gt;
  pred.width = gt.width = 8;
  pred.height = gt.height = 8;
  pred.depth.resize(n);
  gt.depth.resize(n);
  pred.valid.assign(n, 1);
  gt.valid.assign(n, 1);
  for (int i = 0; i < n; ++i) {
    gt.depth[i] = uni(rng);
    pred.depth[i] = uni(rng);
  }
  DepthMetrics before = depth_metrics(pred, gt);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  DepthMap pred2 = pred, gt2 = gt;
  for (int i = 0; i < n; ++i) {
    pred2.depth[i] = pred.depth[perm[i]];
    gt2.depth[i] = gt.depth[perm[i]];
  }
  DepthMetrics after = depth_metrics(pred2, gt2);
  CHECK(after.abs_rel == doctest::Approx(before.abs_rel).epsilon(1e-12));
  CHECK(after.rmse == doctest::Approx(before.rmse).epsilon(1e-12));
  CHECK(after.a2 == before.a2);
}

TEST_CASE("scale covariance of the relative metrics") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> uni(0.5, 5.0);
  int n = 36;
  DepthMap pred, gt;
  pred.width = gt.width = 6;
  pred.height = gt.height = 6;
  pred.depth.resize(n);
  gt.depth.resize(n);
  pred.valid.assign(n, 1);
  gt.valid.assign(n, 1);
  for (int i = 0; i < n; ++i) {
    gt.depth[i] = uni(rng);
    pred.depth[i] = gt.depth[i] * uni(rng) / 2.5;
  }
  DepthMetrics base = depth_metrics(pred, gt);
  double s = 3.7;
  DepthMap preds = pred, gts = gt;
  for (int i = 0; i < n; ++i) {
    preds.depth[i] *= s;
    gts.depth[i] *= s;
  }
  DepthMetrics scaled = depth_metrics(preds, gts);
  CHECK(scaled.abs_rel == doctest::Approx(base.abs_rel).epsilon(1e-12));
  CHECK(scaled.rmse_log == doctest::Approx(base.rmse_log).epsilon(1e-12));
  CHECK(scaled.a1 == base.a1);
  CHECK(scaled.a2 == base.a2);
  CHECK(scaled.a3 == base.a3);
  CHECK(scaled.completeness == base.completeness);
}

TEST_CASE("inlier ratios are monotone on random maps") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(0.2, 8.0);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 16;
    DepthMap pred, gt;
    pred.width = gt.width = 4;
    pred.height = gt.height = 4;
    pred.depth.resize(n);
    gt.depth.resize(n);
    pred.valid.assign(n, 1);
    gt.valid.assign(n, 1);
    for (int i = 0; i < n; ++i) {
      gt.depth[i] = uni(rng);
      pred.depth[i] = uni(rng);
    }
    DepthMetrics m = depth_metrics(pred, gt);
    CHECK(m.a1 <= m.a2);
    CHECK(m.a2 <= m.a3);
    CHECK(m.a3 <= 1.0);
  }
}

TEST_CASE("empty mask raises") {
  DepthMap a = single(1.0);
  DepthMap b = single(1.0);
  a.valid[0] = 0;
  CHECK_THROWS_AS(depth_metrics(a, b), std::invalid_argument);
  CHECK_THROWS_AS(geometric_error(a, b), std::invalid_argument);
}

TEST_CASE("geometric error closed forms") {
  CHECK(geometric_error(single(2.0), single(2.0)) == 0.0);
  CHECK(geometric_error(single(2.0), single(4.0)) == doctest::Approx(0.25));

  // Perturbing invalid pixels changes nothing.
  DepthMap pred, gt;
  pred.width = gt.width = 2;
  pred.height = gt.height = 1;
  pred.depth = {2.0, 3.0};
  gt.depth = {4.0, 1.0};
  pred.valid = {1, 0};
  gt.valid = {1, 1};
  double before = geometric_error(pred, gt);
  pred.depth[1] = 77.0;
  CHECK(geometric_error(pred, gt) == before);
  CHECK(before == doctest::Approx(0.25));
}

TEST_CASE("photometric error is zero under the identity warp") {
  SceneSpec spec;
  spec.layout = SceneLayout::TexturedPlanes;
  spec.width = spec.height = 24;
  spec.paired_views = 1;
  SyntheticScene scene = generate_scene(spec, 8);
  double err = photometric_error(scene.images[0], scene.images[0],
                                 scene.depth_gt, scene.intrinsics,
                                 CameraPose::identity());
  CHECK(err == 0.0);
}

TEST_CASE("gt depth explains the paired view better than any flat guess") {
  SceneSpec spec;
  spec.layout = SceneLayout::SinglePlane;
  spec.plane_depth = 2.0;
  spec.plane_tilt = 0.3;
  spec.width = spec.height = 32;
  spec.paired_views = 1;
  SyntheticScene scene = generate_scene(spec, 12);

  double gt_err = photometric_error(scene.images[0], scene.images[1],
                                    scene.depth_gt, scene.intrinsics,
                                    scene.poses[1]);
  CHECK(gt_err < 1e-3);
  for (double wrong : {1.0, 1.5, 3.0}) {
    DepthMap flat = DepthMap::constant(32, 32, wrong);
    double err = photometric_error(scene.images[0], scene.images[1], flat,
                                   scene.intrinsics, scene.poses[1]);
    CHECK(gt_err < err);
  }
}

TEST_CASE("photometric error needs at least one usable pixel") {
  Image img;
  img.width = img.height = 4;
  img.pixels.assign(16, 0.5);
  DepthMap d = DepthMap::constant(4, 4, 1.0);
  CameraIntrinsics K;
  K.fx = K.fy = 4;
  K.cx = K.cy = 1.5;
  K.width = K.height = 4;
  CameraPose pose;
  pose.translation = {-50, 0, 0};  // everything lands far out of frame
  CHECK_THROWS_AS(photometric_error(img, img, d, K, pose),
                  std::invalid_argument);
}

TEST_CASE("confidence closed forms") {
  Tensor onehot = Tensor::zeros({4, 1, 1});
  onehot.data()[2] = 1.0;
  ConfidenceReport r1 = confidence(onehot);
  CHECK(r1.winner_margin == doctest::Approx(1.0));

  Tensor uniform = Tensor::full({5, 1, 1}, 0.2);
  ConfidenceReport r2 = confidence(uniform);
  CHECK(r2.winner_margin == doctest::Approx(0.0));
  CHECK(r2.curvature == doctest::Approx(0.0));

  Tensor profile = Tensor::from_data({3, 1, 1}, {0.5, 0.3, 0.2});
  ConfidenceReport r3 = confidence(profile);
  CHECK(r3.winner_margin == doctest::Approx(0.2));

  Tensor too_few = Tensor::full({2, 1, 1}, 0.5);
  CHECK_THROWS_AS(confidence(too_few), std::invalid_argument);
}

TEST_CASE("sharpening a profile never lowers the winner margin") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uni(0.01, 1.0);
  std::uniform_real_distribution<double> gamma_dist(1.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    int L = 3 + static_cast<int>(rng() % 6);
    std::vector<double> p(L);
    double total = 0;
    for (auto& v : p) {
      v = uni(rng);
      total += v;
    }
    for (auto& v : p) v /= total;
    double gamma = gamma_dist(rng);
    std::vector<double> q(L);
    double qtotal = 0;
    for (int i = 0; i < L; ++i) {
      q[i] = std::pow(p[i], gamma);
      qtotal += q[i];
    }
    for (auto& v : q) v /= qtotal;
    ConfidenceReport before = confidence(Tensor::from_data({L, 1, 1}, p));
    ConfidenceReport after = confidence(Tensor::from_data({L, 1, 1}, q));
    CHECK(after.winner_margin >= before.winner_margin - 1e-12);
  }
}

TEST_CASE("csv row order matches the header") {
  DepthMetrics m = depth_metrics(single(2.0), single(1.0));
  CHECK(std::string(DepthMetrics::csv_header()) ==
        "abs_rel,abs_diff,sq_rel,rmse,rmse_log,a1,a2,a3,completeness");
  std::string row = m.csv_row();
  CHECK(row.substr(0, 2) == "1,");
  CHECK(std::count(row.begin(), row.end(), ',') == 8);
}
