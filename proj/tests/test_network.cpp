#include <cmath>
#include <random>

#include "doctest.h"
#include "ps/metrics.hpp"
#include "ps/network.hpp"
#include "ps/synth.hpp"
#include "ps/trainer.hpp"

using namespace ps;

namespace {

NetworkConfig toy_stride1() {
  NetworkConfig cfg = NetworkConfig::toy();
  cfg.feature_stride = 1;
  return cfg;
}

void randomize(Tensor t, uint64_t seed, double scale = 0.2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-scale, scale);
  for (auto& v : t.values()) v = uni(rng);
}

}  // namespace

TEST_CASE("config text round trip and validation") {
  NetworkConfig cfg = NetworkConfig::toy();
  cfg.cost_variant = CostVariant::AbsDiff;
  cfg.aggregation = false;
  cfg.sampling = SamplingMode::UniformDepth;
  cfg.d_max = 6.0;
  NetworkConfig back = NetworkConfig::from_text(cfg.to_text());
  CHECK(back.channels == cfg.channels);
  CHECK(back.labels == cfg.labels);
  CHECK(back.cost_variant == CostVariant::AbsDiff);
  CHECK(back.aggregation == false);
  CHECK(back.sampling == SamplingMode::UniformDepth);
  CHECK(back.d_max == doctest::Approx(6.0));

  CHECK_THROWS_AS(NetworkConfig::from_text("feature_stride = 3\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(NetworkConfig::from_text("mystery_key = 1\n"),
                  std::invalid_argument);
}

TEST_CASE("feature map shapes follow stride and channels") {
  NetworkConfig paper;
  paper.input_channels = 1;
  paper.channels = 32;
  paper.labels = 64;
  paper.feature_stride = 4;
  Network net(paper, 1);
  Tensor img = Tensor::full({1, 64, 64}, 0.5);
  Tensor f = net.extract_features(img);
  CHECK(f.shape() == std::vector<int>{32, 16, 16});

  NetworkConfig toy = toy_stride1();
  Network net2(toy, 1);
  Tensor img2 = Tensor::full({1, 64, 64}, 0.5);
  Tensor f2 = net2.extract_features(img2);
  CHECK(f2.shape() == std::vector<int>{8, 64, 64});
}

TEST_CASE("extract_features reports required padding") {
  NetworkConfig cfg = NetworkConfig::toy();
  cfg.feature_stride = 4;
  Network net(cfg, 1);
  Tensor img = Tensor::full({1, 30, 30}, 0.1);
  CHECK_THROWS_WITH_AS(net.extract_features(img), doctest::Contains("pad to"),
                       std::invalid_argument);
}

TEST_CASE("identical images give identical features") {
  Network net(toy_stride1(), 7);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<double> px(32 * 32);
  for (auto& v : px) v = uni(rng);
  Tensor a = Tensor::from_data({1, 32, 32}, px);
  Tensor b = Tensor::from_data({1, 32, 32}, px);
  Tensor fa = net.extract_features(a);
  Tensor fb = net.extract_features(b);
  for (int64_t i = 0; i < fa.numel(); ++i) CHECK(fa.data()[i] == fb.data()[i]);
}

TEST_CASE("cost volume under the identity pose") {
  NetworkConfig cfg = toy_stride1();
  Network net(cfg, 3);
  SceneSpec spec;
  spec.layout = SceneLayout::TexturedPlanes;
  spec.width = spec.height = 32;
  spec.paired_views = 1;
  SyntheticScene scene = generate_scene(spec, 17);
  Tensor feat = net.extract_features(image_to_tensor(scene.images[0]));
  int h = feat.dim(1), w = feat.dim(2);
  auto planes = sample_planes(cfg.labels, cfg.d_min, cfg.sampling);
  WarpGrid grid =
      compute_warp_grid(scene.intrinsics, CameraPose::identity(), planes, w, h);

  Tensor raw = net.build_cost_volume(feat, feat, grid);
  REQUIRE(raw.shape() ==
          std::vector<int>{2 * cfg.channels, cfg.labels, h, w});
  int64_t half = raw.numel() / 2;
  for (int64_t i = 0; i < half; ++i)
    CHECK(raw.data()[i] == raw.data()[half + i]);  // warped block == ref block

  NetworkConfig diff_cfg = cfg;
  diff_cfg.cost_variant = CostVariant::AbsDiff;
  Network diff_net(diff_cfg, 3);
  Tensor raw2 = diff_net.build_cost_volume(feat, feat, grid);
  REQUIRE(raw2.shape() == std::vector<int>{cfg.channels, cfg.labels, h, w});
  for (int64_t i = 0; i < raw2.numel(); ++i) CHECK(raw2.data()[i] == 0.0);
}

TEST_CASE("regularize averaging is idempotent and shapes are right") {
  NetworkConfig cfg = NetworkConfig::toy();
  cfg.labels = 4;
  Network net(cfg, 9);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> uni(-1, 1);
  std::vector<double> vol(static_cast<size_t>(2 * cfg.channels) * 4 * 8 * 8);
  for (auto& v : vol) v = uni(rng);
  Tensor raw = Tensor::from_data({2 * cfg.channels, 4, 8, 8}, vol);

  Tensor one = net.regularize(raw);
  CHECK(one.shape() == std::vector<int>{4, 8, 8});
  // Averaging the same view twice changes nothing.
  Tensor twice = mul_scalar(add(net.regularize(raw), net.regularize(raw)), 0.5);
  for (int64_t i = 0; i < one.numel(); ++i)
    CHECK(one.data()[i] == twice.data()[i]);
}

TEST_CASE("linear probe: opposite volumes average to zero") {
  NetworkConfig cfg = NetworkConfig::toy();
  cfg.labels = 4;
  Network net(cfg, 21);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(-1, 1);
  std::vector<double> vol(static_cast<size_t>(2 * cfg.channels) * 4 * 6 * 6);
  for (auto& v : vol) v = uni(rng);
  Tensor v_pos = Tensor::from_data({2 * cfg.channels, 4, 6, 6}, vol);
  for (auto& v : vol) v = -v;
  Tensor v_neg = Tensor::from_data({2 * cfg.channels, 4, 6, 6}, vol);

  Tensor avg = mul_scalar(
      add(net.regularize(v_pos, true), net.regularize(v_neg, true)), 0.5);
  for (int64_t i = 0; i < avg.numel(); ++i) CHECK(avg.data()[i] == 0.0);
}

TEST_CASE("aggregation starts as the identity") {
  NetworkConfig cfg = NetworkConfig::toy();
  Network net(cfg, 4);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> uni(-1, 1);
  std::vector<double> vol(static_cast<size_t>(cfg.labels) * 8 * 8);
  for (auto& v : vol) v = uni(rng);
  Tensor initial = Tensor::from_data({cfg.labels, 8, 8}, vol);
  std::vector<double> fv(static_cast<size_t>(cfg.channels) * 8 * 8);
  for (auto& v : fv) v = uni(rng);
  Tensor feat = Tensor::from_data({cfg.channels, 8, 8}, fv);

  Tensor residual = net.aggregation_residual(initial, feat);
  for (int64_t i = 0; i < residual.numel(); ++i) CHECK(residual.data()[i] == 0.0);
}

TEST_CASE("aggregation is constant on constant inputs away from borders") {
  NetworkConfig cfg = NetworkConfig::toy();
  cfg.labels = 2;
  cfg.channels = 4;
  cfg.context_channels = 4;
  Network net(cfg, 5);
  randomize(net.parameter("ctx7.w"), 71);
  randomize(net.parameter("ctx7.b"), 72);
  int size = 80;  // dilations sum to 33 taps of context on each side
  Tensor initial = Tensor::full({2, size, size}, 0.37);
  Tensor feat = Tensor::full({4, size, size}, -0.8);
  Tensor res = net.aggregation_residual(initial, feat);
  int margin = 33;
  double center = res.data()[(0 * size + size / 2) * size + size / 2];
  for (int l = 0; l < 2; ++l) {
    double ref = res.data()[(l * size + margin) * size + margin];
    for (int y = margin; y < size - margin; ++y)
      for (int x = margin; x < size - margin; ++x)
        CHECK(res.data()[(l * size + y) * size + x] ==
              doctest::Approx(ref).epsilon(1e-12));
  }
  (void)center;
}

TEST_CASE("aggregation is equivariant to slice permutation") {
  NetworkConfig cfg = NetworkConfig::toy();
  Network net(cfg, 6);
  randomize(net.parameter("ctx7.w"), 73);
  randomize(net.parameter("ctx7.b"), 74);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> uni(-1, 1);
  int L = cfg.labels, h = 8, w = 8;
  std::vector<double> vol(static_cast<size_t>(L) * h * w);
  for (auto& v : vol) v = uni(rng);
  std::vector<double> fv(static_cast<size_t>(cfg.channels) * h * w);
  for (auto& v : fv) v = uni(rng);
  Tensor feat = Tensor::from_data({cfg.channels, h, w}, fv);
  Tensor initial = Tensor::from_data({L, h, w}, vol);

  std::vector<int> perm(L);
  for (int l = 0; l < L; ++l) perm[l] = (l * 3 + 1) % L;
  std::vector<double> pvol(vol.size());
  for (int l = 0; l < L; ++l)
    std::copy_n(vol.begin() + perm[l] * h * w, h * w, pvol.begin() + l * h * w);
  Tensor permuted = Tensor::from_data({L, h, w}, pvol);

  Tensor r1 = net.aggregation_residual(initial, feat);
  Tensor r2 = net.aggregation_residual(permuted, feat);
  for (int l = 0; l < L; ++l)
    for (int i = 0; i < h * w; ++i)
      CHECK(r2.data()[l * h * w + i] == r1.data()[perm[l] * h * w + i]);
}

TEST_CASE("regress_depth closed forms") {
  auto planes = sample_planes(64, 0.5, SamplingMode::InverseDepth);
  Tensor onehot = Tensor::zeros({64, 1, 1});
  onehot.data()[4] = 1.0;  // label l = 5, one-based
  DepthRegression r = regress_depth(onehot, planes);
  CHECK(r.label.data()[0] == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(r.depth.data()[0] == doctest::Approx(6.4).epsilon(1e-14));

  Tensor uniform = Tensor::full({64, 1, 1}, 1.0 / 64);
  DepthRegression ru = regress_depth(uniform, planes);
  CHECK(ru.label.data()[0] == doctest::Approx(32.5).epsilon(1e-12));
  CHECK(ru.depth.data()[0] == doctest::Approx(32.0 / 32.5).epsilon(1e-12));

  Tensor peaks = Tensor::zeros({64, 1, 1});
  peaks.data()[1] = 0.5;  // labels 2 and 4
  peaks.data()[3] = 0.5;
  DepthRegression rp = regress_depth(peaks, planes);
  CHECK(rp.label.data()[0] == doctest::Approx(3.0).epsilon(1e-14));

  auto uni_planes = sample_planes(4, 1.0, SamplingMode::UniformDepth, 4.0);
  Tensor p = Tensor::from_data({4, 1, 1}, {0.25, 0.25, 0.25, 0.25});
  DepthRegression rud = regress_depth(p, uni_planes);
  CHECK(rud.depth.data()[0] == doctest::Approx(2.5));  // mean of 1,2,3,4
}

TEST_CASE("forward pass on a toy scene") {
  NetworkConfig cfg = toy_stride1();
  Network net(cfg, 11);
  SceneSpec spec;
  spec.width = spec.height = 32;
  spec.paired_views = 2;
  SyntheticScene scene = generate_scene(spec, 42);

  ForwardResult out = run_scene(net, scene);
  REQUIRE(out.initial.depth.shape() == std::vector<int>{32, 32});
  REQUIRE(out.refined.depth.shape() == std::vector<int>{32, 32});
  for (int64_t i = 0; i < out.refined.depth.numel(); ++i) {
    CHECK(out.refined.depth.data()[i] >= cfg.d_min);
    CHECK(out.refined.depth.data()[i] <= cfg.labels * cfg.d_min);
    CHECK(out.initial.depth.data()[i] >= cfg.d_min);
    CHECK(out.initial.depth.data()[i] <= cfg.labels * cfg.d_min);
  }
  // Probabilities normalize over labels.
  int64_t plane = 32 * 32;
  for (int64_t i = 0; i < plane; ++i) {
    double total = 0;
    for (int l = 0; l < cfg.labels; ++l)
      total += out.prob_refined.data()[l * plane + i];
    CHECK(std::fabs(total - 1.0) < 1e-9);
  }
  // refined = initial + residual, recorded.
  for (int64_t i = 0; i < out.refined_volume.numel(); ++i)
    CHECK(out.refined_volume.data()[i] ==
          doctest::Approx(out.initial_volume.data()[i] +
                          out.residual_volume.data()[i]));
  CHECK(out.raw_volumes.size() == 2);
  CHECK(out.masks.size() == 2);
}

TEST_CASE("aggregation off collapses refined onto initial") {
  NetworkConfig cfg = toy_stride1();
  cfg.aggregation = false;
  Network net(cfg, 11);
  SceneSpec spec;
  spec.width = spec.height = 32;
  spec.paired_views = 1;
  SyntheticScene scene = generate_scene(spec, 43);
  ForwardResult out = run_scene(net, scene);
  for (int64_t i = 0; i < out.refined.depth.numel(); ++i)
    CHECK(out.refined.depth.data()[i] == out.initial.depth.data()[i]);
}

TEST_CASE("duplicated paired view changes nothing") {
  NetworkConfig cfg = toy_stride1();
  Network net(cfg, 13);
  SceneSpec spec;
  spec.width = spec.height = 32;
  spec.paired_views = 1;
  SyntheticScene scene = generate_scene(spec, 44);
  Tensor ref = image_to_tensor(scene.images[0]);
  Tensor paired = image_to_tensor(scene.images[1]);

  ForwardResult once =
      net.forward(ref, {paired}, scene.intrinsics, {scene.poses[1]});
  ForwardResult twice = net.forward(ref, {paired, paired}, scene.intrinsics,
                                    {scene.poses[1], scene.poses[1]});
  for (int64_t i = 0; i < once.refined.depth.numel(); ++i)
    CHECK(once.refined.depth.data()[i] == twice.refined.depth.data()[i]);
}

TEST_CASE("one-hot gt volume beats wrong planes photometrically") {
  // Warp machinery check: probability mass on the true plane must explain
  // the paired image better than mass on any single wrong plane.
  SceneSpec spec;
  spec.layout = SceneLayout::SinglePlane;
  spec.plane_depth = 2.0;  // exactly plane l=2 of L=8, d_min=0.5
  spec.width = spec.height = 32;
  spec.paired_views = 1;
  SyntheticScene scene = generate_scene(spec, 55);

  int L = 8;
  auto planes = sample_planes(L, 0.5, SamplingMode::InverseDepth);
  REQUIRE(planes.depths[1] == doctest::Approx(2.0));
  Tensor paired = image_to_tensor(scene.images[1]);
  WarpGrid grid = compute_warp_grid(scene.intrinsics, scene.poses[1], planes,
                                    32, 32);
  Tensor warped = grid_sample_bilinear(paired, grid.coords, grid.in_bounds, L,
                                       32, 32);  // [1,L,32,32]
  auto l1_at = [&](int label) {
    double acc = 0;
    int64_t count = 0;
    for (int i = 0; i < 32 * 32; ++i) {
      if (!grid.in_bounds[label * 32 * 32 + i]) continue;
      acc += std::fabs(scene.images[0].pixels[i] -
                       warped.data()[label * 32 * 32 + i]);
      ++count;
    }
    REQUIRE(count > 0);
    return acc / count;
  };
  double true_err = l1_at(1);
  for (int l = 0; l < L; ++l) {
    if (l == 1) continue;
    CHECK(true_err < l1_at(l));
  }
}

TEST_CASE("upsampling stage shifts metrics only modestly on smooth scenes") {
  NetworkConfig cfg = NetworkConfig::toy();  // stride 2: upsample is active
  Network net(cfg, 17);
  SceneSpec spec;
  spec.layout = SceneLayout::SinglePlane;
  spec.plane_depth = 2.0;
  spec.plane_tilt = 0.2;
  spec.width = spec.height = 32;
  spec.paired_views = 1;
  SyntheticScene scene = generate_scene(spec, 70);

  ForwardResult out = run_scene(net, scene);
  DepthMap full = out.refined_depth_map();

  // Alternative readout: regress at feature resolution, then upsample the
  // depth map itself.
  Tensor prob_low = softmax(out.refined_volume, 0);
  DepthRegression low = regress_depth(prob_low, out.planes);
  Tensor up = upsample_bilinear2d(
      reshape(low.depth, {1, low.depth.dim(0), low.depth.dim(1)}), 32, 32);
  DepthMap alt;
  alt.width = 32;
  alt.height = 32;
  alt.depth = up.values();
  alt.valid.assign(alt.depth.size(), 1);

  DepthMetrics m_full = depth_metrics(full, scene.depth_gt);
  DepthMetrics m_alt = depth_metrics(alt, scene.depth_gt);
  CHECK(std::fabs(m_full.abs_rel - m_alt.abs_rel) < 0.2);
}

TEST_CASE("checkpoint save and load round trip") {
  NetworkConfig cfg = NetworkConfig::toy();
  Network net(cfg, 23);
  std::string path = "/tmp/ps_test_ckpt.bin";
  net.save_checkpoint(path);
  Network back = Network::load_checkpoint(path);
  CHECK(back.config().channels == cfg.channels);
  REQUIRE(back.parameters().size() == net.parameters().size());
  for (size_t i = 0; i < net.parameters().size(); ++i) {
    const auto& [name, t] = net.parameters()[i];
    const auto& [name2, t2] = back.parameters()[i];
    CHECK(name == name2);
    REQUIRE(t.numel() == t2.numel());
    for (int64_t j = 0; j < t.numel(); ++j)
      CHECK(t.data()[j] == t2.data()[j]);  // bit-exact
  }
}

TEST_CASE("forward rejects empty view lists") {
  Network net(NetworkConfig::toy(), 1);
  Tensor img = Tensor::full({1, 16, 16}, 0.5);
  CameraIntrinsics K;
  K.fx = K.fy = 16;
  K.cx = K.cy = 7.5;
  K.width = K.height = 16;
  CHECK_THROWS_AS(net.forward(img, {}, K, {}), std::invalid_argument);
}
