#include "ps/trainer.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace ps {

LossReport compute_loss(const Tensor& initial_depth, const Tensor& refined_depth,
                        const DepthMap& gt, double lambda, double depth_lo,
                        double depth_hi) {
  if (initial_depth.shape() != refined_depth.shape())
    throw std::invalid_argument("compute_loss: depth shape mismatch");
  int64_t n = initial_depth.numel();
  if (n != gt.pixels()) throw std::invalid_argument("compute_loss: gt size mismatch");

  std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    double g = gt.depth[static_cast<size_t>(i)];
    mask[static_cast<size_t>(i)] =
        gt.valid[static_cast<size_t>(i)] && g >= depth_lo && g <= depth_hi ? 1 : 0;
  }
  Tensor target = Tensor::from_data(initial_depth.shape(), gt.depth);

  Tensor init_term = huber_loss_masked(initial_depth, target, mask);
  Tensor refined_term = huber_loss_masked(refined_depth, target, mask);
  LossReport report;
  report.lambda = lambda;
  report.initial_term = init_term.item();
  report.refined_term = refined_term.item();
  report.loss = add(mul_scalar(init_term, lambda), refined_term);
  report.total = report.loss.item();
  return report;
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params,
                             AdamConfig config)
    : config_(config) {
  for (auto& [name, t] : params) {
    Slot slot;
    slot.name = name;
    slot.param = t;
    slot.m.assign(static_cast<size_t>(t.numel()), 0.0);
    slot.v.assign(static_cast<size_t>(t.numel()), 0.0);
    slots_.push_back(std::move(slot));
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& slot : slots_) slot.param.zero_grad();
}

void AdamOptimizer::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& slot : slots_) {
    if (!slot.param.has_grad())
      throw std::logic_error("adam: parameter " + slot.name +
                             " has no gradient; run backward first");
    const auto& g = slot.param.grad();
    double* p = slot.param.data();
    int64_t n = slot.param.numel();
    for (int64_t i = 0; i < n; ++i) {
      slot.m[i] = config_.beta1 * slot.m[i] + (1 - config_.beta1) * g[i];
      slot.v[i] = config_.beta2 * slot.v[i] + (1 - config_.beta2) * g[i] * g[i];
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

Tensor image_to_tensor(const Image& img) {
  return Tensor::from_data({1, img.height, img.width}, img.pixels);
}

ForwardResult run_scene(const Network& net, const SyntheticScene& scene,
                        int views) {
  int available = scene.paired_count();
  int use = views <= 0 ? available : std::min(views, available);
  if (use < 1) throw std::invalid_argument("run_scene: no paired views");
  Tensor ref = image_to_tensor(scene.images[0]);
  std::vector<Tensor> paired;
  std::vector<CameraPose> poses;
  for (int k = 1; k <= use; ++k) {
    paired.push_back(image_to_tensor(scene.images[k]));
    poses.push_back(scene.poses[k]);
  }
  return net.forward(ref, paired, scene.intrinsics, poses);
}

LossReport scene_loss(const Network& net, const SyntheticScene& scene,
                      double lambda, int views) {
  ForwardResult fwd = run_scene(net, scene, views);
  const auto& cfg = net.config();
  double lo = cfg.d_min;
  double hi = cfg.sampling == SamplingMode::InverseDepth
                  ? cfg.labels * cfg.d_min
                  : cfg.d_max;
  return compute_loss(fwd.initial.depth, fwd.refined.depth, scene.depth_gt,
                      lambda, lo, hi);
}

TrainResult train(Network& net, const std::vector<SyntheticScene>& dataset,
                  const TrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (config.batch < 1) throw std::invalid_argument("train: batch < 1");

  bool prev_checked = checked_mode();
  checked_mode() = true;  // non-finite values abort naming the offending op

  AdamOptimizer opt(net.parameters(), config.adam);
  std::mt19937_64 rng(config.seed ^ 0x7261696e5f726eull);
  TrainResult result;
  try {
    for (int step = 1; step <= config.steps; ++step) {
      Tensor batch_loss;
      LossRow row;
      row.step = step;
      for (int b = 0; b < config.batch; ++b) {
        size_t idx = static_cast<size_t>(rng() % dataset.size());
        LossReport report = scene_loss(net, dataset[idx], config.lambda);
        row.total += report.total / config.batch;
        row.initial_term += report.initial_term / config.batch;
        row.refined_term += report.refined_term / config.batch;
        batch_loss = b == 0 ? report.loss : add(batch_loss, report.loss);
      }
      if (config.batch > 1) batch_loss = mul_scalar(batch_loss, 1.0 / config.batch);
      if (!std::isfinite(row.total))
        throw NumericError("train: non-finite batch loss");
      opt.zero_grad();
      backward(batch_loss);
      opt.step();
      result.curve.push_back(row);
      if (config.verbose && (step % 25 == 0 || step == 1))
        std::fprintf(stderr, "step %d loss %.6f (init %.6f refined %.6f)\n",
                     step, row.total, row.initial_term, row.refined_term);
    }
  } catch (...) {
    checked_mode() = prev_checked;
    throw;
  }
  checked_mode() = prev_checked;
  return result;
}

void save_loss_curve(const std::string& path, const std::vector<LossRow>& curve) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "step,loss,initial,refined\n";
  f.precision(17);
  for (const auto& row : curve)
    f << row.step << ',' << row.total << ',' << row.initial_term << ','
      << row.refined_term << '\n';
}

}  // namespace ps
