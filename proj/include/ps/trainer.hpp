#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ps/depth_map.hpp"
#include "ps/network.hpp"
#include "ps/synth.hpp"
#include "ps/tensor.hpp"

namespace ps {

struct LossReport {
  double total = 0;
  double initial_term = 0;
  double refined_term = 0;
  double lambda = 0;
  Tensor loss;  // scalar, total = lambda*initial_term + refined_term
};

/// Two-term masked Huber loss over depth maps. Pixels whose ground truth
/// falls outside [depth_lo, depth_hi] are excluded from both terms.
LossReport compute_loss(const Tensor& initial_depth, const Tensor& refined_depth,
                        const DepthMap& gt, double lambda, double depth_lo,
                        double depth_hi);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params,
                         AdamConfig config = {});
  void zero_grad();
  /// Bias-corrected update from the accumulated grads. A parameter whose
  /// grad was never populated is an invalid state.
  void step();
  int64_t step_count() const { return t_; }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  AdamConfig config_;
  int64_t t_ = 0;
};

struct TrainConfig {
  int steps = 1000;
  int batch = 2;
  double lambda = 0.7;
  AdamConfig adam;
  uint64_t seed = 1;
  bool verbose = false;
};

struct LossRow {
  int step = 0;
  double total = 0, initial_term = 0, refined_term = 0;
};

struct TrainResult {
  std::vector<LossRow> curve;
};

Tensor image_to_tensor(const Image& img);

/// Forward pass + loss for one scene, using the first `views` paired views
/// (views <= 0 means all of them).
LossReport scene_loss(const Network& net, const SyntheticScene& scene,
                      double lambda, int views = 0);

ForwardResult run_scene(const Network& net, const SyntheticScene& scene,
                        int views = 0);

/// Deterministic end-to-end optimization on in-memory scenes. Runs with the
/// NaN trap enabled so a non-finite loss aborts naming the offending op.
TrainResult train(Network& net, const std::vector<SyntheticScene>& dataset,
                  const TrainConfig& config);

void save_loss_curve(const std::string& path, const std::vector<LossRow>& curve);

}  // namespace ps
