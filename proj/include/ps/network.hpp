#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ps/depth_map.hpp"
#include "ps/geometry.hpp"
#include "ps/ops.hpp"
#include "ps/tensor.hpp"

namespace ps {

enum class CostVariant { Concat, AbsDiff };

struct NetworkConfig {
  int input_channels = 1;  // grayscale scenes; 3 for external RGB
  int channels = 32;       // feature channels CH
  int labels = 64;         // plane count L
  double d_min = 0.5;
  double d_max = 10.0;  // uniform sampling only
  int feature_stride = 4;  // 1, 2 or 4
  CostVariant cost_variant = CostVariant::Concat;
  bool aggregation = true;
  SamplingMode sampling = SamplingMode::InverseDepth;
  int volume_channels = 16;   // width of the 3D regularizer
  int context_channels = 32;  // width of the aggregation context net

  void validate() const;
  std::string to_text() const;
  static NetworkConfig from_text(const std::string& text);
  static NetworkConfig load(const std::string& path);

  /// Small shape for tests and desk-scale runs.
  static NetworkConfig toy();
};

struct DepthRegression {
  Tensor depth;  // [H,W] meters
  Tensor label;  // [H,W] expected 1-based label
};

/// Expected-label depth readout over a probability volume [L,H,W].
/// Inverse mode: d = L*d_min / sum_l l*p_l; uniform mode: d = sum_l d_l*p_l.
DepthRegression regress_depth(const Tensor& prob,
                              const PlaneHypothesisSet& planes);

struct ForwardResult {
  DepthRegression initial;  // from the pre-aggregation volume
  DepthRegression refined;  // from the aggregated volume
  Tensor prob_initial;      // [L,H,W] at image resolution
  Tensor prob_refined;
  // Feature-resolution volumes, pre-softmax.
  Tensor initial_volume;  // [L,h,w]
  Tensor refined_volume;
  Tensor residual_volume;
  std::vector<Tensor> raw_volumes;           // per view, pre-regularization
  std::vector<std::vector<uint8_t>> masks;   // per-view in-bounds counts
  PlaneHypothesisSet planes;

  DepthMap initial_depth_map() const;
  DepthMap refined_depth_map() const;
};

class Network {
 public:
  Network(const NetworkConfig& config, uint64_t init_seed);

  const NetworkConfig& config() const { return config_; }
  /// Stable name -> tensor pairs, in initialization order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const {
    return params_;
  }
  Tensor parameter(const std::string& name) const;

  /// Seven-conv encoder, pyramid pooling over four window sizes, two fusion
  /// convs down to `channels`. Image is [Cin,H,W] with H,W divisible by the
  /// feature stride.
  Tensor extract_features(const Tensor& image) const;

  /// Warps paired features through every plane and stacks them against the
  /// reference features: [2CH,L,h,w] for concat, [CH,L,h,w] for abs-diff.
  Tensor build_cost_volume(const Tensor& ref_features,
                           const Tensor& paired_features,
                           const WarpGrid& grid) const;

  /// Shared-weight 3D conv stack reducing one raw volume to [L,h,w].
  /// linear_probe runs the same stack bias-free and activation-free so
  /// linearity checks can reason about averaging.
  Tensor regularize(const Tensor& raw_volume, bool linear_probe = false) const;

  /// Residual of the context network; refined volume = initial + residual.
  /// Slices share weights (they are processed as a batch).
  Tensor aggregation_residual(const Tensor& initial_volume,
                              const Tensor& ref_features) const;

  ForwardResult forward(const Tensor& ref_image,
                        const std::vector<Tensor>& paired_images,
                        const CameraIntrinsics& intrinsics,
                        const std::vector<CameraPose>& paired_poses) const;

  void save_checkpoint(const std::string& path) const;
  static Network load_checkpoint(const std::string& path);

 private:
  struct Conv {
    Tensor w, b;
  };
  Conv make_conv2d(const std::string& name, int out_c, int in_c, int k,
                   std::mt19937_64* rng);
  Conv make_conv3d(const std::string& name, int out_c, int in_c,
                   std::mt19937_64* rng);

  NetworkConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;

  std::vector<Conv> encoder_;     // 7 convs
  std::vector<int> enc_strides_;  // per-conv stride
  Conv fuse1_, fuse2_;
  Conv vol_entry_, vol_res_[4], vol_head_;
  std::vector<Conv> context_;  // 7 dilated convs
};

}  // namespace ps
