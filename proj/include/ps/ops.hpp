#pragma once

#include <cstdint>
#include <vector>

#include "ps/tensor.hpp"

namespace ps {

// Elementwise / scalar
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor reciprocal(const Tensor& a);

// Reductions
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Shape
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// [C,H,W] -> [C,L,H,W], the input repeated across a new label axis.
Tensor broadcast_labels(const Tensor& a, int labels);

/// Cross-correlation over [N,C,H,W] with weight [O,C,k,k]. Zero padding.
/// Pass an undefined Tensor for bias to disable it.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int dilation = 1, int padding = 0);

/// Cross-correlation over [N,C,D,H,W] with weight [O,C,kd,kh,kw].
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0);

/// Bilinear sampling of feature [C,H,W] at continuous pixel coords.
/// coords holds planes*out_h*out_w (x,y) pairs; in_bounds masks samples to
/// zero. Out-of-range taps read as zero (zero padding). Differentiable in
/// the feature values only.
Tensor grid_sample_bilinear(const Tensor& feature,
                            const std::vector<double>& coords,
                            const std::vector<uint8_t>& in_bounds, int planes,
                            int out_h, int out_w);

/// Mean over non-overlapping window x window blocks; a partial block at the
/// edge averages the pixels actually present. Accepts [C,H,W] or [N,C,H,W].
Tensor avg_pool2d(const Tensor& input, int window);

/// Bilinear resize of the trailing two axes, pixel-center aligned.
/// Accepts [C,H,W] or [N,C,H,W].
Tensor upsample_bilinear2d(const Tensor& input, int out_h, int out_w);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& input, int axis);

/// Mean Huber (SmoothL1, threshold 1) of pred - target over masked elements.
/// target must not require grad; mask length equals numel, all-zero mask is
/// an error.
Tensor huber_loss_masked(const Tensor& pred, const Tensor& target,
                         const std::vector<uint8_t>& mask);

constexpr double kHuberDelta = 1.0;

/// out[y,x] = sum_l weights[l] * prob[l,y,x] for prob of shape [L,H,W].
Tensor label_expectation(const Tensor& prob, const std::vector<double>& weights);

}  // namespace ps
