#include "ps/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ps {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// Valid output range [ox0, ox1) so that ox*stride + off lands in [0, limit).
void tap_range(int out_len, int stride, int off, int limit, int& ox0, int& ox1) {
  int64_t lo = off < 0 ? ceil_div(-off, stride) : 0;
  int64_t hi = ceil_div(limit - off, stride);
  ox0 = static_cast<int>(std::max<int64_t>(0, lo));
  ox1 = static_cast<int>(std::min<int64_t>(out_len, std::max<int64_t>(0, hi)));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  auto ai = a.impl(), bi = b.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "add", {a, b}, [ai, bi, oi] {
    int64_t n = oi->numel();
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (int64_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  auto ai = a.impl(), bi = b.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "sub", {a, b}, [ai, bi, oi] {
    int64_t n = oi->numel();
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (int64_t i = 0; i < n; ++i) bi->grad[i] -= oi->grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  auto ai = a.impl(), bi = b.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "mul", {a, b}, [ai, bi, oi] {
    int64_t n = oi->numel();
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (int64_t i = 0; i < n; ++i) ai->grad[i] += bi->values[i] * oi->grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (int64_t i = 0; i < n; ++i) bi->grad[i] += ai->values[i] * oi->grad[i];
    }
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + c;
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "add_scalar", {a}, [ai, oi] {
    ai->ensure_grad();
    int64_t n = oi->numel();
    for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
  });
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "mul_scalar", {a}, [ai, oi, c] {
    ai->ensure_grad();
    int64_t n = oi->numel();
    for (int64_t i = 0; i < n; ++i) ai->grad[i] += c * oi->grad[i];
  });
  return out;
}

Tensor abs(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::fabs(pa[i]);
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "abs", {a}, [ai, oi] {
    ai->ensure_grad();
    int64_t n = oi->numel();
    for (int64_t i = 0; i < n; ++i) {
      double x = ai->values[i];
      double s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
      ai->grad[i] += s * oi->grad[i];
    }
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > 0 ? pa[i] : 0.0;
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "relu", {a}, [ai, oi] {
    ai->ensure_grad();
    int64_t n = oi->numel();
    for (int64_t i = 0; i < n; ++i)
      if (ai->values[i] > 0) ai->grad[i] += oi->grad[i];
  });
  return out;
}

Tensor reciprocal(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = 1.0 / pa[i];
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "reciprocal", {a}, [ai, oi] {
    ai->ensure_grad();
    int64_t n = oi->numel();
    for (int64_t i = 0; i < n; ++i) {
      double inv = 1.0 / ai->values[i];
      ai->grad[i] -= inv * inv * oi->grad[i];
    }
  });
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  const double* pa = a.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor out = Tensor::scalar(acc);
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "sum", {a}, [ai, oi] {
    ai->ensure_grad();
    double g = oi->grad[0];
    for (auto& v : ai->grad) v += g;
  });
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  const double* pa = a.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "mean", {a}, [ai, oi, n] {
    ai->ensure_grad();
    double g = oi->grad[0] / static_cast<double>(n);
    for (auto& v : ai->grad) v += g;
  });
  return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out = Tensor::from_data(std::move(shape), a.values());
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "reshape", {a}, [ai, oi] {
    ai->ensure_grad();
    int64_t n = oi->numel();
    for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const auto& base = parts[0].shape();
  int rank = static_cast<int>(base.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis");
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && p.shape()[i] != base[i])
        throw std::invalid_argument("concat: shape mismatch");
    total += p.shape()[axis];
  }
  std::vector<int> out_shape = base;
  out_shape[axis] = total;
  Tensor out = Tensor::zeros(out_shape);

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= base[i];
  for (int i = axis + 1; i < rank; ++i) inner *= base[i];

  double* po = out.data();
  int64_t out_row = static_cast<int64_t>(total) * inner;
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t chunk = static_cast<int64_t>(p.shape()[axis]) * inner;
    const double* pp = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(po + o * out_row + off, pp + o * chunk,
                  static_cast<size_t>(chunk) * sizeof(double));
    off += chunk;
  }

  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) impls.push_back(p.impl());
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "concat", parts, [impls, oi, outer, inner, axis] {
    int64_t out_row = static_cast<int64_t>(oi->shape[axis]) * inner;
    int64_t off = 0;
    for (auto& pi : impls) {
      int64_t chunk = static_cast<int64_t>(pi->shape[axis]) * inner;
      if (pi->requires_grad) {
        pi->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          const double* g = oi->grad.data() + o * out_row + off;
          double* pg = pi->grad.data() + o * chunk;
          for (int64_t i = 0; i < chunk; ++i) pg[i] += g[i];
        }
      }
      off += chunk;
    }
  });
  return out;
}

Tensor broadcast_labels(const Tensor& a, int labels) {
  if (a.rank() != 3) throw std::invalid_argument("broadcast_labels: need [C,H,W]");
  if (labels < 1) throw std::invalid_argument("broadcast_labels: labels < 1");
  int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  Tensor out = Tensor::zeros({C, labels, H, W});
  const double* pa = a.data();
  double* po = out.data();
  int64_t plane = static_cast<int64_t>(H) * W;
  for (int c = 0; c < C; ++c)
    for (int l = 0; l < labels; ++l)
      std::memcpy(po + (static_cast<int64_t>(c) * labels + l) * plane,
                  pa + c * plane, static_cast<size_t>(plane) * sizeof(double));
  auto ai = a.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "broadcast_labels", {a}, [ai, oi, C, labels, plane] {
    ai->ensure_grad();
    for (int c = 0; c < C; ++c) {
      double* pg = ai->grad.data() + c * plane;
      for (int l = 0; l < labels; ++l) {
        const double* g =
            oi->grad.data() + (static_cast<int64_t>(c) * labels + l) * plane;
        for (int64_t i = 0; i < plane; ++i) pg[i] += g[i];
      }
    }
  });
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int dilation, int padding) {
  if (input.rank() != 4) throw std::invalid_argument("conv2d: input must be [N,C,H,W]");
  if (weight.rank() != 4) throw std::invalid_argument("conv2d: weight must be [O,C,kh,kw]");
  if (stride < 1 || dilation < 1 || padding < 0)
    throw std::invalid_argument("conv2d: bad stride/dilation/padding");
  int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  int O = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O))
    throw std::invalid_argument("conv2d: bias must be [O]");
  int OH = (H + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
  int OW = (W + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
  if (OH < 1 || OW < 1) throw std::invalid_argument("conv2d: empty output");

  Tensor out = Tensor::zeros({N, O, OH, OW});
  const double* in = input.data();
  const double* wt = weight.data();
  double* po = out.data();
  int64_t in_img = static_cast<int64_t>(C) * H * W;
  int64_t out_img = static_cast<int64_t>(O) * OH * OW;

  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      double* op = po + n * out_img + static_cast<int64_t>(o) * OH * OW;
      if (bias.defined()) {
        double b = bias.data()[o];
        for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) op[i] = b;
      }
      for (int c = 0; c < C; ++c) {
        const double* ip = in + n * in_img + static_cast<int64_t>(c) * H * W;
        const double* wp = wt + (static_cast<int64_t>(o) * C + c) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            double wv = wp[ky * kw + kx];
            int offx = kx * dilation - padding;
            int ox0, ox1;
            tap_range(OW, stride, offx, W, ox0, ox1);
            for (int oy = 0; oy < OH; ++oy) {
              int iy = oy * stride - padding + ky * dilation;
              if (iy < 0 || iy >= H) continue;
              const double* irow = ip + static_cast<int64_t>(iy) * W + offx;
              double* orow = op + static_cast<int64_t>(oy) * OW;
              if (stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  orow[ox] += wv * irow[static_cast<int64_t>(ox) * stride];
              }
            }
          }
        }
      }
    }
  }

  auto ii = input.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  TensorImpl* oi = out.impl().get();
  detail::attach_node(
      out, "conv2d", {input, weight, bias},
      [ii, wi, bi, oi, N, C, H, W, O, kh, kw, OH, OW, stride, dilation,
       padding] {
        const double* gout = oi->grad.data();
        int64_t in_img = static_cast<int64_t>(C) * H * W;
        int64_t out_img = static_cast<int64_t>(O) * OH * OW;
        bool need_in = ii->requires_grad;
        bool need_w = wi->requires_grad;
        if (need_in) ii->ensure_grad();
        if (need_w) wi->ensure_grad();
        if (bi && bi->requires_grad) {
          bi->ensure_grad();
          for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) {
              const double* g = gout + n * out_img + static_cast<int64_t>(o) * OH * OW;
              double acc = 0.0;
              for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i)
                acc += g[i];
              bi->grad[o] += acc;
            }
        }
        if (!need_in && !need_w) return;
        for (int n = 0; n < N; ++n) {
          for (int o = 0; o < O; ++o) {
            const double* gop = gout + n * out_img + static_cast<int64_t>(o) * OH * OW;
            for (int c = 0; c < C; ++c) {
              const double* ip = ii->values.data() + n * in_img + static_cast<int64_t>(c) * H * W;
              double* gip = need_in ? ii->grad.data() + n * in_img + static_cast<int64_t>(c) * H * W
                                    : nullptr;
              const double* wp = wi->values.data() + (static_cast<int64_t>(o) * C + c) * kh * kw;
              double* gwp = need_w ? wi->grad.data() + (static_cast<int64_t>(o) * C + c) * kh * kw
                                   : nullptr;
              for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                  double wv = wp[ky * kw + kx];
                  int offx = kx * dilation - padding;
                  int ox0, ox1;
                  tap_range(OW, stride, offx, W, ox0, ox1);
                  double wacc = 0.0;
                  for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride - padding + ky * dilation;
                    if (iy < 0 || iy >= H) continue;
                    const double* irow = ip + static_cast<int64_t>(iy) * W + offx;
                    double* girow = need_in ? gip + static_cast<int64_t>(iy) * W + offx : nullptr;
                    const double* grow = gop + static_cast<int64_t>(oy) * OW;
                    if (stride == 1) {
                      for (int ox = ox0; ox < ox1; ++ox) {
                        double g = grow[ox];
                        if (need_in) girow[ox] += wv * g;
                        wacc += irow[ox] * g;
                      }
                    } else {
                      for (int ox = ox0; ox < ox1; ++ox) {
                        double g = grow[ox];
                        int64_t ix = static_cast<int64_t>(ox) * stride;
                        if (need_in) girow[ix] += wv * g;
                        wacc += irow[ix] * g;
                      }
                    }
                  }
                  if (need_w) gwp[ky * kw + kx] += wacc;
                }
              }
            }
          }
        }
      });
  return out;
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  if (input.rank() != 5) throw std::invalid_argument("conv3d: input must be [N,C,D,H,W]");
  if (weight.rank() != 5) throw std::invalid_argument("conv3d: weight must be [O,C,kd,kh,kw]");
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv3d: bad stride/padding");
  int N = input.dim(0), C = input.dim(1), D = input.dim(2), H = input.dim(3),
      W = input.dim(4);
  int O = weight.dim(0), kd = weight.dim(2), kh = weight.dim(3), kw = weight.dim(4);
  if (weight.dim(1) != C) throw std::invalid_argument("conv3d: channel mismatch");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O))
    throw std::invalid_argument("conv3d: bias must be [O]");
  int OD = (D + 2 * padding - (kd - 1) - 1) / stride + 1;
  int OH = (H + 2 * padding - (kh - 1) - 1) / stride + 1;
  int OW = (W + 2 * padding - (kw - 1) - 1) / stride + 1;
  if (OD < 1 || OH < 1 || OW < 1) throw std::invalid_argument("conv3d: empty output");

  Tensor out = Tensor::zeros({N, O, OD, OH, OW});
  const double* in = input.data();
  const double* wt = weight.data();
  double* po = out.data();
  int64_t in_vol = static_cast<int64_t>(C) * D * H * W;
  int64_t out_vol = static_cast<int64_t>(O) * OD * OH * OW;

  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      double* op = po + n * out_vol + static_cast<int64_t>(o) * OD * OH * OW;
      if (bias.defined()) {
        double b = bias.data()[o];
        for (int64_t i = 0; i < static_cast<int64_t>(OD) * OH * OW; ++i) op[i] = b;
      }
      for (int c = 0; c < C; ++c) {
        const double* ip = in + n * in_vol + static_cast<int64_t>(c) * D * H * W;
        const double* wp = wt + (static_cast<int64_t>(o) * C + c) * kd * kh * kw;
        for (int kz = 0; kz < kd; ++kz) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              double wv = wp[(kz * kh + ky) * kw + kx];
              int offx = kx - padding;
              int ox0, ox1;
              tap_range(OW, stride, offx, W, ox0, ox1);
              for (int od = 0; od < OD; ++od) {
                int iz = od * stride - padding + kz;
                if (iz < 0 || iz >= D) continue;
                for (int oy = 0; oy < OH; ++oy) {
                  int iy = oy * stride - padding + ky;
                  if (iy < 0 || iy >= H) continue;
                  const double* irow =
                      ip + (static_cast<int64_t>(iz) * H + iy) * W + offx;
                  double* orow = op + (static_cast<int64_t>(od) * OH + oy) * OW;
                  if (stride == 1) {
                    for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
                  } else {
                    for (int ox = ox0; ox < ox1; ++ox)
                      orow[ox] += wv * irow[static_cast<int64_t>(ox) * stride];
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  auto ii = input.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  TensorImpl* oi = out.impl().get();
  detail::attach_node(
      out, "conv3d", {input, weight, bias},
      [ii, wi, bi, oi, N, C, D, H, W, O, kd, kh, kw, OD, OH, OW, stride,
       padding] {
        const double* gout = oi->grad.data();
        int64_t in_vol = static_cast<int64_t>(C) * D * H * W;
        int64_t out_vol = static_cast<int64_t>(O) * OD * OH * OW;
        bool need_in = ii->requires_grad;
        bool need_w = wi->requires_grad;
        if (need_in) ii->ensure_grad();
        if (need_w) wi->ensure_grad();
        if (bi && bi->requires_grad) {
          bi->ensure_grad();
          for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) {
              const double* g =
                  gout + n * out_vol + static_cast<int64_t>(o) * OD * OH * OW;
              double acc = 0.0;
              for (int64_t i = 0; i < static_cast<int64_t>(OD) * OH * OW; ++i)
                acc += g[i];
              bi->grad[o] += acc;
            }
        }
        if (!need_in && !need_w) return;
        for (int n = 0; n < N; ++n) {
          for (int o = 0; o < O; ++o) {
            const double* gop =
                gout + n * out_vol + static_cast<int64_t>(o) * OD * OH * OW;
            for (int c = 0; c < C; ++c) {
              const double* ip =
                  ii->values.data() + n * in_vol + static_cast<int64_t>(c) * D * H * W;
              double* gip = need_in ? ii->grad.data() + n * in_vol +
                                          static_cast<int64_t>(c) * D * H * W
                                    : nullptr;
              const double* wp =
                  wi->values.data() + (static_cast<int64_t>(o) * C + c) * kd * kh * kw;
              double* gwp = need_w ? wi->grad.data() +
                                         (static_cast<int64_t>(o) * C + c) * kd * kh * kw
                                   : nullptr;
              for (int kz = 0; kz < kd; ++kz) {
                for (int ky = 0; ky < kh; ++ky) {
                  for (int kx = 0; kx < kw; ++kx) {
                    double wv = wp[(kz * kh + ky) * kw + kx];
                    int offx = kx - padding;
                    int ox0, ox1;
                    tap_range(OW, stride, offx, W, ox0, ox1);
                    double wacc = 0.0;
                    for (int od = 0; od < OD; ++od) {
                      int iz = od * stride - padding + kz;
                      if (iz < 0 || iz >= D) continue;
                      for (int oy = 0; oy < OH; ++oy) {
                        int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* irow =
                            ip + (static_cast<int64_t>(iz) * H + iy) * W + offx;
                        double* girow =
                            need_in
                                ? gip + (static_cast<int64_t>(iz) * H + iy) * W + offx
                                : nullptr;
                        const double* grow =
                            gop + (static_cast<int64_t>(od) * OH + oy) * OW;
                        if (stride == 1) {
                          for (int ox = ox0; ox < ox1; ++ox) {
                            double g = grow[ox];
                            if (need_in) girow[ox] += wv * g;
                            wacc += irow[ox] * g;
                          }
                        } else {
                          for (int ox = ox0; ox < ox1; ++ox) {
                            double g = grow[ox];
                            int64_t ix = static_cast<int64_t>(ox) * stride;
                            if (need_in) girow[ix] += wv * g;
                            wacc += irow[ix] * g;
                          }
                        }
                      }
                    }
                    if (need_w) gwp[(kz * kh + ky) * kw + kx] += wacc;
                  }
                }
              }
            }
          }
        }
      });
  return out;
}

Tensor grid_sample_bilinear(const Tensor& feature,
                            const std::vector<double>& coords,
                            const std::vector<uint8_t>& in_bounds, int planes,
                            int out_h, int out_w) {
  if (feature.rank() != 3)
    throw std::invalid_argument("grid_sample: feature must be [C,H,W]");
  int64_t cells = static_cast<int64_t>(planes) * out_h * out_w;
  if (static_cast<int64_t>(coords.size()) != cells * 2 ||
      static_cast<int64_t>(in_bounds.size()) != cells)
    throw std::invalid_argument("grid_sample: grid size mismatch");
  int C = feature.dim(0), H = feature.dim(1), W = feature.dim(2);
  Tensor out = Tensor::zeros({C, planes, out_h, out_w});
  const double* f = feature.data();
  double* po = out.data();
  int64_t fplane = static_cast<int64_t>(H) * W;
  int64_t oplane = cells;  // per output channel

  for (int64_t g = 0; g < cells; ++g) {
    if (!in_bounds[g]) continue;
    double x = coords[2 * g], y = coords[2 * g + 1];
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    double fx = x - x0, fy = y - y0;
    // Up to four taps; taps outside the image read as zero.
    for (int dy = 0; dy < 2; ++dy) {
      int yy = y0 + dy;
      if (yy < 0 || yy >= H) continue;
      double wy = dy ? fy : 1.0 - fy;
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        int xx = x0 + dx;
        if (xx < 0 || xx >= W) continue;
        double w = wy * (dx ? fx : 1.0 - fx);
        if (w == 0.0) continue;
        int64_t fidx = static_cast<int64_t>(yy) * W + xx;
        for (int c = 0; c < C; ++c)
          po[c * oplane + g] += w * f[c * fplane + fidx];
      }
    }
  }

  auto fi = feature.impl();
  TensorImpl* oi = out.impl().get();
  // grid is captured by value; it is a plain function of camera data.
  detail::attach_node(
      out, "grid_sample", {feature},
      [fi, oi, coords, in_bounds, cells, C, H, W, fplane, oplane] {
        fi->ensure_grad();
        const double* gout = oi->grad.data();
        double* gf = fi->grad.data();
        for (int64_t g = 0; g < cells; ++g) {
          if (!in_bounds[g]) continue;
          double x = coords[2 * g], y = coords[2 * g + 1];
          int x0 = static_cast<int>(std::floor(x));
          int y0 = static_cast<int>(std::floor(y));
          double fx = x - x0, fy = y - y0;
          for (int dy = 0; dy < 2; ++dy) {
            int yy = y0 + dy;
            if (yy < 0 || yy >= H) continue;
            double wy = dy ? fy : 1.0 - fy;
            if (wy == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
              int xx = x0 + dx;
              if (xx < 0 || xx >= W) continue;
              double w = wy * (dx ? fx : 1.0 - fx);
              if (w == 0.0) continue;
              int64_t fidx = static_cast<int64_t>(yy) * W + xx;
              for (int c = 0; c < C; ++c)
                gf[c * fplane + fidx] += w * gout[c * oplane + g];
            }
          }
        }
      });
  return out;
}

Tensor avg_pool2d(const Tensor& input, int window) {
  if (window < 1) throw std::invalid_argument("avg_pool2d: window < 1");
  if (input.rank() != 3 && input.rank() != 4)
    throw std::invalid_argument("avg_pool2d: need [C,H,W] or [N,C,H,W]");
  int rank = input.rank();
  int H = input.dim(rank - 2), W = input.dim(rank - 1);
  int64_t planes = input.numel() / (static_cast<int64_t>(H) * W);
  int OH = static_cast<int>(ceil_div(H, window));
  int OW = static_cast<int>(ceil_div(W, window));
  std::vector<int> out_shape = input.shape();
  out_shape[rank - 2] = OH;
  out_shape[rank - 1] = OW;
  Tensor out = Tensor::zeros(out_shape);
  const double* in = input.data();
  double* po = out.data();
  for (int64_t p = 0; p < planes; ++p) {
    const double* ip = in + p * H * W;
    double* op = po + p * static_cast<int64_t>(OH) * OW;
    for (int by = 0; by < OH; ++by) {
      int y0 = by * window, y1 = std::min(H, y0 + window);
      for (int bx = 0; bx < OW; ++bx) {
        int x0 = bx * window, x1 = std::min(W, x0 + window);
        double acc = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) acc += ip[static_cast<int64_t>(y) * W + x];
        op[static_cast<int64_t>(by) * OW + bx] =
            acc / (static_cast<double>(y1 - y0) * (x1 - x0));
      }
    }
  }
  auto ai = input.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "avg_pool2d", {input},
                      [ai, oi, planes, H, W, OH, OW, window] {
                        ai->ensure_grad();
                        const double* gout = oi->grad.data();
                        double* gin = ai->grad.data();
                        for (int64_t p = 0; p < planes; ++p) {
                          const double* gp = gout + p * static_cast<int64_t>(OH) * OW;
                          double* gi = gin + p * H * W;
                          for (int by = 0; by < OH; ++by) {
                            int y0 = by * window, y1 = std::min(H, y0 + window);
                            for (int bx = 0; bx < OW; ++bx) {
                              int x0 = bx * window, x1 = std::min(W, x0 + window);
                              double g = gp[static_cast<int64_t>(by) * OW + bx] /
                                         (static_cast<double>(y1 - y0) * (x1 - x0));
                              for (int y = y0; y < y1; ++y)
                                for (int x = x0; x < x1; ++x)
                                  gi[static_cast<int64_t>(y) * W + x] += g;
                            }
                          }
                        }
                      });
  return out;
}

namespace {

// Pixel-center source coordinate for bilinear resize; clamped to the valid
// range so identity resizes copy exactly.
inline void resize_taps(int dst, int in_len, int out_len, int& i0, int& i1,
                        double& frac) {
  double scale = static_cast<double>(in_len) / out_len;
  double src = (dst + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  if (src > in_len - 1) src = in_len - 1;
  i0 = static_cast<int>(std::floor(src));
  i1 = std::min(i0 + 1, in_len - 1);
  frac = src - i0;
}

}  // namespace

Tensor upsample_bilinear2d(const Tensor& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("upsample_bilinear2d: bad output size");
  if (input.rank() != 3 && input.rank() != 4)
    throw std::invalid_argument("upsample_bilinear2d: need [C,H,W] or [N,C,H,W]");
  int rank = input.rank();
  int H = input.dim(rank - 2), W = input.dim(rank - 1);
  int64_t planes = input.numel() / (static_cast<int64_t>(H) * W);
  std::vector<int> out_shape = input.shape();
  out_shape[rank - 2] = out_h;
  out_shape[rank - 1] = out_w;
  Tensor out = Tensor::zeros(out_shape);

  std::vector<int> x0(out_w), x1(out_w), y0(out_h), y1(out_h);
  std::vector<double> fx(out_w), fy(out_h);
  for (int x = 0; x < out_w; ++x) resize_taps(x, W, out_w, x0[x], x1[x], fx[x]);
  for (int y = 0; y < out_h; ++y) resize_taps(y, H, out_h, y0[y], y1[y], fy[y]);

  const double* in = input.data();
  double* po = out.data();
  for (int64_t p = 0; p < planes; ++p) {
    const double* ip = in + p * H * W;
    double* op = po + p * static_cast<int64_t>(out_h) * out_w;
    for (int y = 0; y < out_h; ++y) {
      const double* r0 = ip + static_cast<int64_t>(y0[y]) * W;
      const double* r1 = ip + static_cast<int64_t>(y1[y]) * W;
      double wy = fy[y];
      double* orow = op + static_cast<int64_t>(y) * out_w;
      for (int x = 0; x < out_w; ++x) {
        double top = r0[x0[x]] * (1.0 - fx[x]) + r0[x1[x]] * fx[x];
        double bot = r1[x0[x]] * (1.0 - fx[x]) + r1[x1[x]] * fx[x];
        orow[x] = top * (1.0 - wy) + bot * wy;
      }
    }
  }

  auto ai = input.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(
      out, "upsample_bilinear2d", {input},
      [ai, oi, planes, H, W, out_h, out_w, x0, x1, y0, y1, fx, fy] {
        ai->ensure_grad();
        const double* gout = oi->grad.data();
        double* gin = ai->grad.data();
        for (int64_t p = 0; p < planes; ++p) {
          const double* gp = gout + p * static_cast<int64_t>(out_h) * out_w;
          double* gi = gin + p * H * W;
          for (int y = 0; y < out_h; ++y) {
            double wy = fy[y];
            const double* grow = gp + static_cast<int64_t>(y) * out_w;
            double* g0 = gi + static_cast<int64_t>(y0[y]) * W;
            double* g1 = gi + static_cast<int64_t>(y1[y]) * W;
            for (int x = 0; x < out_w; ++x) {
              double g = grow[x];
              g0[x0[x]] += g * (1.0 - fx[x]) * (1.0 - wy);
              g0[x1[x]] += g * fx[x] * (1.0 - wy);
              g1[x0[x]] += g * (1.0 - fx[x]) * wy;
              g1[x1[x]] += g * fx[x] * wy;
            }
          }
        }
      });
  return out;
}

Tensor softmax(const Tensor& input, int axis) {
  if (axis < 0 || axis >= input.rank())
    throw std::invalid_argument("softmax: bad axis");
  int n = input.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= input.dim(i);
  for (int i = axis + 1; i < input.rank(); ++i) inner *= input.dim(i);

  Tensor out = Tensor::zeros(input.shape());
  const double* in = input.data();
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      int64_t base = o * n * inner + i;
      double mx = in[base];
      for (int j = 1; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (int j = 0; j < n; ++j) {
        double e = std::exp(in[base + j * inner] - mx);
        po[base + j * inner] = e;
        z += e;
      }
      double invz = 1.0 / z;
      for (int j = 0; j < n; ++j) po[base + j * inner] *= invz;
    }
  }

  auto ai = input.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "softmax", {input}, [ai, oi, outer, inner, n] {
    ai->ensure_grad();
    const double* p = oi->values.data();
    const double* g = oi->grad.data();
    double* gi = ai->grad.data();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t i = 0; i < inner; ++i) {
        int64_t base = o * n * inner + i;
        double dot = 0.0;
        for (int j = 0; j < n; ++j)
          dot += g[base + j * inner] * p[base + j * inner];
        for (int j = 0; j < n; ++j) {
          int64_t k = base + j * inner;
          gi[k] += p[k] * (g[k] - dot);
        }
      }
    }
  });
  return out;
}

Tensor huber_loss_masked(const Tensor& pred, const Tensor& target,
                         const std::vector<uint8_t>& mask) {
  require_same_shape(pred, target, "huber");
  if (target.requires_grad())
    throw std::invalid_argument("huber: target must not require grad");
  if (static_cast<int64_t>(mask.size()) != pred.numel())
    throw std::invalid_argument("huber: mask size mismatch");
  int64_t count = 0;
  for (uint8_t m : mask) count += m ? 1 : 0;
  if (count == 0) throw std::invalid_argument("huber: empty valid mask");

  const double* pp = pred.data();
  const double* pt = target.data();
  double acc = 0.0;
  int64_t n = pred.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    double e = pp[i] - pt[i];
    double a = std::fabs(e);
    acc += a <= kHuberDelta ? 0.5 * e * e : a - 0.5;
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(count));

  auto pi = pred.impl(), ti = target.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "huber", {pred, target}, [pi, ti, oi, mask, count] {
    if (!pi->requires_grad) return;
    pi->ensure_grad();
    double scale = oi->grad[0] / static_cast<double>(count);
    int64_t n = pi->numel();
    for (int64_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      double e = pi->values[i] - ti->values[i];
      double d = std::fabs(e) <= kHuberDelta ? e : (e > 0 ? 1.0 : -1.0);
      pi->grad[i] += d * scale;
    }
  });
  return out;
}

Tensor label_expectation(const Tensor& prob, const std::vector<double>& weights) {
  if (prob.rank() != 3)
    throw std::invalid_argument("label_expectation: need [L,H,W]");
  int L = prob.dim(0), H = prob.dim(1), W = prob.dim(2);
  if (static_cast<int>(weights.size()) != L)
    throw std::invalid_argument("label_expectation: weights size mismatch");
  Tensor out = Tensor::zeros({H, W});
  const double* p = prob.data();
  double* po = out.data();
  int64_t plane = static_cast<int64_t>(H) * W;
  for (int l = 0; l < L; ++l) {
    double w = weights[l];
    const double* pl = p + l * plane;
    for (int64_t i = 0; i < plane; ++i) po[i] += w * pl[i];
  }
  auto ai = prob.impl();
  TensorImpl* oi = out.impl().get();
  detail::attach_node(out, "label_expectation", {prob},
                      [ai, oi, weights, L, plane] {
                        ai->ensure_grad();
                        const double* g = oi->grad.data();
                        for (int l = 0; l < L; ++l) {
                          double w = weights[l];
                          double* gl = ai->grad.data() + l * plane;
                          for (int64_t i = 0; i < plane; ++i) gl[i] += w * g[i];
                        }
                      });
  return out;
}

}  // namespace ps
