#include "ps/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ps {

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                  double h) {
  bool restore = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor loss = f(x);
  backward(loss);
  std::vector<double> analytic = x.grad();
  x.set_requires_grad(false);

  int64_t n = x.numel();
  std::vector<double> numeric(static_cast<size_t>(n));
  double* px = x.data();
  for (int64_t i = 0; i < n; ++i) {
    double saved = px[i];
    px[i] = saved + h;
    double fp = f(x).item();
    px[i] = saved - h;
    double fm = f(x).item();
    px[i] = saved;
    numeric[i] = (fp - fm) / (2.0 * h);
  }
  x.set_requires_grad(restore);

  double scale = 0.0;
  for (int64_t i = 0; i < n; ++i)
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
  double floor = std::max(1e-8, 0.01 * scale);
  double worst = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace ps
