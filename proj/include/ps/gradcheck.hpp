#pragma once

#include <functional>

#include "ps/tensor.hpp"

namespace ps {

/// Compares the reverse-mode gradient of a deterministic scalar function
/// against central finite differences, element by element. Returns the max
/// error relative to the gradient scale (tiny entries are measured against
/// a floor of 1% of the largest gradient so noise in near-zero entries does
/// not dominate).
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                  double h = 1e-5);

}  // namespace ps
