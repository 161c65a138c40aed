#pragma once

#include <functional>
#include <vector>

#include "avemo/tensor.hpp"

namespace avemo {

/// Central-difference gradient verification.
///
/// `f` evaluates the scalar objective at the current inputs; `inputs` are the
/// tensors being perturbed (in place); `analytic` are the gradients produced
/// by the implementation under test, in the same order. Returns the
/// elementwise max relative error with absolute floor 1e-8.
double grad_check(const std::function<double()>& f,
                  const std::vector<Tensor*>& inputs,
                  const std::vector<Tensor>& analytic, double eps = 1e-5);

}  // namespace avemo
