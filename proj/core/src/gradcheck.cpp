#include "avemo/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace avemo {

double grad_check(const std::function<double()>& f,
                  const std::vector<Tensor*>& inputs,
                  const std::vector<Tensor>& analytic, double eps) {
  if (inputs.size() != analytic.size())
    throw std::invalid_argument("grad_check: inputs/analytic size mismatch");
  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = *inputs[k];
    if (!x.same_shape(analytic[k]))
      throw std::invalid_argument("grad_check: gradient shape mismatch");
    for (size_t i = 0; i < x.data.size(); ++i) {
      double orig = x.data[i];
      x.data[i] = orig + eps;
      double fp = f();
      x.data[i] = orig - eps;
      double fm = f();
      x.data[i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[k].data[i];
      double denom = std::max({std::abs(numeric), std::abs(a), 1e-8});
      worst = std::max(worst, std::abs(numeric - a) / denom);
    }
  }
  return worst;
}

}  // namespace avemo
