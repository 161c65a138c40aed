#pragma once

#include <string>
#include <vector>

namespace avemo {

struct GradCheckEntry {
  std::string name;
  double rel_err = 0.0;
};

/// Finite-difference checks for every differentiable tape op, each against
/// a fixed-projection scalar loss on small inputs.
std::vector<GradCheckEntry> gradcheck_ops();

/// End-to-end check of the joint LM + emotion objective on a tiny bundle:
/// every trainable stage-2 parameter element against central differences.
GradCheckEntry gradcheck_stage2_composite();

}  // namespace avemo
