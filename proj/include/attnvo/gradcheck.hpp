#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnvo/nn.hpp"

namespace attnvo {

struct GradCheckResult {
  std::string name;
  std::size_t count = 0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  double rel_error = 0.0;
  /// Largest element-wise |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double max_elem_error = 0.0;
};

/// Compares model_backward against central differences of
/// L = sum(weights * model_forward(images)). Every evaluation reseeds the
/// dropout stream with `seed`, so masks stay fixed across perturbations.
std::vector<GradCheckResult> gradient_check(const ModelConfig& cfg, const ParameterSet<double>& params,
                                            const Tensor<double>& images,
                                            const Tensor<double>& weights, Mode mode,
                                            std::uint64_t seed, double step = 1e-5,
                                            double floor = 1e-6);

}  // namespace attnvo
