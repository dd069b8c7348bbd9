#include "attnvo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace attnvo {

namespace {

double weighted_sum(const Tensor<double>& out, const Tensor<double>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
  return s;
}

}  // namespace

std::vector<GradCheckResult> gradient_check(const ModelConfig& cfg, const ParameterSet<double>& params,
                                            const Tensor<double>& images,
                                            const Tensor<double>& weights, Mode mode,
                                            std::uint64_t seed, double step, double floor) {
  ModelTape<double> tape;
  Rng rng(seed);
  const Tensor<double> out = model_forward(cfg, params, images, mode, rng, &tape);
  if (out.shape() != weights.shape()) throw InvalidArgument("gradient_check: weights shape mismatch");
  const ParameterSet<double> analytic = model_backward(cfg, params, tape, weights);

  ParameterSet<double> probe = params;
  auto loss = [&] {
    Rng r(seed);
    return weighted_sum(model_forward(cfg, probe, images, mode, r), weights);
  };

  std::vector<GradCheckResult> results;
  for (std::size_t e = 0; e < probe.size(); ++e) {
    auto& entry = probe.entry(e);
    if (!entry.trainable) continue;
    const Tensor<double>& ga = analytic.entry(e).value;
    GradCheckResult r;
    r.name = entry.name;
    r.count = entry.value.size();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + step;
      const double up = loss();
      entry.value[i] = saved - step;
      const double down = loss();
      entry.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = ga[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      r.max_elem_error = std::max(r.max_elem_error, std::abs(a - numeric) / denom);
    }
    r.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace attnvo
