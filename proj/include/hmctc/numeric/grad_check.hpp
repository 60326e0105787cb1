#pragma once

#include "hmctc/numeric/tensor.hpp"

#include <functional>

namespace hmctc {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Compares analytic gradients against central differences.
//
// `loss` must return the scalar value and accumulate its gradient into the
// parameters' grad slots (grads are zeroed before every call). It must be
// deterministic: dropout disabled or masks replayed.
//
// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
inline GradCheckResult grad_check(const std::function<double()>& loss, const ParameterRefs& params,
                                  double h = 1e-5) {
  zero_grads(params);
  const double base = loss();
  if (!std::isfinite(base)) throw NonFiniteError("grad_check: loss is not finite at the base point");
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      zero_grads(params);
      const double up = loss();
      p.value[i] = saved - h;
      zero_grads(params);
      const double down = loss();
      p.value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError("grad_check: loss is not finite when perturbing " + p.name + "[" +
                             std::to_string(i) + "]");
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p.name;
        result.worst_index = i;
      }
    }
  }
  zero_grads(params);
  return result;
}

}  // namespace hmctc
