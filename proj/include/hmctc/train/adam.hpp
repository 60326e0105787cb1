#pragma once

#include "hmctc/numeric/tensor.hpp"

namespace hmctc::train {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long long step = 0;
};

// Bias-corrected Adam update at learning rate `lr`. Checks every gradient
// before touching any parameter, so a bad batch leaves the model intact.
inline void adam_step(const ParameterRefs& params, AdamState& st, const AdamConfig& cfg, double lr,
                      const std::string& context = {}) {
  if (st.m.empty()) {
    for (auto* p : params) {
      st.m.emplace_back(p->value.shape());
      st.v.emplace_back(p->value.shape());
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("Adam state does not match the parameter list");
  for (auto* p : params) {
    if (!p->grad.all_finite()) {
      throw NonFiniteGradient("non-finite gradient in " + p->name + (context.empty() ? "" : " (" + context + ")"));
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto m = st.m[k].values();
    auto v = st.v[k].values();
    auto g = p.grad.values();
    auto x = p.value.values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

}  // namespace hmctc::train
