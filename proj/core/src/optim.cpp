#include "paratune/optim.hpp"

#include <cmath>
#include <string>

namespace paratune {

void adam_step(std::span<Tensor*> params, std::span<const Tensor* const> grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (!(config.lr >= 0.0)) throw std::invalid_argument("adam_step: learning rate must be >= 0");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape);
      state.v.emplace_back(p->shape);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                         " arrays, given " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape != grads[i]->shape || state.m[i].shape != params[i]->shape) {
      throw DimensionError("adam_step", params[i]->shape, grads[i]->shape);
    }
    const auto& g = grads[i]->values;
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!std::isfinite(g[k])) {
        throw NumericError("adam_step: non-finite gradient in array " + std::to_string(i) + " at element " +
                           std::to_string(k) + " (value " + std::to_string(g[k]) + ", step " +
                           std::to_string(state.t + 1) + ")");
      }
    }
  }

  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i]->values;
    const auto& g = grads[i]->values;
    auto& m = state.m[i].values;
    auto& v = state.v[i].values;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

void Adam::step(ParamStore& store) {
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
  params.reserve(store.size());
  grads.reserve(store.size());
  for (auto& p : store) {
    params.push_back(&p.value);
    grads.push_back(&p.grad);
  }
  try {
    adam_step(params, grads, state_, config_);
  } catch (const NumericError& e) {
    // Re-raise with the parameter name, which the span-based core does not know.
    for (const auto& p : store) {
      if (!p.grad.all_finite()) throw NumericError(std::string(e.what()) + " [" + p.name + "]");
    }
    throw;
  }
}

double linear_schedule(double peak, std::size_t step, std::size_t warmup, std::size_t total) {
  const auto t = static_cast<double>(step);
  if (warmup > 0 && step <= warmup) return peak * t / static_cast<double>(warmup);
  if (total == 0) return peak;
  if (step >= total) return 0.0;
  return peak * (static_cast<double>(total) - t) / static_cast<double>(total - warmup);
}

}  // namespace paratune
