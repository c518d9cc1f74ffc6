#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "paratune/autograd.hpp"

namespace paratune {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, one pair per parameter, and the step counter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update applied in place. Moments are created lazily on the
/// first call. Throws NumericError naming the offending array if a gradient is not finite.
void adam_step(std::span<Tensor*> params, std::span<const Tensor* const> grads, AdamState& state,
               const AdamConfig& config);

/// Convenience wrapper that steps every parameter of a store from its accumulated grad.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(ParamStore& store);
  const AdamState& state() const { return state_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  AdamConfig config_;
  AdamState state_;
};

/// Linear warmup over `warmup` steps, then linear decay to zero at `total` (step is 1-based).
/// With total = 0 the rate stays at its peak after warmup.
double linear_schedule(double peak, std::size_t step, std::size_t warmup, std::size_t total);

}  // namespace paratune
