#include "paratune/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace paratune {
namespace {

double evaluate(ParamStore& params, const LossBuilder& loss) {
  Tape tape;
  return loss(tape, params).value().item();
}

double central(ParamStore& params, const LossBuilder& loss, std::size_t p, std::size_t k, double h) {
  double& x = params[p].value.values[k];
  const double saved = x;
  x = saved + h;
  const double up = evaluate(params, loss);
  x = saved - h;
  const double down = evaluate(params, loss);
  x = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace

GradCheckResult grad_check(ParamStore& params, const LossBuilder& loss, const GradCheckOptions& options) {
  params.zero_grad();
  {
    Tape tape;
    Var l = loss(tape, params);
    tape.backward(l);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad);

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params[p].value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.samples_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t k : coords) {
      const double a = analytic[p].values[k];
      const double num = central(params, loss, p, k, options.step);
      const double half = central(params, loss, p, k, options.step * 0.5);
      // Smooth losses agree to O(h^2) between the two step sizes; a kink does not.
      const double scale = std::max({std::fabs(num), std::fabs(half), options.negligible});
      if (std::fabs(num - half) > 1e-4 * scale + options.negligible) {
        ++result.skipped_nonsmooth;
        continue;
      }
      ++result.checked;
      const double denom = std::max(std::fabs(a), std::fabs(half));
      const double err = denom < options.negligible ? 0.0 : std::fabs(a - half) / denom;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_param = params[p].name;
          result.worst_index = k;
          result.worst_analytic = a;
          result.worst_numeric = half;
        }
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace paratune
