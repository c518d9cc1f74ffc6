#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "paratune/autograd.hpp"

namespace paratune {

/// Builds a scalar loss on the given tape, reading parameters from the store it was
/// handed. Must be deterministic: no dropout, fixed data.
using LossBuilder = std::function<Var(Tape&, ParamStore&)>;

struct GradCheckOptions {
  double step = 1e-3;
  /// Coordinates sampled per parameter array; arrays no larger than this are checked fully.
  std::size_t samples_per_param = 6;
  std::uint64_t seed = 7;
  /// Gradients with magnitude below this on both sides count as agreeing.
  double negligible = 1e-9;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates where halving the step changed the finite difference materially,
  /// i.e. a max-pool or |x| kink lies within one step. They are excluded.
  std::size_t skipped_nonsmooth = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compare reverse-mode gradients against central finite differences on a sampled
/// subset of coordinates and report the worst relative error |a-n| / max(|a|,|n|).
GradCheckResult grad_check(ParamStore& params, const LossBuilder& loss, const GradCheckOptions& options = {});

}  // namespace paratune
