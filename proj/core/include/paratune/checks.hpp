#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "paratune/encoder.hpp"
#include "paratune/gradcheck.hpp"

namespace paratune {

struct GradSuiteEntry {
  std::string name;
  GradCheckResult result;
};

struct GradSuiteConfig {
  EncoderConfig encoder;  ///< vocab_size is filled in from a generated vocabulary
  std::size_t instances = 2;
  GradCheckOptions options{1e-5, 3, 2, 1e-9};
  std::uint64_t seed = 4;
};

/// Finite-difference checks of every tape primitive on random inputs.
std::vector<GradSuiteEntry> primitive_gradchecks(std::uint64_t seed = 41);

/// Finite-difference check of the joint injection loss through the encoder and both
/// heads, dropout off. Weight matrices are redrawn from U(-0.5, 0.5) so that no
/// gradient is negligible.
GradSuiteEntry joint_loss_gradcheck(const GradSuiteConfig& config);

/// Negative control: x^2 recorded with an adjoint that drops the factor 2.
GradSuiteEntry corrupted_adjoint_gradcheck(std::uint64_t seed = 8);

}  // namespace paratune
