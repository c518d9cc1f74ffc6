#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "paratune/corpus.hpp"
#include "paratune/encoder.hpp"
#include "paratune/tokenizer.hpp"

namespace paratune {

struct MlmExample {
  std::vector<int> ids;                             ///< input with replacements applied
  std::vector<std::pair<std::size_t, int>> targets;  ///< (position, original id)
};

/// Selects each non-special position with probability `rate`; a selected token becomes
/// [MASK] 80% of the time, a random non-special id 10% and stays unchanged 10%.
MlmExample mask_tokens(std::span<const int> ids, std::size_t vocab_size, double rate, std::mt19937_64& rng);
MlmExample mask_tokens(std::span<const int> ids, std::size_t vocab_size, double rate, std::uint64_t seed);

enum class NspLabel { consecutive = 0, random = 1 };

struct NspSample {
  Words first;
  Words second;
  NspLabel label = NspLabel::consecutive;
  std::size_t first_doc = 0;
  std::size_t second_doc = 0;
};

/// Balanced next-sentence samples. Consecutive pairs are adjacent sentences of one
/// document; random partners always come from a different document.
class NspSampler {
 public:
  /// Needs at least two documents with at least two sentences each.
  explicit NspSampler(const std::vector<Document>& docs);
  NspSample next(std::mt19937_64& rng) const;

 private:
  const std::vector<Document>* docs_;
};
std::vector<NspSample> nsp_sample(const std::vector<Document>& docs, std::size_t n, std::uint64_t seed);

struct PretrainHyper {
  std::size_t steps = 500;
  std::size_t batch = 8;
  double lr = 1e-4;
  double mask_rate = 0.15;
  bool nsp = true;
  std::size_t max_len = 64;
  std::uint64_t seed = 1;
};

struct PretrainStep {
  std::size_t step = 0;
  double mlm = 0.0;
  double nsp = 0.0;
  double loss = 0.0;
};

struct PretrainResult {
  std::vector<PretrainStep> curve;
  bool diverged = false;
  std::string error;  ///< set when training stopped on a non-finite loss or gradient
};

/// Registers the tied-decoder MLM bias and the NSP classifier under `head.`.
void add_pretrain_heads(EncoderParams& params, std::uint64_t seed);

/// Joint MLM + NSP training in place. Heads are added when missing. On a non-finite
/// loss the parameters are restored to the last finite step and training stops.
PretrainResult pretrain_loop(const std::vector<Document>& docs, const WordPieceTokenizer& tok, EncoderParams& params,
                             const PretrainHyper& hyper);

/// Mean of the last `window` losses ending at each step.
std::vector<double> smooth(std::span<const double> values, std::size_t window);

}  // namespace paratune
