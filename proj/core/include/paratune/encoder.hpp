#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "paratune/autograd.hpp"
#include "paratune/tokenizer.hpp"

namespace paratune {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff = 256;
  std::size_t max_position = 64;
  std::size_t vocab_size = 0;
  double dropout = 0.1;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  /// Closed-form count of encoder weights (embeddings + layers, no heads).
  std::size_t parameter_count() const;
  std::map<std::string, std::string> to_map() const;
  static EncoderConfig from_map(const std::map<std::string, std::string>& kv);
  bool operator==(const EncoderConfig&) const = default;
};

/// Encoder configuration plus every learnable array. Task heads live in the same store
/// under `head.` names so one optimizer covers the whole model.
struct EncoderParams {
  EncoderConfig config;
  ParamStore store;
};

/// Truncated normal (sigma 0.02, cut at 2 sigma) for matrices and embeddings, zeros for
/// biases, ones for layer-norm scales. Deterministic in the seed.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

/// Copy of the encoder arrays only (drops every `head.` parameter).
EncoderParams strip_heads(const EncoderParams& params);
bool is_head_param(const std::string& name);

struct ForwardMode {
  bool train = false;
  std::mt19937_64* rng = nullptr;  ///< required when train is true and dropout > 0
};

/// Attention probabilities captured during encode(), one (N x N) tensor per layer and head.
struct AttentionTrace {
  std::vector<Tensor> probabilities;
};

/// Post-layer-norm transformer encoder. Keys at [PAD] positions are masked.
/// Returns the final hidden states, one row per input token.
Var encode(Tape& tape, EncoderParams& params, const EncodedPair& pair, ForwardMode mode,
           AttentionTrace* trace = nullptr);

namespace nn {
/// Registers `<name>.w` (in x out, truncated normal) and `<name>.b` (zeros).
void add_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
Var linear(Tape& tape, ParamStore& store, const std::string& name, Var x);
double truncated_normal(std::mt19937_64& rng, double sigma = 0.02);
}  // namespace nn

/// Versioned checkpoint: a text header of key=value lines (encoder config plus free-form
/// metadata), then each array as a `tensor <name> <rank> <dims...>` line followed by its
/// values as little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const std::map<std::string, std::string>& metadata = {});
struct LoadedCheckpoint {
  EncoderParams params;
  std::map<std::string, std::string> metadata;
};
/// Validates every encoder array against the header config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace paratune
