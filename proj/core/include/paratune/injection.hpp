#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "paratune/corpus.hpp"
#include "paratune/encoder.hpp"

namespace paratune {

enum class PhraseLabel { paraphrase = 0, random = 1, in_paraphrase = 2 };
enum class SentenceLabel { paraphrase = 0, random = 1 };
enum class FeatureMode { elaborate_max, simple_mean };
/// none: no phrasal head. binary: paraphrase vs in_paraphrase.
enum class PhraseTask { none, three_way, binary };

std::string to_string(PhraseLabel label);
std::string to_string(FeatureMode mode);
std::string to_string(PhraseTask task);

struct PhraseExample {
  SpanPair spans;
  PhraseLabel label = PhraseLabel::paraphrase;
  TokenSpan gold_target;  ///< the aligned target span this example was derived from
};

/// One encoded sentence pair with its sentential label and every phrase example read
/// off the same encoder pass.
struct PairInstance {
  EncodedPair pair;
  SentenceLabel label = SentenceLabel::paraphrase;
  std::vector<PhraseExample> phrases;
  std::size_t source_record = 0;
  std::size_t target_record = 0;
};

struct NegativeRatios {
  double paraphrase = 1.0;
  double random = 1.0;
  double in_paraphrase = 1.0;
  void validate() const;
};

struct SamplerStats {
  std::size_t unaligned_pairs = 0;       ///< gold pairs with no usable alignment
  std::size_t no_alternative_span = 0;   ///< alignments with no other span in the target
  std::size_t dropped_alignments = 0;    ///< alignments lost to truncation
  std::size_t paraphrase = 0;
  std::size_t random = 0;
  std::size_t in_paraphrase = 0;
  std::size_t sentence_paraphrase = 0;
  std::size_t sentence_random = 0;
};

struct SamplerConfig {
  NegativeRatios ratios;
  PhraseTask task = PhraseTask::three_way;
  std::size_t max_len = 64;
  std::uint64_t seed = 1;
};

/// Gold instances (aligned pairs, `paraphrase` phrases plus `in_paraphrase` corruptions)
/// and one random-partner instance per gold pair (`random` phrases). Phrase classes are
/// downsampled to the configured ratios. Requires at least two records.
std::vector<PairInstance> sample_negatives(std::span<const AlignedPairRecord> corpus, const WordPieceTokenizer& tok,
                                           const SamplerConfig& config, SamplerStats* stats = nullptr);

std::size_t feature_width(FeatureMode mode, std::size_t hidden);
/// elaborate_max: [h_s; h_t; h_s*h_t; |h_s-h_t|] over max-pooled spans.
/// simple_mean: [h_s; h_t] over mean-pooled spans.
Var phrase_feature(Var h, TokenSpan source, TokenSpan target, FeatureMode mode);

struct HeadConfig {
  PhraseTask phrase = PhraseTask::three_way;
  bool sentence = true;
  FeatureMode feature = FeatureMode::elaborate_max;
  double dropout = 0.2;

  std::size_t phrase_classes() const { return phrase == PhraseTask::binary ? 2 : 3; }
};

/// Adds `head.phrase` and/or `head.sentence` single affine layers.
void add_injection_heads(EncoderParams& params, const HeadConfig& heads, std::uint64_t seed);

/// Affine map of a feature (dropout on the input at train time). Shape-checked against the head.
Var phrase_logits(Tape& tape, EncoderParams& params, Var feature, double dropout, ForwardMode mode);
Var sentence_logits(Tape& tape, EncoderParams& params, Var h1, double dropout, ForwardMode mode);

/// Class index of a phrase label under the given task.
std::size_t phrase_class(PhraseLabel label, PhraseTask task);

struct LossTerms {
  std::optional<Var> phrase;    ///< mean phrasal cross-entropy
  std::optional<Var> sentence;  ///< mean sentential cross-entropy
  Var total;
};

/// Loss over a batch with one encoder pass per instance. Terms whose head is disabled
/// (or that have no examples) are absent; throws if both are absent.
LossTerms batch_loss(Tape& tape, EncoderParams& params, std::span<const PairInstance* const> batch,
                     const HeadConfig& heads, ForwardMode mode);

/// L = L_p + L_s. Throws std::invalid_argument when the batch lacks either task.
LossTerms joint_loss(Tape& tape, EncoderParams& params, std::span<const PairInstance* const> batch,
                     const HeadConfig& heads, ForwardMode mode);

enum class EarlyStopRule { second_decrease, consecutive_decreases };
/// second_decrease: true once two evaluations (anywhere in the history) were strictly
/// below their predecessor. consecutive_decreases: true once two decreases happen in a row.
bool early_stop_decision(std::span<const double> history, EarlyStopRule rule = EarlyStopRule::second_decrease);

struct Accuracy {
  double phrase = 0.0;
  double sentence = 0.0;
  std::size_t phrase_n = 0;
  std::size_t sentence_n = 0;
};
Accuracy evaluate(EncoderParams& params, std::span<const PairInstance> data, const HeadConfig& heads);

struct InjectionHyper {
  double lr = 5e-5;
  std::size_t batch = 16;
  std::size_t max_steps = 2000;
  std::size_t eval_every = 0;  ///< 0: one pass over 10% of the training instances
  std::size_t warmup = 0;      ///< linear warmup steps
  bool decay = false;          ///< linear decay to zero at max_steps
  EarlyStopRule rule = EarlyStopRule::second_decrease;
  std::uint64_t seed = 1;
};

struct InjectionStep {
  std::size_t step = 0;
  double lp = 0.0;
  double ls = 0.0;
  double loss = 0.0;
  std::optional<Accuracy> dev;
};

struct InjectionResult {
  std::vector<InjectionStep> log;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  bool stopped_early = false;
  Accuracy best_dev;
  std::optional<Accuracy> test;
};

/// Mini-batch training until the early-stop rule fires or max_steps is reached, then
/// restores the parameters of the best dev evaluation (phrasal accuracy, or sentential
/// accuracy when there is no phrasal head). Heads are added when missing.
InjectionResult inject_train(EncoderParams& params, std::span<const PairInstance> train,
                             std::span<const PairInstance> dev, std::span<const PairInstance> test,
                             const HeadConfig& heads, const InjectionHyper& hyper);

/// CSV with columns step,L_p,L_s,L,dev_phrase_acc,dev_sent_acc (dev columns blank between evaluations).
void write_injection_report(const std::filesystem::path& path, const InjectionResult& result);

/// Named ablation variants.
enum class Variant { baseline, sentence_only, phrase_3way, phrase_binary, joint, joint_simple_feature };
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
const std::vector<Variant>& all_variants();
/// Head layout of an injection variant; baseline has none.
std::optional<HeadConfig> variant_heads(Variant v);

}  // namespace paratune
