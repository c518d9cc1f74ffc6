#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "paratune/corpus.hpp"

namespace paratune {

enum class Pos { det, adj, noun, verb, prep, adv };
std::string to_string(Pos pos);

/// A set of interchangeable entries. Noun and verb clusters belong to one topic; the
/// other parts of speech are shared across topics (topic = -1). An entry may span two
/// words, separated by a space.
struct SynonymCluster {
  Pos pos = Pos::noun;
  int topic = -1;
  std::vector<std::string> words;
};

struct LexiconConfig {
  std::uint64_t seed = 1;
  int topics = 4;
  int noun_clusters_per_topic = 4;
  int verb_clusters_per_topic = 3;
  int adj_clusters = 6;
  int det_clusters = 2;
  int prep_clusters = 3;
  int adv_clusters = 4;
  int cluster_size = 3;
  /// Make the last member of every content-word cluster a two-word expression.
  bool multiword = true;
};

class Lexicon {
 public:
  static Lexicon generate(const LexiconConfig& config);
  explicit Lexicon(std::vector<SynonymCluster> clusters);

  const std::vector<SynonymCluster>& clusters() const { return clusters_; }
  const SynonymCluster& cluster(std::size_t i) const { return clusters_.at(i); }
  /// Cluster index of an entry, or -1.
  int cluster_of(const std::string& entry) const;
  /// Greedy longest-match segmentation of words into entries; -1 for unknown words.
  std::vector<int> segment(std::span<const std::string> words) const;
  /// Cluster indices with the given part of speech; topic -1 matches any topic.
  std::vector<std::size_t> clusters_for(Pos pos, int topic = -1) const;
  int topics() const { return topics_; }
  std::size_t entry_count() const { return word_index_.size(); }

 private:
  std::vector<SynonymCluster> clusters_;
  std::map<std::string, int> word_index_;
  std::size_t max_entry_words_ = 1;
  int topics_ = 0;
};

/// A labelled contiguous range of slots inside a sentence.
struct Constituent {
  std::string role;  ///< subject, verb, object, pp, adv
  std::size_t first = 0;
  std::size_t last = 0;
};

/// A sentence as a sequence of lexicon entries (slots).
struct SentencePlan {
  std::vector<std::string> slots;
  std::vector<int> cluster;  ///< cluster id of each slot
  std::vector<Constituent> constituents;
  int topic = 0;

  Words words() const;
};

struct SynthConfig {
  LexiconConfig lexicon;
  std::size_t size = 1000;
  std::uint64_t seed = 1;
  double p_sub = 0.5;
  double p_reorder = 0.3;
  double p_adj = 0.4;
  double p_pp = 0.5;
  double p_adv = 0.4;
  /// Fraction of alignments whose target span is replaced by a wrong span.
  double noise = 0.0;
  /// Downstream paraphrase task: content words swapped in a negative pair.
  std::size_t negative_swaps = 1;
  /// Chance that a swapped noun or verb is drawn from any topic instead of the sentence topic.
  double p_cross_topic = 0.0;
  /// Chance that a negative pair uses a rewrite of an unrelated sentence instead of swaps.
  double p_unrelated = 0.8;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct SynthStats {
  std::size_t alignments = 0;
  std::size_t corrupted = 0;
  std::size_t reordered = 0;
  std::size_t substituted_words = 0;
};

class SentenceSampler {
 public:
  SentenceSampler(const Lexicon& lexicon, const SynthConfig& config) : lex_(&lexicon), cfg_(config) {}
  SentencePlan sample(std::mt19937_64& rng, int topic) const;

 private:
  const Lexicon* lex_;
  SynthConfig cfg_;
};

/// Derive a paraphrase of `source` by in-cluster substitution and optional constituent
/// fronting. Returns the record with one alignment per constituent; `target_plan`
/// receives the slots of the rewritten sentence.
AlignedPairRecord paraphrase(const Lexicon& lexicon, const SentencePlan& source, double p_sub, double p_reorder,
                             std::mt19937_64& rng, SynthStats* stats = nullptr, SentencePlan* target_plan = nullptr);

/// Aligned paraphrase corpus. The lexicon is derived from config.lexicon.
std::vector<AlignedPairRecord> generate_synthetic(const SynthConfig& config, SynthStats* stats = nullptr);

/// Topic-coherent documents for pre-training.
std::vector<Document> generate_documents(const SynthConfig& config, std::size_t documents,
                                         std::size_t sentences_per_document);

enum class DownstreamTask { paraphrase, similarity, acceptability };
std::string to_string(DownstreamTask task);
DownstreamTask parse_downstream_task(const std::string& s);
TaskKind task_kind(DownstreamTask task);
Metric default_metric(DownstreamTask task);

/// Downstream examples over the same lexicon as the aligned corpus.
/// paraphrase: label 1 = rewrite of the first sentence, 0 = rewrite with `negative_swaps`
///   content words swapped for non-synonyms (same topic unless p_cross_topic fires), or with
///   probability p_unrelated a rewrite of a freshly sampled sentence.
/// similarity: score 5 - 1.25 k for k such swaps (k = 0..4).
/// acceptability: label 1 = well-formed sentence, 0 = two words of different roles swapped.
std::vector<TaskExample> generate_task(const SynthConfig& config, DownstreamTask task, std::size_t n,
                                       std::uint64_t seed);

}  // namespace paratune
