#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace paratune {

using Words = std::vector<std::string>;

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Token inventory. Ids are dense; the five reserved tokens occupy ids 0..4.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr std::size_t kNumReserved = 5;
  static constexpr const char* kContinuation = "##";

  /// Empty vocabulary holding only the reserved tokens.
  Vocab();
  explicit Vocab(const std::vector<std::string>& tokens);

  /// Greedy pair-merge construction: start from word-initial and continuation
  /// characters, repeatedly merge the most frequent adjacent pair (ties broken by the
  /// lexicographically smallest pair) until `target_size` tokens exist or no pair remains.
  static Vocab build(std::span<const Words> corpus, std::size_t target_size);

  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::optional<int> find(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  static bool is_special(int id) { return id >= 0 && static_cast<std::size_t>(id) < kNumReserved; }

 private:
  void push(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct WordSpan {
  std::size_t first = 0;
  std::size_t last = 0;
  bool operator==(const WordSpan&) const = default;
};

struct WordPieces {
  std::vector<std::string> pieces;
  std::vector<int> ids;
  /// offsets[w] = first/last piece index of word w.
  std::vector<WordSpan> offsets;
};

/// Greedy longest-match-first subword segmentation.
class WordPieceTokenizer {
 public:
  static constexpr std::size_t kMaxWordChars = 100;

  explicit WordPieceTokenizer(Vocab vocab) : vocab_(std::move(vocab)) {}

  const Vocab& vocab() const { return vocab_; }
  /// A word that cannot be segmented, or longer than kMaxWordChars, becomes one [UNK].
  WordPieces encode(std::span<const std::string> words) const;
  std::vector<std::string> segment_word(const std::string& word) const;

 private:
  Vocab vocab_;
};

/// Rejoin pieces into words: a `##` piece continues the preceding word.
Words detokenize(std::span<const std::string> pieces);
/// Lowercase and split on whitespace.
Words basic_tokenize(const std::string& text);

/// `[CLS] source [SEP] target [SEP]` (or `[CLS] source [SEP]` for single sentences).
struct EncodedPair {
  std::vector<int> ids;
  std::vector<int> segments;
  std::vector<WordSpan> source_offsets;  ///< word -> piece span within the source block
  std::vector<WordSpan> target_offsets;  ///< word -> piece span within the target block
  std::size_t source_len = 0;            ///< number of source pieces
  std::size_t target_len = 0;            ///< number of target pieces (0 for single sentences)

  std::size_t size() const { return ids.size(); }
  std::size_t first_sep() const { return source_len + 1; }
  std::size_t target_begin() const { return source_len + 2; }
  bool has_target() const { return ids.size() > source_len + 2; }
};

/// Strict layout; throws LengthError naming both sentence lengths when it would exceed max_len.
EncodedPair encode_pair(const WordPieceTokenizer& tok, std::span<const std::string> source,
                        std::span<const std::string> target, std::size_t max_len);
/// Same layout, but drops trailing pieces of the longer sentence until it fits.
/// Offsets of words that lost any piece are removed.
EncodedPair encode_pair_truncated(const WordPieceTokenizer& tok, std::span<const std::string> source,
                                  std::span<const std::string> target, std::size_t max_len);
/// `[CLS] s [SEP]`, all segment ids 0, tail-truncated to max_len.
EncodedPair encode_single(const WordPieceTokenizer& tok, std::span<const std::string> sentence,
                          std::size_t max_len);

/// Inclusive token-index span in an encoded sequence.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const TokenSpan&) const = default;
};

struct SpanPair {
  TokenSpan source;
  TokenSpan target;
  bool operator==(const SpanPair&) const = default;
};

using AlignmentSet = std::vector<SpanPair>;

/// Word-level alignment quadruple (source first, source last, target first, target last),
/// 0-based inclusive.
struct WordAlignment {
  std::size_t src_first = 0;
  std::size_t src_last = 0;
  std::size_t tgt_first = 0;
  std::size_t tgt_last = 0;
  bool operator==(const WordAlignment&) const = default;
};

TokenSpan remap_source_span(WordSpan words, const EncodedPair& pair);
TokenSpan remap_target_span(WordSpan words, const EncodedPair& pair);
/// Move word-level alignments into token coordinates of the concatenated sequence.
/// Throws std::out_of_range for spans naming words outside either sentence.
AlignmentSet remap_spans(std::span<const WordAlignment> alignments, const EncodedPair& pair);

/// Source span inside the source block, target span inside the target block, neither
/// covering a special token (0-based: 1 <= j <= k < first_sep < m <= n <= N-2).
bool is_valid_alignment(const SpanPair& span, const EncodedPair& pair);

}  // namespace paratune
