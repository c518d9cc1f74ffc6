#include "paratune/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace paratune {
namespace {

constexpr const char* kReserved[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool starts_with_continuation(const std::string& s) { return s.rfind(Vocab::kContinuation, 0) == 0; }

std::size_t utf8_char_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

std::vector<std::string> utf8_chars(const std::string& word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    const std::size_t n = std::min(utf8_char_len(static_cast<unsigned char>(word[i])), word.size() - i);
    out.push_back(word.substr(i, n));
    i += n;
  }
  return out;
}

}  // namespace

Vocab::Vocab() {
  for (const char* r : kReserved) push(r);
}

Vocab::Vocab(const std::vector<std::string>& tokens) {
  if (tokens.size() < kNumReserved) {
    throw std::invalid_argument("vocabulary must start with the five reserved tokens");
  }
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    if (tokens[i] != kReserved[i]) {
      throw std::invalid_argument("vocabulary line " + std::to_string(i) + " must be " + kReserved[i] +
                                  ", found '" + tokens[i] + "'");
    }
  }
  for (const auto& t : tokens) {
    if (ids_.count(t)) throw std::invalid_argument("duplicate vocabulary token '" + t + "'");
    push(t);
  }
}

void Vocab::push(const std::string& token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

std::optional<int> Vocab::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

Vocab Vocab::build(std::span<const Words> corpus, std::size_t target_size) {
  std::map<std::string, std::size_t> freq;
  for (const auto& sentence : corpus) {
    for (const auto& w : sentence) {
      if (!w.empty() && w.size() <= WordPieceTokenizer::kMaxWordChars) ++freq[w];
    }
  }
  if (freq.empty()) throw std::invalid_argument("build_vocab: corpus is empty");

  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  std::set<std::string> alphabet;
  for (const auto& [w, n] : freq) {
    auto chars = utf8_chars(w);
    for (std::size_t i = 1; i < chars.size(); ++i) chars[i] = kContinuation + chars[i];
    alphabet.insert(chars.begin(), chars.end());
    words.emplace_back(std::move(chars), n);
  }
  if (target_size <= kNumReserved + alphabet.size()) {
    throw std::invalid_argument("build_vocab: target size " + std::to_string(target_size) +
                                " must exceed reserved tokens plus alphabet (" +
                                std::to_string(kNumReserved + alphabet.size()) + ")");
  }

  Vocab vocab;
  for (const auto& c : alphabet) {
    if (!vocab.contains(c)) vocab.push(c);
  }

  while (vocab.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& [symbols, n] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pairs[{symbols[i], symbols[i + 1]}] += n;
    }
    if (pairs.empty()) break;
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    const std::string merged = left + right.substr(2);
    if (!vocab.contains(merged)) vocab.push(merged);
    for (auto& [symbols, n] : words) {
      std::vector<std::string> next;
      next.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(symbols[i]);
        }
      }
      symbols = std::move(next);
    }
  }
  return vocab;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(tokens);
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::vector<std::string> WordPieceTokenizer::segment_word(const std::string& word) const {
  const std::vector<std::string> unk{kReserved[Vocab::kUnk]};
  if (word.empty() || word.size() > kMaxWordChars) return unk;
  // Piece boundaries must fall on UTF-8 character boundaries.
  std::vector<std::size_t> bounds{0};
  for (const auto& c : utf8_chars(word)) bounds.push_back(bounds.back() + c.size());

  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start + 1 < bounds.size()) {
    std::string found;
    std::size_t stop = bounds.size() - 1;
    for (; stop > start; --stop) {
      std::string candidate = word.substr(bounds[start], bounds[stop] - bounds[start]);
      if (start > 0) candidate = Vocab::kContinuation + candidate;
      if (vocab_.contains(candidate)) {
        found = std::move(candidate);
        break;
      }
    }
    if (found.empty()) return unk;
    pieces.push_back(std::move(found));
    start = stop;
  }
  return pieces;
}

WordPieces WordPieceTokenizer::encode(std::span<const std::string> words) const {
  WordPieces out;
  for (const auto& w : words) {
    const std::size_t first = out.pieces.size();
    for (auto& p : segment_word(w)) {
      out.ids.push_back(vocab_.id(p));
      out.pieces.push_back(std::move(p));
    }
    out.offsets.push_back(WordSpan{first, out.pieces.size() - 1});
  }
  return out;
}

Words detokenize(std::span<const std::string> pieces) {
  Words words;
  for (const auto& p : pieces) {
    if (starts_with_continuation(p) && !words.empty()) {
      words.back() += p.substr(2);
    } else {
      words.push_back(p);
    }
  }
  return words;
}

Words basic_tokenize(const std::string& text) {
  Words out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(w));
  }
  return out;
}

namespace {

EncodedPair assemble(const WordPieces& s, const WordPieces& t, bool with_target) {
  EncodedPair pair;
  pair.ids.push_back(Vocab::kCls);
  pair.ids.insert(pair.ids.end(), s.ids.begin(), s.ids.end());
  pair.ids.push_back(Vocab::kSep);
  pair.segments.assign(pair.ids.size(), 0);
  if (with_target) {
    pair.ids.insert(pair.ids.end(), t.ids.begin(), t.ids.end());
    pair.ids.push_back(Vocab::kSep);
    pair.segments.resize(pair.ids.size(), 1);
  }
  pair.source_offsets = s.offsets;
  pair.target_offsets = with_target ? t.offsets : std::vector<WordSpan>{};
  pair.source_len = s.ids.size();
  pair.target_len = with_target ? t.ids.size() : 0;
  return pair;
}

void truncate_pieces(WordPieces& wp, std::size_t keep) {
  wp.ids.resize(keep);
  wp.pieces.resize(keep);
  while (!wp.offsets.empty() && wp.offsets.back().last >= keep) wp.offsets.pop_back();
}

}  // namespace

EncodedPair encode_pair(const WordPieceTokenizer& tok, std::span<const std::string> source,
                        std::span<const std::string> target, std::size_t max_len) {
  if (source.empty() || target.empty()) throw std::invalid_argument("encode_pair: both sentences must be non-empty");
  const WordPieces s = tok.encode(source);
  const WordPieces t = tok.encode(target);
  const std::size_t n = s.ids.size() + t.ids.size() + 3;
  if (n > max_len) {
    throw LengthError("encode_pair: " + std::to_string(n) + " tokens exceed max_len " + std::to_string(max_len) +
                      " (source " + std::to_string(source.size()) + " words/" + std::to_string(s.ids.size()) +
                      " pieces, target " + std::to_string(target.size()) + " words/" +
                      std::to_string(t.ids.size()) + " pieces)");
  }
  return assemble(s, t, true);
}

EncodedPair encode_pair_truncated(const WordPieceTokenizer& tok, std::span<const std::string> source,
                                  std::span<const std::string> target, std::size_t max_len) {
  if (max_len < 5) throw LengthError("encode_pair_truncated: max_len must be at least 5");
  WordPieces s = tok.encode(source);
  WordPieces t = tok.encode(target);
  std::size_t ns = s.ids.size(), nt = t.ids.size();
  while (ns + nt + 3 > max_len) {
    if (ns >= nt) {
      --ns;
    } else {
      --nt;
    }
  }
  truncate_pieces(s, ns);
  truncate_pieces(t, nt);
  return assemble(s, t, true);
}

EncodedPair encode_single(const WordPieceTokenizer& tok, std::span<const std::string> sentence,
                          std::size_t max_len) {
  if (max_len < 3) throw LengthError("encode_single: max_len must be at least 3");
  WordPieces s = tok.encode(sentence);
  if (s.ids.size() + 2 > max_len) truncate_pieces(s, max_len - 2);
  return assemble(s, WordPieces{}, false);
}

TokenSpan remap_source_span(WordSpan words, const EncodedPair& pair) {
  if (words.first > words.last || words.last >= pair.source_offsets.size()) {
    throw std::out_of_range("source word span (" + std::to_string(words.first) + ", " + std::to_string(words.last) +
                            ") outside sentence of " + std::to_string(pair.source_offsets.size()) + " words");
  }
  return TokenSpan{pair.source_offsets[words.first].first + 1, pair.source_offsets[words.last].last + 1};
}

TokenSpan remap_target_span(WordSpan words, const EncodedPair& pair) {
  if (words.first > words.last || words.last >= pair.target_offsets.size()) {
    throw std::out_of_range("target word span (" + std::to_string(words.first) + ", " + std::to_string(words.last) +
                            ") outside sentence of " + std::to_string(pair.target_offsets.size()) + " words");
  }
  const std::size_t base = pair.target_begin();
  return TokenSpan{pair.target_offsets[words.first].first + base, pair.target_offsets[words.last].last + base};
}

AlignmentSet remap_spans(std::span<const WordAlignment> alignments, const EncodedPair& pair) {
  AlignmentSet out;
  out.reserve(alignments.size());
  for (const auto& a : alignments) {
    out.push_back(SpanPair{remap_source_span({a.src_first, a.src_last}, pair),
                           remap_target_span({a.tgt_first, a.tgt_last}, pair)});
  }
  return out;
}

bool is_valid_alignment(const SpanPair& span, const EncodedPair& pair) {
  const std::size_t n = pair.size();
  const auto& [j, k] = span.source;
  const auto& [m, e] = span.target;
  return n >= 5 && 1 <= j && j <= k && k < pair.first_sep() && pair.first_sep() < m && m <= e && e <= n - 2;
}

}  // namespace paratune
