#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "paratune/tokenizer.hpp"

namespace paratune {

/// One sentential paraphrase pair with word-level phrase alignments.
struct AlignedPairRecord {
  Words source;
  Words target;
  std::vector<WordAlignment> alignments;
  bool operator==(const AlignedPairRecord&) const = default;
};

/// Parse or validation failure in an input file; `line` is 1-based (0 when unknown).
class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct LoadedCorpus {
  std::vector<AlignedPairRecord> records;
  std::vector<std::string> warnings;
};

/// Throws CorpusError if the record's spans fall outside its sentences.
void validate_record(const AlignedPairRecord& record, const std::string& file = "<memory>", std::size_t line = 0);

/// JSON-lines corpus: {"source": [...], "target": [...], "alignments": [[js,je,ms,ne], ...]}.
LoadedCorpus load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, const std::vector<AlignedPairRecord>& records);

struct CorpusSplits {
  std::vector<AlignedPairRecord> train;
  std::vector<AlignedPairRecord> dev;
  std::vector<AlignedPairRecord> test;
};

/// Seeded shuffle, then dev_n records to dev, test_n to test and the rest to train.
CorpusSplits split_corpus(const std::vector<AlignedPairRecord>& corpus, std::size_t dev_n, std::size_t test_n,
                          std::uint64_t seed);

/// Counts in the layout of the paraphrase-corpus table: sentence pairs and phrase pairs.
struct CorpusStats {
  std::string source;
  std::size_t sentence_pairs = 0;
  std::size_t phrase_pairs = 0;
  std::size_t unaligned_pairs = 0;
  double phrases_per_sentence() const;
};
CorpusStats corpus_stats(const std::string& source, const std::vector<AlignedPairRecord>& records);
std::string format_stats_table(const std::vector<CorpusStats>& rows);

/// Plain-text documents: one sentence per line, blank line between documents.
using Document = std::vector<Words>;
std::vector<Document> load_documents(const std::filesystem::path& path);
void save_documents(const std::filesystem::path& path, const std::vector<Document>& docs);

enum class TaskKind { pair_classification, pair_regression, single_sentence_classification };
enum class Metric { accuracy, f1, pearson };

std::string to_string(TaskKind kind);
std::string to_string(Metric metric);
TaskKind parse_task_kind(const std::string& s);
Metric parse_metric(const std::string& s);

struct TaskExample {
  double label = 0.0;
  Words first;
  Words second;  ///< empty for single-sentence tasks
};

/// Tab-separated with header `label<TAB>sentence1[<TAB>sentence2]`. Classification labels
/// must be non-negative integers; regression labels finite reals.
std::vector<TaskExample> load_task_file(const std::filesystem::path& path, TaskKind kind);
void save_task_file(const std::filesystem::path& path, const std::vector<TaskExample>& rows, TaskKind kind);

/// 64-bit FNV-1a of the file bytes, as 16 hex digits. Used in run manifests.
std::string file_hash(const std::filesystem::path& path);

}  // namespace paratune
