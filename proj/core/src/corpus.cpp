#include "paratune/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace paratune {

using json = nlohmann::json;

CorpusError::CorpusError(const std::string& file, std::size_t line, const std::string& what)
    : std::runtime_error(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + what), line_(line) {}

void validate_record(const AlignedPairRecord& r, const std::string& file, std::size_t line) {
  if (r.source.empty() || r.target.empty()) throw CorpusError(file, line, "source and target must be non-empty");
  for (const auto& a : r.alignments) {
    const std::string quad = "[" + std::to_string(a.src_first) + "," + std::to_string(a.src_last) + "," +
                             std::to_string(a.tgt_first) + "," + std::to_string(a.tgt_last) + "]";
    if (a.src_first > a.src_last || a.tgt_first > a.tgt_last) {
      throw CorpusError(file, line, "alignment " + quad + " has begin after end");
    }
    if (a.src_last >= r.source.size()) {
      throw CorpusError(file, line, "alignment " + quad + " exceeds source length " + std::to_string(r.source.size()));
    }
    if (a.tgt_last >= r.target.size()) {
      throw CorpusError(file, line, "alignment " + quad + " exceeds target length " + std::to_string(r.target.size()));
    }
  }
}

LoadedCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError(path.string(), 0, "cannot open corpus file");
  LoadedCorpus out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    AlignedPairRecord r;
    try {
      const json j = json::parse(line);
      r.source = j.at("source").get<Words>();
      r.target = j.at("target").get<Words>();
      if (j.contains("alignments")) {
        for (const auto& q : j.at("alignments")) {
          if (!q.is_array() || q.size() != 4) throw CorpusError(path.string(), lineno, "alignment must have 4 indices");
          for (const auto& v : q) {
            if (!v.is_number_integer() || v.get<long long>() < 0) {
              throw CorpusError(path.string(), lineno, "alignment indices must be non-negative integers");
            }
          }
          r.alignments.push_back({q[0].get<std::size_t>(), q[1].get<std::size_t>(), q[2].get<std::size_t>(),
                                  q[3].get<std::size_t>()});
        }
      }
    } catch (const CorpusError&) {
      throw;
    } catch (const std::exception& e) {
      throw CorpusError(path.string(), lineno, std::string("malformed record: ") + e.what());
    }
    validate_record(r, path.string(), lineno);
    out.records.push_back(std::move(r));
  }
  if (out.records.empty()) out.warnings.push_back(path.string() + ": corpus is empty");
  return out;
}

void save_corpus(const std::filesystem::path& path, const std::vector<AlignedPairRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError(path.string(), 0, "cannot write corpus file");
  for (const auto& r : records) {
    json al = json::array();
    for (const auto& a : r.alignments) al.push_back({a.src_first, a.src_last, a.tgt_first, a.tgt_last});
    out << json{{"source", r.source}, {"target", r.target}, {"alignments", al}}.dump() << '\n';
  }
}

CorpusSplits split_corpus(const std::vector<AlignedPairRecord>& corpus, std::size_t dev_n, std::size_t test_n,
                          std::uint64_t seed) {
  if (dev_n + test_n >= corpus.size()) {
    throw std::invalid_argument("split_corpus: dev " + std::to_string(dev_n) + " + test " + std::to_string(test_n) +
                                " leaves no training data from " + std::to_string(corpus.size()) + " records");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  CorpusSplits s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& r = corpus[order[i]];
    if (i < dev_n) {
      s.dev.push_back(r);
    } else if (i < dev_n + test_n) {
      s.test.push_back(r);
    } else {
      s.train.push_back(r);
    }
  }
  return s;
}

double CorpusStats::phrases_per_sentence() const {
  return sentence_pairs ? static_cast<double>(phrase_pairs) / static_cast<double>(sentence_pairs) : 0.0;
}

CorpusStats corpus_stats(const std::string& source, const std::vector<AlignedPairRecord>& records) {
  CorpusStats s{source};
  s.sentence_pairs = records.size();
  for (const auto& r : records) {
    s.phrase_pairs += r.alignments.size();
    if (r.alignments.empty()) ++s.unaligned_pairs;
  }
  return s;
}

std::string format_stats_table(const std::vector<CorpusStats>& rows) {
  std::ostringstream out;
  out << "Source\tSentence\tPhrase\tPhrase/Sentence\n";
  CorpusStats total{"Total"};
  for (const auto& r : rows) {
    out << r.source << '\t' << r.sentence_pairs << '\t' << r.phrase_pairs << '\t' << std::fixed
        << std::setprecision(2) << r.phrases_per_sentence() << '\n';
    total.sentence_pairs += r.sentence_pairs;
    total.phrase_pairs += r.phrase_pairs;
  }
  if (rows.size() > 1) {
    out << total.source << '\t' << total.sentence_pairs << '\t' << total.phrase_pairs << '\t' << std::fixed
        << std::setprecision(2) << total.phrases_per_sentence() << '\n';
  }
  return out.str();
}

namespace {
std::string join(const Words& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}
}  // namespace

std::vector<Document> load_documents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError(path.string(), 0, "cannot open document corpus");
  std::vector<Document> docs(1);
  std::string line;
  while (std::getline(in, line)) {
    Words w = basic_tokenize(line);
    if (w.empty()) {
      if (!docs.back().empty()) docs.emplace_back();
    } else {
      docs.back().push_back(std::move(w));
    }
  }
  if (docs.back().empty()) docs.pop_back();
  return docs;
}

void save_documents(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError(path.string(), 0, "cannot write document corpus");
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d) out << '\n';
    for (const auto& s : docs[d]) out << join(s) << '\n';
  }
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::pair_classification: return "pair_classification";
    case TaskKind::pair_regression: return "pair_regression";
    case TaskKind::single_sentence_classification: return "single_sentence_classification";
  }
  return "?";
}

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::accuracy: return "accuracy";
    case Metric::f1: return "f1";
    case Metric::pearson: return "pearson";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  for (auto k : {TaskKind::pair_classification, TaskKind::pair_regression, TaskKind::single_sentence_classification}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

Metric parse_metric(const std::string& s) {
  for (auto m : {Metric::accuracy, Metric::f1, Metric::pearson}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown metric '" + s + "'");
}

std::vector<TaskExample> load_task_file(const std::filesystem::path& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw CorpusError(path.string(), 0, "cannot open task file");
  const bool pair = kind != TaskKind::single_sentence_classification;
  std::string line;
  if (!std::getline(in, line)) throw CorpusError(path.string(), 1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string expected = pair ? "label\tsentence1\tsentence2" : "label\tsentence1";
  if (line != expected) throw CorpusError(path.string(), 1, "header must be '" + expected + "'");
  std::vector<TaskExample> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != (pair ? 3u : 2u)) {
      throw CorpusError(path.string(), lineno, "expected " + std::to_string(pair ? 3 : 2) + " tab-separated fields");
    }
    TaskExample ex;
    try {
      std::size_t used = 0;
      ex.label = std::stod(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw CorpusError(path.string(), lineno, "label '" + fields[0] + "' is not a number");
    }
    if (!std::isfinite(ex.label)) throw CorpusError(path.string(), lineno, "label must be finite");
    if (kind != TaskKind::pair_regression && (ex.label < 0 || ex.label != std::floor(ex.label))) {
      throw CorpusError(path.string(), lineno, "classification label must be a non-negative integer");
    }
    ex.first = basic_tokenize(fields[1]);
    if (pair) ex.second = basic_tokenize(fields[2]);
    if (ex.first.empty() || (pair && ex.second.empty())) throw CorpusError(path.string(), lineno, "empty sentence");
    rows.push_back(std::move(ex));
  }
  return rows;
}

void save_task_file(const std::filesystem::path& path, const std::vector<TaskExample>& rows, TaskKind kind) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError(path.string(), 0, "cannot write task file");
  const bool pair = kind != TaskKind::single_sentence_classification;
  out << (pair ? "label\tsentence1\tsentence2\n" : "label\tsentence1\n");
  for (const auto& r : rows) {
    if (kind == TaskKind::pair_regression) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", r.label);
      out << buf;
    } else {
      out << static_cast<long long>(r.label);
    }
    out << '\t' << join(r.first);
    if (pair) out << '\t' << join(r.second);
    out << '\n';
  }
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace paratune
