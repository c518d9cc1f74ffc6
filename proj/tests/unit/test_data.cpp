#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "paratune/corpus.hpp"
#include "paratune/synth.hpp"

using namespace paratune;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p, std::ios::binary) << contents;
  return p;
}

std::string key(const AlignedPairRecord& r) {
  std::string k;
  for (const auto& w : r.source) k += w + " ";
  k += "|";
  for (const auto& w : r.target) k += w + " ";
  return k;
}

}  // namespace

TEST_CASE("load_corpus") {
  SUBCASE("empty file gives an empty corpus and a warning") {
    auto p = temp_file("paratune_empty.jsonl", "");
    auto c = load_corpus(p);
    CHECK(c.records.empty());
    CHECK(c.warnings.size() == 1);
  }
  SUBCASE("span past the end of the source is rejected with its line number") {
    auto p = temp_file("paratune_bad.jsonl",
                       "{\"source\":[\"a\",\"b\"],\"target\":[\"c\"],\"alignments\":[[0,0,0,0]]}\n"
                       "{\"source\":[\"a\",\"b\"],\"target\":[\"c\"],\"alignments\":[[0,2,0,0]]}\n");
    try {
      load_corpus(p);
      FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("source length") != std::string::npos);
    }
  }
  SUBCASE("malformed json names the line") {
    auto p = temp_file("paratune_malformed.jsonl", "{\"source\":[\"a\"],\"target\":[\"b\"]}\n{oops\n");
    try {
      load_corpus(p);
      FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("records without alignments are accepted") {
    auto p = temp_file("paratune_unaligned.jsonl", "{\"source\":[\"a\"],\"target\":[\"b\"],\"alignments\":[]}\n");
    CHECK(load_corpus(p).records.size() == 1);
  }
  SUBCASE("generated corpus round-trips") {
    SynthConfig cfg;
    cfg.size = 200;
    cfg.noise = 0.1;
    auto corpus = generate_synthetic(cfg);
    const fs::path p = fs::temp_directory_path() / "paratune_roundtrip.jsonl";
    save_corpus(p, corpus);
    CHECK(load_corpus(p).records == corpus);
  }
}

TEST_CASE("split_corpus") {
  SynthConfig cfg;
  cfg.size = 300;
  auto corpus = generate_synthetic(cfg);
  auto s = split_corpus(corpus, 40, 60, 5);
  CHECK(s.dev.size() == 40);
  CHECK(s.test.size() == 60);
  CHECK(s.train.size() + s.dev.size() + s.test.size() == corpus.size());
  auto again = split_corpus(corpus, 40, 60, 5);
  CHECK(again.train == s.train);
  CHECK(again.dev == s.dev);
  CHECK(split_corpus(corpus, 40, 60, 6).dev != s.dev);

  // Disjointness by position: each input index lands in exactly one split.
  std::multiset<std::string> all, parts;
  for (const auto& r : corpus) all.insert(key(r));
  for (const auto* part : {&s.train, &s.dev, &s.test}) {
    for (const auto& r : *part) parts.insert(key(r));
  }
  CHECK(all == parts);
  CHECK_THROWS_AS(split_corpus(corpus, 150, 150, 1), std::invalid_argument);
}

TEST_CASE("lexicon") {
  Lexicon lex = Lexicon::generate(LexiconConfig{});
  for (const auto& cl : lex.clusters()) CHECK(cl.words.size() >= 2);
  CHECK(lex.topics() == 4);
  const auto& noun = lex.cluster(lex.clusters_for(Pos::noun, 0).front());
  const Words phrase = basic_tokenize(noun.words.back() + " " + noun.words.front());
  CHECK(phrase.size() == 3);
  CHECK(lex.segment(phrase) == std::vector<int>(2, lex.cluster_of(noun.words.front())));
  CHECK(lex.segment(Words{"zzzz"}) == std::vector<int>{-1});
  CHECK_THROWS_AS(Lexicon(std::vector<SynonymCluster>{{Pos::noun, 0, {"x"}}}), std::invalid_argument);
  LexiconConfig bad;
  bad.cluster_size = 1;
  CHECK_THROWS_AS(Lexicon::generate(bad), std::invalid_argument);
}

TEST_CASE("generate_synthetic") {
  SUBCASE("no substitution and no reordering is the identity") {
    SynthConfig cfg;
    cfg.size = 100;
    cfg.p_sub = 0;
    cfg.p_reorder = 0;
    for (const auto& r : generate_synthetic(cfg)) {
      CHECK(r.target == r.source);
      for (const auto& a : r.alignments) {
        CHECK(a.src_first == a.tgt_first);
        CHECK(a.src_last == a.tgt_last);
      }
    }
  }
  SUBCASE("without noise aligned phrases are in-cluster rewrites") {
    SynthConfig cfg;
    cfg.size = 500;
    cfg.p_sub = 0.7;
    cfg.p_reorder = 0.5;
    Lexicon lex = Lexicon::generate(cfg.lexicon);
    SynthStats stats;
    std::size_t length_changed = 0;
    for (const auto& r : generate_synthetic(cfg, &stats)) {
      validate_record(r);
      for (const auto& a : r.alignments) {
        const Words src(r.source.begin() + static_cast<std::ptrdiff_t>(a.src_first),
                        r.source.begin() + static_cast<std::ptrdiff_t>(a.src_last) + 1);
        const Words tgt(r.target.begin() + static_cast<std::ptrdiff_t>(a.tgt_first),
                        r.target.begin() + static_cast<std::ptrdiff_t>(a.tgt_last) + 1);
        const auto cs = lex.segment(src);
        CHECK(cs == lex.segment(tgt));
        for (int c : cs) CHECK(c >= 0);
      }
      if (r.source.size() != r.target.size()) ++length_changed;
      // Spans do not overlap on either side.
      std::vector<int> src_cover(r.source.size()), tgt_cover(r.target.size());
      for (const auto& a : r.alignments) {
        for (std::size_t i = a.src_first; i <= a.src_last; ++i) ++src_cover[i];
        for (std::size_t i = a.tgt_first; i <= a.tgt_last; ++i) ++tgt_cover[i];
      }
      for (int c : src_cover) CHECK(c <= 1);
      for (int c : tgt_cover) CHECK(c <= 1);
    }
    CHECK(stats.corrupted == 0);
    CHECK(stats.reordered > 0);
    CHECK(stats.substituted_words > 0);
    CHECK(length_changed > 50);
  }
  SUBCASE("noise corrupts the configured fraction of alignments") {
    SynthConfig cfg;
    cfg.size = 3000;
    cfg.noise = 0.2;
    SynthStats stats;
    auto corpus = generate_synthetic(cfg, &stats);
    REQUIRE(stats.alignments >= 10000);
    const double frac = static_cast<double>(stats.corrupted) / static_cast<double>(stats.alignments);
    CHECK(std::abs(frac - 0.20) <= 0.02);
  }
  SUBCASE("deterministic under seed") {
    SynthConfig cfg;
    cfg.size = 50;
    CHECK(generate_synthetic(cfg) == generate_synthetic(cfg));
    SynthConfig other = cfg;
    other.seed = 2;
    CHECK(generate_synthetic(cfg) != generate_synthetic(other));
  }
  SUBCASE("invalid probabilities are rejected") {
    SynthConfig cfg;
    cfg.p_sub = 1.5;
    CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  }
}

TEST_CASE("corpus_stats table format") {
  std::vector<AlignedPairRecord> rs{{{"a"}, {"b"}, {{0, 0, 0, 0}}}, {{"a"}, {"b"}, {}}};
  auto s = corpus_stats("synthetic", rs);
  CHECK(s.sentence_pairs == 2);
  CHECK(s.phrase_pairs == 1);
  CHECK(s.unaligned_pairs == 1);
  const std::string table = format_stats_table({s, s});
  CHECK(table.find("Source\tSentence\tPhrase") == 0);
  CHECK(table.find("synthetic\t2\t1\t0.50") != std::string::npos);
  CHECK(table.find("Total\t4\t2\t0.50") != std::string::npos);
}

TEST_CASE("documents and task files") {
  SynthConfig cfg;
  auto docs = generate_documents(cfg, 5, 4);
  const fs::path p = fs::temp_directory_path() / "paratune_docs.txt";
  save_documents(p, docs);
  CHECK(load_documents(p) == docs);

  for (auto task : {DownstreamTask::paraphrase, DownstreamTask::similarity, DownstreamTask::acceptability}) {
    auto rows = generate_task(cfg, task, 200, 3);
    const fs::path tp = fs::temp_directory_path() / ("paratune_task_" + to_string(task) + ".tsv");
    save_task_file(tp, rows, task_kind(task));
    auto back = load_task_file(tp, task_kind(task));
    REQUIRE(back.size() == rows.size());
    std::size_t positives = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(back[i].label == rows[i].label);
      CHECK(back[i].first == rows[i].first);
      CHECK(back[i].second == rows[i].second);
      if (rows[i].label > 0.5) ++positives;
    }
    if (task != DownstreamTask::similarity) {
      CHECK(positives > 60);
      CHECK(positives < 140);
    }
  }
  auto bad = temp_file("paratune_badtask.tsv", "label\tsentence1\n1.5\ta b\n");
  CHECK_THROWS_AS(load_task_file(bad, TaskKind::single_sentence_classification), CorpusError);
  auto header = temp_file("paratune_header.tsv", "lbl\tsentence1\n1\ta b\n");
  CHECK_THROWS_AS(load_task_file(header, TaskKind::single_sentence_classification), CorpusError);
}

TEST_CASE("file_hash is FNV-1a") {
  auto p = temp_file("paratune_hash.txt", "a");
  CHECK(file_hash(p) == "af63dc4c8601ec8c");
  auto e = temp_file("paratune_hash_empty.txt", "");
  CHECK(file_hash(e) == "cbf29ce484222325");
}
