#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "paratune/cli.hpp"

namespace fs = std::filesystem;
using paratune::cli::Config;
using paratune::cli::ConfigError;

namespace {

struct Captured {
  int code;
  std::string out;
  std::string err;
};

Captured invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "paratune");
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = paratune::cli::run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workdir {
  fs::path root;
  explicit Workdir(const std::string& name) : root(fs::temp_directory_path() / ("paratune_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workdir() { fs::remove_all(root); }
  std::string operator/(const std::string& rel) const { return (root / rel).string(); }
};

// Small corpus, vocabulary and tasks shared by the model-level cases.
void prepare(const Workdir& w) {
  REQUIRE(invoke({"gen-data", "-o", w / "data", "--set", "synth.size=120", "--set", "task.train=60", "--set",
                  "task.dev=40", "--set", "docs.count=12", "--set", "docs.sentences=4"})
              .code == 0);
  REQUIRE(invoke({"build-vocab", "-o", w / "vocab", "--set", "corpus=" + (w / "data/corpus.jsonl"), "--set",
                  "vocab.size=200"})
              .code == 0);
}

std::vector<std::string> tiny_encoder() {
  return {"--set", "encoder.layers=1", "--set", "encoder.hidden=16", "--set", "encoder.heads=2", "--set",
          "encoder.ff=32"};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("config files, overrides and typed reads") {
  Workdir w("config");
  std::ofstream(w / "a.conf") << "# comment\n\nlr = 0.5\n steps=10 \nname = x\n";
  Config c;
  c.load_file(w / "a.conf");
  c.set_override("steps=12");
  CHECK(c.num("lr", 1.0) == 0.5);
  CHECK(c.count("steps", 1) == 12);
  CHECK(c.str("name", "") == "x");
  CHECK(c.count("missing", 7) == 7);
  CHECK(c.resolved().at("missing") == "7");
  CHECK_THROWS_AS(c.num("name", 0.0), ConfigError);
  CHECK_THROWS_AS(c.required("nothing"), ConfigError);
  CHECK_THROWS_AS(c.set_override("novalue"), ConfigError);
  CHECK(c.list("none", "a, b,,c") == std::vector<std::string>{"a", "b", "c"});
  c.set("f", "yes");
  CHECK(c.flag("f", false));
  c.set("unread", "1");
  CHECK(c.unused() == std::vector<std::string>{"unread"});

  std::ofstream(w / "bad.conf") << "just words\n";
  Config d;
  CHECK_THROWS_WITH_AS(d.load_file(w / "bad.conf"), doctest::Contains("bad.conf:1"), ConfigError);
}

TEST_CASE("usage errors exit 2, validation errors exit 1") {
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"gradcheck", "--no-such-flag"}).code == 2);
  CHECK(invoke({"experiment"}).code == 2);  // --recipe is required
  CHECK(invoke({"gradcheck", "--help"}).code == 0);

  Workdir w("errors");
  const auto missing = invoke({"inject", "-o", w / "o", "--config", w / "nope.conf"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("nope.conf") != std::string::npos);

  const auto no_vocab = invoke({"inject", "-o", w / "o", "--set", "vocab=" + (w / "absent.txt")});
  CHECK(no_vocab.code == 1);
  CHECK(no_vocab.err.find("absent.txt") != std::string::npos);

  CHECK(invoke({"experiment", "--recipe", "nonsense", "-o", w / "o", "--set", "vocab=" + (w / "absent.txt")}).code == 1);
  CHECK(invoke({"gen-data", "-o", w / "o", "--set", "synth.p_sub=1.5"}).code == 1);
}

TEST_CASE("gradcheck passes on the default configuration") {
  Workdir w("gradcheck");
  const auto r = invoke({"gradcheck", "-o", w / "g"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);
  CHECK(r.out.find("joint_loss") != std::string::npos);
  CHECK(fs::exists(w / "g/gradcheck.csv"));
  // An impossible tolerance must fail.
  CHECK(invoke({"gradcheck", "-o", w / "g2", "--set", "gradcheck.tol=0"}).code == 1);
}

TEST_CASE("gen-data and stats") {
  Workdir w("gen");
  prepare(w);
  for (const char* f : {"corpus.jsonl", "documents.txt", "paraphrase.train.tsv", "similarity.dev.tsv",
                        "acceptability.train.tsv", "manifest.txt"}) {
    CHECK(fs::exists(fs::path(w / "data") / f));
  }
  const auto s = invoke({"stats", "-o", w / "s", "--set", "corpus=" + (w / "data/corpus.jsonl")});
  CHECK(s.code == 0);
  CHECK(s.out.rfind("Source\tSentence\tPhrase\tPhrase/Sentence\ncorpus\t120\t", 0) == 0);
}

TEST_CASE("manifests record the resolved configuration without timestamps") {
  Workdir w("manifest");
  prepare(w);
  const std::string m = slurp(w / "data/manifest.txt");
  CHECK(m.rfind("command=gen-data\n", 0) == 0);
  CHECK(m.find("config.synth.size=120\n") != std::string::npos);
  CHECK(m.find("config.synth.p_sub=0.5\n") != std::string::npos);  // default recorded
  CHECK(m.find("output.corpus.jsonl fnv1a=") != std::string::npos);
  const std::string v = slurp(w / "vocab/manifest.txt");
  CHECK(v.find("input.corpus=") != std::string::npos);
  CHECK(m.find("time") == std::string::npos);
}

TEST_CASE("inject with zero learning rate leaves dev accuracy unchanged") {
  Workdir w("inject0");
  prepare(w);
  const auto args = std::vector<std::string>{"inject",  "-o",    w / "i",       "--lr",
                                             "0",       "--set", "vocab=" + (w / "vocab/vocab.txt"),
                                             "--set",   "corpus=" + (w / "data/corpus.jsonl"),
                                             "--set",   "split.dev=20", "--set", "split.test=0",
                                             "--set",   "inject.max_steps=12", "--set", "inject.eval_every=4"} +
                    tiny_encoder();
  REQUIRE(invoke(args).code == 0);
  std::istringstream report(slurp(w / "i/injection_report.csv"));
  std::string line, first;
  std::getline(report, line);
  std::size_t evals = 0;
  while (std::getline(report, line)) {
    const auto dev = line.substr(line.rfind(',', line.rfind(',') - 1));
    if (dev == ",,") continue;
    if (first.empty()) first = dev;
    CHECK(dev == first);
    ++evals;
  }
  CHECK(evals == 4);
}

TEST_CASE("reruns with the same config and seed give byte-identical CSVs") {
  Workdir w("repro");
  prepare(w);
  const auto inject = [&](const std::string& out, const std::string& seed) {
    return invoke(std::vector<std::string>{"inject", "-o", w / out, "--seed", seed, "--set",
                                           "vocab=" + (w / "vocab/vocab.txt"), "--set",
                                           "corpus=" + (w / "data/corpus.jsonl"), "--set", "split.dev=20", "--set",
                                           "split.test=20", "--set", "inject.max_steps=8", "--set",
                                           "inject.eval_every=4", "--lr", "1e-3"} +
                  tiny_encoder())
        .code;
  };
  REQUIRE(inject("a", "3") == 0);
  REQUIRE(inject("b", "3") == 0);
  REQUIRE(inject("c", "4") == 0);
  CHECK(slurp(w / "a/injection_report.csv") == slurp(w / "b/injection_report.csv"));
  CHECK(slurp(w / "a/injection_summary.csv") == slurp(w / "b/injection_summary.csv"));
  CHECK(slurp(w / "a/injected.ckpt") == slurp(w / "b/injected.ckpt"));
  CHECK(slurp(w / "a/injection_report.csv") != slurp(w / "c/injection_report.csv"));

  const auto sub = [&](const std::string& out, const std::string& jobs) {
    return invoke({"experiment", "--recipe", "subsample", "-o", w / out, "--jobs", jobs, "--set",
                   "vocab=" + (w / "vocab/vocab.txt"), "--set", "baseline=" + (w / "a/injected.ckpt"), "--set",
                   "injected=" + (w / "c/injected.ckpt"), "--set", "task.train=" + (w / "data/paraphrase.train.tsv"),
                   "--set", "task.dev=" + (w / "data/paraphrase.dev.tsv"), "--set", "sizes=20,0", "--set",
                   "seeds=1,2", "--set", "finetune.epochs=1", "--lr", "1e-3"})
        .code;
  };
  REQUIRE(sub("s1", "1") == 0);
  REQUIRE(sub("s2", "3") == 0);
  CHECK(slurp(w / "s1/subsample_report.csv") == slurp(w / "s2/subsample_report.csv"));
  CHECK(slurp(w / "s1/subsample_delta.csv") == slurp(w / "s2/subsample_delta.csv"));
  std::istringstream rows(slurp(w / "s1/subsample_report.csv"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(rows, line)) ++n;
  CHECK(n == 1 + 2 * 2 * 2);
}

TEST_CASE("pretrain and finetune write their outputs") {
  Workdir w("pipeline");
  prepare(w);
  REQUIRE(invoke(std::vector<std::string>{"pretrain", "-o", w / "p", "--set", "vocab=" + (w / "vocab/vocab.txt"),
                                          "--set", "documents=" + (w / "data/documents.txt"), "--set",
                                          "pretrain.steps=5"} +
                 tiny_encoder())
              .code == 0);
  CHECK(slurp(w / "p/pretrain_curve.csv").rfind("step,mlm,nsp,loss\n1,", 0) == 0);
  const auto ft = invoke({"finetune", "-o", w / "f", "--set", "vocab=" + (w / "vocab/vocab.txt"), "--set",
                          "checkpoint=" + (w / "p/pretrained.ckpt"), "--set", "task.name=sts", "--set",
                          "task.kind=pair_regression", "--set", "task.train=" + (w / "data/similarity.train.tsv"),
                          "--set", "task.dev=" + (w / "data/similarity.dev.tsv"), "--set", "finetune.epochs=1"});
  CHECK(ft.code == 0);
  CHECK(slurp(w / "f/finetune_metrics.csv").rfind("task,split,train_size,metric,value,seed\nsts,dev,60,pearson,", 0) ==
        0);
}
