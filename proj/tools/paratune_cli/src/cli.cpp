#include "paratune/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "paratune/checks.hpp"
#include "paratune/finetune.hpp"
#include "paratune/injection.hpp"
#include "paratune/pretrain.hpp"
#include "paratune/synth.hpp"

namespace fs = std::filesystem;

namespace paratune::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void log(const std::string& msg) { std::cerr << "[paratune] " << msg << '\n'; }

}  // namespace

void Config::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key = value");
    }
    values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
}

void Config::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::string Config::str(const std::string& key, const std::string& fallback) {
  auto it = values_.find(key);
  const std::string v = it == values_.end() ? fallback : it->second;
  resolved_[key] = v;
  return v;
}

std::string Config::required(const std::string& key) {
  if (!has(key)) throw ConfigError("missing required setting '" + key + "'");
  return str(key, "");
}

double Config::num(const std::string& key, double fallback) {
  const std::string v = str(key, fmt(fallback));
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("setting '" + key + "' must be a number, got '" + v + "'");
  }
}

std::size_t Config::count(const std::string& key, std::size_t fallback) {
  const std::string v = str(key, std::to_string(fallback));
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw ConfigError("setting '" + key + "' must be a non-negative integer, got '" + v + "'");
  }
  return std::stoull(v);
}

bool Config::flag(const std::string& key, bool fallback) {
  const std::string v = str(key, fallback ? "true" : "false");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("setting '" + key + "' must be true or false, got '" + v + "'");
}

std::vector<std::string> Config::list(const std::string& key, const std::string& fallback) {
  std::vector<std::string> out;
  std::stringstream ss(str(key, fallback));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

fs::path Config::input(const std::string& key) {
  const fs::path p = required(key);
  if (!fs::is_regular_file(p)) throw ConfigError(key + ": no such file: " + p.string());
  inputs_[key] = p.string();
  return p;
}

std::vector<std::string> Config::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!resolved_.count(k)) out.push_back(k);
  }
  return out;
}

namespace {

struct Run {
  std::string command;
  Config cfg;
  fs::path out;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::vector<fs::path> outputs;

  fs::path output(const std::string& name) {
    const fs::path p = out / name;
    if (std::find(outputs.begin(), outputs.end(), p) == outputs.end()) outputs.push_back(p);
    return p;
  }
  std::uint64_t seed_for(const std::string& key) { return cfg.count(key, seed); }
};

void write_manifest(Run& run) {
  std::ofstream m(run.out / "manifest.txt", std::ios::binary);
  m << "command=" << run.command << '\n';
  for (const auto& [k, v] : run.cfg.resolved()) m << "config." << k << '=' << v << '\n';
  for (const auto& [k, p] : run.cfg.inputs()) m << "input." << k << '=' << p << " fnv1a=" << file_hash(p) << '\n';
  for (const auto& p : run.outputs) {
    if (fs::exists(p)) m << "output." << p.filename().string() << " fnv1a=" << file_hash(p) << '\n';
  }
}

LexiconConfig lexicon_config(Config& c) {
  LexiconConfig l;
  l.seed = c.count("lexicon.seed", l.seed);
  l.topics = static_cast<int>(c.count("lexicon.topics", static_cast<std::size_t>(l.topics)));
  l.cluster_size = static_cast<int>(c.count("lexicon.cluster_size", static_cast<std::size_t>(l.cluster_size)));
  l.multiword = c.flag("lexicon.multiword", l.multiword);
  return l;
}

SynthConfig synth_config(Run& run) {
  Config& c = run.cfg;
  SynthConfig s;
  s.lexicon = lexicon_config(c);
  s.size = c.count("synth.size", 2000);
  s.seed = run.seed_for("synth.seed");
  s.p_sub = c.num("synth.p_sub", s.p_sub);
  s.p_reorder = c.num("synth.p_reorder", s.p_reorder);
  s.p_adj = c.num("synth.p_adj", s.p_adj);
  s.p_pp = c.num("synth.p_pp", s.p_pp);
  s.p_adv = c.num("synth.p_adv", s.p_adv);
  s.noise = c.num("synth.noise", s.noise);
  s.negative_swaps = c.count("synth.negative_swaps", s.negative_swaps);
  s.p_cross_topic = c.num("synth.p_cross_topic", s.p_cross_topic);
  s.p_unrelated = c.num("synth.p_unrelated", s.p_unrelated);
  s.validate();
  return s;
}

EncoderConfig encoder_config(Config& c, std::size_t vocab_size) {
  EncoderConfig e;
  e.layers = c.count("encoder.layers", e.layers);
  e.hidden = c.count("encoder.hidden", e.hidden);
  e.heads = c.count("encoder.heads", e.heads);
  e.ff = c.count("encoder.ff", e.ff);
  e.max_position = c.count("encoder.max_position", e.max_position);
  e.dropout = c.num("encoder.dropout", e.dropout);
  e.vocab_size = vocab_size;
  e.validate();
  return e;
}

WordPieceTokenizer load_tokenizer(Config& c) { return WordPieceTokenizer(Vocab::load(c.input("vocab"))); }

// The checkpoint named by `key`, or a fresh encoder from the encoder.* settings.
EncoderParams model_from(Run& run, const std::string& key, const WordPieceTokenizer& tok) {
  if (run.cfg.has(key)) {
    EncoderParams p = load_checkpoint(run.cfg.input(key)).params;
    if (p.config.vocab_size != tok.vocab().size()) {
      throw ConfigError(key + ": checkpoint expects " + std::to_string(p.config.vocab_size) +
                        " tokens but the vocabulary has " + std::to_string(tok.vocab().size()));
    }
    if (run.cfg.has("encoder.dropout")) p.config.dropout = run.cfg.num("encoder.dropout", p.config.dropout);
    return p;
  }
  return init_params(encoder_config(run.cfg, tok.vocab().size()), run.seed_for("init.seed"));
}

std::vector<AlignedPairRecord> read_corpus(Config& c, const std::string& key) {
  LoadedCorpus lc = load_corpus(c.input(key));
  for (const auto& w : lc.warnings) log("warning: " + w);
  return lc.records;
}

InjectionHyper inject_hyper(Run& run, double lr_flag) {
  Config& c = run.cfg;
  InjectionHyper h;
  if (lr_flag >= 0) c.set("inject.lr", fmt(lr_flag));
  h.lr = c.num("inject.lr", h.lr);
  h.batch = c.count("inject.batch", h.batch);
  h.max_steps = c.count("inject.max_steps", h.max_steps);
  h.eval_every = c.count("inject.eval_every", h.eval_every);
  h.warmup = c.count("inject.warmup", h.warmup);
  h.decay = c.flag("inject.decay", h.decay);
  const std::string rule = c.str("inject.early_stop", "second_decrease");
  if (rule == "second_decrease") {
    h.rule = EarlyStopRule::second_decrease;
  } else if (rule == "consecutive_decreases") {
    h.rule = EarlyStopRule::consecutive_decreases;
  } else {
    throw ConfigError("inject.early_stop must be second_decrease or consecutive_decreases, got '" + rule + "'");
  }
  h.seed = run.seed_for("inject.seed");
  return h;
}

SamplerConfig sampler_config(Run& run) {
  Config& c = run.cfg;
  SamplerConfig s;
  s.ratios.paraphrase = c.num("sampler.paraphrase", 1.0);
  s.ratios.random = c.num("sampler.random", 1.0);
  s.ratios.in_paraphrase = c.num("sampler.in_paraphrase", 1.0);
  s.ratios.validate();
  s.max_len = c.count("sampler.max_len", s.max_len);
  s.seed = run.seed_for("sampler.seed");
  return s;
}

FinetuneHyper finetune_hyper(Run& run, double lr_flag) {
  Config& c = run.cfg;
  FinetuneHyper h;
  if (lr_flag >= 0) c.set("finetune.lr", fmt(lr_flag));
  h.lr = c.num("finetune.lr", h.lr);
  h.batch = c.count("finetune.batch", h.batch);
  h.epochs = c.count("finetune.epochs", h.epochs);
  h.dropout = c.num("finetune.dropout", h.dropout);
  h.max_len = c.count("finetune.max_len", h.max_len);
  h.seed = run.seed_for("finetune.seed");
  return h;
}

CorpusSplits splits(Run& run, const std::vector<AlignedPairRecord>& corpus) {
  return split_corpus(corpus, run.cfg.count("split.dev", 200), run.cfg.count("split.test", 200),
                      run.seed_for("split.seed"));
}

// A task described by task.name/kind/metric/train/dev[/test].
TaskSpec task_from(Config& c) {
  TaskSpec t;
  t.name = c.str("task.name", "task");
  t.kind = parse_task_kind(c.str("task.kind", "pair_classification"));
  t.metric = parse_metric(c.str("task.metric", t.kind == TaskKind::pair_regression ? "pearson" : "accuracy"));
  t.train = load_task_file(c.input("task.train"), t.kind);
  t.dev = load_task_file(c.input("task.dev"), t.kind);
  if (c.has("task.test")) t.test = load_task_file(c.input("task.test"), t.kind);
  t.validate();
  return t;
}

// A synthetic task written by gen-data: <dir>/<name>.train.tsv and <name>.dev.tsv.
TaskSpec synthetic_task(Config& c, const std::string& name) {
  const DownstreamTask d = parse_downstream_task(name);
  TaskSpec t;
  t.name = name;
  t.kind = task_kind(d);
  t.metric = default_metric(d);
  const fs::path dir = c.str("tasks.dir", ".");
  for (const char* split : {"train", "dev"}) {
    const fs::path p = dir / (name + "." + split + ".tsv");
    if (!fs::is_regular_file(p)) throw ConfigError("tasks.dir: no such file: " + p.string());
    c.set("task_file." + name + "." + split, p.string());
    (std::string(split) == "train" ? t.train : t.dev) = load_task_file(c.input("task_file." + name + "." + split), t.kind);
  }
  t.validate();
  return t;
}

std::vector<std::uint64_t> seed_list(Config& c, const std::string& key, const std::string& fallback) {
  std::vector<std::uint64_t> out;
  for (const auto& s : c.list(key, fallback)) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      throw ConfigError(key + ": '" + s + "' is not a seed");
    }
    out.push_back(std::stoull(s));
  }
  if (out.empty()) throw ConfigError(key + ": no seeds given");
  return out;
}

std::string accuracy_fields(const std::optional<Accuracy>& a) {
  if (!a) return ",";
  return (a->phrase_n ? fixed(a->phrase) : "") + "," + (a->sentence_n ? fixed(a->sentence) : "");
}

void write_injection_summary(Run& run, const std::string& name,
                             const std::vector<std::pair<std::string, InjectionResult>>& results) {
  std::ofstream out(run.output(name), std::ios::binary);
  out << "variant,steps,best_step,stopped_early,dev_phrase_acc,dev_sent_acc,test_phrase_acc,test_sent_acc\n";
  for (const auto& [variant, r] : results) {
    out << variant << ',' << r.steps << ',' << r.best_step << ',' << (r.stopped_early ? 1 : 0) << ','
        << accuracy_fields(r.best_dev) << ',' << accuracy_fields(r.test) << '\n';
  }
}

// ---- subcommands ----

int cmd_gen_data(Run& run) {
  Config& c = run.cfg;
  const SynthConfig sc = synth_config(run);
  SynthStats stats;
  save_corpus(run.output("corpus.jsonl"), generate_synthetic(sc, &stats));
  log("corpus: " + std::to_string(sc.size) + " pairs, " + std::to_string(stats.alignments) + " alignments, " +
      std::to_string(stats.corrupted) + " corrupted");
  const std::size_t docs = c.count("docs.count", 300);
  if (docs > 0) {
    save_documents(run.output("documents.txt"), generate_documents(sc, docs, c.count("docs.sentences", 8)));
  }
  const std::size_t n_train = c.count("task.train", 2000), n_dev = c.count("task.dev", 500),
                    n_test = c.count("task.test", 0);
  for (const auto& name : c.list("tasks", "paraphrase,similarity,acceptability")) {
    const DownstreamTask d = parse_downstream_task(name);
    const std::uint64_t base = run.seed_for("task.seed");
    save_task_file(run.output(name + ".train.tsv"), generate_task(sc, d, n_train, base * 3 + 101), task_kind(d));
    save_task_file(run.output(name + ".dev.tsv"), generate_task(sc, d, n_dev, base * 3 + 202), task_kind(d));
    if (n_test > 0) {
      save_task_file(run.output(name + ".test.tsv"), generate_task(sc, d, n_test, base * 3 + 303), task_kind(d));
    }
  }
  return 0;
}

int cmd_build_vocab(Run& run) {
  Config& c = run.cfg;
  std::vector<Words> sentences;
  if (c.has("corpus")) {
    for (const auto& r : read_corpus(c, "corpus")) {
      sentences.push_back(r.source);
      sentences.push_back(r.target);
    }
  }
  if (c.has("documents")) {
    for (const auto& d : load_documents(c.input("documents"))) sentences.insert(sentences.end(), d.begin(), d.end());
  }
  if (!c.has("corpus") && !c.has("documents")) throw ConfigError("build-vocab needs 'corpus' and/or 'documents'");
  const Vocab v = Vocab::build(sentences, c.count("vocab.size", 400));
  v.save(run.output("vocab.txt"));
  log("vocab: " + std::to_string(v.size()) + " tokens");
  return 0;
}

int cmd_pretrain(Run& run, double lr_flag) {
  Config& c = run.cfg;
  const auto tok = load_tokenizer(c);
  const auto docs = load_documents(c.input("documents"));
  EncoderParams params = model_from(run, "checkpoint", tok);
  PretrainHyper h;
  if (lr_flag >= 0) c.set("pretrain.lr", fmt(lr_flag));
  h.steps = c.count("pretrain.steps", h.steps);
  h.batch = c.count("pretrain.batch", h.batch);
  h.lr = c.num("pretrain.lr", h.lr);
  h.mask_rate = c.num("pretrain.mask_rate", h.mask_rate);
  h.nsp = c.flag("pretrain.nsp", h.nsp);
  h.max_len = c.count("pretrain.max_len", h.max_len);
  h.seed = run.seed_for("pretrain.seed");
  const PretrainResult r = pretrain_loop(docs, tok, params, h);
  {
    std::ofstream out(run.output("pretrain_curve.csv"), std::ios::binary);
    out << "step,mlm,nsp,loss\n";
    for (const auto& s : r.curve) out << s.step << ',' << fixed(s.mlm) << ',' << fixed(s.nsp) << ',' << fixed(s.loss) << '\n';
  }
  save_checkpoint(run.output("pretrained.ckpt"), strip_heads(params), {{"stage", "pretrain"}});
  if (r.diverged) {
    log("pretraining stopped: " + r.error);
    return 1;
  }
  return 0;
}

int cmd_inject(Run& run, double lr_flag) {
  Config& c = run.cfg;
  const auto tok = load_tokenizer(c);
  const auto corpus = read_corpus(c, "corpus");
  EncoderParams params = model_from(run, "checkpoint", tok);
  const Variant variant = parse_variant(c.str("variant", "joint"));
  auto heads = variant_heads(variant);
  if (!heads) throw ConfigError("variant: baseline has nothing to inject");
  heads->dropout = c.num("heads.dropout", heads->dropout);
  SamplerConfig sc = sampler_config(run);
  sc.task = heads->phrase;
  const CorpusSplits sp = splits(run, corpus);
  SamplerStats stats;
  const auto train = sample_negatives(sp.train, tok, sc, &stats);
  const auto dev = sample_negatives(sp.dev, tok, sc);
  std::vector<PairInstance> test;
  if (sp.test.size() >= 2) test = sample_negatives(sp.test, tok, sc);
  log("sampler: " + std::to_string(stats.paraphrase) + " paraphrase, " + std::to_string(stats.random) + " random, " +
      std::to_string(stats.in_paraphrase) + " in_paraphrase phrase examples; " +
      std::to_string(stats.unaligned_pairs) + " unaligned pairs");
  const InjectionHyper h = inject_hyper(run, lr_flag);
  const InjectionResult r = inject_train(params, train, dev, test, *heads, h);
  write_injection_report(run.output("injection_report.csv"), r);
  write_injection_summary(run, "injection_summary.csv", {{to_string(variant), r}});
  save_checkpoint(run.output("injected.ckpt"), strip_heads(params), {{"stage", "inject"}, {"variant", to_string(variant)}});
  log("best dev at step " + std::to_string(r.best_step) + ": phrase " + fixed(r.best_dev.phrase) + ", sentence " +
      fixed(r.best_dev.sentence));
  return 0;
}

int cmd_finetune(Run& run, double lr_flag) {
  Config& c = run.cfg;
  const auto tok = load_tokenizer(c);
  const TaskSpec task = task_from(c);
  const EncoderParams base = model_from(run, "checkpoint", tok);
  const FinetuneHyper h = finetune_hyper(run, lr_flag);
  const std::size_t size = c.count("task.train_size", 0);
  const auto train = size == 0 ? task.train : nested_subsample(task.train, size, h.seed);
  TaskModel m = finetune(task, train, base, tok, h);
  std::ofstream out(run.output("finetune_metrics.csv"), std::ios::binary);
  out << "task,split,train_size,metric,value,seed\n";
  auto row = [&](const char* split, const std::vector<TaskExample>& data) {
    const double v = evaluate_task(m, data, task.metric, tok, h.max_len);
    out << task.name << ',' << split << ',' << train.size() << ',' << to_string(task.metric) << ',' << fixed(v) << ','
        << h.seed << '\n';
    log(std::string(split) + " " + to_string(task.metric) + " = " + fixed(v));
  };
  row("dev", task.dev);
  if (!task.test.empty()) row("test", task.test);
  return 0;
}

int cmd_experiment(Run& run, const std::string& recipe, double lr_flag) {
  Config& c = run.cfg;
  const auto tok = load_tokenizer(c);
  if (recipe == "subsample") {
    const TaskSpec task = task_from(c);
    const EncoderParams baseline = model_from(run, "baseline", tok);
    const EncoderParams injected = load_checkpoint(c.input("injected")).params;
    if (injected.config.vocab_size != tok.vocab().size()) {
      throw ConfigError("injected: checkpoint does not match the vocabulary");
    }
    const std::vector<NamedCheckpoint> cks{{"baseline", &baseline}, {"injected", &injected}};
    std::vector<std::size_t> sizes;
    for (auto s : seed_list(c, "sizes", "100,500,0")) sizes.push_back(static_cast<std::size_t>(s));
    const auto seeds = seed_list(c, "seeds", "1,2,3");
    const FinetuneHyper h = finetune_hyper(run, lr_flag);
    const ExperimentReport report = subsample_experiment(task, cks, sizes, seeds, tok, h, run.jobs);
    write_report_csv(run.output("subsample_report.csv"), report);
    const auto deltas = delta_table(report, "baseline", "injected");
    write_delta_csv(run.output("subsample_delta.csv"), deltas);
    for (const auto& d : deltas) {
      if (d.seed == "mean") log("size " + std::to_string(d.train_size) + ": delta " + fixed(d.delta));
    }
    return 0;
  }
  if (recipe == "ablation") {
    const auto corpus = read_corpus(c, "corpus");
    const EncoderParams base = model_from(run, "checkpoint", tok);
    std::vector<TaskSpec> tasks;
    for (const auto& name : c.list("tasks", "paraphrase,similarity")) tasks.push_back(synthetic_task(c, name));
    AblationConfig ac;
    for (const auto& v : c.list("variants", "baseline,sentence_only,phrase_3way,phrase_binary,joint,joint_simple_feature")) {
      ac.variants.push_back(parse_variant(v));
    }
    ac.seeds = seed_list(c, "seeds", "1");
    ac.sampler = sampler_config(run);
    ac.inject = inject_hyper(run, -1);
    ac.finetune = finetune_hyper(run, lr_flag);
    const AblationResult r = ablation_experiment(splits(run, corpus), tasks, base, tok, ac, run.jobs);
    write_report_csv(run.output("ablation_report.csv"), r.report);
    std::vector<std::pair<std::string, InjectionResult>> inj(r.injection.begin(), r.injection.end());
    write_injection_summary(run, "ablation_injection.csv", inj);
    std::ofstream inv(run.output("ablation_inventory.csv"), std::ios::binary);
    inv << "variant,parameter\n";
    for (const auto& [variant, names] : r.inventory) {
      for (const auto& n : names) inv << variant << ',' << n << '\n';
    }
    return 0;
  }
  throw ConfigError("unknown recipe '" + recipe + "' (expected subsample or ablation)");
}

int cmd_gradcheck(Run& run) {
  Config& c = run.cfg;
  const double tol = c.num("gradcheck.tol", 1e-3);
  GradSuiteConfig gc;
  gc.encoder = encoder_config(c, 1);  // vocabulary comes from the generated data
  gc.instances = c.count("gradcheck.instances", gc.instances);
  gc.seed = run.seed_for("gradcheck.seed");
  std::vector<GradSuiteEntry> entries = primitive_gradchecks(gc.seed + 40);
  entries.push_back(joint_loss_gradcheck(gc));
  double worst = 0.0;
  std::ofstream out(run.output("gradcheck.csv"), std::ios::binary);
  out << "check,checked,max_rel_error\n";
  for (const auto& e : entries) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", e.result.max_rel_error);
    out << e.name << ',' << e.result.checked << ',' << buf << '\n';
    std::cout << e.name << ": " << buf << " over " << e.result.checked << " coordinates\n";
    worst = std::max(worst, e.result.max_rel_error);
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", worst);
  std::cout << "max relative error: " << buf << (worst < tol ? " (ok)" : " (FAILED)") << '\n';
  return worst < tol ? 0 : 1;
}

int cmd_stats(Run& run) {
  Config& c = run.cfg;
  std::vector<CorpusStats> rows;
  std::size_t i = 0;
  for (const auto& path : c.list("corpus", "")) {
    const std::string key = "corpus." + std::to_string(i++);
    c.set(key, path);
    const auto records = read_corpus(c, key);
    rows.push_back(corpus_stats(fs::path(path).stem().string(), records));
  }
  if (rows.empty()) throw ConfigError("stats needs 'corpus' (comma-separated paths)");
  const std::string table = format_stats_table(rows);
  std::cout << table;
  std::ofstream(run.output("stats.tsv"), std::ios::binary) << table;
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"paratune: inject paraphrase relations into a small transformer encoder"};
  app.name(args.empty() ? "paratune" : args[0]);
  app.require_subcommand(1);

  std::string config_path, out_dir, recipe;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  double lr = -1.0;
  std::size_t jobs = 1;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "generate a synthetic aligned corpus, pre-training documents and downstream tasks"},
      {"build-vocab", "build a WordPiece vocabulary from a corpus and/or documents"},
      {"pretrain", "masked language model + next sentence prediction pre-training"},
      {"inject", "train the phrasal and sentential paraphrase heads on an aligned corpus"},
      {"finetune", "fine-tune a checkpoint on a downstream task"},
      {"experiment", "run a named experiment grid (--recipe subsample|ablation)"},
      {"gradcheck", "finite-difference check of every primitive and the joint loss"},
      {"stats", "sentence and phrase counts per corpus"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "key = value config file");
    sub->add_option("--set", overrides, "override a config value (key=value)")->take_all();
    sub->add_option("--seed", seed, "global seed");
    sub->add_option("-o,--out", out_dir, "output directory");
    sub->add_option("--jobs", jobs, "parallel experiment cells")->check(CLI::PositiveNumber);
    if (name == "pretrain" || name == "inject" || name == "finetune" || name == "experiment") {
      sub->add_option("--lr", lr, "learning rate of this stage")->check(CLI::NonNegativeNumber);
    }
    if (name == "experiment") sub->add_option("--recipe", recipe, "subsample or ablation")->required();
  }

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  Run r;
  r.command = app.get_subcommands().front()->get_name();
  r.jobs = jobs;
  const bool seed_given = app.get_subcommands().front()->count("--seed") > 0;
  try {
    if (!config_path.empty()) {
      r.cfg.load_file(config_path);
      r.cfg.set("config", config_path);
      r.cfg.input("config");
    }
    for (const auto& o : overrides) r.cfg.set_override(o);
    if (seed_given) r.cfg.set("seed", std::to_string(seed));
    r.seed = r.cfg.count("seed", 1);
    r.out = out_dir.empty() ? fs::path("runs") / r.command : fs::path(out_dir);
    fs::create_directories(r.out);

    int code = 0;
    if (r.command == "gen-data") code = cmd_gen_data(r);
    else if (r.command == "build-vocab") code = cmd_build_vocab(r);
    else if (r.command == "pretrain") code = cmd_pretrain(r, lr);
    else if (r.command == "inject") code = cmd_inject(r, lr);
    else if (r.command == "finetune") code = cmd_finetune(r, lr);
    else if (r.command == "experiment") code = cmd_experiment(r, recipe, lr);
    else if (r.command == "gradcheck") code = cmd_gradcheck(r);
    else if (r.command == "stats") code = cmd_stats(r);
    for (const auto& k : r.cfg.unused()) log("warning: setting '" + k + "' was not used");
    write_manifest(r);
    return code;
  } catch (const std::exception& e) {
    std::cerr << "paratune " << r.command << ": error: " << e.what() << '\n';
    return 1;
  }
}

int run(int argc, const char* const* argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace paratune::cli
