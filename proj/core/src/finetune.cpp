#include "paratune/finetune.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "paratune/ops.hpp"
#include "paratune/optim.hpp"

namespace paratune {

double compute_metric(std::span<const double> preds, std::span<const double> golds, Metric metric) {
  if (preds.size() != golds.size()) {
    throw MetricError("metric: " + std::to_string(preds.size()) + " predictions for " + std::to_string(golds.size()) +
                      " labels");
  }
  if (preds.empty()) throw MetricError("metric: no predictions");
  const std::size_t n = preds.size();
  switch (metric) {
    case Metric::accuracy: {
      std::size_t ok = 0;
      for (std::size_t i = 0; i < n; ++i) ok += preds[i] == golds[i];
      return static_cast<double>(ok) / static_cast<double>(n);
    }
    case Metric::f1: {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool p = preds[i] == 1.0, g = golds[i] == 1.0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
      }
      if (tp == 0) return 0.0;
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
      return 2.0 * precision * recall / (precision + recall);
    }
    case Metric::pearson: {
      if (n < 2) throw MetricError("pearson: need at least 2 points");
      const double mp = std::accumulate(preds.begin(), preds.end(), 0.0) / static_cast<double>(n);
      const double mg = std::accumulate(golds.begin(), golds.end(), 0.0) / static_cast<double>(n);
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sxy += (preds[i] - mp) * (golds[i] - mg);
        sxx += (preds[i] - mp) * (preds[i] - mp);
        syy += (golds[i] - mg) * (golds[i] - mg);
      }
      if (sxx == 0.0 || syy == 0.0) throw MetricError("pearson: undefined for a series with zero variance");
      return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    }
  }
  throw MetricError("unknown metric");
}

std::size_t TaskSpec::validate() const {
  const bool regression = kind == TaskKind::pair_regression;
  if (regression != (metric == Metric::pearson)) {
    throw std::invalid_argument("task " + name + ": metric " + to_string(metric) + " does not fit " +
                                to_string(kind));
  }
  if (train.empty()) throw std::invalid_argument("task " + name + ": empty training set");
  if (regression) {
    for (const auto* part : {&train, &dev, &test}) {
      for (const auto& ex : *part) {
        if (!std::isfinite(ex.label)) throw std::invalid_argument("task " + name + ": non-finite regression target");
      }
    }
    return 1;
  }
  std::set<long long> seen;
  for (const auto& ex : train) {
    if (ex.label < 0 || ex.label != std::floor(ex.label)) {
      throw std::invalid_argument("task " + name + ": class label " + std::to_string(ex.label) + " is not an index");
    }
    seen.insert(static_cast<long long>(ex.label));
  }
  const auto classes = static_cast<std::size_t>(*seen.rbegin() + 1);
  if (seen.size() != classes) throw std::invalid_argument("task " + name + ": class labels are not dense 0..C-1");
  if (classes < 2) throw std::invalid_argument("task " + name + ": training labels cover a single class");
  for (const auto* part : {&dev, &test}) {
    for (const auto& ex : *part) {
      if (ex.label < 0 || ex.label >= static_cast<double>(classes) || ex.label != std::floor(ex.label)) {
        throw std::invalid_argument("task " + name + ": held-out label " + std::to_string(ex.label) +
                                    " outside the training classes");
      }
    }
  }
  if (metric == Metric::f1 && classes != 2) throw std::invalid_argument("task " + name + ": f1 needs 2 classes");
  return classes;
}

EncodedPair encode_example(const WordPieceTokenizer& tok, const TaskExample& ex, TaskKind kind, std::size_t max_len) {
  if (kind == TaskKind::single_sentence_classification) return encode_single(tok, ex.first, max_len);
  return encode_pair_truncated(tok, ex.first, ex.second, max_len);
}

namespace {

Var head_output(Tape& tape, EncoderParams& params, const EncodedPair& pair, ForwardMode mode) {
  Var x = ops::row(encode(tape, params, pair, mode), 0);
  if (mode.train && params.config.dropout > 0.0) x = ops::dropout(x, params.config.dropout, *mode.rng);
  return nn::linear(tape, params.store, "head.task", x);
}

}  // namespace

TaskModel finetune(const TaskSpec& task, std::span<const TaskExample> train, const EncoderParams& checkpoint,
                   const WordPieceTokenizer& tok, const FinetuneHyper& hyper) {
  const std::size_t classes = task.validate();
  if (train.empty()) throw std::invalid_argument("finetune: empty training subset");
  if (hyper.epochs < 1) throw std::invalid_argument("finetune: epochs must be >= 1");
  if (hyper.batch == 0) throw std::invalid_argument("finetune: batch must be positive");
  if (tok.vocab().size() != checkpoint.config.vocab_size) {
    throw std::invalid_argument("finetune: checkpoint expects " + std::to_string(checkpoint.config.vocab_size) +
                                " tokens but the vocabulary has " + std::to_string(tok.vocab().size()));
  }
  TaskModel model;
  model.params = strip_heads(checkpoint);
  model.params.config.dropout = hyper.dropout;
  model.kind = task.kind;
  model.outputs = classes;
  const bool regression = task.kind == TaskKind::pair_regression;
  if (regression) {
    auto [lo, hi] = std::minmax_element(train.begin(), train.end(),
                                        [](const TaskExample& a, const TaskExample& b) { return a.label < b.label; });
    model.label_min = lo->label;
    model.label_max = hi->label;
    if (model.label_max == model.label_min) throw std::invalid_argument("finetune: regression targets are constant");
  }
  std::mt19937_64 rng(hyper.seed);
  nn::add_linear(model.params.store, "head.task", model.params.config.hidden, classes, rng);
  const std::size_t max_len = std::min(hyper.max_len, model.params.config.max_position);

  std::vector<EncodedPair> encoded;
  encoded.reserve(train.size());
  for (const auto& ex : train) encoded.push_back(encode_example(tok, ex, task.kind, max_len));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Adam adam(AdamConfig{hyper.lr});
  const double range = model.label_max - model.label_min;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch);
      model.params.store.zero_grad();
      Tape tape;
      std::vector<Var> terms;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        Var out = head_output(tape, model.params, encoded[i], ForwardMode{true, &rng});
        if (regression) {
          terms.push_back(ops::mse_loss(out, (train[i].label - model.label_min) / range));
        } else {
          terms.push_back(ops::softmax_cross_entropy(out, static_cast<std::size_t>(train[i].label)));
        }
      }
      Var loss = ops::mean(terms);
      if (!std::isfinite(loss.value().item())) throw NumericError("finetune: non-finite loss");
      tape.backward(loss);
      adam.step(model.params.store);
    }
  }
  return model;
}

std::vector<double> predict(TaskModel& model, std::span<const TaskExample> data, const WordPieceTokenizer& tok,
                            std::size_t max_len) {
  std::vector<double> out;
  out.reserve(data.size());
  max_len = std::min(max_len, model.params.config.max_position);
  for (const auto& ex : data) {
    Tape tape;
    const Tensor& y = head_output(tape, model.params, encode_example(tok, ex, model.kind, max_len), {}).value();
    if (model.kind == TaskKind::pair_regression) {
      out.push_back(y.values[0] * (model.label_max - model.label_min) + model.label_min);
    } else {
      out.push_back(static_cast<double>(std::max_element(y.values.begin(), y.values.end()) - y.values.begin()));
    }
  }
  return out;
}

double evaluate_task(TaskModel& model, std::span<const TaskExample> data, Metric metric, const WordPieceTokenizer& tok,
                     std::size_t max_len) {
  std::vector<double> golds;
  for (const auto& ex : data) golds.push_back(ex.label);
  const auto preds = predict(model, data, tok, max_len);
  return compute_metric(preds, golds, metric);
}

void ExperimentReport::add(ReportRow row) {
  for (const auto& r : rows_) {
    if (r.variant == row.variant && r.task == row.task && r.train_size == row.train_size && r.seed == row.seed) {
      throw std::invalid_argument("report: duplicate cell " + row.variant + "/" + row.task + "/" +
                                  std::to_string(row.train_size) + "/" + std::to_string(row.seed));
    }
  }
  rows_.push_back(std::move(row));
}

void write_report_csv(const std::filesystem::path& path, const ExperimentReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,task,train_size,metric,value,seed\n";
  char buf[64];
  for (const auto& r : report.rows()) {
    std::snprintf(buf, sizeof buf, "%.6f", r.value);
    out << r.variant << ',' << r.task << ',' << r.train_size << ',' << r.metric << ',' << buf << ',' << r.seed << '\n';
  }
}

std::vector<DeltaRow> delta_table(const ExperimentReport& report, const std::string& baseline,
                                  const std::string& injected) {
  std::vector<DeltaRow> out;
  std::vector<std::pair<std::string, std::size_t>> groups;
  for (const auto& r : report.rows()) {
    if (r.variant != baseline) continue;
    for (const auto& q : report.rows()) {
      if (q.variant == injected && q.task == r.task && q.train_size == r.train_size && q.seed == r.seed) {
        out.push_back(DeltaRow{r.task, r.train_size, std::to_string(r.seed), r.value, q.value, q.value - r.value});
        const std::pair<std::string, std::size_t> key{r.task, r.train_size};
        if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
      }
    }
  }
  const std::size_t per_seed = out.size();
  for (const auto& [task, size] : groups) {
    DeltaRow mean{task, size, "mean", 0.0, 0.0, 0.0};
    std::size_t n = 0;
    for (std::size_t i = 0; i < per_seed; ++i) {
      if (out[i].task != task || out[i].train_size != size) continue;
      mean.baseline += out[i].baseline;
      mean.injected += out[i].injected;
      ++n;
    }
    mean.baseline /= static_cast<double>(n);
    mean.injected /= static_cast<double>(n);
    mean.delta = mean.injected - mean.baseline;
    out.push_back(mean);
  }
  return out;
}

void write_delta_csv(const std::filesystem::path& path, const std::vector<DeltaRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "task,train_size,seed,baseline,injected,delta\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%+.6f", r.baseline, r.injected, r.delta);
    out << r.task << ',' << r.train_size << ',' << r.seed << ',' << buf << '\n';
  }
}

std::vector<TaskExample> nested_subsample(std::span<const TaskExample> train, std::size_t size, std::uint64_t seed) {
  if (size > train.size()) {
    throw std::invalid_argument("subsample: size " + std::to_string(size) + " exceeds the " +
                                std::to_string(train.size()) + " available examples");
  }
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0xa0761d6478bd642fULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<TaskExample> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) out.push_back(train[order[i]]);
  return out;
}

namespace {

// Runs fn(0..n-1) on up to `jobs` threads; each index is handled exactly once.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

ExperimentReport subsample_experiment(const TaskSpec& task, std::span<const NamedCheckpoint> checkpoints,
                                      std::span<const std::size_t> sizes, std::span<const std::uint64_t> seeds,
                                      const WordPieceTokenizer& tok, const FinetuneHyper& hyper, std::size_t jobs) {
  task.validate();
  if (task.dev.empty()) throw std::invalid_argument("subsample: task " + task.name + " has no dev set");
  std::vector<std::size_t> resolved;
  for (std::size_t s : sizes) {
    const std::size_t r = s == 0 ? task.train.size() : s;
    if (r > task.train.size()) {
      throw std::invalid_argument("subsample: size " + std::to_string(r) + " exceeds the " +
                                  std::to_string(task.train.size()) + " training examples of " + task.name);
    }
    if (std::find(resolved.begin(), resolved.end(), r) == resolved.end()) resolved.push_back(r);
  }
  using Cell = std::tuple<std::size_t, std::uint64_t, std::size_t>;
  std::vector<Cell> cells;
  for (std::size_t size : resolved) {
    for (std::uint64_t seed : seeds) {
      for (std::size_t c = 0; c < checkpoints.size(); ++c) cells.emplace_back(size, seed, c);
    }
  }
  std::vector<double> values(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const auto& [size, seed, c] = cells[i];
    const auto sub = nested_subsample(task.train, size, seed);
    FinetuneHyper h = hyper;
    h.seed = seed;
    TaskModel m = finetune(task, sub, *checkpoints[c].params, tok, h);
    values[i] = evaluate_task(m, task.dev, task.metric, tok, h.max_len);
  });
  ExperimentReport report;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& [size, seed, c] = cells[i];
    report.add(ReportRow{checkpoints[c].name, task.name, size, to_string(task.metric), values[i], seed});
  }
  return report;
}

AblationResult ablation_experiment(const CorpusSplits& corpus, std::span<const TaskSpec> tasks,
                                   const EncoderParams& base, const WordPieceTokenizer& tok,
                                   const AblationConfig& config, std::size_t jobs) {
  if (config.variants.empty()) throw std::invalid_argument("ablation: no variants");
  if (config.seeds.empty()) throw std::invalid_argument("ablation: no seeds");
  for (const auto& t : tasks) t.validate();

  std::map<PhraseTask, std::array<std::vector<PairInstance>, 3>> data;
  for (Variant v : config.variants) {
    auto heads = variant_heads(v);
    if (!heads || data.count(heads->phrase)) continue;
    SamplerConfig sc = config.sampler;
    sc.task = heads->phrase;
    auto& d = data[heads->phrase];
    d[0] = sample_negatives(corpus.train, tok, sc);
    d[1] = sample_negatives(corpus.dev, tok, sc);
    if (!corpus.test.empty()) {
      if (corpus.test.size() >= 2) d[2] = sample_negatives(corpus.test, tok, sc);
    }
  }

  AblationResult result;
  std::vector<EncoderParams> injected(config.variants.size());
  std::vector<InjectionResult> runs(config.variants.size());
  std::vector<std::vector<std::string>> names(config.variants.size());
  parallel_for(config.variants.size(), jobs, [&](std::size_t i) {
    const Variant v = config.variants[i];
    EncoderParams p = strip_heads(base);
    if (auto heads = variant_heads(v)) {
      const auto& d = data.at(heads->phrase);
      runs[i] = inject_train(p, d[0], d[1], d[2], *heads, config.inject);
    }
    for (const auto& prm : p.store) names[i].push_back(prm.name);
    injected[i] = strip_heads(p);
  });
  for (std::size_t i = 0; i < config.variants.size(); ++i) {
    const std::string name = to_string(config.variants[i]);
    if (result.checkpoints.count(name)) throw std::invalid_argument("ablation: variant " + name + " listed twice");
    result.inventory[name] = names[i];
    if (variant_heads(config.variants[i])) result.injection[name] = runs[i];
    result.checkpoints[name] = injected[i];
  }

  using Cell = std::tuple<std::size_t, std::size_t, std::uint64_t>;
  std::vector<Cell> cells;
  for (std::size_t v = 0; v < config.variants.size(); ++v) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      for (std::uint64_t seed : config.seeds) cells.emplace_back(v, t, seed);
    }
  }
  std::vector<double> values(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const auto& [v, t, seed] = cells[i];
    FinetuneHyper h = config.finetune;
    h.seed = seed;
    TaskModel m = finetune(tasks[t], tasks[t].train, injected[v], tok, h);
    values[i] = evaluate_task(m, tasks[t].dev, tasks[t].metric, tok, h.max_len);
  });
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& [v, t, seed] = cells[i];
    result.report.add(ReportRow{to_string(config.variants[v]), tasks[t].name, tasks[t].train.size(),
                                to_string(tasks[t].metric), values[i], seed});
  }
  return result;
}

}  // namespace paratune
