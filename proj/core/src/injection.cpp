#include "paratune/injection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "paratune/ops.hpp"
#include "paratune/optim.hpp"

namespace paratune {

std::string to_string(PhraseLabel label) {
  switch (label) {
    case PhraseLabel::paraphrase: return "paraphrase";
    case PhraseLabel::random: return "random";
    case PhraseLabel::in_paraphrase: return "in_paraphrase";
  }
  return "?";
}

std::string to_string(FeatureMode mode) {
  return mode == FeatureMode::elaborate_max ? "elaborate_max" : "simple_mean";
}

std::string to_string(PhraseTask task) {
  switch (task) {
    case PhraseTask::none: return "none";
    case PhraseTask::three_way: return "three_way";
    case PhraseTask::binary: return "binary";
  }
  return "?";
}

void NegativeRatios::validate() const {
  if (!(paraphrase > 0 && random > 0 && in_paraphrase > 0)) {
    throw std::invalid_argument("negative ratios must all be positive");
  }
}

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::optional<TokenSpan> try_source(WordSpan w, const EncodedPair& p) {
  if (w.last >= p.source_offsets.size()) return std::nullopt;
  return remap_source_span(w, p);
}

std::optional<TokenSpan> try_target(WordSpan w, const EncodedPair& p) {
  if (w.last >= p.target_offsets.size()) return std::nullopt;
  return remap_target_span(w, p);
}

std::vector<WordSpan> target_inventory(const AlignedPairRecord& r) {
  std::vector<WordSpan> spans;
  for (const auto& a : r.alignments) {
    WordSpan w{a.tgt_first, a.tgt_last};
    if (std::find(spans.begin(), spans.end(), w) == spans.end()) spans.push_back(w);
  }
  return spans;
}

std::vector<TokenSpan> remapped_targets(const std::vector<WordSpan>& words, const EncodedPair& p) {
  std::vector<TokenSpan> out;
  for (const auto& w : words) {
    if (auto t = try_target(w, p)) out.push_back(*t);
  }
  return out;
}

}  // namespace

std::vector<PairInstance> sample_negatives(std::span<const AlignedPairRecord> corpus, const WordPieceTokenizer& tok,
                                           const SamplerConfig& config, SamplerStats* stats_out) {
  if (corpus.size() < 2) throw std::invalid_argument("sample_negatives: need at least 2 sentence pairs");
  config.ratios.validate();
  std::mt19937_64 rng(config.seed);
  SamplerStats stats;
  std::vector<PairInstance> out;
  out.reserve(2 * corpus.size());

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const AlignedPairRecord& r = corpus[i];
    PairInstance gold;
    gold.pair = encode_pair_truncated(tok, r.source, r.target, config.max_len);
    gold.label = SentenceLabel::paraphrase;
    gold.source_record = gold.target_record = i;
    const std::vector<TokenSpan> inventory = remapped_targets(target_inventory(r), gold.pair);
    std::size_t usable = 0;
    for (const auto& a : r.alignments) {
      auto s = try_source({a.src_first, a.src_last}, gold.pair);
      auto t = try_target({a.tgt_first, a.tgt_last}, gold.pair);
      if (!s || !t) {
        ++stats.dropped_alignments;
        continue;
      }
      ++usable;
      if (config.task == PhraseTask::none) continue;
      gold.phrases.push_back(PhraseExample{{*s, *t}, PhraseLabel::paraphrase, *t});
      std::vector<TokenSpan> others;
      for (const auto& span : inventory) {
        if (!(span == *t)) others.push_back(span);
      }
      if (others.empty()) {
        ++stats.no_alternative_span;
        continue;
      }
      gold.phrases.push_back(PhraseExample{{*s, others[pick(rng, others.size())]}, PhraseLabel::in_paraphrase, *t});
    }
    if (usable == 0) ++stats.unaligned_pairs;
    out.push_back(std::move(gold));

    std::size_t j = i;
    for (int attempt = 0; attempt < 64 && (j == i || corpus[j].target == r.target); ++attempt) {
      j = pick(rng, corpus.size());
    }
    if (j == i || corpus[j].target == r.target) {
      j = corpus.size();
      for (std::size_t k = 0; k < corpus.size(); ++k) {
        if (k != i && corpus[k].target != r.target) {
          j = k;
          break;
        }
      }
      if (j == corpus.size()) continue;
    }
    PairInstance rnd;
    rnd.pair = encode_pair_truncated(tok, r.source, corpus[j].target, config.max_len);
    rnd.label = SentenceLabel::random;
    rnd.source_record = i;
    rnd.target_record = j;
    if (config.task == PhraseTask::three_way) {
      const std::vector<TokenSpan> partner = remapped_targets(target_inventory(corpus[j]), rnd.pair);
      std::vector<TokenSpan> sources;
      for (const auto& a : r.alignments) {
        auto s = try_source({a.src_first, a.src_last}, rnd.pair);
        if (s && std::find(sources.begin(), sources.end(), *s) == sources.end()) sources.push_back(*s);
      }
      if (!partner.empty()) {
        for (const auto& s : sources) {
          const TokenSpan t = partner[pick(rng, partner.size())];
          rnd.phrases.push_back(PhraseExample{{s, t}, PhraseLabel::random, t});
        }
      }
    }
    out.push_back(std::move(rnd));
  }

  // Downsample each phrase class so the kept counts follow the configured ratios.
  if (config.task != PhraseTask::none) {
    std::map<PhraseLabel, std::vector<std::pair<std::size_t, std::size_t>>> pools;
    for (std::size_t n = 0; n < out.size(); ++n) {
      for (std::size_t k = 0; k < out[n].phrases.size(); ++k) pools[out[n].phrases[k].label].emplace_back(n, k);
    }
    std::map<PhraseLabel, double> ratio{{PhraseLabel::paraphrase, config.ratios.paraphrase},
                                        {PhraseLabel::in_paraphrase, config.ratios.in_paraphrase}};
    if (config.task == PhraseTask::three_way) ratio[PhraseLabel::random] = config.ratios.random;
    double scale = INFINITY;
    for (const auto& [label, r] : ratio) scale = std::min(scale, static_cast<double>(pools[label].size()) / r);
    std::vector<std::vector<bool>> keep(out.size());
    for (std::size_t n = 0; n < out.size(); ++n) keep[n].assign(out[n].phrases.size(), false);
    for (auto& [label, pool] : pools) {
      const std::size_t want =
          std::min(pool.size(), static_cast<std::size_t>(std::llround(scale * ratio[label])));
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t q = 0; q < want; ++q) keep[pool[q].first][pool[q].second] = true;
    }
    for (std::size_t n = 0; n < out.size(); ++n) {
      std::vector<PhraseExample> kept;
      for (std::size_t k = 0; k < out[n].phrases.size(); ++k) {
        if (keep[n][k]) kept.push_back(out[n].phrases[k]);
      }
      out[n].phrases = std::move(kept);
    }
  }

  for (const auto& inst : out) {
    (inst.label == SentenceLabel::paraphrase ? stats.sentence_paraphrase : stats.sentence_random)++;
    for (const auto& p : inst.phrases) {
      switch (p.label) {
        case PhraseLabel::paraphrase: ++stats.paraphrase; break;
        case PhraseLabel::random: ++stats.random; break;
        case PhraseLabel::in_paraphrase: ++stats.in_paraphrase; break;
      }
    }
  }
  if (stats_out) *stats_out = stats;
  return out;
}

std::size_t feature_width(FeatureMode mode, std::size_t hidden) {
  return mode == FeatureMode::elaborate_max ? 4 * hidden : 2 * hidden;
}

Var phrase_feature(Var h, TokenSpan source, TokenSpan target, FeatureMode mode) {
  if (mode == FeatureMode::simple_mean) {
    return ops::concat({ops::mean_pool_span(h, source.begin, source.end), ops::mean_pool_span(h, target.begin, target.end)});
  }
  Var hs = ops::max_pool_span(h, source.begin, source.end);
  Var ht = ops::max_pool_span(h, target.begin, target.end);
  return ops::concat({hs, ht, ops::mul(hs, ht), ops::abs(ops::sub(hs, ht))});
}

void add_injection_heads(EncoderParams& params, const HeadConfig& heads, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x2545f4914f6cdd1dULL);
  const std::size_t hidden = params.config.hidden;
  if (heads.phrase != PhraseTask::none && !params.store.contains("head.phrase.w")) {
    nn::add_linear(params.store, "head.phrase", feature_width(heads.feature, hidden), heads.phrase_classes(), rng);
  }
  if (heads.sentence && !params.store.contains("head.sentence.w")) {
    nn::add_linear(params.store, "head.sentence", hidden, 2, rng);
  }
}

namespace {

Var head_logits(Tape& tape, EncoderParams& params, const std::string& name, Var x, double dropout, ForwardMode mode) {
  const Tensor& w = params.store.get(name + ".w").value;
  if (x.size() != w.shape[0]) {
    throw DimensionError(name + ": feature width " + std::to_string(x.size()) + " does not match head input " +
                         std::to_string(w.shape[0]));
  }
  if (mode.train && dropout > 0.0) {
    if (mode.rng == nullptr) throw std::invalid_argument(name + ": dropout needs a random generator");
    x = ops::dropout(x, dropout, *mode.rng);
  }
  return nn::linear(tape, params.store, name, x);
}

}  // namespace

Var phrase_logits(Tape& tape, EncoderParams& params, Var feature, double dropout, ForwardMode mode) {
  return head_logits(tape, params, "head.phrase", feature, dropout, mode);
}

Var sentence_logits(Tape& tape, EncoderParams& params, Var h1, double dropout, ForwardMode mode) {
  return head_logits(tape, params, "head.sentence", h1, dropout, mode);
}

std::size_t phrase_class(PhraseLabel label, PhraseTask task) {
  if (task == PhraseTask::binary) {
    if (label == PhraseLabel::random) throw std::invalid_argument("binary phrase task has no random class");
    return label == PhraseLabel::paraphrase ? 0 : 1;
  }
  return static_cast<std::size_t>(label);
}

LossTerms batch_loss(Tape& tape, EncoderParams& params, std::span<const PairInstance* const> batch,
                     const HeadConfig& heads, ForwardMode mode) {
  std::vector<Var> phrase_terms, sentence_terms;
  for (const PairInstance* inst : batch) {
    const bool use_phrases = heads.phrase != PhraseTask::none && !inst->phrases.empty();
    if (!use_phrases && !heads.sentence) continue;
    Var h = encode(tape, params, inst->pair, mode);
    if (heads.sentence) {
      Var logits = sentence_logits(tape, params, ops::row(h, 0), heads.dropout, mode);
      sentence_terms.push_back(ops::softmax_cross_entropy(logits, static_cast<std::size_t>(inst->label)));
    }
    if (use_phrases) {
      for (const auto& ex : inst->phrases) {
        Var feat = phrase_feature(h, ex.spans.source, ex.spans.target, heads.feature);
        Var logits = phrase_logits(tape, params, feat, heads.dropout, mode);
        phrase_terms.push_back(ops::softmax_cross_entropy(logits, phrase_class(ex.label, heads.phrase)));
      }
    }
  }
  LossTerms terms{std::nullopt, std::nullopt, Var{}};
  if (!phrase_terms.empty()) terms.phrase = ops::mean(phrase_terms);
  if (!sentence_terms.empty()) terms.sentence = ops::mean(sentence_terms);
  if (terms.phrase && terms.sentence) {
    terms.total = ops::add(*terms.phrase, *terms.sentence);
  } else if (terms.phrase) {
    terms.total = *terms.phrase;
  } else if (terms.sentence) {
    terms.total = *terms.sentence;
  } else {
    throw std::invalid_argument("batch_loss: batch has no examples for the enabled heads");
  }
  return terms;
}

LossTerms joint_loss(Tape& tape, EncoderParams& params, std::span<const PairInstance* const> batch,
                     const HeadConfig& heads, ForwardMode mode) {
  if (heads.phrase == PhraseTask::none || !heads.sentence) {
    throw std::invalid_argument("joint_loss: both the phrasal and the sentential head are required");
  }
  if (batch.empty()) throw std::invalid_argument("joint_loss: empty batch");
  bool any_phrase = false;
  for (const PairInstance* inst : batch) any_phrase = any_phrase || !inst->phrases.empty();
  if (!any_phrase) throw std::invalid_argument("joint_loss: batch has no phrase examples");
  return batch_loss(tape, params, batch, heads, mode);
}

bool early_stop_decision(std::span<const double> history, EarlyStopRule rule) {
  std::size_t decreases = 0, run = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < history[i - 1]) {
      ++decreases;
      ++run;
      if (rule == EarlyStopRule::second_decrease && decreases >= 2) return true;
      if (rule == EarlyStopRule::consecutive_decreases && run >= 2) return true;
    } else {
      run = 0;
    }
  }
  return false;
}

namespace {

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.values.begin(), t.values.end()) - t.values.begin());
}

}  // namespace

Accuracy evaluate(EncoderParams& params, std::span<const PairInstance> data, const HeadConfig& heads) {
  Accuracy acc;
  std::size_t phrase_ok = 0, sentence_ok = 0;
  const ForwardMode eval{false, nullptr};
  for (const auto& inst : data) {
    const bool use_phrases = heads.phrase != PhraseTask::none && !inst.phrases.empty();
    if (!use_phrases && !heads.sentence) continue;
    Tape tape;
    Var h = encode(tape, params, inst.pair, eval);
    if (heads.sentence) {
      const Tensor& logits = sentence_logits(tape, params, ops::row(h, 0), 0.0, eval).value();
      sentence_ok += argmax(logits) == static_cast<std::size_t>(inst.label);
      ++acc.sentence_n;
    }
    if (use_phrases) {
      for (const auto& ex : inst.phrases) {
        Var feat = phrase_feature(h, ex.spans.source, ex.spans.target, heads.feature);
        const Tensor& logits = phrase_logits(tape, params, feat, 0.0, eval).value();
        phrase_ok += argmax(logits) == phrase_class(ex.label, heads.phrase);
        ++acc.phrase_n;
      }
    }
  }
  if (acc.phrase_n) acc.phrase = static_cast<double>(phrase_ok) / static_cast<double>(acc.phrase_n);
  if (acc.sentence_n) acc.sentence = static_cast<double>(sentence_ok) / static_cast<double>(acc.sentence_n);
  return acc;
}

InjectionResult inject_train(EncoderParams& params, std::span<const PairInstance> train,
                             std::span<const PairInstance> dev, std::span<const PairInstance> test,
                             const HeadConfig& heads, const InjectionHyper& hyper) {
  if (dev.empty()) throw std::invalid_argument("inject_train: dev set is empty");
  if (hyper.batch == 0) throw std::invalid_argument("inject_train: batch must be positive");
  if (heads.phrase == PhraseTask::none && !heads.sentence) {
    throw std::invalid_argument("inject_train: no head enabled");
  }
  add_injection_heads(params, heads, hyper.seed);

  std::vector<const PairInstance*> pool;
  for (const auto& inst : train) {
    if (heads.sentence || (heads.phrase != PhraseTask::none && !inst.phrases.empty())) pool.push_back(&inst);
  }
  if (pool.empty()) throw std::invalid_argument("inject_train: no training examples for the enabled heads");

  const std::size_t eval_every =
      hyper.eval_every ? hyper.eval_every
                       : std::max<std::size_t>(1, (pool.size() / 10 + hyper.batch - 1) / hyper.batch);
  const bool by_phrase = heads.phrase != PhraseTask::none;
  auto metric = [by_phrase](const Accuracy& a) { return by_phrase ? a.phrase : a.sentence; };

  std::mt19937_64 rng(hyper.seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  Adam adam(AdamConfig{hyper.lr});
  InjectionResult result;

  result.best_dev = evaluate(params, dev, heads);
  result.log.push_back(InjectionStep{0, 0.0, 0.0, 0.0, result.best_dev});
  ParamStore best = params.store;
  std::vector<double> history;
  std::size_t cursor = 0;

  for (std::size_t step = 1; step <= hyper.max_steps; ++step) {
    std::vector<const PairInstance*> batch;
    for (std::size_t b = 0; b < hyper.batch; ++b) {
      if (cursor == pool.size()) {
        std::shuffle(pool.begin(), pool.end(), rng);
        cursor = 0;
      }
      batch.push_back(pool[cursor++]);
    }
    params.store.zero_grad();
    InjectionStep rec{step, 0.0, 0.0, 0.0, std::nullopt};
    {
      Tape tape;
      LossTerms terms = batch_loss(tape, params, batch, heads, ForwardMode{true, &rng});
      if (terms.phrase) rec.lp = terms.phrase->value().item();
      if (terms.sentence) rec.ls = terms.sentence->value().item();
      rec.loss = terms.total.value().item();
      if (!std::isfinite(rec.loss)) throw NumericError("inject_train: non-finite loss at step " + std::to_string(step));
      tape.backward(terms.total);
    }
    adam.set_lr(linear_schedule(hyper.lr, step, hyper.warmup, hyper.decay ? hyper.max_steps : 0));
    adam.step(params.store);
    result.steps = step;
    if (step % eval_every == 0) {
      const Accuracy acc = evaluate(params, dev, heads);
      rec.dev = acc;
      history.push_back(metric(acc));
      if (metric(acc) > metric(result.best_dev)) {
        result.best_dev = acc;
        result.best_step = step;
        best = params.store;
      }
      result.log.push_back(rec);
      if (early_stop_decision(history, hyper.rule)) {
        result.stopped_early = true;
        break;
      }
      continue;
    }
    result.log.push_back(rec);
  }
  params.store = std::move(best);
  if (!test.empty()) result.test = evaluate(params, test, heads);
  return result;
}

void write_injection_report(const std::filesystem::path& path, const InjectionResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,L_p,L_s,L,dev_phrase_acc,dev_sent_acc\n";
  char buf[256];
  for (const auto& r : result.log) {
    if (r.step == 0) {
      out << "0,,,,";  // evaluation before the first update
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,", r.step, r.lp, r.ls, r.loss);
      out << buf;
    }
    if (r.dev) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.dev->phrase, r.dev->sentence);
      out << buf;
    } else {
      out << ',';
    }
    out << '\n';
  }
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::sentence_only: return "sentence_only";
    case Variant::phrase_3way: return "phrase_3way";
    case Variant::phrase_binary: return "phrase_binary";
    case Variant::joint: return "joint";
    case Variant::joint_simple_feature: return "joint_simple_feature";
  }
  return "?";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::baseline, Variant::sentence_only, Variant::phrase_3way,
                                      Variant::phrase_binary, Variant::joint, Variant::joint_simple_feature};
  return v;
}

Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants()) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + s + "'");
}

std::optional<HeadConfig> variant_heads(Variant v) {
  switch (v) {
    case Variant::baseline: return std::nullopt;
    case Variant::sentence_only: return HeadConfig{PhraseTask::none, true};
    case Variant::phrase_3way: return HeadConfig{PhraseTask::three_way, false};
    case Variant::phrase_binary: return HeadConfig{PhraseTask::binary, false};
    case Variant::joint: return HeadConfig{PhraseTask::three_way, true};
    case Variant::joint_simple_feature: return HeadConfig{PhraseTask::three_way, true, FeatureMode::simple_mean};
  }
  return std::nullopt;
}

}  // namespace paratune
