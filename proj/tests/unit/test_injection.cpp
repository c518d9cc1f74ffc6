#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "paratune/gradcheck.hpp"
#include "paratune/injection.hpp"
#include "paratune/ops.hpp"
#include "paratune/synth.hpp"
#include "test_util.hpp"

using namespace paratune;

namespace {

struct World {
  std::vector<AlignedPairRecord> corpus;
  WordPieceTokenizer tok;
  EncoderConfig config;
};

World make_world(std::size_t n, std::uint64_t seed = 3) {
  SynthConfig sc;
  sc.size = n;
  sc.seed = seed;
  auto corpus = generate_synthetic(sc);
  std::vector<Words> sentences;
  for (const auto& r : corpus) {
    sentences.push_back(r.source);
    sentences.push_back(r.target);
  }
  WordPieceTokenizer tok(Vocab::build(sentences, 150));
  EncoderConfig c;
  c.layers = 1;
  c.hidden = 16;
  c.heads = 2;
  c.ff = 32;
  c.vocab_size = tok.vocab().size();
  return World{std::move(corpus), std::move(tok), c};
}

std::vector<const PairInstance*> pointers(const std::vector<PairInstance>& v, std::size_t n) {
  std::vector<const PairInstance*> out;
  for (std::size_t i = 0; i < std::min(n, v.size()); ++i) out.push_back(&v[i]);
  return out;
}

double cross_entropy(const Tensor& logits, std::size_t label) {
  double mx = logits.values[0];
  for (double v : logits.values) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits.values) z += std::exp(v - mx);
  return mx + std::log(z) - logits.values[label];
}

}  // namespace

TEST_CASE("phrase_feature") {
  std::mt19937_64 rng(1);
  Tape tape;
  const std::size_t lambda = 8;
  Var h = tape.constant(testing::random_tensor({10, lambda}, rng));
  SUBCASE("widths") {
    CHECK(phrase_feature(h, {1, 2}, {5, 7}, FeatureMode::elaborate_max).size() == 4 * lambda);
    CHECK(phrase_feature(h, {1, 2}, {5, 7}, FeatureMode::simple_mean).size() == 2 * lambda);
    CHECK(feature_width(FeatureMode::elaborate_max, lambda) == 32);
  }
  SUBCASE("identical spans give [v; v; v*v; 0]") {
    const Tensor f = phrase_feature(h, {2, 4}, {2, 4}, FeatureMode::elaborate_max).value();
    for (std::size_t d = 0; d < lambda; ++d) {
      const double v = f.values[d];
      CHECK(f.values[lambda + d] == v);
      CHECK(f.values[2 * lambda + d] == v * v);
      CHECK(f.values[3 * lambda + d] == 0.0);
    }
  }
  SUBCASE("swap symmetry") {
    const Tensor a = phrase_feature(h, {1, 3}, {6, 8}, FeatureMode::elaborate_max).value();
    const Tensor b = phrase_feature(h, {6, 8}, {1, 3}, FeatureMode::elaborate_max).value();
    for (std::size_t d = 0; d < lambda; ++d) {
      CHECK(a.values[d] == b.values[lambda + d]);
      CHECK(a.values[lambda + d] == b.values[d]);
      CHECK(a.values[2 * lambda + d] == b.values[2 * lambda + d]);
      CHECK(a.values[3 * lambda + d] == b.values[3 * lambda + d]);
    }
  }
  SUBCASE("bad span propagates") {
    CHECK_THROWS_AS(phrase_feature(h, {3, 2}, {5, 6}, FeatureMode::elaborate_max), SpanError);
    CHECK_THROWS_AS(phrase_feature(h, {1, 2}, {5, 10}, FeatureMode::simple_mean), SpanError);
  }
}

TEST_CASE("phrase_logits and sentence_logits") {
  EncoderParams p;
  p.config.hidden = 2;
  p.store.add("head.phrase.w", Tensor({2, 3}));
  p.store.add("head.phrase.b", Tensor({3}));
  Tape tape;
  Var f = tape.constant(Tensor::vector({0.7, -1.3}));
  SUBCASE("zero weights give uniform probabilities") {
    Var probs = ops::softmax(phrase_logits(tape, p, f, 0.0, {}));
    for (double v : probs.value().values) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("affine in the feature") {
    std::mt19937_64 rng(2);
    p.store.get("head.phrase.w").value = testing::random_tensor({2, 3}, rng);
    p.store.get("head.phrase.b").value = testing::random_tensor({3}, rng);
    const Tensor l0 = phrase_logits(tape, p, tape.constant(Tensor::vector({0.0, 0.0})), 0.0, {}).value();
    const Tensor l1 = phrase_logits(tape, p, f, 0.0, {}).value();
    const Tensor l2 = phrase_logits(tape, p, tape.constant(Tensor::vector({1.4, -2.6})), 0.0, {}).value();
    for (std::size_t k = 0; k < 3; ++k) CHECK(l2.values[k] - l1.values[k] == doctest::Approx(l1.values[k] - l0.values[k]));
  }
  SUBCASE("hand-set 2x2 weights") {
    EncoderParams s;
    s.config.hidden = 2;
    s.store.add("head.sentence.w", Tensor::matrix({{1.0, 2.0}, {3.0, -1.0}}));
    s.store.add("head.sentence.b", Tensor::vector({0.5, -0.5}));
    const Tensor l = sentence_logits(tape, s, f, 0.0, {}).value();
    CHECK(l.values[0] == doctest::Approx(0.7 * 1.0 + -1.3 * 3.0 + 0.5));
    CHECK(l.values[1] == doctest::Approx(0.7 * 2.0 + -1.3 * -1.0 - 0.5));
  }
  SUBCASE("width mismatch") {
    Var wide = tape.constant(Tensor({5}));
    CHECK_THROWS_AS(phrase_logits(tape, p, wide, 0.0, {}), DimensionError);
  }
}

TEST_CASE("early_stop_decision") {
  auto stop_point = [](std::vector<double> h, EarlyStopRule rule) {
    for (std::size_t i = 1; i <= h.size(); ++i) {
      if (early_stop_decision(std::span<const double>(h).subspan(0, i), rule)) return i;
    }
    return std::size_t{0};
  };
  CHECK(stop_point({0.5, 0.6, 0.55, 0.7, 0.65}, EarlyStopRule::second_decrease) == 5);
  CHECK(stop_point({0.5, 0.6, 0.6, 0.7, 0.8, 0.8}, EarlyStopRule::second_decrease) == 0);
  CHECK(stop_point({0.9, 0.8, 0.7}, EarlyStopRule::second_decrease) == 3);
  CHECK(stop_point({0.5, 0.6, 0.55, 0.7, 0.65}, EarlyStopRule::consecutive_decreases) == 0);
  CHECK(stop_point({0.9, 0.8, 0.7}, EarlyStopRule::consecutive_decreases) == 3);
  CHECK(stop_point({0.5, 0.4, 0.6, 0.5, 0.4}, EarlyStopRule::consecutive_decreases) == 5);
  CHECK_FALSE(early_stop_decision(std::vector<double>{}));
}

TEST_CASE("sample_negatives") {
  World w = make_world(300);
  SUBCASE("two pairs") {
    std::vector<AlignedPairRecord> two(w.corpus.begin(), w.corpus.begin() + 2);
    SamplerStats st;
    auto inst = sample_negatives(two, w.tok, SamplerConfig{}, &st);
    CHECK(inst.size() == 4);
    for (const auto& i : inst) {
      if (i.label == SentenceLabel::random) CHECK(two[i.target_record].target != two[i.source_record].target);
      for (const auto& p : i.phrases) {
        CHECK(is_valid_alignment(p.spans, i.pair));
        if (p.label == PhraseLabel::in_paraphrase) CHECK_FALSE(p.spans.target == p.gold_target);
      }
    }
  }
  SUBCASE("ratio 1:1:1 histogram and construction rules") {
    SamplerStats st;
    auto inst = sample_negatives(w.corpus, w.tok, SamplerConfig{}, &st);
    const double total = static_cast<double>(st.paraphrase + st.random + st.in_paraphrase);
    CHECK(std::abs(st.paraphrase / total - 1.0 / 3.0) <= 0.02);
    CHECK(std::abs(st.random / total - 1.0 / 3.0) <= 0.02);
    CHECK(std::abs(st.in_paraphrase / total - 1.0 / 3.0) <= 0.02);
    CHECK(st.sentence_paraphrase == w.corpus.size());
    CHECK(st.sentence_random == w.corpus.size());
    for (const auto& i : inst) {
      for (const auto& p : i.phrases) {
        CHECK((p.label == PhraseLabel::random) == (i.label == SentenceLabel::random));
      }
    }
  }
  SUBCASE("2:1:1 ratios") {
    SamplerConfig cfg;
    cfg.ratios = {2.0, 1.0, 1.0};
    SamplerStats st;
    sample_negatives(w.corpus, w.tok, cfg, &st);
    const double total = static_cast<double>(st.paraphrase + st.random + st.in_paraphrase);
    CHECK(std::abs(st.paraphrase / total - 0.5) <= 0.02);
  }
  SUBCASE("binary task has no random phrases") {
    SamplerConfig cfg;
    cfg.task = PhraseTask::binary;
    SamplerStats st;
    sample_negatives(w.corpus, w.tok, cfg, &st);
    CHECK(st.random == 0);
    CHECK(st.paraphrase == st.in_paraphrase);
  }
  SUBCASE("unaligned pairs contribute no phrases and are counted") {
    std::vector<AlignedPairRecord> c(w.corpus.begin(), w.corpus.begin() + 3);
    c[0].alignments.clear();
    SamplerStats st;
    auto inst = sample_negatives(c, w.tok, SamplerConfig{}, &st);
    CHECK(st.unaligned_pairs == 1);
    CHECK(inst[0].phrases.empty());
  }
  SUBCASE("errors") {
    std::vector<AlignedPairRecord> one(w.corpus.begin(), w.corpus.begin() + 1);
    CHECK_THROWS_AS(sample_negatives(one, w.tok, SamplerConfig{}), std::invalid_argument);
    SamplerConfig cfg;
    cfg.ratios.random = 0;
    CHECK_THROWS_AS(sample_negatives(w.corpus, w.tok, cfg), std::invalid_argument);
  }
  SUBCASE("deterministic") {
    auto a = sample_negatives(w.corpus, w.tok, SamplerConfig{});
    auto b = sample_negatives(w.corpus, w.tok, SamplerConfig{});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].pair.ids == b[i].pair.ids);
      CHECK(a[i].phrases.size() == b[i].phrases.size());
    }
  }
}

TEST_CASE("joint_loss") {
  World w = make_world(40);
  auto inst = sample_negatives(w.corpus, w.tok, SamplerConfig{});
  EncoderConfig c = w.config;
  c.dropout = 0.0;
  EncoderParams params = init_params(c, 5);
  HeadConfig heads;
  heads.dropout = 0.0;
  add_injection_heads(params, heads, 5);
  auto batch = pointers(inst, 6);

  SUBCASE("L = L_p + L_s exactly") {
    Tape tape;
    LossTerms t = joint_loss(tape, params, batch, heads, {});
    REQUIRE(t.phrase);
    REQUIRE(t.sentence);
    CHECK(std::abs(t.total.value().item() - (t.phrase->value().item() + t.sentence->value().item())) <= 1e-12);
    CHECK(t.total.value().item() >= 0.0);
  }
  SUBCASE("single instance matches a hand-computed sum of cross-entropies") {
    const PairInstance& one = inst[0];
    REQUIRE_FALSE(one.phrases.empty());
    std::vector<const PairInstance*> b{&one};
    Tape tape;
    LossTerms t = joint_loss(tape, params, b, heads, {});
    Tape t2;
    Var h = encode(t2, params, one.pair, {});
    const Tensor& W = params.store.get("head.sentence.w").value;
    const Tensor& bias = params.store.get("head.sentence.b").value;
    Tensor logits({2});
    for (std::size_t k = 0; k < 2; ++k) {
      logits.values[k] = bias.values[k];
      for (std::size_t d = 0; d < c.hidden; ++d) logits.values[k] += h.value().at(0, d) * W.at(d, k);
    }
    const double ls = cross_entropy(logits, static_cast<std::size_t>(one.label));
    double lp = 0.0;
    const Tensor& Wp = params.store.get("head.phrase.w").value;
    const Tensor& bp = params.store.get("head.phrase.b").value;
    for (const auto& ex : one.phrases) {
      const Tensor f = phrase_feature(h, ex.spans.source, ex.spans.target, heads.feature).value();
      Tensor pl({3});
      for (std::size_t k = 0; k < 3; ++k) {
        pl.values[k] = bp.values[k];
        for (std::size_t d = 0; d < f.size(); ++d) pl.values[k] += f.values[d] * Wp.at(d, k);
      }
      lp += cross_entropy(pl, static_cast<std::size_t>(ex.label));
    }
    lp /= static_cast<double>(one.phrases.size());
    CHECK(t.sentence->value().item() == doctest::Approx(ls).epsilon(1e-12));
    CHECK(t.phrase->value().item() == doctest::Approx(lp).epsilon(1e-12));
  }
  SUBCASE("saturated logits give a loss near zero") {
    std::vector<const PairInstance*> b;
    for (const auto& i : inst) {
      if (i.label != SentenceLabel::paraphrase) continue;
      bool all_para = !i.phrases.empty();
      for (const auto& p : i.phrases) all_para = all_para && p.label == PhraseLabel::paraphrase;
      if (all_para) b.push_back(&i);
    }
    if (b.empty()) {
      // Build one by keeping only the paraphrase examples of the first gold instance.
      static PairInstance only;
      only = inst[0];
      std::erase_if(only.phrases, [](const PhraseExample& p) { return p.label != PhraseLabel::paraphrase; });
      b.push_back(&only);
    }
    params.store.get("head.phrase.w").value.fill(0.0);
    params.store.get("head.sentence.w").value.fill(0.0);
    params.store.get("head.phrase.b").value = Tensor::vector({60.0, 0.0, 0.0});
    params.store.get("head.sentence.b").value = Tensor::vector({60.0, 0.0});
    Tape tape;
    CHECK(joint_loss(tape, params, b, heads, {}).total.value().item() < 1e-20);
  }
  SUBCASE("both tasks required") {
    std::vector<const PairInstance*> none;
    Tape tape;
    CHECK_THROWS_AS(joint_loss(tape, params, none, heads, {}), std::invalid_argument);
    PairInstance bare = inst[0];
    bare.phrases.clear();
    std::vector<const PairInstance*> b{&bare};
    CHECK_THROWS_AS(joint_loss(tape, params, b, heads, {}), std::invalid_argument);
    HeadConfig sent_only{PhraseTask::none, true};
    CHECK_THROWS_AS(joint_loss(tape, params, batch, sent_only, {}), std::invalid_argument);
  }
  SUBCASE("gradient through encoder and both heads") {
    std::mt19937_64 rng(4);
    for (auto& p : params.store) {
      if (p.value.rank() == 2) p.value = testing::random_tensor(p.value.shape, rng, -0.5, 0.5);
    }
    auto small = pointers(inst, 2);
    auto r = grad_check(params.store, [&](Tape& t, ParamStore& s) {
      EncoderParams view{c, std::move(s)};
      Var loss = joint_loss(t, view, small, heads, {}).total;
      s = std::move(view.store);
      return loss;
    }, GradCheckOptions{1e-5, 3, 2, 1e-9});
    CAPTURE(r.worst_param);
    CHECK(r.checked > 40);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("inject_train") {
  World w = make_world(120);
  auto split = split_corpus(w.corpus, 20, 20, 1);
  auto train = sample_negatives(split.train, w.tok, SamplerConfig{});
  auto dev = sample_negatives(split.dev, w.tok, SamplerConfig{});
  HeadConfig heads;
  SUBCASE("lr 0 keeps the untrained accuracies") {
    EncoderParams params = init_params(w.config, 2);
    add_injection_heads(params, heads, 9);
    const Accuracy before = evaluate(params, dev, heads);
    InjectionHyper h;
    h.lr = 0.0;
    h.max_steps = 6;
    h.eval_every = 2;
    h.batch = 4;
    auto r = inject_train(params, train, dev, {}, heads, h);
    CHECK(r.best_dev.phrase == before.phrase);
    CHECK(r.best_dev.sentence == before.sentence);
    const Accuracy after = evaluate(params, dev, heads);
    CHECK(after.phrase == before.phrase);
    for (const auto& row : r.log) {
      if (row.dev) CHECK(row.dev->phrase == before.phrase);
    }
  }
  SUBCASE("losses are logged and L = L_p + L_s") {
    EncoderParams params = init_params(w.config, 2);
    InjectionHyper h;
    h.lr = 1e-3;
    h.max_steps = 8;
    h.eval_every = 4;
    h.batch = 4;
    auto r = inject_train(params, train, dev, dev, heads, h);
    CHECK(r.steps <= 8);
    CHECK(r.test.has_value());
    for (const auto& row : r.log) {
      if (row.step > 0) CHECK(std::abs(row.loss - (row.lp + row.ls)) <= 1e-12);
    }
  }
  SUBCASE("sentence_only has no phrasal head") {
    EncoderParams params = init_params(w.config, 2);
    InjectionHyper h;
    h.max_steps = 2;
    h.batch = 2;
    h.eval_every = 1;
    inject_train(params, train, dev, {}, *variant_heads(Variant::sentence_only), h);
    CHECK_FALSE(params.store.contains("head.phrase.w"));
    CHECK(params.store.contains("head.sentence.w"));
  }
  SUBCASE("empty dev set") {
    EncoderParams params = init_params(w.config, 2);
    CHECK_THROWS_AS(inject_train(params, train, {}, {}, heads, InjectionHyper{}), std::invalid_argument);
  }
}

TEST_CASE("variants") {
  CHECK(all_variants().size() == 6);
  for (Variant v : all_variants()) CHECK(parse_variant(to_string(v)) == v);
  CHECK_FALSE(variant_heads(Variant::baseline).has_value());
  CHECK(variant_heads(Variant::phrase_binary)->phrase_classes() == 2);
  CHECK(variant_heads(Variant::joint_simple_feature)->feature == FeatureMode::simple_mean);
  CHECK_THROWS_AS(parse_variant("both"), std::invalid_argument);
}
