#include "paratune/checks.hpp"

#include <random>

#include "paratune/injection.hpp"
#include "paratune/ops.hpp"
#include "paratune/synth.hpp"

namespace paratune {

namespace {

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values) v = dist(rng);
  return t;
}

ParamStore inputs(std::initializer_list<Tensor> tensors) {
  ParamStore store;
  std::size_t i = 0;
  for (const auto& t : tensors) store.add("in" + std::to_string(i++), t);
  return store;
}

// Scalar reduction with fixed random weights, so each output element has its own gradient.
Var weighted_sum(Var out) {
  std::mt19937_64 rng(99);
  Tape& tape = *out.tape;
  Var prod = ops::mul(out, tape.constant(uniform(out.shape(), rng)));
  Var flat = prod;
  if (prod.value().rank() == 2) {
    std::vector<Var> rows;
    for (std::size_t r = 0; r < prod.value().shape[0]; ++r) rows.push_back(ops::row(prod, r));
    flat = ops::concat(rows);
  }
  std::vector<Var> cells;
  for (std::size_t i = 0; i < flat.size(); ++i) cells.push_back(ops::slice_cols(flat, i, 1));
  return ops::sum(cells);
}

}  // namespace

std::vector<GradSuiteEntry> primitive_gradchecks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const GradCheckOptions opts{1e-4, 64, 5, 1e-9};
  std::vector<GradSuiteEntry> out;
  auto check = [&](const char* name, ParamStore store, const LossBuilder& f) {
    out.push_back({name, grad_check(store, f, opts)});
  };
  using S = ParamStore;
  check("add", inputs({uniform({3, 4}, rng), uniform({3, 4}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::add(t.param(s, 0), t.param(s, 1))); });
  check("sub", inputs({uniform({3, 4}, rng), uniform({3, 4}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::sub(t.param(s, 0), t.param(s, 1))); });
  check("mul", inputs({uniform({3, 4}, rng), uniform({3, 4}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::mul(t.param(s, 0), t.param(s, 1))); });
  check("abs", inputs({uniform({3, 4}, rng)}), [](Tape& t, S& s) { return weighted_sum(ops::abs(t.param(s, 0))); });
  check("scale", inputs({uniform({3, 4}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::scale(t.param(s, 0), -1.7)); });
  check("matmul", inputs({uniform({3, 4}, rng), uniform({4, 5}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::matmul(t.param(s, 0), t.param(s, 1))); });
  check("matmul_vec", inputs({uniform({4}, rng), uniform({4, 5}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::matmul(t.param(s, 0), t.param(s, 1))); });
  check("matmul_nt", inputs({uniform({3, 4}, rng), uniform({5, 4}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::matmul_nt(t.param(s, 0), t.param(s, 1))); });
  check("add_bias", inputs({uniform({3, 4}, rng), uniform({4}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::add_bias(t.param(s, 0), t.param(s, 1))); });
  check("concat", inputs({uniform({2, 3}, rng), uniform({2, 2}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::concat({t.param(s, 0), t.param(s, 1)})); });
  check("slice_cols", inputs({uniform({3, 5}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::slice_cols(t.param(s, 0), 1, 3)); });
  check("row", inputs({uniform({3, 5}, rng)}), [](Tape& t, S& s) { return weighted_sum(ops::row(t.param(s, 0), 2)); });
  check("gather_rows", inputs({uniform({5, 3}, rng)}), [](Tape& t, S& s) {
    std::vector<std::size_t> rows{3, 3, 0};
    return weighted_sum(ops::gather_rows(t.param(s, 0), rows));
  });
  check("softmax", inputs({uniform({3, 5}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::softmax(t.param(s, 0))); });
  check("layer_norm", inputs({uniform({3, 6}, rng), uniform({6}, rng), uniform({6}, rng)}), [](Tape& t, S& s) {
    return weighted_sum(ops::layer_norm(t.param(s, 0), t.param(s, 1), t.param(s, 2)));
  });
  check("gelu", inputs({uniform({3, 4}, rng, -3, 3)}),
        [](Tape& t, S& s) { return weighted_sum(ops::gelu(t.param(s, 0))); });
  check("embedding", inputs({uniform({5, 3}, rng)}), [](Tape& t, S& s) {
    std::vector<int> ids{4, 1, 4, 0};
    return weighted_sum(ops::embedding(t.param(s, 0), ids));
  });
  check("max_pool_span", inputs({uniform({6, 4}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::max_pool_span(t.param(s, 0), 1, 4)); });
  check("mean_pool_span", inputs({uniform({6, 4}, rng)}),
        [](Tape& t, S& s) { return weighted_sum(ops::mean_pool_span(t.param(s, 0), 0, 5)); });
  check("softmax_cross_entropy", inputs({uniform({4}, rng)}),
        [](Tape& t, S& s) { return ops::softmax_cross_entropy(t.param(s, 0), 2); });
  check("mse_loss", inputs({uniform({1}, rng)}), [](Tape& t, S& s) { return ops::mse_loss(t.param(s, 0), 0.3); });
  check("sum", inputs({uniform({1}, rng), uniform({1}, rng)}), [](Tape& t, S& s) {
    std::vector<Var> xs{ops::mul(t.param(s, 0), t.param(s, 1)), t.param(s, 1)};
    return ops::sum(xs);
  });
  check("mean", inputs({uniform({1}, rng), uniform({1}, rng)}), [](Tape& t, S& s) {
    std::vector<Var> xs{ops::mul(t.param(s, 0), t.param(s, 0)), t.param(s, 1)};
    return ops::mean(xs);
  });
  return out;
}

GradSuiteEntry joint_loss_gradcheck(const GradSuiteConfig& config) {
  SynthConfig sc;
  sc.size = 8;
  sc.seed = config.seed;
  const auto corpus = generate_synthetic(sc);
  std::vector<Words> sentences;
  for (const auto& r : corpus) {
    sentences.push_back(r.source);
    sentences.push_back(r.target);
  }
  WordPieceTokenizer tok(Vocab::build(sentences, 120));
  EncoderConfig ec = config.encoder;
  ec.vocab_size = tok.vocab().size();
  ec.dropout = 0.0;
  EncoderParams params = init_params(ec, config.seed);
  const HeadConfig heads{PhraseTask::three_way, true, FeatureMode::elaborate_max, 0.0};
  add_injection_heads(params, heads, config.seed);
  std::mt19937_64 rng(config.seed);
  for (auto& p : params.store) {
    if (p.value.rank() == 2) p.value = uniform(p.value.shape, rng, -0.5, 0.5);
  }
  SamplerConfig sampler;
  sampler.seed = config.seed;
  const auto data = sample_negatives(corpus, tok, sampler);
  std::vector<const PairInstance*> batch;
  for (const auto& inst : data) {
    if (batch.size() == config.instances) break;
    batch.push_back(&inst);
  }
  auto result = grad_check(
      params.store,
      [&](Tape& t, ParamStore& s) {
        EncoderParams view{ec, std::move(s)};
        Var loss = joint_loss(t, view, batch, heads, {}).total;
        s = std::move(view.store);
        return loss;
      },
      config.options);
  return {"joint_loss", result};
}

GradSuiteEntry corrupted_adjoint_gradcheck(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore store = inputs({uniform({4}, rng)});
  auto r = grad_check(store, [](Tape& t, ParamStore& s) {
    Var x = t.param(s, 0);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * x.value()[i];
    Var y = t.record(std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
      Tensor& gx = tp.grad_buffer(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * tp.value(x)[i];
    });
    return weighted_sum(y);
  });
  return {"corrupted_adjoint", r};
}

}  // namespace paratune
