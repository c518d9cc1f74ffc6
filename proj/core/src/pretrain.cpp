#include "paratune/pretrain.hpp"

#include <cmath>
#include <stdexcept>

#include "paratune/ops.hpp"
#include "paratune/optim.hpp"

namespace paratune {

MlmExample mask_tokens(std::span<const int> ids, std::size_t vocab_size, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("mask_tokens: rate must be in [0, 1)");
  MlmExample ex{std::vector<int>(ids.begin(), ids.end()), {}};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int first_regular = Vocab::kMask + 1;
  for (std::size_t i = 0; i < ex.ids.size(); ++i) {
    if (ex.ids[i] < first_regular) continue;
    if (u(rng) >= rate) continue;
    ex.targets.emplace_back(i, ex.ids[i]);
    const double r = u(rng);
    if (r < 0.8) {
      ex.ids[i] = Vocab::kMask;
    } else if (r < 0.9 && vocab_size > static_cast<std::size_t>(first_regular)) {
      ex.ids[i] = std::uniform_int_distribution<int>(first_regular, static_cast<int>(vocab_size) - 1)(rng);
    }
  }
  return ex;
}

MlmExample mask_tokens(std::span<const int> ids, std::size_t vocab_size, double rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return mask_tokens(ids, vocab_size, rate, rng);
}

NspSampler::NspSampler(const std::vector<Document>& docs) : docs_(&docs) {
  if (docs.size() < 2) {
    throw std::invalid_argument("nsp: need at least 2 documents, got " + std::to_string(docs.size()));
  }
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].size() < 2) {
      throw std::invalid_argument("nsp: document " + std::to_string(d) + " has fewer than 2 sentences");
    }
  }
}

NspSample NspSampler::next(std::mt19937_64& rng) const {
  const auto& docs = *docs_;
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  NspSample s;
  s.first_doc = pick(docs.size());
  const std::size_t i = pick(docs[s.first_doc].size() - 1);
  s.first = docs[s.first_doc][i];
  if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) {
    s.label = NspLabel::consecutive;
    s.second_doc = s.first_doc;
    s.second = docs[s.first_doc][i + 1];
  } else {
    s.label = NspLabel::random;
    s.second_doc = pick(docs.size() - 1);
    if (s.second_doc >= s.first_doc) ++s.second_doc;
    s.second = docs[s.second_doc][pick(docs[s.second_doc].size())];
  }
  return s;
}

std::vector<NspSample> nsp_sample(const std::vector<Document>& docs, std::size_t n, std::uint64_t seed) {
  NspSampler sampler(docs);
  std::mt19937_64 rng(seed);
  std::vector<NspSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.next(rng));
  return out;
}

void add_pretrain_heads(EncoderParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  params.store.add("head.mlm.b", Tensor({params.config.vocab_size}));
  nn::add_linear(params.store, "head.nsp", params.config.hidden, 2, rng);
}

PretrainResult pretrain_loop(const std::vector<Document>& docs, const WordPieceTokenizer& tok, EncoderParams& params,
                             const PretrainHyper& hyper) {
  if (tok.vocab().size() != params.config.vocab_size) {
    throw std::invalid_argument("pretrain: vocabulary has " + std::to_string(tok.vocab().size()) +
                                " tokens but the encoder expects " + std::to_string(params.config.vocab_size));
  }
  if (hyper.batch == 0) throw std::invalid_argument("pretrain: batch must be positive");
  if (!params.store.contains("head.nsp.w")) add_pretrain_heads(params, hyper.seed);
  NspSampler sampler(docs);
  Adam adam(AdamConfig{hyper.lr});
  std::mt19937_64 rng(hyper.seed);
  PretrainResult result;
  ParamStore last_good = params.store;
  const std::size_t max_len = std::min(hyper.max_len, params.config.max_position);

  for (std::size_t step = 1; step <= hyper.steps; ++step) {
    params.store.zero_grad();
    Tape tape;
    std::vector<Var> mlm_terms, nsp_terms;
    for (std::size_t b = 0; b < hyper.batch; ++b) {
      const NspSample s = sampler.next(rng);
      EncodedPair pair = encode_pair_truncated(tok, s.first, s.second, max_len);
      MlmExample m = mask_tokens(pair.ids, params.config.vocab_size, hyper.mask_rate, rng);
      pair.ids = m.ids;
      Var h = encode(tape, params, pair, ForwardMode{true, &rng});
      if (!m.targets.empty()) {
        std::vector<std::size_t> rows;
        for (const auto& [pos, id] : m.targets) rows.push_back(pos);
        Var logits = ops::add_bias(ops::matmul_nt(ops::gather_rows(h, rows), tape.param(params.store, "emb.token")),
                                   tape.param(params.store, "head.mlm.b"));
        for (std::size_t t = 0; t < m.targets.size(); ++t) {
          mlm_terms.push_back(ops::softmax_cross_entropy(ops::row(logits, t), static_cast<std::size_t>(m.targets[t].second)));
        }
      }
      if (hyper.nsp) {
        Var logits = nn::linear(tape, params.store, "head.nsp", ops::row(h, 0));
        nsp_terms.push_back(ops::softmax_cross_entropy(logits, static_cast<std::size_t>(s.label)));
      }
    }
    PretrainStep rec{step, 0.0, 0.0, 0.0};
    if (mlm_terms.empty() && nsp_terms.empty()) {
      result.curve.push_back(rec);
      continue;
    }
    std::vector<Var> parts;
    if (!mlm_terms.empty()) {
      parts.push_back(ops::mean(mlm_terms));
      rec.mlm = parts.back().value().item();
    }
    if (!nsp_terms.empty()) {
      parts.push_back(ops::mean(nsp_terms));
      rec.nsp = parts.back().value().item();
    }
    Var loss = parts.size() == 1 ? parts[0] : ops::add(parts[0], parts[1]);
    rec.loss = loss.value().item();
    if (!std::isfinite(rec.loss)) {
      params.store = last_good;
      result.diverged = true;
      result.error = "pretrain: non-finite loss at step " + std::to_string(step);
      break;
    }
    tape.backward(loss);
    last_good = params.store;
    try {
      adam.step(params.store);
    } catch (const NumericError& e) {
      params.store = last_good;
      result.diverged = true;
      result.error = std::string("pretrain: step ") + std::to_string(step) + ": " + e.what();
      break;
    }
    result.curve.push_back(rec);
  }
  return result;
}

std::vector<double> smooth(std::span<const double> values, std::size_t window) {
  if (window == 0) throw std::invalid_argument("smooth: window must be positive");
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(window, i + 1));
  }
  return out;
}

}  // namespace paratune
