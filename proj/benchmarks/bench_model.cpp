#include <benchmark/benchmark.h>

#include "paratune/encoder.hpp"
#include "paratune/ops.hpp"
#include "paratune/synth.hpp"

using namespace paratune;

namespace {

struct World {
  WordPieceTokenizer tok;
  std::vector<AlignedPairRecord> corpus;
};

const World& world() {
  static const World w = [] {
    SynthConfig sc;
    sc.size = 500;
    auto corpus = generate_synthetic(sc);
    std::vector<Words> sentences;
    for (const auto& r : corpus) {
      sentences.push_back(r.source);
      sentences.push_back(r.target);
    }
    return World{WordPieceTokenizer(Vocab::build(sentences, 400)), std::move(corpus)};
  }();
  return w;
}

void BM_WordPiece(benchmark::State& state) {
  const World& w = world();
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& r = w.corpus[i++ % w.corpus.size()];
    benchmark::DoNotOptimize(w.tok.encode(r.source));
  }
}
BENCHMARK(BM_WordPiece);

void BM_EncoderForward(benchmark::State& state) {
  const World& w = world();
  EncoderConfig c;
  c.vocab_size = w.tok.vocab().size();
  EncoderParams params = init_params(c, 1);
  const EncodedPair pair = encode_pair(w.tok, w.corpus[0].source, w.corpus[0].target, 64);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(encode(tape, params, pair, {}).value().values.data());
  }
}
BENCHMARK(BM_EncoderForward);

void BM_EncoderForwardBackward(benchmark::State& state) {
  const World& w = world();
  EncoderConfig c;
  c.vocab_size = w.tok.vocab().size();
  EncoderParams params = init_params(c, 1);
  const EncodedPair pair = encode_pair(w.tok, w.corpus[0].source, w.corpus[0].target, 64);
  for (auto _ : state) {
    params.store.zero_grad();
    Tape tape;
    Var h = encode(tape, params, pair, {});
    tape.backward(ops::softmax_cross_entropy(ops::row(h, 0), 0));
  }
}
BENCHMARK(BM_EncoderForwardBackward);

}  // namespace
