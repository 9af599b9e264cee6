#include <benchmark/benchmark.h>

#include "ctxattn/nnmodel.hpp"
#include "ctxattn/trainer.hpp"

using namespace ctxattn;

namespace {

Hyperparams desk(std::size_t vocab) {
  Hyperparams hp;
  hp.dropout = 0.0;
  hp.src_vocab = hp.tgt_vocab = vocab;
  return hp;
}

TokenSeq seq(std::size_t n, std::size_t vocab) {
  TokenSeq s;
  s.boundaries = {0};
  for (std::size_t i = 0; i < n; ++i) s.ids.push_back(static_cast<TokenId>(kNumReserved + (i * 7) % (vocab - kNumReserved)));
  return s;
}

void BM_Forward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const Transformer model(desk(200), 1);
  const auto src = seq(len, 200), tgt = seq(len, 200);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(src, tgt));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * len));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ForwardBackwardWithReg(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto hp = desk(200);
  const Transformer model(hp, 1);
  ScatSample s;
  s.src = seq(len, 200);
  s.tgt = seq(len, 200);
  s.src_query = len - 1;
  s.tgt_query = len - 1;
  s.human_src.assign(len, 0.0);
  s.human_src[1] = 1.0;
  s.human_tgt.assign(len, 0.0);
  s.human_tgt[1] = 1.0;
  const auto targets = default_targets(Regime::AttnRegRand, hp);
  for (auto _ : state) {
    auto r = backward(model, s.src, s.tgt, [&](ForwardGraph& g) {
      return ad::add(loss_mt(g, full_output_span(s.tgt), hp.label_smoothing),
                     ad::scale(attnreg_loss(g, s, targets), 10.0));
    }, Mode::Eval);
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_ForwardBackwardWithReg)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  const Transformer model(desk(200), 1);
  const auto src = seq(32, 200);
  const DecodeConfig cfg{static_cast<std::size_t>(state.range(0)), 24};
  for (auto _ : state) benchmark::DoNotOptimize(decode(model, src, cfg));
}
BENCHMARK(BM_GreedyDecode)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
