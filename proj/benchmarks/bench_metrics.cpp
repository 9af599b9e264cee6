#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "ctxattn/evalmetrics.hpp"

using namespace ctxattn;

namespace {

void BM_AlignmentMetrics(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> m(L), h(L, 0.0);
  double z = 0;
  for (auto& x : m) z += (x = u(rng));
  for (auto& x : m) x /= z;
  h[L / 3] = h[L / 2] = 1.0;
  const auto hn = normalize_human(h, kDefaultEpsilon);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dot_alignment(h, m));
    benchmark::DoNotOptimize(kl_alignment(hn, m));
    benchmark::DoNotOptimize(probes_needed(h, m));
  }
}
BENCHMARK(BM_AlignmentMetrics)->Arg(16)->Arg(64)->Arg(256);

void BM_Sweep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<ScatSample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = samples[i];
    s.id = std::to_string(i);
    s.src.ids.assign(40, 6);
    s.src.boundaries = {0};
    s.tgt.ids.assign(30, 7);
    s.tgt.boundaries = {0};
    s.src_query = 35;
    s.tgt_query = 25;
    s.human_src.assign(40, 0.0);
    s.human_src[i % 30] = 1.0;
    s.human_tgt.assign(30, 0.0);
    s.human_tgt[i % 20] = 1.0;
  }
  const ForwardTrace fixed = [] {
    ForwardTrace tr;
    ad::Matrix causal = ad::Matrix::Zero(31, 31);
    for (ad::Index r = 0; r < 31; ++r) causal.row(r).head(r + 1).setConstant(1.0 / static_cast<double>(r + 1));
    tr.enc_self.assign(6, std::vector<ad::Matrix>(8, ad::Matrix::Constant(40, 40, 1.0 / 40)));
    tr.dec_cross.assign(6, std::vector<ad::Matrix>(8, ad::Matrix::Constant(31, 40, 1.0 / 40)));
    tr.dec_self.assign(6, std::vector<ad::Matrix>(8, causal));
    return tr;
  }();
  const AttentionOracle oracle = [&](const ScatSample&) { return fixed; };
  for (auto _ : state) benchmark::DoNotOptimize(sweep(oracle, samples, HeadMode::PerHead));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Sweep)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_Bleu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> w(0, 300), len(5, 30);
  std::vector<std::string> hyps(n), refs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = len(rng); k > 0; --k) refs[i] += "w" + std::to_string(w(rng)) + " ";
    for (int k = len(rng); k > 0; --k) hyps[i] += "w" + std::to_string(w(rng) % 50) + " ";
  }
  for (auto _ : state) benchmark::DoNotOptimize(bleu(hyps, refs));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Bleu)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
