#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "adaptlm/kernels.hpp"
#include "adaptlm/model.hpp"
#include "adaptlm/tokenizer.hpp"
#include "synthetic.hpp"

using namespace adaptlm;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

std::vector<std::string> documents(std::size_t bytes) {
  std::vector<std::string> out;
  for (const auto& a : synth::make_articles(synth::Register::domain, bytes, 1)) out.push_back(a.body);
  return out;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_floats(n * n, 1);
  const auto w = random_floats(n * n, 2);
  std::vector<float> out(n * n);
  for (auto _ : state) {
    kernels::matmul(x.data(), w.data(), out.data(), n, n, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_BpeEncode(benchmark::State& state) {
  const auto docs = documents(200000);
  const auto vocab = train_bpe(docs, static_cast<std::size_t>(state.range(0)));
  std::size_t bytes = 0;
  for (auto _ : state) {
    for (const auto& d : docs) {
      benchmark::DoNotOptimize(vocab.encode(d));
      bytes += d.size();
    }
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_BpeEncode)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_TrainBpe(benchmark::State& state) {
  const auto docs = documents(100000);
  for (auto _ : state) benchmark::DoNotOptimize(train_bpe(docs, 512));
}
BENCHMARK(BM_TrainBpe)->Unit(benchmark::kMillisecond);

void BM_LossAndGrad(benchmark::State& state) {
  ModelConfig c;
  c.vocab_size = 512;
  c.d_model = static_cast<std::size_t>(state.range(0));
  c.n_layers = 2;
  c.n_heads = 4;
  c.max_seq_len = 128;
  c.mlp_hidden = 4 * c.d_model;
  const auto params = init_params<float>(c, 1);
  TokenBatch batch;
  batch.batch = 8;
  batch.seq = 128;
  std::mt19937_64 rng(3);
  for (std::size_t i = 0; i < batch.batch * batch.seq; ++i) {
    batch.tokens.push_back(static_cast<TokenId>(rng() % c.vocab_size));
    batch.mask.push_back(1);
  }
  for (auto _ : state) benchmark::DoNotOptimize(lm_loss_and_grad(c, params, batch).loss);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch.batch * batch.seq));
}
BENCHMARK(BM_LossAndGrad)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
