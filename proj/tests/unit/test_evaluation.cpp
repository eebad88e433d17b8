#include <doctest.h>

#include <cmath>
#include <random>

#include "adaptlm/error.hpp"
#include "adaptlm/evaluation.hpp"
#include "test_util.hpp"

using namespace adaptlm;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 300;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 16;
  c.mlp_hidden = 32;
  return c;
}

PackedBlocks random_blocks(std::size_t n, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PackedBlocks b;
  b.block_length = len;
  for (std::size_t i = 0; i < n * len; ++i) b.tokens.push_back(static_cast<TokenId>(rng() % 300));
  return b;
}

PackedBlocks slice(const PackedBlocks& b, std::size_t first, std::size_t count) {
  PackedBlocks out;
  out.block_length = b.block_length;
  out.tokens.assign(b.tokens.begin() + static_cast<std::ptrdiff_t>(first * b.block_length),
                    b.tokens.begin() + static_cast<std::ptrdiff_t>((first + count) * b.block_length));
  return out;
}

}  // namespace

TEST_CASE("a uniform model has perplexity equal to the vocabulary size") {
  const auto c = tiny();
  auto params = init_params<float>(c, 1);
  params.at("output").fill(0.0f);
  const auto r = perplexity(c, params, random_blocks(5, 16, 2));
  CHECK(r.token_count == 5 * 15);
  CHECK(std::abs(r.perplexity() - 300.0) / 300.0 < 1e-6);
}

TEST_CASE("pooling shard reports reproduces the whole-set perplexity") {
  const auto c = tiny();
  const auto params = init_params<float>(c, 3);
  const auto all = random_blocks(9, 16, 4);
  const auto whole = perplexity(c, params, all);
  const std::vector<EvalReport> parts{perplexity(c, params, slice(all, 0, 2)), perplexity(c, params, slice(all, 2, 4)),
                                      perplexity(c, params, slice(all, 6, 3))};
  const auto pooled = pool_reports(parts);
  CHECK(pooled.token_count == whole.token_count);
  CHECK(std::abs(pooled.perplexity() - whole.perplexity()) / whole.perplexity() < 1e-9);
}

TEST_CASE("perplexity equals exp of the mean NLL from an independent log-softmax") {
  const auto c = tiny();
  const auto params = init_params<float>(c, 5);
  const auto blocks = random_blocks(3, 10, 6);
  double nll = 0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < blocks.block_count(); ++b) {
    const auto block = blocks.block(b);
    const auto logits = forward(c, params, block, 1, block.size());
    for (std::size_t t = 0; t + 1 < block.size(); ++t) {
      double mx = -1e300;
      for (std::size_t j = 0; j < c.vocab_size; ++j) mx = std::max(mx, static_cast<double>(logits[t * c.vocab_size + j]));
      double z = 0;
      for (std::size_t j = 0; j < c.vocab_size; ++j) z += std::exp(logits[t * c.vocab_size + j] - mx);
      nll += mx + std::log(z) - logits[t * c.vocab_size + static_cast<std::size_t>(block[t + 1])];
      ++n;
    }
  }
  const auto r = perplexity(c, params, blocks);
  CHECK(r.token_count == static_cast<std::int64_t>(n));
  CHECK(testing::rel_error(r.perplexity(), std::exp(nll / static_cast<double>(n))) < 1e-9);
}

TEST_CASE("empty validation data is an error") {
  const auto c = tiny();
  CHECK_THROWS_AS(perplexity(c, init_params<float>(c, 1), PackedBlocks{16, {}, 0}), Error);
}

TEST_CASE("forgetting probe reports deltas against the base model") {
  const auto c = tiny();
  const auto base = fresh_checkpoint(c, init_params<float>(c, 1), "fp");
  auto with_mix = base;
  with_mix.params = init_params<float>(c, 2);
  auto without_mix = base;
  without_mix.params = init_params<float>(c, 3);
  const auto general = random_blocks(2, 16, 7);
  const auto domain = random_blocks(2, 16, 8);
  const auto r = forgetting_probe(base, with_mix, without_mix, general, domain);
  CHECK(r.general_delta_with_mix() ==
        doctest::Approx(perplexity(with_mix, general).perplexity() - perplexity(base, general).perplexity()));
  CHECK(r.mixing_reduces_forgetting() == (r.general_delta_with_mix() < r.general_delta_without_mix()));
  CHECK(r.to_text().find("mixing_reduces_forgetting") != std::string::npos);

  auto other = without_mix;
  other.tokenizer_fingerprint = "zz";
  CHECK_THROWS_AS(forgetting_probe(base, with_mix, other, general, domain), Error);
}
