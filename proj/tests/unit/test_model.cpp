#include <doctest.h>

#include <cmath>
#include <random>

#include "adaptlm/error.hpp"
#include "adaptlm/model.hpp"
#include "test_util.hpp"

using namespace adaptlm;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 8;
  c.mlp_hidden = 32;
  return c;
}

TokenBatch random_batch(const ModelConfig& c, std::size_t batch, std::size_t seq, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TokenBatch b{batch, seq, std::vector<TokenId>(batch * seq), std::vector<std::uint8_t>(batch * seq, 1)};
  for (auto& t : b.tokens) t = static_cast<TokenId>(rng() % c.vocab_size);
  return b;
}

}  // namespace

TEST_CASE("parameter layout") {
  const auto p = ParameterSet<float>::zeros_like(tiny());
  CHECK(p.size() == 3 + 2 * ParameterSet<float>::kPerLayer);
  CHECK(p.name(0) == "tok_embedding");
  CHECK(p.name(ParameterSet<float>::layer_index(1, ParameterSet<float>::wo)) == "layers.1.wo");
  CHECK(p.at("output").shape() == Shape{16, 64});
  CHECK(p.at("layers.0.w_down").shape() == Shape{32, 16});
  CHECK(p.parameter_count() == 64 * 16 * 2 + 16 + 2 * (16 * 2 + 4 * 256 + 3 * 16 * 32));
  CHECK_THROWS_AS(p.at("nope"), Error);
}

TEST_CASE("config validation") {
  auto c = tiny();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny();
  c.max_seq_len = 1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("initialization statistics") {
  ModelConfig c = tiny();
  c.d_model = 64;
  c.vocab_size = 512;
  c.n_layers = 8;
  const auto p = init_params<double>(c, 1);
  auto stddev = [](const Tensor<double>& t) {
    double s = 0;
    for (const auto x : t.data()) s += x * x;
    return std::sqrt(s / static_cast<double>(t.size()));
  };
  CHECK(stddev(p.at("tok_embedding")) == doctest::Approx(0.02).epsilon(0.03));
  CHECK(stddev(p.at("layers.3.wo")) == doctest::Approx(0.02 / 4.0).epsilon(0.05));
  for (const auto x : p.at("layers.2.mlp_norm").data()) CHECK(x == 1.0);
  CHECK(init_params<double>(c, 1) == p);
  CHECK_FALSE(init_params<double>(c, 2) == p);
}

TEST_CASE("full model gradient matches central differences in double") {
  const auto c = tiny();
  const auto params = init_params<double>(c, 3);
  auto batch = random_batch(c, 2, 8, 4);
  batch.mask[3] = 0;
  const auto lg = lm_loss_and_grad(c, params, batch);
  const double h = 1e-6;
  double worst = 0.0;
  auto probe = params;
  std::mt19937_64 rng(5);
  for (std::size_t i = 0; i < params.size(); ++i) {
    // every tensor, a sample of entries
    for (int s = 0; s < 12; ++s) {
      const auto j = rng() % params[i].size();
      const double orig = probe[i][j];
      probe[i][j] = orig + h;
      const double up = lm_loss(c, probe, batch);
      probe[i][j] = orig - h;
      const double down = lm_loss(c, probe, batch);
      probe[i][j] = orig;
      worst = std::max(worst, testing::rel_error(lg.grads[i][j], (up - down) / (2 * h), 1e-4));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("untrained loss is close to ln V") {
  auto c = tiny();
  c.vocab_size = 256;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto params = init_params<float>(c, seed);
    const double loss = lm_loss(c, params, random_batch(c, 4, 8, seed + 100));
    CHECK(std::abs(loss - std::log(256.0)) / std::log(256.0) < 0.05);
  }
}

TEST_CASE("future tokens do not affect earlier logits") {
  const auto c = tiny();
  const auto params = init_params<float>(c, 6);
  auto batch = random_batch(c, 1, 8, 7);
  const auto a = forward(c, params, batch.tokens, 1, 8);
  batch.tokens[5] = (batch.tokens[5] + 1) % 64;
  const auto b = forward(c, params, batch.tokens, 1, 8);
  const auto v = c.vocab_size;
  for (std::size_t i = 0; i < 5 * v; ++i) REQUIRE(a[i] == b[i]);
  bool changed = false;
  for (std::size_t i = 5 * v; i < 8 * v; ++i) changed |= a[i] != b[i];
  CHECK(changed);
}

TEST_CASE("batched rows equal single-row forwards bitwise") {
  const auto c = tiny();
  const auto params = init_params<float>(c, 8);
  const auto batch = random_batch(c, 3, 6, 9);
  const auto all = forward(c, params, batch.tokens, 3, 6);
  for (std::size_t b = 0; b < 3; ++b) {
    const std::span<const TokenId> row(batch.tokens.data() + b * 6, 6);
    const auto one = forward(c, params, row, 1, 6);
    for (std::size_t i = 0; i < one.size(); ++i) REQUIRE(one[i] == all[b * one.size() + i]);
  }
}

TEST_CASE("loss mask and denominator") {
  const auto c = tiny();
  const auto params = init_params<double>(c, 10);
  auto batch = random_batch(c, 1, 8, 11);
  const double full = lm_loss(c, params, batch);
  const auto lg = lm_loss_and_grad(c, params, batch, 14.0);
  CHECK(lg.target_count == 7);
  CHECK(lg.loss == doctest::Approx(full * 7.0 / 14.0).epsilon(1e-12));
  batch.mask.assign(8, 0);
  batch.mask[0] = 1;  // position 0 is never a target
  CHECK(batch.target_count() == 0);
  CHECK_THROWS_AS(lm_loss(c, params, batch), Error);
}

TEST_CASE("sequences longer than the context are rejected") {
  const auto c = tiny();
  const auto params = init_params<float>(c, 12);
  const std::vector<TokenId> tokens(9, 1);
  CHECK_THROWS_AS(forward(c, params, tokens, 1, 9), Error);
}
