#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adaptlm/checkpoint.hpp"
#include "adaptlm/model.hpp"
#include "adaptlm/tokenizer.hpp"

namespace adaptlm {

struct SamplingConfig {
  std::size_t max_new_tokens = 64;
  /// 0 selects greedy decoding.
  double temperature = 0.8;
  /// 0 keeps the whole vocabulary.
  std::size_t top_k = 40;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Incremental decoder holding per-layer key/value caches. Uses the same row
/// kernels as the training forward pass, so the logits after feeding tokens
/// t0..tn equal the last row of a full forward over t0..tn bit for bit.
template <Real T>
class InferenceSession {
 public:
  InferenceSession(const ModelConfig& config, const ParameterSet<T>& params);

  /// Feeds one token at the next position and returns the logits that follow it.
  std::span<const T> step(TokenId token);
  std::size_t position() const noexcept { return position_; }
  void reset() noexcept { position_ = 0; }

 private:
  const ModelConfig& config_;
  const ParameterSet<T>& params_;
  std::size_t position_ = 0;
  std::vector<std::vector<T>> keys_;
  std::vector<std::vector<T>> values_;
  std::vector<T> x_, h_, q_, qr_, k_, v_, attn_, o_, gate_, up_, down_, probs_, logits_;
};

/// Logits for the position after the last token, from a cache-free forward pass.
template <Real T>
std::vector<T> next_token_logits(const ModelConfig& config, const ParameterSet<T>& params,
                                 std::span<const TokenId> tokens);

/// Greedy picks the lowest id among tied maxima; otherwise keeps the top_k
/// logits and samples from softmax(logits / temperature).
TokenId sample_token(std::span<const float> logits, const SamplingConfig& config, std::mt19937_64& rng);

struct GenerationResult {
  std::vector<TokenId> tokens;  // generated ids, without the stop token
  bool stopped_on_eos = false;
};

/// Stops at EOS, after max_new_tokens, or when the context is full.
GenerationResult generate_tokens(const ModelConfig& config, const ParameterSet<float>& params,
                                 std::span<const TokenId> prompt, const SamplingConfig& sampling,
                                 bool use_cache = true);

/// Encodes the prompt (through the checkpoint's template when it has one),
/// generates, and decodes the continuation.
std::string generate(const Checkpoint& checkpoint, const BpeVocab& vocab, std::string_view prompt,
                     const SamplingConfig& sampling, std::string_view input = {});

}  // namespace adaptlm
