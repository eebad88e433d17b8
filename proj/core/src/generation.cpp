#include "adaptlm/generation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "adaptlm/error.hpp"
#include "adaptlm/kernels.hpp"

namespace adaptlm {

void SamplingConfig::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::invalid_argument, fmt::format("temperature must be finite and >= 0, got {}", temperature));
  }
}

template <Real T>
InferenceSession<T>::InferenceSession(const ModelConfig& config, const ParameterSet<T>& params)
    : config_(config), params_(params) {
  config.validate();
  if (params.size() != 3 + ParameterSet<T>::kPerLayer * config.n_layers) {
    throw Error(ErrorCode::invalid_argument, "parameter count does not match model config");
  }
  const auto d = config.d_model, hidden = config.mlp_hidden;
  keys_.assign(config.n_layers, std::vector<T>(config.max_seq_len * d));
  values_.assign(config.n_layers, std::vector<T>(config.max_seq_len * d));
  for (auto* buf : {&x_, &h_, &q_, &qr_, &k_, &v_, &attn_, &o_, &down_}) buf->assign(d, T{0});
  gate_.assign(hidden, T{0});
  up_.assign(hidden, T{0});
  probs_.assign(config.max_seq_len, T{0});
  logits_.assign(config.vocab_size, T{0});
}

template <Real T>
std::span<const T> InferenceSession<T>::step(TokenId token) {
  using PS = ParameterSet<T>;
  const auto& c = config_;
  if (position_ >= c.max_seq_len) {
    throw Error(ErrorCode::out_of_range, fmt::format("context of {} tokens is full", c.max_seq_len));
  }
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) throw Error(ErrorCode::out_of_range, fmt::format("token id {} outside vocabulary", token));
  const auto d = c.d_model, hd = c.head_dim(), hidden = c.mlp_hidden, pos = position_;
  const T eps = static_cast<T>(c.norm_epsilon);
  const T base = static_cast<T>(c.rope_base);
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));

  const T* table = params_[PS::embedding_index()].ptr();
  const auto row = static_cast<std::size_t>(token);
  std::copy(table + row * d, table + (row + 1) * d, x_.begin());
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto w = [&](typename PS::LayerSlot slot) { return params_[PS::layer_index(l, slot)].ptr(); };
    kernels::rmsnorm_row(x_.data(), w(PS::attn_norm), h_.data(), d, eps);
    kernels::matmul(h_.data(), w(PS::wq), q_.data(), 1, d, d);
    kernels::rope_row(q_.data(), qr_.data(), pos, c.n_heads, hd, base);
    kernels::matmul(h_.data(), w(PS::wk), k_.data(), 1, d, d);
    kernels::rope_row(k_.data(), keys_[l].data() + pos * d, pos, c.n_heads, hd, base);
    kernels::matmul(h_.data(), w(PS::wv), values_[l].data() + pos * d, 1, d, d);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      kernels::attend_row(qr_.data() + h * hd, keys_[l].data() + h * hd, values_[l].data() + h * hd, pos + 1, d, hd,
                          scale, probs_.data(), attn_.data() + h * hd);
    }
    kernels::matmul(attn_.data(), w(PS::wo), o_.data(), 1, d, d);
    for (std::size_t i = 0; i < d; ++i) x_[i] = x_[i] + o_[i];

    kernels::rmsnorm_row(x_.data(), w(PS::mlp_norm), h_.data(), d, eps);
    kernels::matmul(h_.data(), w(PS::w_gate), gate_.data(), 1, d, hidden);
    for (auto& g : gate_) g = kernels::silu(g);
    kernels::matmul(h_.data(), w(PS::w_up), up_.data(), 1, d, hidden);
    for (std::size_t i = 0; i < hidden; ++i) gate_[i] = gate_[i] * up_[i];
    kernels::matmul(gate_.data(), w(PS::w_down), down_.data(), 1, hidden, d);
    for (std::size_t i = 0; i < d; ++i) x_[i] = x_[i] + down_[i];
  }
  kernels::rmsnorm_row(x_.data(), params_[params_.final_norm_index()].ptr(), h_.data(), d, eps);
  kernels::matmul(h_.data(), params_[params_.output_index()].ptr(), logits_.data(), 1, d, c.vocab_size);
  require_finite<T>(std::span<const T>(logits_), "decoder logits");
  ++position_;
  return logits_;
}

template <Real T>
std::vector<T> next_token_logits(const ModelConfig& config, const ParameterSet<T>& params,
                                 std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error(ErrorCode::invalid_argument, "cannot compute logits for an empty sequence");
  const auto all = forward(config, params, tokens, 1, tokens.size());
  const auto v = config.vocab_size;
  const auto last = all.data().subspan((tokens.size() - 1) * v, v);
  return {last.begin(), last.end()};
}

template class InferenceSession<float>;
template class InferenceSession<double>;
template std::vector<float> next_token_logits<float>(const ModelConfig&, const ParameterSet<float>&,
                                                     std::span<const TokenId>);
template std::vector<double> next_token_logits<double>(const ModelConfig&, const ParameterSet<double>&,
                                                       std::span<const TokenId>);

TokenId sample_token(std::span<const float> logits, const SamplingConfig& config, std::mt19937_64& rng) {
  config.validate();
  if (logits.empty()) throw Error(ErrorCode::invalid_argument, "cannot sample from empty logits");
  std::vector<TokenId> ids(logits.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  auto by_logit = [&](TokenId a, TokenId b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); };
  if (config.temperature == 0.0) return *std::min_element(ids.begin(), ids.end(), by_logit);

  const auto keep = config.top_k == 0 ? ids.size() : std::min(config.top_k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(), by_logit);
  ids.resize(keep);
  const double top = logits[ids.front()];
  std::vector<double> weights(keep);
  for (std::size_t i = 0; i < keep; ++i) weights[i] = std::exp((logits[ids[i]] - top) / config.temperature);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return ids[pick(rng)];
}

GenerationResult generate_tokens(const ModelConfig& config, const ParameterSet<float>& params,
                                 std::span<const TokenId> prompt, const SamplingConfig& sampling, bool use_cache) {
  sampling.validate();
  if (prompt.empty()) throw Error(ErrorCode::invalid_argument, "prompt is empty");
  if (prompt.size() >= config.max_seq_len) {
    throw Error(ErrorCode::out_of_range, fmt::format("prompt of {} tokens leaves no room in a context of {}",
                                                     prompt.size(), config.max_seq_len));
  }
  const TokenId eos = BpeVocab::special(SpecialToken::eos);
  std::mt19937_64 rng(sampling.seed);
  GenerationResult result;
  std::vector<TokenId> context(prompt.begin(), prompt.end());

  std::optional<InferenceSession<float>> session;
  std::vector<float> logits;
  if (use_cache) {
    session.emplace(config, params);
    for (const auto t : prompt) {
      const auto l = session->step(t);
      logits.assign(l.begin(), l.end());
    }
  } else {
    logits = next_token_logits(config, params, context);
  }

  while (result.tokens.size() < sampling.max_new_tokens) {
    const TokenId next = sample_token(logits, sampling, rng);
    if (next == eos) {
      result.stopped_on_eos = true;
      break;
    }
    result.tokens.push_back(next);
    context.push_back(next);
    if (context.size() >= config.max_seq_len || result.tokens.size() == sampling.max_new_tokens) break;
    if (use_cache) {
      const auto l = session->step(next);
      logits.assign(l.begin(), l.end());
    } else {
      logits = next_token_logits(config, params, context);
    }
  }
  return result;
}

std::string generate(const Checkpoint& checkpoint, const BpeVocab& vocab, std::string_view prompt,
                     const SamplingConfig& sampling, std::string_view input) {
  require_same_tokenizer(checkpoint.tokenizer_fingerprint, vocab.fingerprint_hex(), "generation");
  if (checkpoint.model.vocab_size != vocab.size()) {
    throw Error(ErrorCode::invalid_argument, fmt::format("model vocabulary {} differs from tokenizer size {}",
                                                         checkpoint.model.vocab_size, vocab.size()));
  }
  const std::string text =
      checkpoint.prompt_template ? checkpoint.prompt_template->render_prompt(prompt, input) : std::string(prompt);
  const auto ids = vocab.encode(text);
  const auto result = generate_tokens(checkpoint.model, checkpoint.params, ids, sampling);
  return vocab.decode(result.tokens);
}

}  // namespace adaptlm
