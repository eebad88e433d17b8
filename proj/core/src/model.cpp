#include "adaptlm/model.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "adaptlm/error.hpp"

namespace adaptlm {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || mlp_hidden == 0) {
    throw Error(ErrorCode::invalid_argument, "model dimensions must all be at least 1");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorCode::invalid_argument, fmt::format("d_model {} is not divisible by n_heads {}", d_model, n_heads));
  }
  if (max_seq_len < 2) throw Error(ErrorCode::invalid_argument, "max_seq_len must be at least 2");
  if (!(rope_base > 0.0) || !(norm_epsilon > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "rope_base and norm_epsilon must be positive");
  }
  if (vocab_size > static_cast<std::size_t>(std::numeric_limits<TokenId>::max())) {
    throw Error(ErrorCode::invalid_argument, "vocab_size exceeds the token id range");
  }
}

std::size_t TokenBatch::target_count() const {
  std::size_t n = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 1; t < seq; ++t) n += mask[b * seq + t] ? 1 : 0;
  }
  return n;
}

template <Real T>
ParameterSet<T> ParameterSet<T>::zeros_like(const ModelConfig& c) {
  c.validate();
  ParameterSet out;
  const auto d = c.d_model, h = c.mlp_hidden, v = c.vocab_size;
  out.push("tok_embedding", Tensor<T>(Shape{v, d}));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto p = fmt::format("layers.{}.", l);
    out.push(p + "attn_norm", Tensor<T>(Shape{d}));
    out.push(p + "wq", Tensor<T>(Shape{d, d}));
    out.push(p + "wk", Tensor<T>(Shape{d, d}));
    out.push(p + "wv", Tensor<T>(Shape{d, d}));
    out.push(p + "wo", Tensor<T>(Shape{d, d}));
    out.push(p + "mlp_norm", Tensor<T>(Shape{d}));
    out.push(p + "w_gate", Tensor<T>(Shape{d, h}));
    out.push(p + "w_up", Tensor<T>(Shape{d, h}));
    out.push(p + "w_down", Tensor<T>(Shape{h, d}));
  }
  out.push("final_norm", Tensor<T>(Shape{d}));
  out.push("output", Tensor<T>(Shape{d, v}));
  return out;
}

template <Real T>
ParameterSet<T> ParameterSet<T>::zeros() const {
  ParameterSet out;
  for (std::size_t i = 0; i < size(); ++i) out.push(names_[i], Tensor<T>(tensors_[i].shape()));
  return out;
}

template <Real T>
Tensor<T>& ParameterSet<T>::at(std::string_view name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return tensors_[i];
  }
  throw Error(ErrorCode::invalid_argument, fmt::format("no parameter named '{}'", name));
}

template <Real T>
const Tensor<T>& ParameterSet<T>::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

template <Real T>
std::size_t ParameterSet<T>::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <Real T>
void ParameterSet<T>::push(std::string name, Tensor<T> tensor) {
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
}

template <Real T>
ParameterSet<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  auto params = ParameterSet<T>::zeros_like(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    auto& t = params[i];
    if (name.ends_with("norm")) {
      t.fill(T{1});
      continue;
    }
    const bool residual = name.ends_with(".wo") || name.ends_with(".w_down");
    for (auto& x : t.data()) x = static_cast<T>(normal(rng) * (residual ? residual_scale : 1.0));
  }
  return params;
}

template <Real T>
std::vector<Var> bind_parameters(Tape<T>& tape, const ParameterSet<T>& params, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.leaf(params[i], requires_grad));
  return vars;
}

template <Real T>
Var forward(Tape<T>& tape, const ModelConfig& config, std::span<const Var> p, std::span<const TokenId> tokens,
            std::size_t batch, std::size_t seq) {
  using PS = ParameterSet<T>;
  if (seq == 0 || seq > config.max_seq_len) {
    throw Error(ErrorCode::out_of_range, fmt::format("sequence length {} outside [1, {}]", seq, config.max_seq_len));
  }
  if (tokens.size() != batch * seq) throw Error(ErrorCode::invalid_argument, "token count != batch * seq");
  if (p.size() != 3 + PS::kPerLayer * config.n_layers) {
    throw Error(ErrorCode::invalid_argument, "parameter count does not match model config");
  }
  const T eps = static_cast<T>(config.norm_epsilon);
  const T base = static_cast<T>(config.rope_base);

  Var x = ad::embedding(tape, p[PS::embedding_index()], tokens);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    auto w = [&](typename PS::LayerSlot slot) { return p[PS::layer_index(l, slot)]; };
    const Var h = ad::rmsnorm(tape, x, w(PS::attn_norm), eps);
    const Var q = ad::rope(tape, ad::matmul(tape, h, w(PS::wq)), seq, config.n_heads, base);
    const Var k = ad::rope(tape, ad::matmul(tape, h, w(PS::wk)), seq, config.n_heads, base);
    const Var v = ad::matmul(tape, h, w(PS::wv));
    const Var attn = ad::causal_attention(tape, q, k, v, batch, seq, config.n_heads);
    x = ad::add(tape, x, ad::matmul(tape, attn, w(PS::wo)));

    const Var h2 = ad::rmsnorm(tape, x, w(PS::mlp_norm), eps);
    const Var gate = ad::silu(tape, ad::matmul(tape, h2, w(PS::w_gate)));
    const Var up = ad::matmul(tape, h2, w(PS::w_up));
    x = ad::add(tape, x, ad::matmul(tape, ad::mul(tape, gate, up), w(PS::w_down)));
  }
  const Var final_h = ad::rmsnorm(tape, x, p[p.size() - 2], eps);
  return ad::matmul(tape, final_h, p[p.size() - 1]);
}

template <Real T>
Tensor<T> forward(const ModelConfig& config, const ParameterSet<T>& params, std::span<const TokenId> tokens,
                  std::size_t batch, std::size_t seq) {
  Tape<T> tape;
  const auto vars = bind_parameters(tape, params, false);
  const Var logits = forward(tape, config, vars, tokens, batch, seq);
  return Tensor<T>(Shape{batch, seq, config.vocab_size},
                   std::vector<T>(tape.value(logits).data().begin(), tape.value(logits).data().end()));
}

namespace {

void shifted_targets(const TokenBatch& batch, std::vector<TokenId>& targets, std::vector<std::uint8_t>& mask) {
  const auto n = batch.batch * batch.seq;
  targets.assign(n, 0);
  mask.assign(n, 0);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t + 1 < batch.seq; ++t) {
      targets[b * batch.seq + t] = batch.tokens[b * batch.seq + t + 1];
      mask[b * batch.seq + t] = batch.mask[b * batch.seq + t + 1];
    }
  }
}

void check_batch(const TokenBatch& batch) {
  if (batch.seq < 2) throw Error(ErrorCode::invalid_argument, "loss needs sequences of at least 2 tokens");
  if (batch.tokens.size() != batch.batch * batch.seq || batch.mask.size() != batch.tokens.size()) {
    throw Error(ErrorCode::invalid_argument, "token batch arrays do not match batch * seq");
  }
}

}  // namespace

template <Real T>
LossAndGrad<T> lm_loss_and_grad(const ModelConfig& config, const ParameterSet<T>& params, const TokenBatch& batch,
                                std::optional<double> denominator) {
  check_batch(batch);
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> mask;
  shifted_targets(batch, targets, mask);

  Tape<T> tape;
  const auto vars = bind_parameters(tape, params, true);
  const Var logits = forward(tape, config, vars, batch.tokens, batch.batch, batch.seq);
  const Var loss = ad::cross_entropy(tape, logits, targets, mask, denominator);
  tape.backward(loss);

  LossAndGrad<T> out;
  out.loss = static_cast<double>(tape.value(loss)[0]);
  out.target_count = batch.target_count();
  out.grads = params.zeros();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (const auto* g = tape.node_grad(vars[i].index)) out.grads[i] = *g;
  }
  return out;
}

template <Real T>
double lm_loss(const ModelConfig& config, const ParameterSet<T>& params, const TokenBatch& batch) {
  check_batch(batch);
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> mask;
  shifted_targets(batch, targets, mask);
  Tape<T> tape;
  const auto vars = bind_parameters(tape, params, false);
  const Var logits = forward(tape, config, vars, batch.tokens, batch.batch, batch.seq);
  return static_cast<double>(tape.value(ad::cross_entropy(tape, logits, targets, mask))[0]);
}

#define ADAPTLM_INSTANTIATE_MODEL(T)                                                                             \
  template class ParameterSet<T>;                                                                                \
  template ParameterSet<T> init_params<T>(const ModelConfig&, std::uint64_t);                                    \
  template std::vector<Var> bind_parameters<T>(Tape<T>&, const ParameterSet<T>&, bool);                          \
  template Var forward<T>(Tape<T>&, const ModelConfig&, std::span<const Var>, std::span<const TokenId>,          \
                          std::size_t, std::size_t);                                                             \
  template Tensor<T> forward<T>(const ModelConfig&, const ParameterSet<T>&, std::span<const TokenId>,            \
                                std::size_t, std::size_t);                                                       \
  template LossAndGrad<T> lm_loss_and_grad<T>(const ModelConfig&, const ParameterSet<T>&, const TokenBatch&,     \
                                              std::optional<double>);                                            \
  template double lm_loss<T>(const ModelConfig&, const ParameterSet<T>&, const TokenBatch&);

ADAPTLM_INSTANTIATE_MODEL(float)
ADAPTLM_INSTANTIATE_MODEL(double)

#undef ADAPTLM_INSTANTIATE_MODEL

}  // namespace adaptlm
