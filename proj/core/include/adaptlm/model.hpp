#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adaptlm/autodiff.hpp"
#include "adaptlm/tensor.hpp"
#include "adaptlm/tokenizer.hpp"

namespace adaptlm {

/// LLaMA-style decoder: RMS pre-norm, rotary causal attention, SiLU-gated MLP,
/// no biases, untied output projection.
struct ModelConfig {
  std::size_t vocab_size = 4096;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 256;
  std::size_t mlp_hidden = 512;
  double rope_base = 10000.0;
  double norm_epsilon = 1e-5;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::size_t head_dim() const noexcept { return d_model / n_heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named weights in a fixed layout:
///   tok_embedding [V x d]
///   layers.L.{attn_norm [d], wq, wk, wv, wo [d x d], mlp_norm [d],
///             w_gate, w_up [d x h], w_down [h x d]}
///   final_norm [d], output [d x V]
/// Linear weights are stored input-major so y = x * W.
template <Real T>
class ParameterSet {
 public:
  static constexpr std::size_t kPerLayer = 9;
  enum LayerSlot : std::size_t { attn_norm, wq, wk, wv, wo, mlp_norm, w_gate, w_up, w_down };

  ParameterSet() = default;
  /// Zero tensors with the layout implied by `config`.
  static ParameterSet zeros_like(const ModelConfig& config);
  ParameterSet zeros() const;

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor<T>& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_.at(i); }
  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;

  std::size_t n_layers() const noexcept { return (tensors_.size() - 3) / kPerLayer; }
  static std::size_t embedding_index() noexcept { return 0; }
  static std::size_t layer_index(std::size_t layer, LayerSlot slot) noexcept { return 1 + layer * kPerLayer + slot; }
  std::size_t final_norm_index() const noexcept { return tensors_.size() - 2; }
  std::size_t output_index() const noexcept { return tensors_.size() - 1; }

  std::size_t parameter_count() const noexcept;

  template <Real U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.push(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  void push(std::string name, Tensor<T> tensor);
  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
};

/// Weights ~ N(0, 0.02); wo and w_down scaled by 1/sqrt(2 n_layers); norm gains 1.
template <Real T>
ParameterSet<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Row-major [batch x seq] token ids, with a per-position target mask: mask[b, t]
/// says whether predicting token t from tokens < t counts toward the loss.
/// mask[b, 0] is ignored.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask;

  std::size_t target_count() const;
};

/// Vars for every parameter, in ParameterSet order.
template <Real T>
std::vector<Var> bind_parameters(Tape<T>& tape, const ParameterSet<T>& params, bool requires_grad);

/// Records the forward pass; returns logits [(batch*seq) x vocab].
template <Real T>
Var forward(Tape<T>& tape, const ModelConfig& config, std::span<const Var> params, std::span<const TokenId> tokens,
            std::size_t batch, std::size_t seq);

/// Logits [batch x seq x vocab] without keeping gradients.
template <Real T>
Tensor<T> forward(const ModelConfig& config, const ParameterSet<T>& params, std::span<const TokenId> tokens,
                  std::size_t batch, std::size_t seq);

template <Real T>
struct LossAndGrad {
  double loss = 0.0;           // the differentiated value: masked NLL sum / denominator
  std::size_t target_count = 0;
  ParameterSet<T> grads;
};

/// Shifted next-token loss. With `denominator` set, the masked NLL sum is
/// divided by it instead of the batch's own target count, so micro-batch
/// gradients can be summed into a token-weighted full-batch gradient.
template <Real T>
LossAndGrad<T> lm_loss_and_grad(const ModelConfig& config, const ParameterSet<T>& params, const TokenBatch& batch,
                                std::optional<double> denominator = {});

template <Real T>
double lm_loss(const ModelConfig& config, const ParameterSet<T>& params, const TokenBatch& batch);

}  // namespace adaptlm
