#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "adaptlm/tensor.hpp"
#include "adaptlm/tokenizer.hpp"

namespace adaptlm {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t index = 0;
  std::uint64_t tape_id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the record is
/// topologically sorted by construction; backward walks it once in reverse.
template <Real T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned value that never receives a gradient.
  Var constant(Tensor<T> value);
  /// Borrowed leaf; `external` must outlive the tape.
  Var leaf(const Tensor<T>& external, bool requires_grad);
  /// Owned leaf that receives a gradient.
  Var variable(Tensor<T> value);

  Var record(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient of the last backward() target with respect to v; zeros if v did
  /// not influence it.
  Tensor<T> grad(Var v) const;
  /// Lazily zero-initialised gradient accumulator, for use inside BackwardFn.
  Tensor<T>& grad_buffer(std::size_t index);
  const Tensor<T>& node_value(std::size_t index) const { return *nodes_[index].value; }
  const Tensor<T>* node_grad(std::size_t index) const {
    return nodes_[index].grad ? &*nodes_[index].grad : nullptr;
  }

  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint64_t id() const noexcept { return id_; }

 private:
  struct Node {
    std::unique_ptr<Tensor<T>> owned;  // heap-held so references survive node growth
    const Tensor<T>* value = nullptr;
    std::optional<Tensor<T>> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::size_t check(Var v) const;
  Var push(Node node);

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

// Differentiable primitives. Shapes are 2-D [rows x cols] unless noted.
namespace ad {

template <Real T> Var add(Tape<T>& tape, Var a, Var b);
template <Real T> Var mul(Tape<T>& tape, Var a, Var b);
template <Real T> Var sum(Tape<T>& tape, Var x);
/// x [n x k] * w [k x m]
template <Real T> Var matmul(Tape<T>& tape, Var x, Var w);
/// Rows of `table` [V x d] selected by ids -> [ids.size() x d].
template <Real T> Var embedding(Tape<T>& tape, Var table, std::span<const TokenId> ids);
template <Real T> Var rmsnorm(Tape<T>& tape, Var x, Var gain, T eps);
/// Rotary embedding on x [(batch*seq) x (heads*head_dim)]; position = row % seq.
template <Real T> Var rope(Tape<T>& tape, Var x, std::size_t seq, std::size_t n_heads, T base);
template <Real T> Var silu(Tape<T>& tape, Var x);
/// Row-wise softmax over the last axis.
template <Real T> Var softmax(Tape<T>& tape, Var x);
/// Causal multi-head attention; q, k, v are [(batch*seq) x (heads*head_dim)].
template <Real T> Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t batch, std::size_t seq,
                                       std::size_t n_heads);
/// Sum of -log softmax(logits)[row, target] over rows with mask 1, divided by
/// `denominator` (defaults to the mask count). Returns a [1] tensor.
template <Real T> Var cross_entropy(Tape<T>& tape, Var logits, std::span<const TokenId> targets,
                                    std::span<const std::uint8_t> mask, std::optional<double> denominator = {});

}  // namespace ad

}  // namespace adaptlm
