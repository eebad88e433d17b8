#include "adaptlm/autodiff.hpp"

#include <atomic>
#include <cmath>

#include <fmt/format.h>

#include "adaptlm/error.hpp"
#include "adaptlm/kernels.hpp"

namespace adaptlm {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a), shape_string(b)));
  }
}

void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) throw Error(ErrorCode::invalid_argument, fmt::format("{}: expected a 2-D tensor, got {}", op, shape_string(s)));
}

}  // namespace

template <Real T>
Tape<T>::Tape() : id_(next_tape_id.fetch_add(1)) {}

template <Real T>
std::size_t Tape<T>::check(Var v) const {
  if (v.tape_id != id_ || v.index >= nodes_.size()) {
    throw Error(ErrorCode::invalid_argument, "variable does not belong to this tape");
  }
  return v.index;
}

template <Real T>
Var Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  auto& n = nodes_.back();
  if (n.owned) n.value = n.owned.get();
  return Var{nodes_.size() - 1, id_};
}

template <Real T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::make_unique<Tensor<T>>(std::move(value));
  return push(std::move(n));
}

template <Real T>
Var Tape<T>::leaf(const Tensor<T>& external, bool requires_grad) {
  Node n;
  n.value = &external;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <Real T>
Var Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::make_unique<Tensor<T>>(std::move(value));
  n.requires_grad = true;
  return push(std::move(n));
}

template <Real T>
Var Tape<T>::record(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::make_unique<Tensor<T>>(std::move(value));
  for (const auto v : inputs) {
    const auto i = check(v);
    n.inputs.push_back(i);
    n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <Real T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return *nodes_[check(v)].value;
}

template <Real T>
bool Tape<T>::requires_grad(Var v) const {
  return nodes_[check(v)].requires_grad;
}

template <Real T>
Tensor<T> Tape<T>::grad(Var v) const {
  const auto& n = nodes_[check(v)];
  if (n.grad) return *n.grad;
  return Tensor<T>(n.value->shape());
}

template <Real T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t index) {
  auto& n = nodes_[index];
  if (!n.grad) n.grad.emplace(n.value->shape());
  return *n.grad;
}

template <Real T>
void Tape<T>::backward(Var loss) {
  const auto root = check(loss);
  if (nodes_[root].value->size() != 1) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("backward target must be a scalar, got {}", shape_string(nodes_[root].value->shape())));
  }
  for (auto& n : nodes_) n.grad.reset();
  grad_buffer(root)[0] = T{1};
  for (std::size_t i = root + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.grad || !n.backward) continue;
    n.backward(*this, i);
  }
}

template class Tape<float>;
template class Tape<double>;

namespace ad {

template <Real T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  require_same_shape(va.shape(), vb.shape(), "add");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  require_finite<T>(out.data(), "add");
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    for (const auto in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      auto& gi = t.grad_buffer(in.index);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <Real T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  require_same_shape(va.shape(), vb.shape(), "mul");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  require_finite<T>(out.data(), "mul");
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    const auto& xa = t.value(a);
    const auto& xb = t.value(b);
    if (t.requires_grad(a)) {
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_buffer(b.index);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
    }
  });
}

template <Real T>
Var sum(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  T s{0};
  for (const auto v : vx.data()) s += v;
  Tensor<T> out(Shape{1}, s);
  require_finite<T>(out.data(), "sum");
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const T g = (*t.node_grad(self))[0];
    auto& gx = t.grad_buffer(x.index);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <Real T>
Var matmul(Tape<T>& tape, Var x, Var w) {
  const auto& vx = tape.value(x);
  const auto& vw = tape.value(w);
  require_rank2(vx.shape(), "matmul");
  require_rank2(vw.shape(), "matmul");
  const auto n = vx.dim(0), k = vx.dim(1), m = vw.dim(1);
  if (vw.dim(0) != k) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("matmul: inner dimensions differ {} * {}", shape_string(vx.shape()), shape_string(vw.shape())));
  }
  Tensor<T> out(Shape{n, m});
  kernels::matmul(vx.ptr(), vw.ptr(), out.ptr(), n, k, m);
  require_finite<T>(out.data(), "matmul");
  return tape.record(std::move(out), {x, w}, [x, w, n, k, m](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    if (t.requires_grad(x)) kernels::matmul_grad_input(g.ptr(), t.value(w).ptr(), t.grad_buffer(x.index).ptr(), n, k, m);
    if (t.requires_grad(w)) kernels::matmul_grad_weight(t.value(x).ptr(), g.ptr(), t.grad_buffer(w.index).ptr(), n, k, m);
  });
}

template <Real T>
Var embedding(Tape<T>& tape, Var table, std::span<const TokenId> ids) {
  const auto& vt = tape.value(table);
  require_rank2(vt.shape(), "embedding");
  const auto vocab = vt.dim(0), d = vt.dim(1);
  Tensor<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw Error(ErrorCode::out_of_range, fmt::format("embedding: token id {} outside vocabulary of {}", ids[i], vocab));
    }
    std::copy_n(vt.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.ptr() + i * d);
  }
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return tape.record(std::move(out), {table}, [table, d, saved = std::move(saved)](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    auto& gt = t.grad_buffer(table.index);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* dst = gt.ptr() + static_cast<std::size_t>(saved[i]) * d;
      const T* src = g.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <Real T>
Var rmsnorm(Tape<T>& tape, Var x, Var gain, T eps) {
  const auto& vx = tape.value(x);
  const auto& vg = tape.value(gain);
  require_rank2(vx.shape(), "rmsnorm");
  const auto n = vx.dim(0), d = vx.dim(1);
  if (vg.size() != d) throw Error(ErrorCode::invalid_argument, "rmsnorm: gain size differs from row width");
  Tensor<T> out(vx.shape());
  std::vector<T> inv(n);
  for (std::size_t i = 0; i < n; ++i) inv[i] = kernels::rmsnorm_row(vx.ptr() + i * d, vg.ptr(), out.ptr() + i * d, d, eps);
  require_finite<T>(out.data(), "rmsnorm");
  return tape.record(std::move(out), {x, gain}, [x, gain, n, d, inv = std::move(inv)](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    const auto& vx = t.value(x);
    const auto& vg = t.value(gain);
    if (t.requires_grad(gain)) {
      auto& gg = t.grad_buffer(gain.index);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * vx[i * d + j] * inv[i];
      }
    }
    if (t.requires_grad(x)) {
      auto& gx = t.grad_buffer(x.index);
      for (std::size_t i = 0; i < n; ++i) {
        const T* xi = vx.ptr() + i * d;
        const T* gi = g.ptr() + i * d;
        T dot{0};
        for (std::size_t j = 0; j < d; ++j) dot += gi[j] * vg[j] * xi[j];
        const T r = inv[i];
        const T coef = r * r * r * dot / static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += r * vg[j] * gi[j] - coef * xi[j];
      }
    }
  });
}

template <Real T>
Var rope(Tape<T>& tape, Var x, std::size_t seq, std::size_t n_heads, T base) {
  const auto& vx = tape.value(x);
  require_rank2(vx.shape(), "rope");
  const auto rows = vx.dim(0), d = vx.dim(1);
  if (seq == 0 || rows % seq != 0 || d % n_heads != 0) {
    throw Error(ErrorCode::invalid_argument, "rope: rows must be a multiple of seq and width a multiple of heads");
  }
  const auto head_dim = d / n_heads;
  Tensor<T> out(vx.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    kernels::rope_row(vx.ptr() + r * d, out.ptr() + r * d, r % seq, n_heads, head_dim, base);
  }
  require_finite<T>(out.data(), "rope");
  return tape.record(std::move(out), {x}, [x, rows, d, seq, n_heads, head_dim, base](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    auto& gx = t.grad_buffer(x.index);
    std::vector<T> tmp(d);
    for (std::size_t r = 0; r < rows; ++r) {
      kernels::rope_row(g.ptr() + r * d, tmp.data(), r % seq, n_heads, head_dim, base, /*inverse=*/true);
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += tmp[j];
    }
  });
}

template <Real T>
Var silu(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernels::silu(vx[i]);
  require_finite<T>(out.data(), "silu");
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    const auto& vx = t.value(x);
    auto& gx = t.grad_buffer(x.index);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T{1} / (T{1} + std::exp(-vx[i]));
      gx[i] += g[i] * s * (T{1} + vx[i] * (T{1} - s));
    }
  });
}

template <Real T>
Var softmax(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  if (vx.rank() == 0 || vx.shape().back() == 0) throw Error(ErrorCode::invalid_argument, "softmax: empty axis");
  const auto width = vx.shape().back();
  const auto rows = vx.size() / width;
  Tensor<T> out(vx.shape());
  for (std::size_t r = 0; r < rows; ++r) kernels::softmax_row(vx.ptr() + r * width, out.ptr() + r * width, width);
  require_finite<T>(out.data(), "softmax");
  return tape.record(std::move(out), {x}, [x, rows, width](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    const auto& y = t.node_value(self);
    auto& gx = t.grad_buffer(x.index);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * width;
      const T* gr = g.ptr() + r * width;
      T dot{0};
      for (std::size_t j = 0; j < width; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += yr[j] * (gr[j] - dot);
    }
  });
}

template <Real T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t n_heads) {
  const auto& vq = tape.value(q);
  require_rank2(vq.shape(), "causal_attention");
  require_same_shape(vq.shape(), tape.value(k).shape(), "causal_attention");
  require_same_shape(vq.shape(), tape.value(v).shape(), "causal_attention");
  const auto d = vq.dim(1);
  if (vq.dim(0) != batch * seq || d % n_heads != 0) {
    throw Error(ErrorCode::invalid_argument, "causal_attention: shape does not match batch/seq/heads");
  }
  const auto hd = d / n_heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  // probs[b][h][t][0..t]
  std::vector<T> probs(batch * n_heads * seq * seq, T{0});
  Tensor<T> out(vq.shape());
  const auto& vk = tape.value(k);
  const auto& vv = tape.value(v);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const T* keys = vk.ptr() + b * seq * d + h * hd;
      const T* values = vv.ptr() + b * seq * d + h * hd;
      for (std::size_t tq = 0; tq < seq; ++tq) {
        const auto row = b * seq + tq;
        kernels::attend_row(vq.ptr() + row * d + h * hd, keys, values, tq + 1, d, hd, scale,
                            probs.data() + ((b * n_heads + h) * seq + tq) * seq, out.ptr() + row * d + h * hd);
      }
    }
  }
  require_finite<T>(out.data(), "causal_attention");
  return tape.record(std::move(out), {q, k, v},
                     [q, k, v, batch, seq, n_heads, d, hd, scale, probs = std::move(probs)](Tape<T>& t, std::size_t self) {
    const auto& g = *t.node_grad(self);
    const auto& vq = t.value(q);
    const auto& vk = t.value(k);
    const auto& vv = t.value(v);
    auto& gq = t.grad_buffer(q.index);
    auto& gk = t.grad_buffer(k.index);
    auto& gv = t.grad_buffer(v.index);
    std::vector<T> dp(seq);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < n_heads; ++h) {
        for (std::size_t tq = 0; tq < seq; ++tq) {
          const auto row = b * seq + tq;
          const T* p = probs.data() + ((b * n_heads + h) * seq + tq) * seq;
          const T* go = g.ptr() + row * d + h * hd;
          const T* qrow = vq.ptr() + row * d + h * hd;
          T weighted{0};
          for (std::size_t j = 0; j <= tq; ++j) {
            const auto krow = (b * seq + j) * d + h * hd;
            T dot{0};
            for (std::size_t e = 0; e < hd; ++e) {
              dot += go[e] * vv[krow + e];
              gv[krow + e] += p[j] * go[e];
            }
            dp[j] = dot;
            weighted += p[j] * dot;
          }
          T* dq = gq.ptr() + row * d + h * hd;
          for (std::size_t j = 0; j <= tq; ++j) {
            const T ds = p[j] * (dp[j] - weighted) * scale;
            const auto krow = (b * seq + j) * d + h * hd;
            for (std::size_t e = 0; e < hd; ++e) {
              dq[e] += ds * vk[krow + e];
              gk[krow + e] += ds * qrow[e];
            }
          }
        }
      }
    }
  });
}

template <Real T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                  std::optional<double> denominator) {
  const auto& vl = tape.value(logits);
  require_rank2(vl.shape(), "cross_entropy");
  const auto rows = vl.dim(0), vocab = vl.dim(1);
  if (targets.size() != rows || mask.size() != rows) {
    throw Error(ErrorCode::invalid_argument, "cross_entropy: targets/mask length differs from logit rows");
  }
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw Error(ErrorCode::out_of_range, fmt::format("cross_entropy: target {} outside vocabulary {}", targets[r], vocab));
    }
    total += kernels::row_nll(vl.ptr() + r * vocab, vocab, static_cast<std::size_t>(targets[r]));
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::invalid_argument, "cross_entropy: mask selects no positions");
  const double denom = denominator.value_or(static_cast<double>(count));
  if (!(denom > 0.0)) throw Error(ErrorCode::invalid_argument, "cross_entropy: denominator must be positive");
  Tensor<T> out(Shape{1}, static_cast<T>(total / denom));
  require_finite<T>(out.data(), "cross_entropy");
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return tape.record(std::move(out), {logits},
                     [logits, rows, vocab, denom, tgt = std::move(tgt), msk = std::move(msk)](Tape<T>& t, std::size_t self) {
    const T g = (*t.node_grad(self))[0];
    const auto& vl = t.value(logits);
    auto& gl = t.grad_buffer(logits.index);
    std::vector<T> p(vocab);
    const T coef = g / static_cast<T>(denom);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!msk[r]) continue;
      kernels::softmax_row(vl.ptr() + r * vocab, p.data(), vocab);
      p[static_cast<std::size_t>(tgt[r])] -= T{1};
      T* dst = gl.ptr() + r * vocab;
      for (std::size_t j = 0; j < vocab; ++j) dst[j] += coef * p[j];
    }
  });
}

#define ADAPTLM_INSTANTIATE_OPS(T)                                                                     \
  template Var add<T>(Tape<T>&, Var, Var);                                                             \
  template Var mul<T>(Tape<T>&, Var, Var);                                                             \
  template Var sum<T>(Tape<T>&, Var);                                                                  \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                          \
  template Var embedding<T>(Tape<T>&, Var, std::span<const TokenId>);                                  \
  template Var rmsnorm<T>(Tape<T>&, Var, Var, T);                                                      \
  template Var rope<T>(Tape<T>&, Var, std::size_t, std::size_t, T);                                    \
  template Var silu<T>(Tape<T>&, Var);                                                                 \
  template Var softmax<T>(Tape<T>&, Var);                                                              \
  template Var causal_attention<T>(Tape<T>&, Var, Var, Var, std::size_t, std::size_t, std::size_t);    \
  template Var cross_entropy<T>(Tape<T>&, Var, std::span<const TokenId>, std::span<const std::uint8_t>, \
                                std::optional<double>);

ADAPTLM_INSTANTIATE_OPS(float)
ADAPTLM_INSTANTIATE_OPS(double)

#undef ADAPTLM_INSTANTIATE_OPS

}  // namespace ad
}  // namespace adaptlm
