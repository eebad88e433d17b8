#pragma once

#include <cstddef>

#include "adaptlm/tensor.hpp"

// Row kernels shared by the autodiff tape and the KV-cached decoder. Every
// output row is computed by the same loop in the same order regardless of how
// many rows are processed together, which is what makes cached and cache-free
// decoding agree bitwise.
namespace adaptlm::kernels {

/// out[n x m] = x[n x k] * w[k x m]
template <Real T>
void matmul(const T* x, const T* w, T* out, std::size_t n, std::size_t k, std::size_t m);

/// out[n x k] += dy[n x m] * w[k x m]^T, via a transposed copy of w.
template <Real T>
void matmul_grad_input(const T* dy, const T* w, T* dx, std::size_t n, std::size_t k, std::size_t m);

/// dw[k x m] += x[n x k]^T * dy[n x m]
template <Real T>
void matmul_grad_weight(const T* x, const T* dy, T* dw, std::size_t n, std::size_t k, std::size_t m);

/// Writes x * gain / rms(x) and returns 1 / rms(x).
template <Real T>
T rmsnorm_row(const T* x, const T* gain, T* out, std::size_t d, T eps);

/// Rotates consecutive (even, odd) pairs of each head by position-dependent angles.
template <Real T>
void rope_row(const T* x, T* out, std::size_t position, std::size_t n_heads, std::size_t head_dim, T base,
              bool inverse = false);

/// Numerically stable softmax over one row.
template <Real T>
void softmax_row(const T* x, T* out, std::size_t n);

/// Causal attention for one query against `n_keys` cached keys/values, each
/// `stride` elements apart. Writes probabilities (length n_keys) and the
/// head_dim-wide output.
template <Real T>
void attend_row(const T* q, const T* keys, const T* values, std::size_t n_keys, std::size_t stride,
                std::size_t head_dim, T scale, T* probs, T* out);

template <Real T>
T silu(T x);

/// -log softmax(row)[target], accumulated in double.
template <Real T>
double row_nll(const T* logits, std::size_t n, std::size_t target);

}  // namespace adaptlm::kernels
