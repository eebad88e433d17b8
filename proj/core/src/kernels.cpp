#include "adaptlm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "adaptlm/error.hpp"

namespace adaptlm {

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, " x ")); }

template <Real T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("tensor data has {} elements but shape {} needs {}", data_.size(), shape_string(shape_),
                            element_count(shape_)));
  }
}

template <Real T>
void require_finite(std::span<const T> values, const char* op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(fmt::format("{} produced a non-finite value at element {}", op, i));
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void require_finite<float>(std::span<const float>, const char*);
template void require_finite<double>(std::span<const double>, const char*);

namespace kernels {

template <Real T>
void matmul(const T* x, const T* w, T* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out + i * m;
    std::fill(row, row + m, T{0});
    const T* xi = x + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T a = xi[kk];
      const T* wk = w + kk * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += a * wk[j];
    }
  }
}

template <Real T>
void matmul_grad_input(const T* dy, const T* w, T* dx, std::size_t n, std::size_t k, std::size_t m) {
  std::vector<T> wt(k * m);
  for (std::size_t kk = 0; kk < k; ++kk) {
    for (std::size_t j = 0; j < m; ++j) wt[j * k + kk] = w[kk * m + j];
  }
  for (std::size_t i = 0; i < n; ++i) {
    T* row = dx + i * k;
    const T* dyi = dy + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const T g = dyi[j];
      const T* wj = wt.data() + j * k;
      for (std::size_t kk = 0; kk < k; ++kk) row[kk] += g * wj[kk];
    }
  }
}

template <Real T>
void matmul_grad_weight(const T* x, const T* dy, T* dw, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x + i * k;
    const T* dyi = dy + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T a = xi[kk];
      T* row = dw + kk * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += a * dyi[j];
    }
  }
}

template <Real T>
T rmsnorm_row(const T* x, const T* gain, T* out, std::size_t d, T eps) {
  T sum_sq{0};
  for (std::size_t j = 0; j < d; ++j) sum_sq += x[j] * x[j];
  const T inv = T{1} / std::sqrt(sum_sq / static_cast<T>(d) + eps);
  for (std::size_t j = 0; j < d; ++j) out[j] = x[j] * inv * gain[j];
  return inv;
}

template <Real T>
void rope_row(const T* x, T* out, std::size_t position, std::size_t n_heads, std::size_t head_dim, T base,
              bool inverse) {
  const std::size_t half = head_dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
    const double angle = static_cast<double>(position) * freq;
    const T c = static_cast<T>(std::cos(angle));
    const T s = inverse ? static_cast<T>(-std::sin(angle)) : static_cast<T>(std::sin(angle));
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t e = h * head_dim + 2 * i;
      const T a = x[e];
      const T b = x[e + 1];
      out[e] = a * c - b * s;
      out[e + 1] = a * s + b * c;
    }
  }
  if (head_dim % 2 == 1) {
    for (std::size_t h = 0; h < n_heads; ++h) out[h * head_dim + head_dim - 1] = x[h * head_dim + head_dim - 1];
  }
}

template <Real T>
void softmax_row(const T* x, T* out, std::size_t n) {
  T mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  T sum{0};
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(x[j] - mx);
    sum += out[j];
  }
  const T inv = T{1} / sum;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

template <Real T>
void attend_row(const T* q, const T* keys, const T* values, std::size_t n_keys, std::size_t stride,
                std::size_t head_dim, T scale, T* probs, T* out) {
  for (std::size_t j = 0; j < n_keys; ++j) {
    const T* kj = keys + j * stride;
    T dot{0};
    for (std::size_t e = 0; e < head_dim; ++e) dot += q[e] * kj[e];
    probs[j] = dot * scale;
  }
  softmax_row(probs, probs, n_keys);
  std::fill(out, out + head_dim, T{0});
  for (std::size_t j = 0; j < n_keys; ++j) {
    const T p = probs[j];
    const T* vj = values + j * stride;
    for (std::size_t e = 0; e < head_dim; ++e) out[e] += p * vj[e];
  }
}

template <Real T>
T silu(T x) {
  return x / (T{1} + std::exp(-x));
}

template <Real T>
double row_nll(const T* logits, std::size_t n, std::size_t target) {
  double mx = static_cast<double>(logits[0]);
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(logits[j]) - mx);
  return std::log(sum) - (static_cast<double>(logits[target]) - mx);
}

#define ADAPTLM_INSTANTIATE_KERNELS(T)                                                                       \
  template void matmul<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);                    \
  template void matmul_grad_input<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);         \
  template void matmul_grad_weight<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);        \
  template T rmsnorm_row<T>(const T*, const T*, T*, std::size_t, T);                                         \
  template void rope_row<T>(const T*, T*, std::size_t, std::size_t, std::size_t, T, bool);                   \
  template void softmax_row<T>(const T*, T*, std::size_t);                                                   \
  template void attend_row<T>(const T*, const T*, const T*, std::size_t, std::size_t, std::size_t, T, T*, T*); \
  template T silu<T>(T);                                                                                     \
  template double row_nll<T>(const T*, std::size_t, std::size_t);

ADAPTLM_INSTANTIATE_KERNELS(float)
ADAPTLM_INSTANTIATE_KERNELS(double)

#undef ADAPTLM_INSTANTIATE_KERNELS

}  // namespace kernels
}  // namespace adaptlm
