#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "ssd/tensor.hpp"

namespace ssd {

// Above this input softplus returns its argument unchanged.
inline constexpr double kSoftplusThreshold = 20.0;

template <Real T>
inline T softplus(T x) {
  if (x > static_cast<T>(kSoftplusThreshold)) return x;
  return std::log1p(std::exp(x));
}

template <Real T>
inline T silu(T x) {
  return x / (T{1} + std::exp(-x));
}

// Round-to-nearest-even onto the bfloat16 grid (8 significand bits), kept in
// f32 storage. NaN stays NaN; infinities pass through.
inline float bf16_round(float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  if ((bits & 0x7F800000u) == 0x7F800000u) {
    if (bits & 0x007FFFFFu) bits |= 0x00400000u;  // quiet NaN
    std::memcpy(&x, &bits, sizeof bits);
    return x;
  }
  const std::uint32_t lsb = (bits >> 16) & 1u;
  bits += 0x7FFFu + lsb;
  bits &= 0xFFFF0000u;
  std::memcpy(&x, &bits, sizeof bits);
  return x;
}

enum class MaskStrategy { Static, Rowwise };

template <Real T>
Tensor<T> softplus(const Tensor<T>& x);
template <Real T>
Tensor<T> silu(const Tensor<T>& x);
Tensor<float> bf16_round(const Tensor<float>& x);

// Inclusive prefix sum along the last axis, accumulated left to right.
template <Real T>
Tensor<T> cumsum_last(const Tensor<T>& x);

// out[..., i, j] = sum_{k=j+1..i} x[..., k] for i >= j, -inf above the
// diagonal. Built as cumsum, pairwise difference, then masking.
template <Real T>
Tensor<T> segsum(const Tensor<T>& x, MaskStrategy mask = MaskStrategy::Static);

// Replace strict-upper entries of the trailing (L, L) block with `fill`.
// Single pass over the whole tensor.
template <Real T>
Tensor<T> tril_mask_static(const Tensor<T>& m, T fill);

// Same selection, one row at a time: copy the row out, mask it, write it
// back. Bitwise identical to tril_mask_static.
template <Real T>
Tensor<T> tril_mask_rowwise(const Tensor<T>& m, T fill);

template <Real T>
Tensor<T> tril_mask(const Tensor<T>& m, T fill, MaskStrategy strategy) {
  return strategy == MaskStrategy::Static ? tril_mask_static(m, fill) : tril_mask_rowwise(m, fill);
}

// u = y * silu(z); out = u / sqrt(mean(u^2) + eps) * weight, over the last axis.
template <Real T>
Tensor<T> rmsnorm_gated(const Tensor<T>& y, const Tensor<T>& z, const Tensor<T>& weight, double eps);

// Ungated RMSNorm over the last axis.
template <Real T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, double eps);

// Causal depthwise conv over time with left zero padding, followed by silu.
// x: (B, T, C), w: (C, k), bias: (C).
template <Real T>
Tensor<T> depthwise_causal_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// x: (..., K) times w: (K, N) -> (..., N). Sequential accumulation over K.
template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w);

}  // namespace ssd
