#include "ssd/numerics.hpp"

#include <algorithm>
#include <sstream>

namespace ssd {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void ElemPolicy::validate() const {
  if (bf16_emulation && compute != ElemType::F32) {
    throw InputError("bf16 emulation requires f32 compute");
  }
}

ElemType residual_accumulator(const ElemPolicy& policy) {
  return policy.compute == ElemType::F64 ? ElemType::F64 : ElemPolicy::residual;
}

namespace {

template <Real T>
void require_square_tail(const Tensor<T>& m, const char* what) {
  if (m.rank() < 2 || m.dim(m.rank() - 1) != m.dim(m.rank() - 2)) {
    throw ShapeError(std::string(what) + ": trailing dims must be square, got " + shape_str(m.shape()));
  }
}

}  // namespace

template <Real T>
Tensor<T> softplus(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = softplus(x[i]);
  return out;
}

template <Real T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = silu(x[i]);
  return out;
}

Tensor<float> bf16_round(const Tensor<float>& x) {
  Tensor<float> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = bf16_round(x[i]);
  return out;
}

template <Real T>
Tensor<T> cumsum_last(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("cumsum_last: rank must be >= 1");
  const std::size_t n = x.dim(x.rank() - 1);
  Tensor<T> out(x.shape());
  if (n == 0) return out;
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[r * n + i];
      out[r * n + i] = acc;
    }
  }
  return out;
}

template <Real T>
Tensor<T> segsum(const Tensor<T>& x, MaskStrategy mask) {
  if (x.rank() == 0 || x.dim(x.rank() - 1) == 0) throw ShapeError("segsum: last extent must be >= 1");
  const std::size_t L = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / L;
  const Tensor<T> c = cumsum_last(x);
  Shape shape = x.shape();
  shape.push_back(L);
  Tensor<T> diff(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* cr = c.ptr() + r * L;
    T* d = diff.ptr() + r * L * L;
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) d[i * L + j] = cr[i] - cr[j];
  }
  return tril_mask(diff, -std::numeric_limits<T>::infinity(), mask);
}

template <Real T>
Tensor<T> tril_mask_static(const Tensor<T>& m, T fill) {
  require_square_tail(m, "tril_mask_static");
  const std::size_t L = m.dim(m.rank() - 1);
  Tensor<T> out(m.shape());
  const std::size_t total = m.size();
  for (std::size_t f = 0; f < total; ++f) {
    const std::size_t col = f % L;
    const std::size_t row = (f / L) % L;
    out[f] = row >= col ? m[f] : fill;
  }
  return out;
}

template <Real T>
Tensor<T> tril_mask_rowwise(const Tensor<T>& m, T fill) {
  require_square_tail(m, "tril_mask_rowwise");
  const std::size_t L = m.dim(m.rank() - 1);
  Tensor<T> out = m;
  const std::size_t mats = L == 0 ? 0 : m.size() / (L * L);
  std::vector<T> row(L);
  for (std::size_t b = 0; b < mats; ++b) {
    for (std::size_t i = 0; i < L; ++i) {
      T* dst = out.ptr() + (b * L + i) * L;
      std::copy(dst, dst + L, row.begin());
      for (std::size_t j = i + 1; j < L; ++j) row[j] = fill;
      std::copy(row.begin(), row.end(), dst);
    }
  }
  return out;
}

template <Real T>
Tensor<T> rmsnorm_gated(const Tensor<T>& y, const Tensor<T>& z, const Tensor<T>& weight, double eps) {
  if (y.shape() != z.shape()) {
    throw ShapeError("rmsnorm_gated: y " + shape_str(y.shape()) + " vs z " + shape_str(z.shape()));
  }
  const std::size_t D = weight.size();
  if (y.rank() == 0 || y.dim(y.rank() - 1) != D) throw ShapeError("rmsnorm_gated: weight extent mismatch");
  Tensor<T> out(y.shape());
  const std::size_t rows = D == 0 ? 0 : y.size() / D;
  std::vector<T> u(D);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = 0;
    for (std::size_t d = 0; d < D; ++d) {
      u[d] = y[r * D + d] * silu(z[r * D + d]);
      sq += u[d] * u[d];
    }
    const T inv = T{1} / std::sqrt(sq / static_cast<T>(D) + static_cast<T>(eps));
    for (std::size_t d = 0; d < D; ++d) out[r * D + d] = u[d] * inv * weight[d];
  }
  return out;
}

template <Real T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, double eps) {
  const std::size_t D = weight.size();
  if (x.rank() == 0 || x.dim(x.rank() - 1) != D) throw ShapeError("rmsnorm: weight extent mismatch");
  Tensor<T> out(x.shape());
  const std::size_t rows = D == 0 ? 0 : x.size() / D;
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = 0;
    for (std::size_t d = 0; d < D; ++d) sq += x[r * D + d] * x[r * D + d];
    const T inv = T{1} / std::sqrt(sq / static_cast<T>(D) + static_cast<T>(eps));
    for (std::size_t d = 0; d < D; ++d) out[r * D + d] = x[r * D + d] * inv * weight[d];
  }
  return out;
}

template <Real T>
Tensor<T> depthwise_causal_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() != 3) throw ShapeError("depthwise_causal_conv: x must be (B,T,C), got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), T_len = x.dim(1), C = x.dim(2);
  if (w.rank() != 2 || w.dim(0) != C || w.dim(1) < 1) {
    throw ShapeError("depthwise_causal_conv: w must be (C,k>=1), got " + shape_str(w.shape()));
  }
  require_shape(bias, {C}, "depthwise_causal_conv bias");
  const std::size_t k = w.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T_len; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        T acc = bias[c];
        for (std::size_t j = 0; j < k; ++j) {
          // Source position t - (k-1) + j; negative positions are zero padding.
          if (t + j + 1 < k) continue;
          acc += w[c * k + j] * x[(b * T_len + t + j + 1 - k) * C + c];
        }
        out[(b * T_len + t) * C + c] = silu(acc);
      }
    }
  }
  return out;
}

template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (w.rank() != 2 || x.rank() == 0 || x.dim(x.rank() - 1) != w.dim(0)) {
    throw ShapeError("linear: cannot multiply " + shape_str(x.shape()) + " by " + shape_str(w.shape()));
  }
  const std::size_t K = w.dim(0), N = w.dim(1);
  const std::size_t rows = K == 0 ? 0 : x.size() / K;
  Shape shape = x.shape();
  shape.back() = N;
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.ptr() + r * N;
    const T* xr = x.ptr() + r * K;
    for (std::size_t kk = 0; kk < K; ++kk) {
      const T xv = xr[kk];
      const T* wr = w.ptr() + kk * N;
      for (std::size_t n = 0; n < N; ++n) o[n] += xv * wr[n];
    }
  }
  return out;
}

#define SSD_INSTANTIATE(T)                                                                      \
  template Tensor<T> softplus(const Tensor<T>&);                                                \
  template Tensor<T> silu(const Tensor<T>&);                                                    \
  template Tensor<T> cumsum_last(const Tensor<T>&);                                             \
  template Tensor<T> segsum(const Tensor<T>&, MaskStrategy);                                    \
  template Tensor<T> tril_mask_static(const Tensor<T>&, T);                                     \
  template Tensor<T> tril_mask_rowwise(const Tensor<T>&, T);                                    \
  template Tensor<T> rmsnorm_gated(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> rmsnorm(const Tensor<T>&, const Tensor<T>&, double);                       \
  template Tensor<T> depthwise_causal_conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&);

SSD_INSTANTIATE(float)
SSD_INSTANTIATE(double)

#undef SSD_INSTANTIATE

}  // namespace ssd
