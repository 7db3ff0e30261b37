#pragma once

#include <limits>
#include <optional>

#include "ssd/numerics.hpp"

namespace ssd {

// Inputs of one SSD mixer call.
//   x:  (B, T, H, P)   per-head inputs
//   dt: (B, T, H)      step sizes, already softplus'd and clamped
//   a:  (H)            continuous-time decay, a <= 0
//   b, c: (B, T, G, N) input/output projections, G divides H
template <Real T>
struct SsdInputs {
  Tensor<T> x;
  Tensor<T> dt;
  Tensor<T> a;
  Tensor<T> b;
  Tensor<T> c;
};

template <Real T>
struct SsdOutputs {
  Tensor<T> y;            // (B, T, H, P)
  Tensor<T> final_state;  // (B, H, P, N)
};

struct ChunkPlan {
  std::size_t chunk_len = 0;
  std::size_t num_chunks = 0;
  std::size_t pad = 0;
};

ChunkPlan plan_chunks(std::size_t seq_len, std::size_t chunk_len);

struct DtLimits {
  double min = 0.0;
  double max = std::numeric_limits<double>::infinity();
};

template <Real T>
struct Discretized {
  Tensor<T> dt;    // (B, T, H)
  Tensor<T> a;     // (H), a = -exp(A_log)
  Tensor<T> a_dt;  // (B, T, H)
};

// dt = clamp(softplus(dt_raw + dt_bias), min, max); a = -exp(A_log) with the
// exponential taken in the compute type (rounded to bf16 under DecayExp::BF16E).
template <Real T>
Discretized<T> discretize(const Tensor<T>& dt_raw, const Tensor<T>& dt_bias, const Tensor<T>& a_log,
                          DtLimits limits = {}, DecayExp decay = DecayExp::F32);

// Ydiag[b,c,l,h,p] = sum_{s,n} C[b,c,l,h,n] B[b,c,s,h,n] Lmat[b,h,c,l,s] Xbar[b,c,s,h,p]
// evaluated as G = C B^T, M = G * Lmat, Y = M Xbar.
//   cc, bc: (B, Nc, L, H, N); lmat: (B, H, Nc, L, L); xbar: (B, Nc, L, H, P)
template <Real T>
Tensor<T> intra_chunk_output(const Tensor<T>& cc, const Tensor<T>& bc, const Tensor<T>& lmat,
                             const Tensor<T>& xbar);

// states[b,c,h,p,n] = sum_l B[b,c,l,h,n] exp(acs[b,h,c,L-1] - acs[b,h,c,l]) Xbar[b,c,l,h,p]
//   a_cumsum: (B, H, Nc, L)
template <Real T>
Tensor<T> chunk_states(const Tensor<T>& bc, const Tensor<T>& a_cumsum, const Tensor<T>& xbar);

template <Real T>
struct ScanResult {
  Tensor<T> prev_states;  // (B, Nc, H, P, N), state entering each chunk
  Tensor<T> final_state;  // (B, H, P, N)
};

// Propagates chunk-end contributions across chunks through the
// (Nc+1) x (Nc+1) decay matrix exp(segsum([0, chunk_decay_logs])).
//   states: (B, Nc, H, P, N); chunk_decay_logs: (B, H, Nc)
template <Real T>
ScanResult<T> inter_chunk_scan(const Tensor<T>& states, const Tensor<T>& chunk_decay_logs,
                               const std::optional<Tensor<T>>& initial_state,
                               MaskStrategy mask = MaskStrategy::Static);

// Yoff[b,c,l,h,p] = sum_n C[b,c,l,h,n] prev[b,c,h,p,n] exp(a_cumsum[b,h,c,l])
template <Real T>
Tensor<T> cross_chunk_output(const Tensor<T>& cc, const Tensor<T>& prev_states, const Tensor<T>& a_cumsum);

// Chunked SSD forward pass. The skip term D*x is not included.
template <Real T>
SsdOutputs<T> ssd_forward(const SsdInputs<T>& in, std::size_t chunk_len,
                          const std::optional<Tensor<T>>& initial_state = std::nullopt,
                          MaskStrategy mask = MaskStrategy::Static);

}  // namespace ssd
