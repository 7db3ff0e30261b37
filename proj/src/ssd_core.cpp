#include "ssd/ssd_core.hpp"

#include <algorithm>
#include <cmath>

namespace ssd {

ChunkPlan plan_chunks(std::size_t seq_len, std::size_t chunk_len) {
  if (seq_len < 1 || chunk_len < 1) throw InputError("plan_chunks: T and L must be >= 1");
  ChunkPlan plan;
  plan.chunk_len = chunk_len;
  plan.num_chunks = (seq_len + chunk_len - 1) / chunk_len;
  plan.pad = plan.num_chunks * chunk_len - seq_len;
  return plan;
}

template <Real T>
Discretized<T> discretize(const Tensor<T>& dt_raw, const Tensor<T>& dt_bias, const Tensor<T>& a_log,
                          DtLimits limits, DecayExp decay) {
  if (!(limits.min >= 0.0 && limits.min < limits.max)) {
    throw InputError("discretize: dt limits must satisfy 0 <= min < max");
  }
  if (dt_raw.rank() != 3) throw ShapeError("discretize: dt_raw must be (B,T,H), got " + shape_str(dt_raw.shape()));
  const std::size_t H = dt_raw.dim(2);
  require_shape(dt_bias, {H}, "discretize dt_bias");
  require_shape(a_log, {H}, "discretize A_log");

  Discretized<T> out{Tensor<T>(dt_raw.shape()), Tensor<T>({H}), Tensor<T>(dt_raw.shape())};
  for (std::size_t h = 0; h < H; ++h) {
    if (!std::isfinite(a_log[h])) throw InputError("discretize: A_log[" + std::to_string(h) + "] is not finite");
    T e = std::exp(a_log[h]);
    if (decay == DecayExp::BF16E) e = static_cast<T>(bf16_round(static_cast<float>(e)));
    out.a[h] = -e;
  }
  const T lo = static_cast<T>(limits.min);
  const T hi = static_cast<T>(limits.max);
  for (std::size_t i = 0; i < dt_raw.size(); ++i) {
    const std::size_t h = i % H;
    const T dt = std::clamp(softplus(dt_raw[i] + dt_bias[h]), lo, hi);
    out.dt[i] = dt;
    out.a_dt[i] = out.a[h] * dt;
  }
  return out;
}

template <Real T>
Tensor<T> intra_chunk_output(const Tensor<T>& cc, const Tensor<T>& bc, const Tensor<T>& lmat,
                             const Tensor<T>& xbar) {
  if (cc.rank() != 5 || xbar.rank() != 5) throw ShapeError("intra_chunk_output: expected rank-5 C and Xbar");
  const std::size_t B = cc.dim(0), Nc = cc.dim(1), L = cc.dim(2), H = cc.dim(3), N = cc.dim(4);
  const std::size_t P = xbar.dim(4);
  require_shape(bc, cc.shape(), "intra_chunk_output B");
  require_shape(lmat, {B, H, Nc, L, L}, "intra_chunk_output Lmat");
  require_shape(xbar, {B, Nc, L, H, P}, "intra_chunk_output Xbar");

  Tensor<T> y({B, Nc, L, H, P});
  std::vector<T> m(L * L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < Nc; ++c) {
      for (std::size_t h = 0; h < H; ++h) {
        // G = C B^T, then M = G * Lmat
        for (std::size_t l = 0; l < L; ++l) {
          const T* cl = &cc(b, c, l, h, 0);
          for (std::size_t s = 0; s < L; ++s) {
            const T* bs = &bc(b, c, s, h, 0);
            T g = 0;
            for (std::size_t n = 0; n < N; ++n) g += cl[n] * bs[n];
            m[l * L + s] = g * lmat(b, h, c, l, s);
          }
        }
        // Y = M Xbar
        for (std::size_t l = 0; l < L; ++l) {
          T* yl = &y(b, c, l, h, 0);
          for (std::size_t s = 0; s < L; ++s) {
            const T w = m[l * L + s];
            const T* xs = &xbar(b, c, s, h, 0);
            for (std::size_t p = 0; p < P; ++p) yl[p] += w * xs[p];
          }
        }
      }
    }
  }
  return y;
}

template <Real T>
Tensor<T> chunk_states(const Tensor<T>& bc, const Tensor<T>& a_cumsum, const Tensor<T>& xbar) {
  if (bc.rank() != 5 || xbar.rank() != 5) throw ShapeError("chunk_states: expected rank-5 B and Xbar");
  const std::size_t B = bc.dim(0), Nc = bc.dim(1), L = bc.dim(2), H = bc.dim(3), N = bc.dim(4);
  const std::size_t P = xbar.dim(4);
  require_shape(a_cumsum, {B, H, Nc, L}, "chunk_states a_cumsum");
  require_shape(xbar, {B, Nc, L, H, P}, "chunk_states Xbar");

  Tensor<T> states({B, Nc, H, P, N});
  std::vector<T> decay(L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < Nc; ++c) {
      for (std::size_t h = 0; h < H; ++h) {
        const T* acs = &a_cumsum(b, h, c, 0);
        for (std::size_t l = 0; l < L; ++l) decay[l] = std::exp(acs[L - 1] - acs[l]);
        for (std::size_t p = 0; p < P; ++p) {
          T* st = &states(b, c, h, p, 0);
          for (std::size_t l = 0; l < L; ++l) {
            const T xw = decay[l] * xbar(b, c, l, h, p);
            const T* bl = &bc(b, c, l, h, 0);
            for (std::size_t n = 0; n < N; ++n) st[n] += bl[n] * xw;
          }
        }
      }
    }
  }
  return states;
}

template <Real T>
ScanResult<T> inter_chunk_scan(const Tensor<T>& states, const Tensor<T>& chunk_decay_logs,
                               const std::optional<Tensor<T>>& initial_state, MaskStrategy mask) {
  if (states.rank() != 5) throw ShapeError("inter_chunk_scan: states must be (B,Nc,H,P,N)");
  const std::size_t B = states.dim(0), Nc = states.dim(1), H = states.dim(2), P = states.dim(3),
                    N = states.dim(4);
  require_shape(chunk_decay_logs, {B, H, Nc}, "inter_chunk_scan chunk_decay_logs");
  if (initial_state) require_shape(*initial_state, {B, H, P, N}, "inter_chunk_scan initial_state");

  const std::size_t Z = Nc + 1;
  const std::size_t PN = P * N;
  Tensor<T> padded_logs({B, H, Z});
  for (std::size_t bh = 0; bh < B * H; ++bh)
    for (std::size_t c = 0; c < Nc; ++c) padded_logs[bh * Z + c + 1] = chunk_decay_logs[bh * Nc + c];
  Tensor<T> decay_chunk = segsum(padded_logs, mask);
  for (std::size_t i = 0; i < decay_chunk.size(); ++i) decay_chunk[i] = std::exp(decay_chunk[i]);

  ScanResult<T> out{Tensor<T>({B, Nc, H, P, N}), Tensor<T>({B, H, P, N})};
  std::vector<T> acc(PN);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t z = 0; z < Z; ++z) {
        std::fill(acc.begin(), acc.end(), T{0});
        for (std::size_t c = 0; c < Z; ++c) {
          const T w = decay_chunk(b, h, z, c);
          const T* src = c == 0 ? (initial_state ? &(*initial_state)(b, h, 0, 0) : nullptr)
                                : &states(b, c - 1, h, 0, 0);
          if (src == nullptr) continue;  // zero initial state
          for (std::size_t i = 0; i < PN; ++i) acc[i] += w * src[i];
        }
        T* dst = z < Nc ? &out.prev_states(b, z, h, 0, 0) : &out.final_state(b, h, 0, 0);
        std::copy(acc.begin(), acc.end(), dst);
      }
    }
  }
  return out;
}

template <Real T>
Tensor<T> cross_chunk_output(const Tensor<T>& cc, const Tensor<T>& prev_states, const Tensor<T>& a_cumsum) {
  if (cc.rank() != 5 || prev_states.rank() != 5) throw ShapeError("cross_chunk_output: expected rank-5 inputs");
  const std::size_t B = cc.dim(0), Nc = cc.dim(1), L = cc.dim(2), H = cc.dim(3), N = cc.dim(4);
  const std::size_t P = prev_states.dim(3);
  require_shape(prev_states, {B, Nc, H, P, N}, "cross_chunk_output prev_states");
  require_shape(a_cumsum, {B, H, Nc, L}, "cross_chunk_output a_cumsum");

  Tensor<T> y({B, Nc, L, H, P});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < Nc; ++c)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t h = 0; h < H; ++h) {
          const T decay = std::exp(a_cumsum(b, h, c, l));
          const T* cl = &cc(b, c, l, h, 0);
          for (std::size_t p = 0; p < P; ++p) {
            const T* st = &prev_states(b, c, h, p, 0);
            T acc = 0;
            for (std::size_t n = 0; n < N; ++n) acc += cl[n] * st[n];
            y(b, c, l, h, p) = acc * decay;
          }
        }
  return y;
}

template <Real T>
SsdOutputs<T> ssd_forward(const SsdInputs<T>& in, std::size_t chunk_len,
                          const std::optional<Tensor<T>>& initial_state, MaskStrategy mask) {
  if (in.x.rank() != 4) throw ShapeError("ssd_forward: x must be (B,T,H,P), got " + shape_str(in.x.shape()));
  const std::size_t B = in.x.dim(0), T_len = in.x.dim(1), H = in.x.dim(2), P = in.x.dim(3);
  if (in.b.rank() != 4) throw ShapeError("ssd_forward: B must be (B,T,G,N), got " + shape_str(in.b.shape()));
  const std::size_t G = in.b.dim(2), N = in.b.dim(3);
  require_shape(in.dt, {B, T_len, H}, "ssd_forward dt");
  require_shape(in.a, {H}, "ssd_forward a");
  require_shape(in.b, {B, T_len, G, N}, "ssd_forward B");
  require_shape(in.c, {B, T_len, G, N}, "ssd_forward C");
  if (G == 0 || H % G != 0) throw ShapeError("ssd_forward: groups must divide heads");

  const ChunkPlan plan = plan_chunks(T_len, chunk_len);
  const std::size_t Nc = plan.num_chunks, L = plan.chunk_len;
  const std::size_t heads_per_group = H / G;

  // Padded positions carry x = 0 and dt = 0: decay 1, no state increment.
  Tensor<T> xbar({B, Nc, L, H, P});
  Tensor<T> bc({B, Nc, L, H, N});
  Tensor<T> cc({B, Nc, L, H, N});
  Tensor<T> a_dt({B, H, Nc, L});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T_len; ++t) {
      const std::size_t c = t / L, l = t % L;
      for (std::size_t h = 0; h < H; ++h) {
        const T dt = in.dt(b, t, h);
        a_dt(b, h, c, l) = in.a[h] * dt;
        for (std::size_t p = 0; p < P; ++p) xbar(b, c, l, h, p) = in.x(b, t, h, p) * dt;
        const std::size_t g = h / heads_per_group;
        for (std::size_t n = 0; n < N; ++n) {
          bc(b, c, l, h, n) = in.b(b, t, g, n);
          cc(b, c, l, h, n) = in.c(b, t, g, n);
        }
      }
    }
  }

  const Tensor<T> a_cumsum = cumsum_last(a_dt);
  Tensor<T> lmat = segsum(a_dt, mask);
  for (std::size_t i = 0; i < lmat.size(); ++i) lmat[i] = std::exp(lmat[i]);

  const Tensor<T> y_diag = intra_chunk_output(cc, bc, lmat, xbar);
  const Tensor<T> states = chunk_states(bc, a_cumsum, xbar);

  Tensor<T> chunk_logs({B, H, Nc});
  for (std::size_t bhc = 0; bhc < B * H * Nc; ++bhc) chunk_logs[bhc] = a_cumsum[bhc * L + L - 1];
  ScanResult<T> scan = inter_chunk_scan(states, chunk_logs, initial_state, mask);
  const Tensor<T> y_off = cross_chunk_output(cc, scan.prev_states, a_cumsum);

  SsdOutputs<T> out{Tensor<T>({B, T_len, H, P}), std::move(scan.final_state)};
  const std::size_t HP = H * P;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t src = b * Nc * L * HP;
    const std::size_t dst = b * T_len * HP;
    for (std::size_t i = 0; i < T_len * HP; ++i) out.y[dst + i] = y_diag[src + i] + y_off[src + i];
  }
  return out;
}

#define SSD_INSTANTIATE(T)                                                                               \
  template Discretized<T> discretize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, DtLimits,    \
                                     DecayExp);                                                          \
  template Tensor<T> intra_chunk_output(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                        const Tensor<T>&);                                               \
  template Tensor<T> chunk_states(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template ScanResult<T> inter_chunk_scan(const Tensor<T>&, const Tensor<T>&,                           \
                                          const std::optional<Tensor<T>>&, MaskStrategy);                \
  template Tensor<T> cross_chunk_output(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template SsdOutputs<T> ssd_forward(const SsdInputs<T>&, std::size_t, const std::optional<Tensor<T>>&, \
                                     MaskStrategy);

SSD_INSTANTIATE(float)
SSD_INSTANTIATE(double)

#undef SSD_INSTANTIATE

}  // namespace ssd
