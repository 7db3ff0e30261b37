#include "ssd/decode.hpp"

#include <cmath>

namespace ssd {

template <Real T>
Mamba2Cache<T> cache_init(const ModelConfig& cfg, std::size_t batch) {
  if (batch < 1) throw InputError("cache_init: batch must be >= 1");
  Mamba2Cache<T> cache;
  cache.layers.reserve(cfg.n_layers);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    cache.layers.push_back({Tensor<T>({batch, cfg.n_heads(), cfg.head_dim, cfg.d_state}),
                            Tensor<T>({batch, cfg.conv_dim(), cfg.conv_kernel - 1})});
  }
  return cache;
}

std::size_t cache_bytes(const ModelConfig& cfg, std::size_t batch, ElemType type) {
  const std::size_t elem = type == ElemType::F32 ? 4 : 8;
  const std::size_t per_layer =
      cfg.n_heads() * cfg.head_dim * cfg.d_state + cfg.conv_dim() * (cfg.conv_kernel - 1);
  return cfg.n_layers * batch * per_layer * elem;
}

template <Real T>
Tensor<T> roll_and_insert(const Tensor<T>& conv_state, const Tensor<T>& col) {
  if (conv_state.rank() != 3) throw ShapeError("roll_and_insert: state must be (B,C,k-1)");
  const std::size_t B = conv_state.dim(0), C = conv_state.dim(1), W = conv_state.dim(2);
  require_shape(col, {B, C}, "roll_and_insert column");
  Tensor<T> out(conv_state.shape());
  if (W == 0) return out;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* src = conv_state.ptr() + bc * W;
    T* dst = out.ptr() + bc * W;
    std::copy(src + 1, src + W, dst);
    dst[W - 1] = col[bc];
  }
  return out;
}

template <Real T>
StepResult<T> decode_step(const ModelParams<T>& params, Mamba2Cache<T> cache, const std::vector<std::int64_t>& token,
                          const ModelConfig& cfg) {
  const std::size_t B = token.size();
  if (B < 1) throw InputError("decode_step: empty token batch");
  if (cache.layers.size() != cfg.n_layers || cache.batch() != B) {
    throw ShapeError("decode_step: cache does not match config/batch");
  }
  const std::size_t d_inner = cfg.d_inner(), conv_dim = cfg.conv_dim(), H = cfg.n_heads(), P = cfg.head_dim;
  const std::size_t G = cfg.n_groups, N = cfg.d_state, k = cfg.conv_kernel, d_in = cfg.d_in_proj();
  const std::size_t heads_per_group = H / G;

  Tensor<T> hidden = embed(params, Tokens(B, 1, token), cfg).reshaped({B, cfg.d_model});

  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const LayerParams<T>& layer = params.layers[li];
    LayerCache<T>& lc = cache.layers[li];
    require_shape(lc.ssm_state, {B, H, P, N}, "decode_step ssm_state");
    require_shape(lc.conv_state, {B, conv_dim, k - 1}, "decode_step conv_state");

    Tensor<T> u = linear(rmsnorm(hidden, layer.input_norm_w, cfg.norm_eps), layer.in_proj);
    if constexpr (std::is_same_v<T, float>) {
      if (cfg.elem_policy.bf16_emulation) u = bf16_round(u);
    }

    Tensor<T> xbc_new({B, conv_dim});
    Tensor<T> dt_raw({B, 1, H});
    for (std::size_t b = 0; b < B; ++b) {
      const T* src = u.ptr() + b * d_in;
      std::copy(src + d_inner, src + d_inner + conv_dim, xbc_new.ptr() + b * conv_dim);
      std::copy(src + d_inner + conv_dim, src + d_in, dt_raw.ptr() + b * H);
    }

    // Conv readout over the window [conv_state | new column].
    Tensor<T> conv({B, conv_dim});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < conv_dim; ++c) {
        T acc = layer.conv_b[c];
        for (std::size_t j = 0; j + 1 < k; ++j) acc += layer.conv_w(c, j) * lc.conv_state(b, c, j);
        acc += layer.conv_w(c, k - 1) * xbc_new(b, c);
        conv(b, c) = silu(acc);
      }
    lc.conv_state = roll_and_insert(lc.conv_state, xbc_new);

    const Discretized<T> disc =
        discretize(dt_raw, layer.dt_bias, layer.a_log, cfg.dt_limits, cfg.elem_policy.decay_exp);

    Tensor<T> y({B, d_inner});
    Tensor<T> z({B, d_inner});
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(u.ptr() + b * d_in, u.ptr() + b * d_in + d_inner, z.ptr() + b * d_inner);
      const T* x = conv.ptr() + b * conv_dim;
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t g = h / heads_per_group;
        const T* bv = x + d_inner + g * N;
        const T* cv = x + d_inner + G * N + g * N;
        const T dt = disc.dt(b, 0, h);
        const T decay = std::exp(disc.a_dt(b, 0, h));
        for (std::size_t p = 0; p < P; ++p) {
          const T xp = x[h * P + p];
          const T xbar = xp * dt;
          T* st = &lc.ssm_state(b, h, p, 0);
          T acc = 0;
          for (std::size_t n = 0; n < N; ++n) {
            st[n] = decay * st[n] + bv[n] * xbar;
            acc += cv[n] * st[n];
          }
          y(b, h * P + p) = acc + layer.d_skip[h] * xp;
        }
      }
    }

    Tensor<T> mixed = linear(rmsnorm_gated(y, z, layer.norm_w, cfg.norm_eps), layer.out_proj);
    if constexpr (std::is_same_v<T, float>) {
      if (cfg.elem_policy.bf16_emulation) mixed = bf16_round(mixed);
    }
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] += mixed[i];
  }

  return {lm_head(params, hidden, cfg), std::move(cache)};
}

template <Real T>
std::vector<std::int64_t> argmax_last(const Tensor<T>& logits) {
  const std::size_t V = logits.dim(logits.rank() - 1);
  const std::size_t rows = V == 0 ? 0 : logits.size() / V;
  std::vector<std::int64_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < V; ++v)
      if (logits[r * V + v] > logits[r * V + best]) best = v;
    out[r] = static_cast<std::int64_t>(best);
  }
  return out;
}

namespace {

// Logits at the last position of a (B, T, V) tensor, as (B, V).
template <Real T>
Tensor<T> last_position(const Tensor<T>& logits) {
  const std::size_t B = logits.dim(0), T_len = logits.dim(1), V = logits.dim(2);
  Tensor<T> out({B, V});
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = logits.ptr() + (b * T_len + T_len - 1) * V;
    std::copy(src, src + V, out.ptr() + b * V);
  }
  return out;
}

}  // namespace

template <Real T>
GenerationResult<T> generate(const ModelParams<T>& params, const Tokens& prompt, std::size_t steps, DecodeMode mode,
                             const ModelConfig& cfg, bool keep_logits, MaskStrategy mask) {
  if (steps < 1) throw InputError("generate: need at least one step");
  const std::size_t B = prompt.batch, V = cfg.vocab_size;
  GenerationResult<T> result;
  result.tokens = Tokens(B, steps, std::vector<std::int64_t>(B * steps));
  if (keep_logits) result.per_step_logits = Tensor<T>({B, steps, V});

  auto record = [&](std::size_t g, const Tensor<T>& logits) {
    const std::vector<std::int64_t> next = argmax_last(logits);
    for (std::size_t b = 0; b < B; ++b) {
      result.tokens.ids[b * steps + g] = next[b];
      if (keep_logits) std::copy(logits.ptr() + b * V, logits.ptr() + (b + 1) * V, &(*result.per_step_logits)(b, g, 0));
    }
    return next;
  };

  if (mode == DecodeMode::Cached) {
    PrefillResult<T> pre = prefill(params, prompt, cfg, mask);
    std::vector<std::int64_t> next = record(0, last_position(pre.logits));
    Mamba2Cache<T> cache = std::move(pre.cache);
    for (std::size_t g = 1; g <= steps; ++g) {
      StepResult<T> step = decode_step(params, std::move(cache), next, cfg);
      cache = std::move(step.cache);
      if (g < steps) next = record(g, step.logits);
    }
    result.cache = std::move(cache);
  } else {
    Tokens seq = prompt;
    for (std::size_t g = 0; g < steps; ++g) {
      const PrefillResult<T> pre = prefill(params, seq, cfg, mask);
      const std::vector<std::int64_t> next = record(g, last_position(pre.logits));
      std::vector<std::int64_t> ids;
      ids.reserve(B * (seq.length + 1));
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < seq.length; ++t) ids.push_back(seq.at(b, t));
        ids.push_back(next[b]);
      }
      seq = Tokens(B, seq.length + 1, std::move(ids));
    }
  }
  result.steps = steps;
  return result;
}

#define SSD_INSTANTIATE(T)                                                                                       \
  template Mamba2Cache<T> cache_init(const ModelConfig&, std::size_t);                                           \
  template Tensor<T> roll_and_insert(const Tensor<T>&, const Tensor<T>&);                                        \
  template StepResult<T> decode_step(const ModelParams<T>&, Mamba2Cache<T>, const std::vector<std::int64_t>&,    \
                                     const ModelConfig&);                                                        \
  template std::vector<std::int64_t> argmax_last(const Tensor<T>&);                                              \
  template GenerationResult<T> generate(const ModelParams<T>&, const Tokens&, std::size_t, DecodeMode,           \
                                        const ModelConfig&, bool, MaskStrategy);

SSD_INSTANTIATE(float)
SSD_INSTANTIATE(double)

#undef SSD_INSTANTIATE

}  // namespace ssd
