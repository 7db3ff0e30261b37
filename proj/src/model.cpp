#include "ssd/model.hpp"

#include <bit>
#include <cmath>

namespace ssd {

bool operator==(const DtLimits& a, const DtLimits& b) { return a.min == b.min && a.max == b.max; }

bool operator==(const ElemPolicy& a, const ElemPolicy& b) {
  return a.compute == b.compute && a.decay_exp == b.decay_exp && a.bf16_emulation == b.bf16_emulation;
}

bool ModelConfig::operator==(const ModelConfig& o) const {
  return vocab_size == o.vocab_size && d_model == o.d_model && n_layers == o.n_layers && d_state == o.d_state &&
         head_dim == o.head_dim && expand == o.expand && n_groups == o.n_groups && conv_kernel == o.conv_kernel &&
         chunk_size == o.chunk_size && norm_eps == o.norm_eps && dt_limits == o.dt_limits &&
         elem_policy == o.elem_policy;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw InputError("invalid model config: " + msg); };
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (d_model < 1 || expand < 1 || d_state < 1 || head_dim < 1) fail("dimensions must be >= 1");
  if (d_inner() % head_dim != 0) fail("head_dim must divide d_inner");
  if (n_groups < 1 || n_heads() % n_groups != 0) fail("n_groups must divide n_heads");
  if (conv_kernel < 1) fail("conv_kernel must be >= 1");
  if (chunk_size < 1) fail("chunk_size must be >= 1");
  if (!(norm_eps > 0)) fail("norm_eps must be positive");
  if (!(dt_limits.min >= 0 && dt_limits.min < dt_limits.max)) fail("dt limits must satisfy 0 <= min < max");
  elem_policy.validate();
}

ModelConfig ModelConfig::mamba2_130m() {
  ModelConfig c;
  c.vocab_size = 50288;
  c.d_model = 768;
  c.n_layers = 24;
  c.d_state = 128;
  c.head_dim = 64;
  c.expand = 2;
  c.n_groups = 1;
  c.conv_kernel = 4;
  c.chunk_size = 256;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 16;
  c.n_layers = 2;
  c.d_state = 8;
  c.head_dim = 8;
  c.expand = 2;
  c.conv_kernel = 4;
  c.chunk_size = 16;
  return c;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t per_layer = cfg.d_model + cfg.d_model * cfg.d_in_proj() + cfg.conv_dim() * cfg.conv_kernel +
                                cfg.conv_dim() + 3 * cfg.n_heads() + cfg.d_inner() + cfg.d_inner() * cfg.d_model;
  return cfg.vocab_size * cfg.d_model + cfg.d_model + cfg.n_layers * per_layer;
}

template <Real T>
void check_params(const ModelParams<T>& params, const ModelConfig& cfg) {
  require_shape(params.embedding, {cfg.vocab_size, cfg.d_model}, "embedding");
  require_shape(params.final_norm_w, {cfg.d_model}, "final_norm.weight");
  if (params.layers.size() != cfg.n_layers) {
    throw ShapeError("expected " + std::to_string(cfg.n_layers) + " layers, got " +
                     std::to_string(params.layers.size()));
  }
  const std::size_t H = cfg.n_heads();
  for (const auto& l : params.layers) {
    require_shape(l.input_norm_w, {cfg.d_model}, "input_norm.weight");
    require_shape(l.in_proj, {cfg.d_model, cfg.d_in_proj()}, "in_proj.weight");
    require_shape(l.conv_w, {cfg.conv_dim(), cfg.conv_kernel}, "conv1d.weight");
    require_shape(l.conv_b, {cfg.conv_dim()}, "conv1d.bias");
    require_shape(l.dt_bias, {H}, "dt_bias");
    require_shape(l.a_log, {H}, "A_log");
    require_shape(l.d_skip, {H}, "D");
    require_shape(l.norm_w, {cfg.d_inner()}, "norm.weight");
    require_shape(l.out_proj, {cfg.d_inner(), cfg.d_model}, "out_proj.weight");
  }
}

Tokens::Tokens(std::size_t b, std::size_t t, std::vector<std::int64_t> v) : batch(b), length(t), ids(std::move(v)) {
  if (ids.size() != batch * length) throw ShapeError("token buffer does not match (batch, length)");
}

Tokens Tokens::prefix(std::size_t t) const {
  std::vector<std::int64_t> out;
  out.reserve(batch * t);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < t; ++i) out.push_back(at(b, i));
  return Tokens(batch, t, std::move(out));
}

std::vector<std::int64_t> Tokens::column(std::size_t t) const {
  std::vector<std::int64_t> out(batch);
  for (std::size_t b = 0; b < batch; ++b) out[b] = at(b, t);
  return out;
}

void check_tokens(const Tokens& tokens, const ModelConfig& cfg) {
  for (std::int64_t id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " out of range for vocab " +
                       std::to_string(cfg.vocab_size));
    }
  }
}

template <Real T>
std::size_t Mamba2Cache<T>::byte_size() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.ssm_state.nbytes() + l.conv_state.nbytes();
  return n;
}

template <Real T>
std::vector<std::uint8_t> Mamba2Cache<T>::serialize() const {
  static_assert(std::endian::native == std::endian::little, "cache dump assumes a little-endian host");
  std::vector<std::uint8_t> out;
  out.reserve(byte_size());
  auto append = [&out](const Tensor<T>& t) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.ptr());
    out.insert(out.end(), p, p + t.nbytes());
  };
  for (const auto& l : layers) {
    append(l.ssm_state);
    append(l.conv_state);
  }
  return out;
}

namespace {

template <Real T>
void maybe_bf16(Tensor<T>& t, const ModelConfig& cfg) {
  if constexpr (std::is_same_v<T, float>) {
    if (cfg.elem_policy.bf16_emulation)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = bf16_round(t[i]);
  }
}

}  // namespace

template <Real T>
BlockOutput<T> block_forward(const LayerParams<T>& layer, const Tensor<T>& hidden, const ModelConfig& cfg,
                             MaskStrategy mask) {
  if (hidden.rank() != 3 || hidden.dim(2) != cfg.d_model) {
    throw ShapeError("block_forward: hidden must be (B,T,d_model), got " + shape_str(hidden.shape()));
  }
  const std::size_t B = hidden.dim(0), T_len = hidden.dim(1);
  const std::size_t d_inner = cfg.d_inner(), conv_dim = cfg.conv_dim(), H = cfg.n_heads(), P = cfg.head_dim;
  const std::size_t G = cfg.n_groups, N = cfg.d_state, k = cfg.conv_kernel, d_in = cfg.d_in_proj();
  const std::size_t BT = B * T_len;

  Tensor<T> u = linear(rmsnorm(hidden, layer.input_norm_w, cfg.norm_eps), layer.in_proj);
  maybe_bf16(u, cfg);

  Tensor<T> z({B, T_len, d_inner});
  Tensor<T> xbc({B, T_len, conv_dim});
  Tensor<T> dt_raw({B, T_len, H});
  for (std::size_t r = 0; r < BT; ++r) {
    const T* src = u.ptr() + r * d_in;
    std::copy(src, src + d_inner, z.ptr() + r * d_inner);
    std::copy(src + d_inner, src + d_inner + conv_dim, xbc.ptr() + r * conv_dim);
    std::copy(src + d_inner + conv_dim, src + d_in, dt_raw.ptr() + r * H);
  }

  BlockOutput<T> out;
  out.conv_tail = Tensor<T>({B, conv_dim, k - 1});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j + 1 < k; ++j) {
      if (T_len + j + 1 < k) continue;  // before the first token: zero
      const std::size_t t = T_len + j + 1 - k;
      for (std::size_t c = 0; c < conv_dim; ++c) out.conv_tail(b, c, j) = xbc(b, t, c);
    }

  const Tensor<T> conv = depthwise_causal_conv(xbc, layer.conv_w, layer.conv_b);
  SsdInputs<T> in{Tensor<T>({B, T_len, H, P}), {}, {}, Tensor<T>({B, T_len, G, N}), Tensor<T>({B, T_len, G, N})};
  for (std::size_t r = 0; r < BT; ++r) {
    const T* src = conv.ptr() + r * conv_dim;
    std::copy(src, src + d_inner, in.x.ptr() + r * d_inner);
    std::copy(src + d_inner, src + d_inner + G * N, in.b.ptr() + r * G * N);
    std::copy(src + d_inner + G * N, src + conv_dim, in.c.ptr() + r * G * N);
  }
  Discretized<T> disc = discretize(dt_raw, layer.dt_bias, layer.a_log, cfg.dt_limits, cfg.elem_policy.decay_exp);
  in.dt = std::move(disc.dt);
  in.a = std::move(disc.a);

  SsdOutputs<T> ssd = ssd_forward<T>(in, cfg.chunk_size, std::nullopt, mask);
  out.final_state = std::move(ssd.final_state);

  Tensor<T> y = std::move(ssd.y).reshaped({B, T_len, d_inner});
  for (std::size_t r = 0; r < BT; ++r)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = r * d_inner + h * P + p;
        y[i] += layer.d_skip[h] * in.x[i];
      }

  Tensor<T> mixed = linear(rmsnorm_gated(y, z, layer.norm_w, cfg.norm_eps), layer.out_proj);
  maybe_bf16(mixed, cfg);

  out.hidden = hidden;
  for (std::size_t i = 0; i < out.hidden.size(); ++i) out.hidden[i] += mixed[i];
  return out;
}

template <Real T>
Tensor<T> embed(const ModelParams<T>& params, const Tokens& tokens, const ModelConfig& cfg) {
  check_tokens(tokens, cfg);
  const std::size_t d = cfg.d_model;
  Tensor<T> hidden({tokens.batch, tokens.length, d});
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const T* row = params.embedding.ptr() + static_cast<std::size_t>(tokens.ids[i]) * d;
    std::copy(row, row + d, hidden.ptr() + i * d);
  }
  return hidden;
}

template <Real T>
Tensor<T> lm_head(const ModelParams<T>& params, const Tensor<T>& hidden, const ModelConfig& cfg) {
  const Tensor<T> normed = rmsnorm(hidden, params.final_norm_w, cfg.norm_eps);
  const std::size_t d = cfg.d_model, V = cfg.vocab_size;
  const std::size_t rows = normed.size() / d;
  Shape shape = hidden.shape();
  shape.back() = V;
  Tensor<T> logits(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = normed.ptr() + r * d;
    for (std::size_t v = 0; v < V; ++v) {
      const T* e = params.embedding.ptr() + v * d;
      T acc = 0;
      for (std::size_t i = 0; i < d; ++i) acc += x[i] * e[i];
      logits[r * V + v] = acc;
    }
  }
  return logits;
}

template <Real T>
PrefillResult<T> prefill(const ModelParams<T>& params, const Tokens& tokens, const ModelConfig& cfg,
                         MaskStrategy mask) {
  cfg.validate();
  check_params(params, cfg);
  if (tokens.batch < 1 || tokens.length < 1) throw InputError("prefill: need at least one token per row");

  Tensor<T> hidden = embed(params, tokens, cfg);
  PrefillResult<T> out;
  out.cache.layers.reserve(cfg.n_layers);
  for (const auto& layer : params.layers) {
    BlockOutput<T> blk = block_forward(layer, hidden, cfg, mask);
    hidden = std::move(blk.hidden);
    out.cache.layers.push_back({std::move(blk.final_state), std::move(blk.conv_tail)});
  }
  out.logits = lm_head(params, hidden, cfg);
  return out;
}

#define SSD_INSTANTIATE(T)                                                                                  \
  template struct Mamba2Cache<T>;                                                                           \
  template void check_params(const ModelParams<T>&, const ModelConfig&);                                   \
  template BlockOutput<T> block_forward(const LayerParams<T>&, const Tensor<T>&, const ModelConfig&,       \
                                        MaskStrategy);                                                      \
  template Tensor<T> embed(const ModelParams<T>&, const Tokens&, const ModelConfig&);                      \
  template Tensor<T> lm_head(const ModelParams<T>&, const Tensor<T>&, const ModelConfig&);                 \
  template PrefillResult<T> prefill(const ModelParams<T>&, const Tokens&, const ModelConfig&, MaskStrategy);

SSD_INSTANTIATE(float)
SSD_INSTANTIATE(double)

#undef SSD_INSTANTIATE

}  // namespace ssd
